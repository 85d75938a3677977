#include "posesparse/dmd_toy.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <random>
#include <string>

#include <Eigen/Cholesky>

#include "posesparse/error.hpp"
#include "posesparse/parallel.hpp"

namespace posesparse {

namespace {

Eigen::LLT<Eigen::MatrixXd> cholesky(const Eigen::MatrixXd& m, const char* what) {
  if (m.rows() != m.cols() || m.rows() == 0) throw NumericalError(std::string(what) + ": covariance must be square");
  if (!m.allFinite()) throw NumericalError(std::string(what) + ": covariance has non-finite entries");
  if (!m.isApprox(m.transpose(), 1e-12)) throw NumericalError(std::string(what) + ": covariance is not symmetric");
  Eigen::LLT<Eigen::MatrixXd> llt(m);
  if (llt.info() != Eigen::Success) throw NumericalError(std::string(what) + ": covariance is not positive definite");
  return llt;
}

double log_det(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

}  // namespace

void GaussianDistribution::validate() const {
  if (static_cast<std::size_t>(cov.rows()) != dim()) throw NumericalError("gaussian: mean and covariance disagree");
  if (!mean.allFinite()) throw NumericalError("gaussian: non-finite mean");
  cholesky(cov, "gaussian");
}

double GaussianDistribution::log_density(const Eigen::VectorXd& x) const {
  const auto llt = cholesky(cov, "gaussian");
  const Eigen::VectorXd r = x - mean;
  const double maha = r.dot(llt.solve(r));
  return -0.5 * (maha + log_det(llt) + static_cast<double>(dim()) * std::log(2.0 * std::numbers::pi));
}

double NoiseSchedule::alpha(double t) { return std::cos(0.5 * std::numbers::pi * t); }
double NoiseSchedule::sigma(double t) { return std::sin(0.5 * std::numbers::pi * t); }

GaussianDistribution DiffusedScore::marginal(double t) const {
  const double a = NoiseSchedule::alpha(t);
  const double s = NoiseSchedule::sigma(t);
  const auto d = static_cast<Eigen::Index>(base.dim());
  return {a * base.mean, a * a * base.cov + s * s * Eigen::MatrixXd::Identity(d, d)};
}

Eigen::VectorXd DiffusedScore::operator()(const Eigen::VectorXd& x_t, double t) const {
  const auto m = marginal(t);
  return -cholesky(m.cov, "diffused score").solve(x_t - m.mean);
}

StudentGenerator StudentGenerator::standard(std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  return {Eigen::MatrixXd::Identity(d, d), Eigen::VectorXd::Zero(d)};
}

void TimestepSampler::validate() const {
  if (fixed) {
    if (!(*fixed > 0.0 && *fixed < 1.0)) throw ConfigError("fixed timestep must lie in (0, 1)");
    return;
  }
  if (!(t_min > 0.0 && t_min < t_max && t_max < 1.0)) throw ConfigError("timestep range must satisfy 0 < min < max < 1");
}

Eigen::VectorXd DmdGradient::flatten() const {
  Eigen::VectorXd out(d_a.size() + d_b.size());
  out << Eigen::Map<const Eigen::VectorXd>(d_a.data(), d_a.size()), d_b;
  return out;
}

DmdGradient dmd_gradient(const StudentGenerator& student, const GaussianDistribution& teacher,
                         const DmdOptions& opts) {
  if (opts.batch < 1) throw ConfigError("dmd_gradient: batch must be at least 1");
  opts.sampler.validate();
  teacher.validate();
  const std::size_t dim = teacher.dim();
  if (student.dim() != dim || static_cast<std::size_t>(student.a.rows()) != dim ||
      static_cast<std::size_t>(student.a.cols()) != dim) {
    throw DimensionMismatchError("dmd_gradient: student and teacher dimensions differ");
  }
  const auto d = static_cast<Eigen::Index>(dim);
  const Eigen::Index params = d * d + d;
  const std::size_t shards = (opts.batch + kDmdShardSize - 1) / kDmdShardSize;
  const DiffusedScore data_score{teacher};
  const DiffusedScore gen_score{{student.b, student.a * student.a.transpose()}};

  std::vector<Eigen::VectorXd> sums(shards, Eigen::VectorXd::Zero(params));
  std::vector<Eigen::VectorXd> sq_sums(shards, Eigen::VectorXd::Zero(params));
  parallel_for(shards, opts.threads, [&](std::size_t s) {
    std::seed_seq seq{static_cast<std::uint32_t>(opts.seed), static_cast<std::uint32_t>(opts.seed >> 32),
                      static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s >> 32)};
    std::mt19937_64 rng(seq);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> unit(opts.sampler.t_min, opts.sampler.t_max);
    const std::size_t begin = s * kDmdShardSize;
    const std::size_t end = std::min(opts.batch, begin + kDmdShardSize);
    Eigen::VectorXd z(d), eps(d), g(params);
    for (std::size_t i = begin; i < end; ++i) {
      for (Eigen::Index j = 0; j < d; ++j) z[j] = normal(rng);
      for (Eigen::Index j = 0; j < d; ++j) eps[j] = normal(rng);
      const double t = opts.sampler.fixed ? *opts.sampler.fixed : unit(rng);
      const double alpha = NoiseSchedule::alpha(t);
      const double sigma = NoiseSchedule::sigma(t);
      const Eigen::VectorXd x_t = alpha * student(z) + sigma * eps;
      Eigen::VectorXd diff = data_score(x_t, t) - gen_score(x_t, t);
      if (opts.chain_alpha) diff *= alpha;
      // dG/dA_ij = e_i z_j, dG/db = I.
      Eigen::Map<Eigen::MatrixXd>(g.data(), d, d) = -diff * z.transpose();
      g.tail(d) = -diff;
      sums[s] += g;
      sq_sums[s] += g.cwiseProduct(g);
    }
  });

  Eigen::VectorXd sum = Eigen::VectorXd::Zero(params);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(params);
  for (std::size_t s = 0; s < shards; ++s) {
    sum += sums[s];
    sq += sq_sums[s];
  }
  const double n = static_cast<double>(opts.batch);
  const Eigen::VectorXd mean = sum / n;
  DmdGradient out;
  out.d_a = Eigen::Map<const Eigen::MatrixXd>(mean.data(), d, d);
  out.d_b = mean.tail(d);
  if (opts.batch > 1) {
    const Eigen::VectorXd var = ((sq / n) - mean.cwiseProduct(mean)).cwiseMax(0.0) * (n / (n - 1.0));
    out.std_error = (var / n).cwiseSqrt();
  } else {
    out.std_error = Eigen::VectorXd::Constant(params, std::numeric_limits<double>::infinity());
  }
  return out;
}

double reverse_kl(const GaussianDistribution& p_gen, const GaussianDistribution& p_data) {
  if (p_gen.dim() != p_data.dim()) throw DimensionMismatchError("reverse_kl: dimensions differ");
  if (!p_gen.mean.allFinite() || !p_data.mean.allFinite()) throw NumericalError("reverse_kl: non-finite mean");
  const auto gen = cholesky(p_gen.cov, "reverse_kl (p_gen)");
  const auto data = cholesky(p_data.cov, "reverse_kl (p_data)");
  const Eigen::MatrixXd l_gen = gen.matrixL();
  const Eigen::MatrixXd whitened = data.matrixL().solve(l_gen);
  const Eigen::VectorXd diff = p_data.mean - p_gen.mean;
  const Eigen::VectorXd wdiff = data.matrixL().solve(diff);
  const double k = static_cast<double>(p_gen.dim());
  // Round-off can push an exact match a few ulps below zero.
  return std::max(0.0, 0.5 * (whitened.squaredNorm() + wdiff.squaredNorm() - k + log_det(data) - log_det(gen)));
}

namespace {
constexpr double kDivergenceFloor = 1e-9;
}  // namespace

void TrainOptions::validate() const {
  if (!(lr > 0.0) || !std::isfinite(lr)) throw ConfigError("learning rate must be positive");
  if (batch < 1) throw ConfigError("batch must be at least 1");
  sampler.validate();
}

std::vector<TrainStep> train_student(const StudentGenerator& initial, const GaussianDistribution& teacher,
                                     const TrainOptions& opts) {
  opts.validate();
  std::vector<TrainStep> traj;
  traj.reserve(opts.steps + 1);
  StudentGenerator student = initial;
  const double kl0 = reverse_kl(student.induced(), teacher);
  traj.push_back({0, student, kl0});
  for (std::size_t step = 1; step <= opts.steps; ++step) {
    DmdOptions g_opts;
    g_opts.batch = opts.batch;
    g_opts.sampler = opts.sampler;
    g_opts.threads = opts.threads;
    // Independent stream per step, fixed by (seed, step).
    g_opts.seed = opts.seed * 0x9E3779B97F4A7C15ull + step;
    const auto grad = dmd_gradient(student, teacher, g_opts);
    student.a -= opts.lr * grad.d_a;
    student.b -= opts.lr * grad.d_b;
    double kl = 0.0;
    try {
      kl = reverse_kl(student.induced(), teacher);
    } catch (const NumericalError&) {
      throw DivergenceError("student covariance collapsed at step " + std::to_string(step));
    }
    // Below kDivergenceFloor the KL is Monte-Carlo noise around a converged
    // student, not divergence.
    if (!std::isfinite(kl) || (kl > 10.0 * kl0 && kl > kDivergenceFloor)) {
      throw DivergenceError("reverse KL " + std::to_string(kl) + " exceeds ten times its initial value " +
                            std::to_string(kl0) + " at step " + std::to_string(step));
    }
    traj.push_back({step, student, kl});
  }
  return traj;
}

void write_trajectory(std::ostream& out, const std::vector<TrainStep>& trajectory) {
  out << "# posesparse-dmd-trajectory 1\n";
  out << "step\treverse_kl\n";
  char buf[64];
  for (const auto& s : trajectory) {
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), s.reverse_kl);
    out << s.step << '\t' << std::string_view(buf, static_cast<std::size_t>(ptr - buf)) << '\n';
  }
}

}  // namespace posesparse

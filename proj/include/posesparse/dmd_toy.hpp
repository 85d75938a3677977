#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <vector>

#include <Eigen/Core>

namespace posesparse {

struct GaussianDistribution {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;

  std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
  void validate() const;  // NumericalError unless cov is symmetric positive definite
  double log_density(const Eigen::VectorXd& x) const;
};

// Variance-preserving schedule: alpha_t = cos(pi t / 2), sigma_t = sin(pi t / 2).
struct NoiseSchedule {
  static double alpha(double t);
  static double sigma(double t);
};

// Score of base diffused to time t: the marginal N(alpha mu, alpha^2 Sigma + sigma^2 I).
struct DiffusedScore {
  GaussianDistribution base;

  GaussianDistribution marginal(double t) const;
  Eigen::VectorXd operator()(const Eigen::VectorXd& x_t, double t) const;
};

// G(z) = A z + b with z ~ N(0, I), so the student distribution is N(b, A A^T).
struct StudentGenerator {
  Eigen::MatrixXd a;
  Eigen::VectorXd b;

  static StudentGenerator standard(std::size_t dim);
  std::size_t dim() const { return static_cast<std::size_t>(b.size()); }
  Eigen::VectorXd operator()(const Eigen::VectorXd& z) const { return a * z + b; }
  GaussianDistribution induced() const { return {b, a * a.transpose()}; }
};

struct TimestepSampler {
  double t_min = 0.02;
  double t_max = 0.98;
  std::optional<double> fixed;

  static TimestepSampler uniform() { return {}; }
  static TimestepSampler at(double t) { return {0.02, 0.98, t}; }
  void validate() const;  // ConfigError
};

struct DmdOptions {
  std::size_t batch = 256;
  std::uint64_t seed = 0;
  TimestepSampler sampler;
  // Include d x_t / d x = alpha_t in the chain rule. The default contracts
  // the score difference with dG/dtheta alone, as the DMD update is written.
  bool chain_alpha = false;
  unsigned threads = 1;
};

struct DmdGradient {
  Eigen::MatrixXd d_a;
  Eigen::VectorXd d_b;
  // Per-parameter standard error of the Monte-Carlo mean, same layout as
  // flatten().
  Eigen::VectorXd std_error;

  // Column-major d_a followed by d_b.
  Eigen::VectorXd flatten() const;
};

// Samples per shard. Shard s draws from its own generator seeded from
// (seed, s), and shards are reduced in index order, so the estimate is
// independent of the thread count.
inline constexpr std::size_t kDmdShardSize = 4096;

// Monte-Carlo estimate of -E_t[(s_data(x_t) - s_gen(x_t)) dG/dtheta] with
// analytic teacher and student scores.
DmdGradient dmd_gradient(const StudentGenerator& student, const GaussianDistribution& teacher,
                         const DmdOptions& opts);

// Closed-form KL(p_gen || p_data).
double reverse_kl(const GaussianDistribution& p_gen, const GaussianDistribution& p_data);

struct TrainOptions {
  std::size_t steps = 2000;
  double lr = 0.05;
  std::size_t batch = 256;
  std::uint64_t seed = 0;
  TimestepSampler sampler;
  unsigned threads = 1;

  void validate() const;  // ConfigError
};

struct TrainStep {
  std::size_t step = 0;
  StudentGenerator student;
  double reverse_kl = 0.0;
};

// Plain gradient descent on theta with dmd_gradient. Entry 0 is the initial
// student; entry i follows the i-th update. Throws DivergenceError when the
// KL exceeds ten times its initial value.
std::vector<TrainStep> train_student(const StudentGenerator& initial, const GaussianDistribution& teacher,
                                     const TrainOptions& opts);

// Tab-separated "step<TAB>reverse_kl" lines under a version header.
void write_trajectory(std::ostream& out, const std::vector<TrainStep>& trajectory);

}  // namespace posesparse

// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails.

#include <chrono>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <thread>

#include <json.hpp>

#include "cli.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"
#include "posesparse/alignment.hpp"
#include "posesparse/attention.hpp"
#include "posesparse/dmd_toy.hpp"
#include "posesparse/mask_builder.hpp"
#include "posesparse/pose_io.hpp"
#include "posesparse/region_loss.hpp"
#include "posesparse/regions.hpp"
#include "posesparse/segmenter.hpp"
#include "posesparse/synthetic.hpp"

using namespace posesparse;

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

unsigned hw_threads() { return std::max(1u, std::thread::hardware_concurrency()); }

std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

// Grid h x w with h * w == n and h <= w, as square as possible.
TokenGrid grid_for(std::size_t n, int patch) {
  int h = static_cast<int>(std::sqrt(static_cast<double>(n)));
  while (n % static_cast<std::size_t>(h) != 0) --h;
  return {h, static_cast<int>(n / static_cast<std::size_t>(h)), patch};
}

struct MaskCase {
  SimilarityMatrix sim;
  RegionLabeling labels;
  std::size_t k;
};

// Pose-driven when `pose` is set, random labels and similarities otherwise.
MaskCase make_case(std::mt19937_64& rng, std::size_t t, std::size_t n, bool pose) {
  const std::size_t k = 1 + rng() % 4;
  if (!pose) return {oracle::random_similarity(t, rng, rng() % 2 ? 3 : 0), oracle::random_labeling(t, n, rng), k};
  const TokenGrid grid = grid_for(n, 16);
  SyntheticPoseOptions o;
  o.frames = t;
  o.seed = rng();
  o.image_size = {grid.width_tokens * 16, grid.height_tokens * 16};
  o.jitter = 2.0;
  o.drift = 2.0;
  const auto seq = synthetic_pose_sequence(o);
  return {similarity_matrix(seq), label_sequence(seq, grid), k};
}

Outcome oracle_equivalence() {
  std::mt19937_64 rng(1001);
  const std::size_t ns[] = {4, 16, 36, 64, 100, 144, 192, 256};
  float worst = 0.0f;
  Outcome o;
  for (int seed = 0; seed < 100; ++seed) {
    const std::size_t t = 1 + rng() % 8;
    const std::size_t n = seed % 2 == 0 ? ns[rng() % 8] : 1 + rng() % 256;
    const auto c = make_case(rng, t, n, seed % 2 == 0);
    GlobalMaskConfig cfg;
    cfg.k = c.k;
    const auto mask = build_mask(c.sim, cfg, c.labels);
    const std::size_t heads = 1 + rng() % 4;
    const std::size_t dims[] = {1, 8, 16, 32, 64};
    const std::size_t head_dim = seed % 5 == 0 ? 64 : dims[rng() % 5];
    const std::size_t bs = std::size_t{8} << (rng() % 3);
    const auto in = AttentionInputs::random(heads, t * n, head_dim, 5000 + seed);
    const auto layout = pool_to_blocks(mask, bs, BlockMode::Exact, hw_threads());
    const auto dense = dense_masked_attention(in, mask, hw_threads());
    BlockSparseOptions opts{hw_threads(), std::nullopt};
    if (seed % 3 == 0) opts.shuffle_seed = rng();
    const auto sparse = block_sparse_attention(in, layout, mask, opts);
    const float d = max_abs_difference(sparse, dense);
    worst = std::max(worst, d);
    if (!(d <= 1e-5f)) o.pass = false;
  }
  o.detail = "100 seeds, worst max-abs " + num(worst);
  return o;
}

Outcome mask_correctness() {
  std::mt19937_64 rng(1002);
  Outcome o;
  std::size_t entries = 0;
  const std::pair<std::size_t, std::size_t> shapes[] = {{64, 64}, {4, 1024}, {16, 256}, {8, 512}, {1, 4096}};
  auto check = [&](const MaskCase& c) {
    GlobalMaskConfig cfg;
    cfg.k = c.k;
    const auto mask = build_mask(c.sim, cfg, c.labels);
    const auto ref = oracle::dense_mask_reference(oracle::topk_reference(c.sim, c.k), c.labels);
    const std::size_t total = mask.total_tokens();
    for (std::size_t r = 0; r < total; ++r) {
      for (std::size_t col = 0; col < total; ++col) {
        if (mask.allowed_flat(r, col) != static_cast<bool>(ref[r * total + col])) o.pass = false;
      }
    }
    entries += total * total;
  };
  for (const auto& [t, n] : shapes) {
    check(make_case(rng, t, n, true));
    check(make_case(rng, t, n, false));
  }
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t t = 1 + rng() % 16;
    const std::size_t n = 1 + rng() % (4096 / t);
    check(make_case(rng, t, n, false));
  }
  o.detail = std::to_string(entries) + " entries compared";
  return o;
}

Outcome procrustes() {
  std::mt19937_64 rng(1003);
  std::normal_distribution<double> g(0.0, 50.0);
  std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi);
  Outcome o;
  double worst_invariance = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + rng() % 20;
    std::vector<Point2> src, dst;
    const auto truth = RigidTransform::from_angle(ang(rng), Point2(g(rng), g(rng)));
    for (std::size_t i = 0; i < n; ++i) {
      src.emplace_back(g(rng), g(rng));
      dst.push_back(truth.apply(src.back()) + Point2(g(rng), g(rng)) * 0.1);
    }
    const auto fit = rigid_align(src, dst);

    // Rigid motions applied to either input leave the residual unchanged.
    const auto ga = RigidTransform::from_angle(ang(rng), Point2(g(rng), g(rng)));
    const auto gb = RigidTransform::from_angle(ang(rng), Point2(g(rng), g(rng)));
    std::vector<Point2> src2, dst2;
    for (std::size_t i = 0; i < n; ++i) {
      src2.push_back(ga.apply(src[i]));
      dst2.push_back(gb.apply(dst[i]));
    }
    const double moved = rigid_align(src2, dst2).residual;
    worst_invariance = std::max(worst_invariance, std::abs(moved - fit.residual));
    if (!(std::abs(moved - fit.residual) <= 1e-9)) o.pass = false;

    // No random rigid candidate does better.
    Point2 cs = Point2::Zero(), cd = Point2::Zero();
    for (std::size_t i = 0; i < n; ++i) {
      cs += src[i];
      cd += dst[i];
    }
    cs /= static_cast<double>(n);
    cd /= static_cast<double>(n);
    for (int c = 0; c < 10000; ++c) {
      const double a = ang(rng);
      const Point2 t = cd - Eigen::Rotation2Dd(a) * cs + Point2(g(rng), g(rng)) * (c % 2 ? 0.01 : 0.5);
      if (oracle::weighted_residual(src, dst, a, t) < fit.residual) o.pass = false;
    }
  }
  o.detail = "50 trials x 10000 candidates, worst invariance gap " + num(worst_invariance);
  return o;
}

Outcome topk() {
  std::mt19937_64 rng(1004);
  Outcome o;
  int mismatches = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t t = 1 + rng() % 32;
    const std::size_t k = 1 + rng() % 8;
    const auto sim = oracle::random_similarity(t, rng, trial % 2 == 0 ? 1 + static_cast<int>(rng() % 5) : 0);
    GlobalMaskConfig cfg;
    cfg.k = k;
    if (select_topk(sim, cfg) != oracle::topk_reference(sim, k)) ++mismatches;
  }
  o.pass = mismatches == 0;
  o.detail = "1000 matrices, " + std::to_string(mismatches) + " mismatches";
  return o;
}

Outcome density() {
  std::mt19937_64 rng(1005);
  Outcome o;
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t t = 1 + rng() % 8;
    const std::size_t n = trial % 2 == 0 ? std::size_t{64} : 1 + rng() % 64;
    const auto c = make_case(rng, t, n, trial % 4 == 0);
    GlobalMaskConfig cfg;
    cfg.k = c.k;
    const auto mask = build_mask(c.sim, cfg, c.labels);
    const auto rep = sparsity_report(pool_to_blocks(mask, 16, BlockMode::Exact), mask, 64, 1);
    const auto count = oracle::density_count_reference(mask);
    const double ref = static_cast<double>(count) / static_cast<double>(t * n * t * n);
    if (rep.admissible_pairs != count || rep.token_pair_density != ref) o.pass = false;
  }
  SimilarityMatrix sim(100);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (std::size_t q = 1; q < 100; ++q) {
    for (std::size_t k = 0; k < q; ++k) sim.at(q, k) = u(rng);
  }
  GlobalMaskConfig cfg;
  cfg.k = 4;
  const auto mask = build_mask(sim, cfg, RegionLabeling(100, 16));
  const auto rep = sparsity_report(pool_to_blocks(mask, 16, BlockMode::Exact), mask, 64, 1);
  const double gap = std::abs(rep.token_pair_density - 0.01);
  if (!(gap <= 1e-12)) o.pass = false;
  o.detail = "200 enumerations exact; T=100 K=4 background density " + num(rep.token_pair_density);
  return o;
}

GaussianDistribution random_teacher(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::MatrixXd b(d, d);
  for (int i = 0; i < d * d; ++i) b.data()[i] = g(rng);
  Eigen::VectorXd m(d);
  for (int i = 0; i < d; ++i) m[i] = 1.5 * g(rng);
  return {m, 0.5 * b * b.transpose() + 0.3 * Eigen::MatrixXd::Identity(d, d)};
}

Outcome dmd_gradient_check() {
  std::mt19937_64 rng(1006);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> nodes, weights;
  oracle::gauss_legendre(64, nodes, weights);
  Outcome o;
  double worst = 0.0;
  for (int cfg_i = 0; cfg_i < 20; ++cfg_i) {
    const int d = 1 + cfg_i % 3;
    const auto teacher = random_teacher(rng, d);
    StudentGenerator st = StudentGenerator::standard(d);
    for (int i = 0; i < d * d; ++i) st.a.data()[i] += 0.4 * g(rng);
    for (int i = 0; i < d; ++i) st.b[i] = g(rng);

    DmdOptions opts;
    opts.batch = 100000;
    opts.seed = 77 + cfg_i;
    opts.threads = hw_threads();
    Eigen::VectorXd reference;
    if (cfg_i % 2 == 0) {
      // Fixed timestep, full chain rule: the estimate is the KL gradient itself.
      const double t = 0.1 + 0.8 * (cfg_i / 20.0);
      opts.sampler = TimestepSampler::at(t);
      opts.chain_alpha = true;
      reference = oracle::diffused_kl_gradient_fd(st.a, st.b, teacher, t);
    } else {
      // Default estimator: E_t over U[0.02, 0.98] of the KL gradient divided by alpha_t.
      const double lo = 0.02, hi = 0.98;
      reference = Eigen::VectorXd::Zero(d * d + d);
      for (std::size_t q = 0; q < nodes.size(); ++q) {
        const double t = 0.5 * (hi - lo) * nodes[q] + 0.5 * (hi + lo);
        const double alpha = std::cos(0.5 * std::numbers::pi * t);
        reference += 0.5 * weights[q] * oracle::diffused_kl_gradient_fd(st.a, st.b, teacher, t) / alpha;
      }
    }
    const Eigen::VectorXd est = dmd_gradient(st, teacher, opts).flatten();
    const double rel = (est - reference).norm() / reference.norm();
    worst = std::max(worst, rel);
    if (!(rel < 0.05)) o.pass = false;
  }
  o.detail = "20 configs at batch 1e5, worst relative error " + num(worst);
  return o;
}

Outcome dmd_convergence() {
  Eigen::MatrixXd cov(2, 2);
  cov << 0.5, 0.0, 0.0, 2.0;
  const GaussianDistribution teacher{Eigen::Vector2d(1.0, -1.0), cov};
  TrainOptions opts;
  opts.steps = 2000;
  const auto traj = train_student(StudentGenerator::standard(2), teacher, opts);
  Outcome o;
  o.pass = traj.back().reverse_kl < 0.01;
  o.detail = "KL " + num(traj.front().reverse_kl) + " -> " + num(traj.back().reverse_kl) + " after 2000 steps";
  return o;
}

Outcome mls() {
  std::mt19937_64 rng(1008);
  std::normal_distribution<double> g(0.0, 40.0);
  std::uniform_real_distribution<double> ang(-std::numbers::pi, std::numbers::pi);
  Outcome o;
  double worst_interp = 0.0, worst_rigid = 0.0;
  for (int cfg_i = 0; cfg_i < 100; ++cfg_i) {
    const std::size_t n = 2 + rng() % 12;
    const double alpha = cfg_i % 3 == 0 ? 0.5 : (cfg_i % 3 == 1 ? 1.0 : 2.0);
    std::vector<Point2> p, q, r;
    const auto motion = RigidTransform::from_angle(ang(rng), Point2(g(rng), g(rng)));
    for (std::size_t i = 0; i < n; ++i) {
      p.emplace_back(g(rng), g(rng));
      q.push_back(p.back() + Point2(g(rng), g(rng)) * 0.3);
      r.push_back(motion.apply(p.back()));
    }
    const MlsRigidWarp free_warp(p, q, alpha);
    for (std::size_t i = 0; i < n; ++i) worst_interp = std::max(worst_interp, (free_warp(p[i]) - q[i]).norm());
    const MlsRigidWarp rigid_warp(p, r, alpha);
    for (int k = 0; k < 20; ++k) {
      const Point2 v(g(rng), g(rng));
      worst_rigid = std::max(worst_rigid, (rigid_warp(v) - motion.apply(v)).norm());
    }
  }
  o.pass = worst_interp <= 1e-6 && worst_rigid <= 1e-6;
  o.detail = "100 configs, interpolation error " + num(worst_interp) + ", rigid error " + num(worst_rigid);
  return o;
}

Outcome fusion() {
  Outcome o;
  std::size_t plans = 0;
  for (std::size_t t = 1; t <= 64; ++t) {
    for (std::size_t len = 2; len <= 12; ++len) {
      for (std::size_t ov = 0; ov < len; ++ov) {
        const auto plan = plan_segments(t, len, ov);
        const auto w = fusion_weights(plan);
        ++plans;
        for (const auto& terms : w) {
          Fraction sum{0, 1};
          for (const auto& term : terms) sum = sum + term.weight;
          if (!(sum == Fraction{1, 1})) o.pass = false;
        }
        // Lossless on agreeing segments.
        FrameArray truth(t, 2);
        for (std::size_t i = 0; i < truth.values.size(); ++i) truth.values[i] = std::sin(0.7 * i) * 1e3 + 1.0 / (i + 3);
        std::vector<FrameArray> segs;
        for (const auto& s : plan.segments) {
          FrameArray part(s.size(), 2);
          for (std::size_t f = 0; f < s.size(); ++f) {
            for (std::size_t c = 0; c < 2; ++c) part.at(f, c) = truth.at(s.begin + f, c);
          }
          segs.push_back(part);
        }
        if (fuse(segs, plan).values != truth.values) o.pass = false;
      }
    }
  }
  const auto plan = plan_segments(6, 4, 2);
  const auto fused = fuse({FrameArray(4, 1, 3.0), FrameArray(4, 1, 6.0)}, plan);
  const auto w = fusion_weights(plan);
  const bool ramp = fused.values == std::vector<double>{3.0, 3.0, 4.0, 5.0, 6.0, 6.0} &&
                    w[2][0].weight == Fraction{2, 3} && w[2][1].weight == Fraction{1, 3} &&
                    w[3][0].weight == Fraction{1, 3} && w[3][1].weight == Fraction{2, 3};
  if (!ramp) o.pass = false;
  o.detail = std::to_string(plans) + " plans exact; overlap-2 ramp gives 3 3 4 5 6 6";
  return o;
}

struct CliRun {
  int code;
  std::string out;
};

CliRun cli_run(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  const int code = cli::run_cli(args, out, err);
  return {code, out.str()};
}

Outcome filtering() {
  Outcome o;
  const auto dir = fixture::scratch_dir("acceptance_filter");
  save_pose_sequence(dir / "in.pose", fixture::filter_fixture());
  const auto r = cli_run({"filter", "--in", (dir / "in.pose").string(), "--out", (dir / "out.pose").string()});
  if (r.code != 0) return {false, "filter exited with " + std::to_string(r.code)};
  const auto j = nlohmann::json::parse(r.out);
  const bool defaults = j["policy"]["face_conf_min"] == 0.9 && j["policy"]["body_conf_min"] == 0.8 &&
                        j["policy"]["body_visibility_min"] == 0.9;
  if (!defaults) o.pass = false;
  const auto& expected = fixture::filter_fixture_expected_rejections();
  std::size_t retained = 0;
  for (const auto& f : j["frames"]) {
    const std::size_t idx = f["source_index"];
    std::vector<std::string> reasons;
    for (const auto& x : f["reasons"]) reasons.push_back(x);
    const auto it = expected.find(idx);
    if (it == expected.end()) {
      if (!f["retained"].get<bool>() || !reasons.empty()) o.pass = false;
      ++retained;
    } else if (f["retained"].get<bool>() || reasons != it->second) {
      o.pass = false;
    }
  }
  const auto kept = load_pose_sequence(dir / "out.pose");
  if (retained != 6 || kept.frame_count() != 6 || j["retained_frames"] != 6) o.pass = false;
  o.detail = "defaults 0.9/0.8/0.9, " + std::to_string(kept.frame_count()) + " of 10 frames retained";
  return o;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism() {
  const auto dir = fixture::scratch_dir("acceptance_determinism");
  SyntheticPoseOptions po;
  po.frames = 12;
  po.image_size = {128, 96};
  po.seed = 3;
  save_pose_sequence(dir / "p.pose", synthetic_pose_sequence(po));
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  Image x(96, 128, 3), y(96, 128, 3);
  for (auto& v : x.data) v = u(rng);
  for (auto& v : y.data) v = u(rng);
  save_image(dir / "x.psim", x);
  save_image(dir / "y.psim", y);
  const std::string d = dir.string() + "/";

  // Each command lists the files it writes; stdout is compared as well.
  struct Cmd {
    std::string name;
    std::vector<std::string> args;
    std::vector<std::string> files;
  };
  const std::vector<Cmd> cmds = {
      {"filter", {"filter", "--in", d + "p.pose", "--out", d + "OUT.pose", "--report", d + "OUT.json"},
       {"OUT.pose", "OUT.json"}},
      {"mask",
       {"mask", "--in", d + "p.pose", "--out", d + "OUT.psbl", "--report", d + "OUT.json", "--labels-out",
        d + "OUT.psrl", "--similarity-out", d + "OUT.pssm", "--patch", "16", "--block-size", "32", "--k", "3"},
       {"OUT.psbl", "OUT.json", "OUT.psrl", "OUT.pssm"}},
      {"bench",
       {"bench", "--frames", "4", "--tokens", "48", "--heads", "2", "--head-dim", "16", "--block-size", "32",
        "--repeats", "1", "--no-timing", "--out", d + "OUT.txt"},
       {"OUT.txt"}},
      {"loss", {"loss", "--x", d + "x.psim", "--x-hat", d + "y.psim", "--pose", d + "p.pose", "--frame", "5",
                "--patch", "16", "--out", d + "OUT.json"},
       {"OUT.json"}},
      {"dmd-demo", {"dmd-demo", "--steps", "300", "--batch", "8192", "--out", d + "OUT.tsv"}, {"OUT.tsv"}},
      {"fuse-demo", {"fuse-demo", "--frames", "30", "--segment-length", "9", "--overlap", "3", "--width", "3",
                     "--out", d + "OUT.txt"},
       {"OUT.txt"}},
  };

  Outcome o;
  std::vector<std::string> failed;
  for (const auto& c : cmds) {
    std::vector<std::string> snapshots;
    for (const char* threads : {"1", "1", "8", "8"}) {
      std::vector<std::string> args = {"--seed", "42", "--threads", threads};
      for (const auto& a : c.args) {
        std::string s = a;
        const auto pos = s.find("OUT");
        if (pos != std::string::npos) s.replace(pos, 3, "run");
        args.push_back(s);
      }
      const auto r = cli_run(args);
      std::string snap = std::to_string(r.code) + "\n" + r.out;
      for (const auto& f : c.files) {
        std::string name = f;
        name.replace(name.find("OUT"), 3, "run");
        snap += "\n--" + name + "--\n" + slurp(dir / name);
        std::filesystem::remove(dir / name);
      }
      if (r.code != 0) snap += "<failed>";
      snapshots.push_back(snap);
    }
    bool same = true;
    for (const auto& s : snapshots) same = same && s == snapshots[0] && s.find("<failed>") == std::string::npos;
    if (!same) {
      o.pass = false;
      failed.push_back(c.name);
    }
  }
  o.detail = "6 subcommands x (2 runs at --threads 1, 2 at --threads 8)";
  for (const auto& f : failed) o.detail += "; differs: " + f;
  return o;
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"oracle-equivalence", oracle_equivalence},
      {"mask-correctness", mask_correctness},
      {"procrustes", procrustes},
      {"topk-semantics", topk},
      {"sparsity-accounting", density},
      {"dmd-gradient", dmd_gradient_check},
      {"dmd-convergence", dmd_convergence},
      {"mls-interpolation", mls},
      {"segment-fusion", fusion},
      {"filter-thresholds", filtering},
      {"determinism", determinism},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const auto start = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (!o.pass) ++failures;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  criterion " << (i + 1) << " " << criteria[i].first << ": "
              << o.detail << " (" << num(secs) << " s)" << std::endl;
  }
  std::cout << (failures == 0 ? "all criteria passed" : std::to_string(failures) + " criteria failed") << std::endl;
  return failures == 0 ? 0 : 1;
}

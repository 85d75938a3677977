#include "cli.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "posesparse/alignment.hpp"
#include "posesparse/attention.hpp"
#include "posesparse/dmd_toy.hpp"
#include "posesparse/error.hpp"
#include "posesparse/mask_builder.hpp"
#include "posesparse/pose_io.hpp"
#include "posesparse/region_loss.hpp"
#include "posesparse/regions.hpp"
#include "posesparse/segmenter.hpp"

namespace posesparse::cli {

namespace {

using nlohmann::ordered_json;

struct GlobalOptions {
  std::uint64_t seed = 0;
  unsigned threads = 1;
  int verbosity = 0;
};

class Logger {
 public:
  Logger(std::ostream& err, const GlobalOptions& g) : err_(err), g_(g) {}
  void info(const std::string& msg) const {
    if (g_.verbosity > 0) err_ << "posesparse: " << msg << '\n';
  }

 private:
  std::ostream& err_;
  const GlobalOptions& g_;
};

// Writes to `path`, or to `fallback` when path is empty or "-".
template <typename Fn>
void emit(const std::string& path, std::ostream& fallback, Fn&& write, bool binary = false) {
  if (path.empty() || path == "-") {
    write(fallback);
    return;
  }
  std::ofstream f(path, binary ? std::ios::binary : std::ios::out);
  if (!f) throw IoError("cannot write " + path);
  write(f);
  if (!f) throw IoError("write failed for " + path);
}

std::string fmt_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

// ---------------------------------------------------------------- filter

struct FilterArgs {
  std::string in;
  std::string out;
  std::string report;
  FilterPolicy policy;
};

int cmd_filter(const FilterArgs& a, std::ostream& out, const Logger& log) {
  a.policy.validate();
  const auto seq = load_pose_sequence(a.in);
  log.info("read " + std::to_string(seq.frame_count()) + " frames from " + a.in);
  const auto result = filter_frames(seq, a.policy);
  save_pose_sequence(a.out, result.sequence);

  ordered_json j;
  j["format"] = "posesparse-filter-report";
  j["version"] = 1;
  j["policy"] = {{"face_conf_min", a.policy.face_conf_min},
                 {"body_conf_min", a.policy.body_conf_min},
                 {"body_visibility_min", a.policy.body_visibility_min}};
  j["input_frames"] = seq.frame_count();
  j["retained_frames"] = result.sequence.frame_count();
  ordered_json frames = ordered_json::array();
  for (const auto& v : result.report) {
    ordered_json reasons = ordered_json::array();
    for (auto r : v.reasons) reasons.push_back(std::string(reason_name(r)));
    frames.push_back({{"source_index", v.source_index},
                      {"retained", v.retained},
                      {"face_confidence", v.face_confidence},
                      {"body_confidence", v.body_confidence},
                      {"body_visibility", v.body_visibility},
                      {"reasons", reasons}});
  }
  j["frames"] = frames;
  emit(a.report, out, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
  return 0;
}

// ------------------------------------------------------------------ mask

struct MaskArgs {
  std::string in;
  std::string out;
  std::string report;
  std::string labels_out;
  std::string similarity_out;
  std::size_t k = 4;
  int patch = 16;
  std::size_t block_size = 128;
  std::string mode = "exact";
  int dilation = 1;
  double min_confidence = 0.0;
  bool weight_by_confidence = false;
  bool no_mls = false;
  bool reference_frame = false;
  std::size_t heads = 1;
  std::size_t head_dim = 64;
};

int cmd_mask(const MaskArgs& a, const GlobalOptions& g, std::ostream& out, const Logger& log) {
  GlobalMaskConfig cfg;
  cfg.k = a.k;
  cfg.align.weight_by_confidence = a.weight_by_confidence;
  cfg.validate();
  const BlockMode mode = block_mode_from_name(a.mode);
  if (a.block_size == 0) throw ConfigError("block size must be positive");
  if (a.dilation < 0) throw ConfigError("dilation must be >= 0");
  LabelingConfig lcfg;
  lcfg.label.dilation = a.dilation;
  lcfg.label.min_confidence = a.min_confidence;
  lcfg.mls_fallback = !a.no_mls;
  lcfg.mode = a.reference_frame ? LabelingMode::ReferenceFrame : LabelingMode::PerFrame;

  const auto seq = load_pose_sequence(a.in);
  const TokenGrid grid = TokenGrid::covering(seq.image_size, a.patch);
  log.info("grid " + std::to_string(grid.height_tokens) + "x" + std::to_string(grid.width_tokens));

  const auto sim = similarity_matrix(seq, cfg.align, g.threads);
  const auto labels = label_sequence(seq, grid, lcfg, g.threads);
  const auto mask = build_mask(sim, cfg, labels);
  const auto layout = pool_to_blocks(mask, a.block_size, mode, g.threads);
  const auto rep = sparsity_report(layout, mask, a.head_dim, a.heads);

  emit(a.out, out, [&](std::ostream& o) { write_block_layout(o, layout); }, true);
  if (!a.labels_out.empty()) emit(a.labels_out, out, [&](std::ostream& o) { write_region_labeling(o, labels); }, true);
  if (!a.similarity_out.empty()) {
    emit(a.similarity_out, out, [&](std::ostream& o) { write_similarity_matrix(o, sim); }, true);
  }

  ordered_json j;
  j["format"] = "posesparse-mask-report";
  j["version"] = 1;
  j["frames"] = mask.frames();
  j["grid"] = {{"height_tokens", grid.height_tokens}, {"width_tokens", grid.width_tokens}, {"patch_size", grid.patch_size}};
  j["tokens_per_frame"] = mask.tokens_per_frame();
  j["k"] = cfg.k;
  j["block_size"] = a.block_size;
  j["mode"] = std::string(block_mode_name(mode));
  j["admissible_frame_pairs"] = mask.admissible_frame_pairs();
  j["admissible_token_pairs"] = rep.admissible_pairs;
  j["total_token_pairs"] = rep.total_pairs;
  j["token_pair_density"] = rep.token_pair_density;
  j["active_blocks"] = rep.active_blocks;
  j["total_blocks"] = rep.total_blocks;
  j["block_density"] = rep.block_density;
  j["heads"] = a.heads;
  j["head_dim"] = a.head_dim;
  j["estimated_attention_flops"] = rep.estimated_attention_flops;
  j["masked_attention_flops"] = rep.masked_attention_flops;
  j["dense_attention_flops"] = rep.dense_attention_flops;
  j["admissibility"] = mask.admissibility();
  ordered_json warnings = ordered_json::array();
  for (const auto& w : labels.warnings) {
    warnings.push_back({{"frame", w.frame}, {"region", std::string(region_name(w.region))}});
  }
  j["label_warnings"] = warnings;
  emit(a.report, out, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
  return 0;
}

// ----------------------------------------------------------------- bench

struct BenchArgs {
  std::vector<std::size_t> frames{8};
  std::vector<std::size_t> tokens{256};
  std::size_t heads = 2;
  std::size_t head_dim = 64;
  std::size_t block_size = 128;
  std::size_t repeats = 3;
  std::size_t k = 4;
  int patch = 16;
  bool no_timing = false;
  std::string out;
};

int cmd_bench(const BenchArgs& a, const GlobalOptions& g, std::ostream& out, const Logger& log) {
  if (a.repeats == 0) throw ConfigError("repeats must be at least 1");
  if (a.block_size == 0) throw ConfigError("block size must be positive");
  if (a.frames.empty() || a.tokens.empty()) throw ConfigError("bench needs at least one size");
  if (a.heads == 0 || a.head_dim == 0) throw ConfigError("heads and head_dim must be positive");
  BenchConfig cfg;
  cfg.mask.k = a.k;
  cfg.mask.validate();
  cfg.block_size = a.block_size;
  cfg.repeats = a.repeats;
  cfg.seed = g.seed;
  cfg.threads = g.threads;
  cfg.patch_size = a.patch;
  std::vector<BenchSize> sizes;
  for (auto t : a.frames) {
    for (auto n : a.tokens) sizes.push_back({t, n, a.heads, a.head_dim});
  }
  log.info("benchmarking " + std::to_string(sizes.size()) + " sizes");
  const auto rows = bench_attention(sizes, cfg);
  emit(a.out, out, [&](std::ostream& o) { write_bench_table(o, rows, !a.no_timing); });
  return 0;
}

// ------------------------------------------------------------------ loss

struct LossArgs {
  std::string x;
  std::string x_hat;
  std::string pose;
  std::size_t frame = 0;
  int patch = 16;
  int dilation = 1;
  std::vector<double> weights{1, 1, 1, 1, 1};
  std::vector<std::string> metrics{"mse", "mse", "mse", "mse", "mse"};
  double lambda_region = 1.0;
  double dmd_loss = 0.0;
  bool normalized = false;
  std::string out;
};

int cmd_loss(const LossArgs& a, const GlobalOptions& g, std::ostream& out, const Logger& log) {
  if (a.weights.size() != 5) throw ConfigError("--weights takes five values (face,hands,arms,bodies,shoulders)");
  if (a.metrics.size() != 5) throw ConfigError("--metrics takes five ids (face,hands,arms,bodies,shoulders)");
  RegionLossConfig cfg;
  for (std::size_t i = 0; i < 5; ++i) {
    cfg.weights[i] = a.weights[i];
    cfg.metrics[i] = a.metrics[i];
  }
  cfg.lambda_region = a.lambda_region;
  cfg.normalized = a.normalized;
  cfg.validate();
  auto registry = MetricRegistry::with_defaults();
  registry.freeze();
  for (const auto& m : cfg.metrics) registry.get(m);
  if (!std::isfinite(a.dmd_loss)) throw ConfigError("--dmd-loss must be finite");

  ImagePair pair{load_image(a.x), load_image(a.x_hat)};
  const auto seq = load_pose_sequence(a.pose);
  if (a.frame >= seq.frame_count()) throw RangeError("frame " + std::to_string(a.frame) + " is not in the sequence");
  if (pair.x.width != static_cast<std::size_t>(seq.image_size.width) ||
      pair.x.height != static_cast<std::size_t>(seq.image_size.height)) {
    throw ShapeError("image size does not match the pose sequence");
  }
  const TokenGrid grid = TokenGrid::covering(seq.image_size, a.patch);
  LabelingConfig lcfg;
  lcfg.label.dilation = a.dilation;
  const auto labels = label_sequence(seq, grid, lcfg, g.threads);
  const auto masks = rasterize_labels(labels.frame(a.frame), grid, pair.x.width, pair.x.height);
  log.info("rasterized region masks for frame " + std::to_string(a.frame));
  const auto res = region_loss(pair, masks, cfg, registry);

  ordered_json j;
  j["format"] = "posesparse-loss-report";
  j["version"] = 1;
  j["frame"] = a.frame;
  j["normalized"] = cfg.normalized;
  ordered_json regions = ordered_json::array();
  for (RegionLabel r : kBodyRegions) {
    regions.push_back({{"region", std::string(region_name(r))},
                       {"metric", cfg.metric(r)},
                       {"weight", cfg.weight(r)},
                       {"pixels", masks.count(r)},
                       {"value", res.per_region.at(r)}});
  }
  j["regions"] = regions;
  j["region_loss"] = res.total;
  j["lambda_region"] = cfg.lambda_region;
  j["dmd_loss"] = a.dmd_loss;
  j["objective"] = combined_objective(a.dmd_loss, res.total, cfg.lambda_region);
  emit(a.out, out, [&](std::ostream& o) { o << j.dump(2) << '\n'; });
  return 0;
}

// -------------------------------------------------------------- dmd-demo

struct DmdArgs {
  std::size_t dim = 2;
  std::size_t steps = 2000;
  double lr = 0.05;
  std::size_t batch = 256;
  double kl_threshold = 0.01;
  std::string out;
};

// d = 2 uses mu = (1, -1), Sigma = diag(0.5, 2); other dimensions repeat
// that pattern along the diagonal.
GaussianDistribution demo_teacher(std::size_t dim) {
  const auto d = static_cast<Eigen::Index>(dim);
  GaussianDistribution g{Eigen::VectorXd(d), Eigen::MatrixXd::Zero(d, d)};
  for (Eigen::Index i = 0; i < d; ++i) {
    g.mean[i] = i % 2 == 0 ? 1.0 : -1.0;
    g.cov(i, i) = i % 2 == 0 ? 0.5 : 2.0;
  }
  return g;
}

int cmd_dmd_demo(const DmdArgs& a, const GlobalOptions& g, std::ostream& out, const Logger& log) {
  if (a.dim == 0) throw ConfigError("dimension must be at least 1");
  if (!(a.kl_threshold > 0.0)) throw ConfigError("KL threshold must be positive");
  TrainOptions opts;
  opts.steps = a.steps;
  opts.lr = a.lr;
  opts.batch = a.batch;
  opts.seed = g.seed;
  opts.threads = g.threads;
  opts.validate();
  const auto teacher = demo_teacher(a.dim);
  const auto traj = train_student(StudentGenerator::standard(a.dim), teacher, opts);
  log.info("trained " + std::to_string(a.steps) + " steps");
  if (!a.out.empty()) emit(a.out, out, [&](std::ostream& o) { write_trajectory(o, traj); });
  const double final_kl = traj.back().reverse_kl;
  out << "initial_reverse_kl " << fmt_double(traj.front().reverse_kl) << '\n';
  out << "final_reverse_kl " << fmt_double(final_kl) << '\n';
  out << "threshold " << fmt_double(a.kl_threshold) << '\n';
  out << (final_kl < a.kl_threshold ? "PASS" : "FAIL") << '\n';
  return 0;
}

// ------------------------------------------------------------- fuse-demo

struct FuseArgs {
  std::size_t frames = 20;
  std::size_t segment_length = 8;
  std::size_t overlap = 2;
  std::size_t width = 2;
  double noise = 0.1;
  std::string out;
};

int cmd_fuse_demo(const FuseArgs& a, const GlobalOptions& g, std::ostream& out, const Logger& log) {
  if (a.width == 0) throw ConfigError("width must be at least 1");
  if (!(a.noise >= 0.0) || !std::isfinite(a.noise)) throw ConfigError("noise must be finite and >= 0");
  const auto plan = plan_segments(a.frames, a.segment_length, a.overlap);
  const auto weights = fusion_weights(plan);
  std::mt19937_64 rng(g.seed);
  std::normal_distribution<double> normal(0.0, a.noise);
  std::vector<FrameArray> segs;
  for (const auto& s : plan.segments) {
    FrameArray arr(s.size(), a.width);
    for (std::size_t f = 0; f < s.size(); ++f) {
      for (std::size_t c = 0; c < a.width; ++c) {
        const double truth = std::sin(0.3 * static_cast<double>(s.begin + f) + static_cast<double>(c));
        arr.at(f, c) = truth + (a.noise > 0.0 ? normal(rng) : 0.0);
      }
    }
    segs.push_back(std::move(arr));
  }
  const auto fused = fuse(segs, plan);
  log.info("fused " + std::to_string(plan.segments.size()) + " segments");
  emit(a.out, out, [&](std::ostream& o) {
    write_segment_plan(o, plan);
    for (std::size_t f = 0; f < plan.frames; ++f) {
      o << "weights " << f;
      for (const auto& t : weights[f]) o << ' ' << t.segment << ':' << t.weight.num << '/' << t.weight.den;
      o << '\n';
    }
    for (std::size_t f = 0; f < plan.frames; ++f) {
      o << "fused " << f;
      for (std::size_t c = 0; c < a.width; ++c) o << ' ' << fmt_double(fused.at(f, c));
      o << '\n';
    }
  });
  return 0;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Pose-driven sparse attention toolkit"};
  app.require_subcommand(1);
  GlobalOptions g;
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--threads", g.threads, "Worker threads")->capture_default_str()->check(CLI::Range(1u, 1024u));
  app.add_flag("-v,--verbose", g.verbosity, "Log progress to stderr");

  FilterArgs fa;
  auto* filter = app.add_subcommand("filter", "Drop frames that fail the confidence and visibility thresholds");
  filter->add_option("--in", fa.in, "Input pose file")->required();
  filter->add_option("--out", fa.out, "Filtered pose file")->required();
  filter->add_option("--report", fa.report, "Per-frame JSON report (default stdout)");
  filter->add_option("--face-conf-min", fa.policy.face_conf_min, "Face confidence must exceed this")->capture_default_str();
  filter->add_option("--body-conf-min", fa.policy.body_conf_min, "Upper-body confidence must exceed this")
      ->capture_default_str();
  filter->add_option("--visibility-min", fa.policy.body_visibility_min, "Minimum visible upper-body fraction")
      ->capture_default_str();

  MaskArgs ma;
  auto* mask = app.add_subcommand("mask", "Build the block-sparse attention layout for a pose sequence");
  mask->add_option("--in", ma.in, "Input pose file")->required();
  mask->add_option("--out", ma.out, "Block layout file")->required();
  mask->add_option("--report", ma.report, "JSON sparsity report (default stdout)");
  mask->add_option("--labels-out", ma.labels_out, "Region labeling file");
  mask->add_option("--similarity-out", ma.similarity_out, "Similarity matrix file");
  mask->add_option("-k,--k", ma.k, "Past frames each frame attends to (unvalidated default)")->capture_default_str();
  mask->add_option("--patch", ma.patch, "Pixels per token side")->capture_default_str();
  mask->add_option("--block-size", ma.block_size, "Block side in tokens")->capture_default_str();
  mask->add_option("--mode", ma.mode, "exact or block-approx")->capture_default_str();
  mask->add_option("--dilation", ma.dilation, "Region dilation in tokens (unvalidated default)")->capture_default_str();
  mask->add_option("--min-confidence", ma.min_confidence, "Keypoints at or below this are unusable")
      ->capture_default_str();
  mask->add_flag("--weight-by-confidence", ma.weight_by_confidence, "Weight alignment by keypoint confidence");
  mask->add_flag("--no-mls", ma.no_mls, "Disable MLS recovery of missing keypoints");
  mask->add_flag("--reference-frame", ma.reference_frame, "Label every frame from frame 0");
  mask->add_option("--heads", ma.heads, "Heads for FLOP accounting")->capture_default_str();
  mask->add_option("--head-dim", ma.head_dim, "Head dimension for FLOP accounting")->capture_default_str();

  BenchArgs ba;
  auto* bench = app.add_subcommand("bench", "Time dense vs block-sparse attention");
  bench->add_option("--frames", ba.frames, "Frame counts")->capture_default_str();
  bench->add_option("--tokens", ba.tokens, "Tokens per frame")->capture_default_str();
  bench->add_option("--heads", ba.heads)->capture_default_str();
  bench->add_option("--head-dim", ba.head_dim)->capture_default_str();
  bench->add_option("--block-size", ba.block_size)->capture_default_str();
  bench->add_option("--repeats", ba.repeats)->capture_default_str();
  bench->add_option("-k,--k", ba.k, "Unvalidated default")->capture_default_str();
  bench->add_option("--patch", ba.patch)->capture_default_str();
  bench->add_flag("--no-timing", ba.no_timing, "Print '-' for the timing column");
  bench->add_option("--out", ba.out, "Table file (default stdout)");

  LossArgs la;
  auto* loss = app.add_subcommand("loss", "Region-weighted reconstruction loss for one frame");
  loss->add_option("--x", la.x, "Ground-truth image")->required();
  loss->add_option("--x-hat", la.x_hat, "Generated image")->required();
  loss->add_option("--pose", la.pose, "Pose file")->required();
  loss->add_option("--frame", la.frame)->capture_default_str();
  loss->add_option("--patch", la.patch)->capture_default_str();
  loss->add_option("--dilation", la.dilation, "Unvalidated default")->capture_default_str();
  loss->add_option("--weights", la.weights, "face,hands,arms,bodies,shoulders (unvalidated default)")
      ->delimiter(',')
      ->capture_default_str();
  loss->add_option("--metrics", la.metrics, "Metric ids per region")->delimiter(',')->capture_default_str();
  loss->add_option("--lambda", la.lambda_region, "Region loss weight (unvalidated default)")->capture_default_str();
  loss->add_option("--dmd-loss", la.dmd_loss, "Distribution-matching loss to combine with")->capture_default_str();
  loss->add_flag("--normalized", la.normalized, "Average over region pixels instead of the whole image");
  loss->add_option("--out", la.out, "JSON report (default stdout)");

  DmdArgs da;
  auto* dmd = app.add_subcommand("dmd-demo", "Distill a Gaussian teacher into an affine student");
  dmd->add_option("--dim", da.dim)->capture_default_str();
  dmd->add_option("--steps", da.steps)->capture_default_str();
  dmd->add_option("--lr", da.lr, "Unvalidated default")->capture_default_str();
  dmd->add_option("--batch", da.batch, "Unvalidated default")->capture_default_str();
  dmd->add_option("--kl-threshold", da.kl_threshold)->capture_default_str();
  dmd->add_option("--out", da.out, "Trajectory file");

  FuseArgs ua;
  auto* fusecmd = app.add_subcommand("fuse-demo", "Split a synthetic signal into segments and fuse them back");
  fusecmd->add_option("--frames", ua.frames)->capture_default_str();
  fusecmd->add_option("--segment-length", ua.segment_length, "Unvalidated default")->capture_default_str();
  fusecmd->add_option("--overlap", ua.overlap, "Unvalidated default")->capture_default_str();
  fusecmd->add_option("--width", ua.width)->capture_default_str();
  fusecmd->add_option("--noise", ua.noise, "Per-segment noise std-dev")->capture_default_str();
  fusecmd->add_option("--out", ua.out, "Output file (default stdout)");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  const Logger log(err, g);
  try {
    if (*filter) return cmd_filter(fa, out, log);
    if (*mask) return cmd_mask(ma, g, out, log);
    if (*bench) return cmd_bench(ba, g, out, log);
    if (*loss) return cmd_loss(la, g, out, log);
    if (*dmd) return cmd_dmd_demo(da, g, out, log);
    if (*fusecmd) return cmd_fuse_demo(ua, g, out, log);
  } catch (const Error& e) {
    err << "posesparse: error: " << e.what() << '\n';
    return static_cast<int>(e.code());
  } catch (const std::exception& e) {
    err << "posesparse: internal error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace posesparse::cli

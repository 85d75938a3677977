#include "posesparse/attention.hpp"

#include <algorithm>
#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "posesparse/error.hpp"
#include "posesparse/parallel.hpp"
#include "posesparse/synthetic.hpp"

namespace posesparse {

AttentionInputs::AttentionInputs(std::size_t heads_, std::size_t tokens_, std::size_t head_dim_)
    : heads(heads_), tokens(tokens_), head_dim(head_dim_), q(heads_ * tokens_ * head_dim_),
      k(heads_ * tokens_ * head_dim_), v(heads_ * tokens_ * head_dim_),
      scale(head_dim_ > 0 ? 1.0f / std::sqrt(static_cast<float>(head_dim_)) : 1.0f) {}

AttentionInputs AttentionInputs::random(std::size_t heads, std::size_t tokens, std::size_t head_dim,
                                        std::uint64_t seed) {
  AttentionInputs inp(heads, tokens, head_dim);
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> dist(0.0f, 1.0f);
  for (auto* buf : {&inp.q, &inp.k, &inp.v}) {
    for (auto& x : *buf) x = dist(rng);
  }
  return inp;
}

void AttentionInputs::validate() const {
  const std::size_t n = heads * tokens * head_dim;
  if (heads == 0 || tokens == 0 || head_dim == 0) throw ShapeError("attention inputs: empty dimension");
  if (q.size() != n || k.size() != n || v.size() != n) throw ShapeError("attention inputs: Q, K, V shapes disagree");
  if (!std::isfinite(scale)) throw RangeError("attention inputs: non-finite scale");
  for (const auto* buf : {&q, &k, &v}) {
    for (float x : *buf) {
      if (!std::isfinite(x)) throw RangeError("attention inputs: non-finite entry");
    }
  }
}

namespace {

AttentionOutput make_output(const AttentionInputs& inp) {
  AttentionOutput out;
  out.heads = inp.heads;
  out.tokens = inp.tokens;
  out.head_dim = inp.head_dim;
  out.o.assign(inp.q.size(), 0.0f);
  out.attended.assign(inp.tokens, 0);
  return out;
}

double logit(const AttentionInputs& inp, std::size_t head, std::size_t row, std::size_t col) {
  const float* qr = &inp.q[inp.offset(head, row)];
  const float* kr = &inp.k[inp.offset(head, col)];
  double dot = 0.0;
  for (std::size_t d = 0; d < inp.head_dim; ++d) dot += static_cast<double>(qr[d]) * kr[d];
  return static_cast<double>(inp.scale) * dot;
}

// Two-pass softmax over an explicit key list.
template <typename Admit>
AttentionOutput dense_attention(const AttentionInputs& inp, Admit&& admit, unsigned threads) {
  AttentionOutput out = make_output(inp);
  parallel_for(inp.tokens, threads, [&](std::size_t row) {
    std::vector<std::size_t> keys;
    for (std::size_t col = 0; col < inp.tokens; ++col) {
      if (admit(row, col)) keys.push_back(col);
    }
    if (keys.empty()) throw EmptyRowError("query row " + std::to_string(row) + " has no admissible keys");
    out.attended[row] = static_cast<std::uint32_t>(keys.size());
    std::vector<double> s(keys.size());
    std::vector<double> acc(inp.head_dim);
    for (std::size_t h = 0; h < inp.heads; ++h) {
      double m = -std::numeric_limits<double>::infinity();
      for (std::size_t idx = 0; idx < keys.size(); ++idx) {
        s[idx] = logit(inp, h, row, keys[idx]);
        m = std::max(m, s[idx]);
      }
      std::fill(acc.begin(), acc.end(), 0.0);
      double denom = 0.0;
      for (std::size_t idx = 0; idx < keys.size(); ++idx) {
        const double p = std::exp(s[idx] - m);
        denom += p;
        const float* vr = &inp.v[inp.offset(h, keys[idx])];
        for (std::size_t d = 0; d < inp.head_dim; ++d) acc[d] += p * vr[d];
      }
      float* o = &out.o[out.offset(h, row)];
      for (std::size_t d = 0; d < inp.head_dim; ++d) o[d] = static_cast<float>(acc[d] / denom);
    }
  });
  return out;
}

void check_dense_size(const AttentionInputs& inp, std::size_t max_tokens) {
  if (inp.tokens > max_tokens) {
    throw ConfigError("dense attention limited to " + std::to_string(max_tokens) + " tokens, got " +
                      std::to_string(inp.tokens));
  }
}

AttentionOutput run_block_sparse(const AttentionInputs& inp, const BlockSparseLayout& layout,
                                 const AttentionMask* mask, const BlockSparseOptions& opts) {
  inp.validate();
  if (layout.total_tokens() != inp.tokens) {
    throw LayoutMismatchError("layout covers " + std::to_string(layout.total_tokens()) + " tokens, inputs have " +
                              std::to_string(inp.tokens));
  }
  const bool exact = layout.mode() == BlockMode::Exact;
  if (exact) {
    if (mask == nullptr) throw ConfigError("Exact block-sparse attention needs the token mask");
    if (mask->frames() != layout.frames() || mask->tokens_per_frame() != layout.tokens_per_frame()) {
      throw LayoutMismatchError("layout dimensions disagree with the attention mask");
    }
  }

  AttentionOutput out = make_output(inp);
  const std::size_t bs = layout.block_size();
  const std::size_t total = inp.tokens;
  const std::size_t d = inp.head_dim;

  parallel_for(layout.blocks_per_side(), opts.threads, [&](std::size_t br) {
    std::vector<BlockIndex> blocks(layout.row(br).begin(), layout.row(br).end());
    if (opts.shuffle_seed) {
      std::mt19937_64 rng(*opts.shuffle_seed ^ (0x9E3779B97F4A7C15ull * (br + 1)));
      std::shuffle(blocks.begin(), blocks.end(), rng);
    }
    const std::size_t r0 = br * bs;
    const std::size_t r1 = std::min(total, r0 + bs);
    std::vector<std::size_t> keys;
    std::vector<double> s;
    std::vector<double> acc(inp.heads * d);
    std::vector<double> run_max(inp.heads);
    std::vector<double> run_den(inp.heads);

    for (std::size_t row = r0; row < r1; ++row) {
      std::fill(acc.begin(), acc.end(), 0.0);
      std::fill(run_max.begin(), run_max.end(), -std::numeric_limits<double>::infinity());
      std::fill(run_den.begin(), run_den.end(), 0.0);
      std::uint32_t attended = 0;

      for (const auto& blk : blocks) {
        const std::size_t c0 = std::size_t{blk.col} * bs;
        const std::size_t c1 = std::min(total, c0 + bs);
        keys.clear();
        for (std::size_t col = c0; col < c1; ++col) {
          if (!exact || mask->allowed_flat(row, col)) keys.push_back(col);
        }
        if (keys.empty()) continue;
        attended += static_cast<std::uint32_t>(keys.size());
        s.resize(keys.size());
        for (std::size_t h = 0; h < inp.heads; ++h) {
          double block_max = -std::numeric_limits<double>::infinity();
          for (std::size_t idx = 0; idx < keys.size(); ++idx) {
            s[idx] = logit(inp, h, row, keys[idx]);
            block_max = std::max(block_max, s[idx]);
          }
          const double new_max = std::max(run_max[h], block_max);
          const double rescale = std::exp(run_max[h] - new_max);  // exp(-inf) = 0 on the first block
          double* a = &acc[h * d];
          for (std::size_t j = 0; j < d; ++j) a[j] *= rescale;
          double den = run_den[h] * rescale;
          for (std::size_t idx = 0; idx < keys.size(); ++idx) {
            const double p = std::exp(s[idx] - new_max);
            den += p;
            const float* vr = &inp.v[inp.offset(h, keys[idx])];
            for (std::size_t j = 0; j < d; ++j) a[j] += p * vr[j];
          }
          run_den[h] = den;
          run_max[h] = new_max;
        }
      }
      if (attended == 0) throw EmptyRowError("query row " + std::to_string(row) + " has no admissible keys");
      out.attended[row] = attended;
      for (std::size_t h = 0; h < inp.heads; ++h) {
        float* o = &out.o[out.offset(h, row)];
        for (std::size_t j = 0; j < d; ++j) o[j] = static_cast<float>(acc[h * d + j] / run_den[h]);
      }
    }
  });
  return out;
}

}  // namespace

AttentionOutput dense_masked_attention(const AttentionInputs& inp, const AttentionMask& mask, unsigned threads,
                                       std::size_t max_tokens) {
  inp.validate();
  if (mask.total_tokens() != inp.tokens) {
    throw DimensionMismatchError("mask covers " + std::to_string(mask.total_tokens()) + " tokens, inputs have " +
                                 std::to_string(inp.tokens));
  }
  check_dense_size(inp, max_tokens);
  return dense_attention(inp, [&](std::size_t r, std::size_t c) { return mask.allowed_flat(r, c); }, threads);
}

AttentionOutput dense_unmasked_attention(const AttentionInputs& inp, unsigned threads, std::size_t max_tokens) {
  inp.validate();
  check_dense_size(inp, max_tokens);
  return dense_attention(inp, [](std::size_t, std::size_t) { return true; }, threads);
}

AttentionOutput block_sparse_attention(const AttentionInputs& inp, const BlockSparseLayout& layout,
                                       const AttentionMask& mask, const BlockSparseOptions& opts) {
  return run_block_sparse(inp, layout, &mask, opts);
}

AttentionOutput block_sparse_attention(const AttentionInputs& inp, const BlockSparseLayout& layout,
                                       const BlockSparseOptions& opts) {
  return run_block_sparse(inp, layout, nullptr, opts);
}

float max_abs_difference(const AttentionOutput& a, const AttentionOutput& b) {
  if (a.o.size() != b.o.size()) throw ShapeError("max_abs_difference: output shapes differ");
  float m = 0.0f;
  for (std::size_t i = 0; i < a.o.size(); ++i) m = std::max(m, std::abs(a.o[i] - b.o[i]));
  return m;
}

std::uint64_t output_checksum(const AttentionOutput& out) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (float x : out.o) {
    const auto bits = std::bit_cast<std::uint32_t>(x);
    for (int i = 0; i < 4; ++i) {
      h ^= (bits >> (8 * i)) & 0xFFu;
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

namespace {

TokenGrid grid_for(std::size_t n, int patch) {
  std::size_t h = static_cast<std::size_t>(std::sqrt(static_cast<double>(n)));
  while (h > 1 && n % h != 0) --h;
  if (h == 0) h = 1;
  return {static_cast<int>(h), static_cast<int>(n / h), patch};
}

template <typename Fn>
double median_ms(std::size_t repeats, Fn&& fn) {
  std::vector<double> times;
  for (std::size_t r = 0; r < std::max<std::size_t>(repeats, 1); ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
  }
  std::sort(times.begin(), times.end());
  const std::size_t m = times.size() / 2;
  return times.size() % 2 == 1 ? times[m] : 0.5 * (times[m - 1] + times[m]);
}

std::string shortest(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

std::vector<BenchRow> bench_attention(const std::vector<BenchSize>& sizes, const BenchConfig& cfg) {
  cfg.mask.validate();
  if (cfg.block_size < 1) throw ConfigError("block size must be at least 1");
  std::vector<BenchRow> rows;
  for (std::size_t s = 0; s < sizes.size(); ++s) {
    const auto& size = sizes[s];
    if (size.frames == 0 || size.tokens_per_frame == 0 || size.heads == 0 || size.head_dim == 0) {
      throw ConfigError("bench sizes must be positive");
    }
    const TokenGrid grid = grid_for(size.tokens_per_frame, cfg.patch_size);
    SyntheticPoseOptions pose_opts;
    pose_opts.frames = size.frames;
    pose_opts.image_size = {grid.width_tokens * grid.patch_size, grid.height_tokens * grid.patch_size};
    pose_opts.seed = cfg.seed + s;
    const auto seq = synthetic_pose_sequence(pose_opts);
    const auto labels = label_sequence(seq, grid, {}, cfg.threads);
    const auto mask = build_mask(seq, grid, cfg.mask, labels, cfg.threads);
    const auto layout = pool_to_blocks(mask, cfg.block_size, BlockMode::Exact, cfg.threads);
    const auto report = sparsity_report(layout, mask, size.head_dim, size.heads);
    const auto inp = AttentionInputs::random(size.heads, mask.total_tokens(), size.head_dim, cfg.seed + 1000 + s);

    AttentionOutput dense_out;
    AttentionOutput sparse_out;
    const double dense_ms = median_ms(cfg.repeats, [&] { dense_out = dense_masked_attention(inp, mask, cfg.threads); });
    const double sparse_ms = median_ms(cfg.repeats, [&] {
      sparse_out = block_sparse_attention(inp, layout, mask, {.threads = cfg.threads, .shuffle_seed = std::nullopt});
    });

    BenchRow dense_row{size, cfg.block_size, "dense", dense_ms, report.token_pair_density, 1.0,
                       report.dense_attention_flops, 0.0, output_checksum(dense_out)};
    BenchRow sparse_row{size,
                        cfg.block_size,
                        "sparse",
                        sparse_ms,
                        report.token_pair_density,
                        report.block_density,
                        report.estimated_attention_flops,
                        max_abs_difference(sparse_out, dense_out),
                        output_checksum(sparse_out)};
    rows.push_back(std::move(dense_row));
    rows.push_back(std::move(sparse_row));
  }
  return rows;
}

void write_bench_table(std::ostream& out, const std::vector<BenchRow>& rows, bool include_timing) {
  out << "# posesparse-bench 1\n";
  out << "# T N heads head_dim block_size path median_ms token_density block_density flops max_abs_diff checksum\n";
  for (const auto& r : rows) {
    std::ostringstream hex;
    hex << std::hex << std::setw(16) << std::setfill('0') << r.checksum;
    out << r.size.frames << ' ' << r.size.tokens_per_frame << ' ' << r.size.heads << ' ' << r.size.head_dim << ' '
        << r.block_size << ' ' << r.path << ' ' << (include_timing ? shortest(r.median_ms) : std::string("-")) << ' '
        << shortest(r.token_density) << ' ' << shortest(r.block_density) << ' ' << r.flops << ' '
        << shortest(r.max_abs_diff) << ' ' << hex.str() << '\n';
  }
}

}  // namespace posesparse

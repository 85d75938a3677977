#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "posesparse/mask_builder.hpp"

namespace posesparse {

// Q, K, V laid out as (heads, tokens, head_dim), row-major, float32.
struct AttentionInputs {
  std::size_t heads = 0;
  std::size_t tokens = 0;
  std::size_t head_dim = 0;
  std::vector<float> q;
  std::vector<float> k;
  std::vector<float> v;
  float scale = 1.0f;

  AttentionInputs() = default;
  AttentionInputs(std::size_t heads, std::size_t tokens, std::size_t head_dim);
  // Standard-normal entries, scale = 1/sqrt(head_dim).
  static AttentionInputs random(std::size_t heads, std::size_t tokens, std::size_t head_dim, std::uint64_t seed);

  std::size_t offset(std::size_t head, std::size_t token) const { return (head * tokens + token) * head_dim; }
  void validate() const;  // ShapeError / RangeError
};

struct AttentionOutput {
  std::size_t heads = 0;
  std::size_t tokens = 0;
  std::size_t head_dim = 0;
  std::vector<float> o;
  // Keys each query row attended to (identical across heads).
  std::vector<std::uint32_t> attended;

  std::size_t offset(std::size_t head, std::size_t token) const { return (head * tokens + token) * head_dim; }
};

// Largest T*N the dense oracle accepts.
inline constexpr std::size_t kDenseOracleMaxTokens = 16384;

// softmax(scale * Q K^T + M) V over admissible keys only, with row-max
// subtraction; double accumulation, float output.
AttentionOutput dense_masked_attention(const AttentionInputs& inp, const AttentionMask& mask, unsigned threads = 1,
                                       std::size_t max_tokens = kDenseOracleMaxTokens);
// Plain softmax attention with no mask at all.
AttentionOutput dense_unmasked_attention(const AttentionInputs& inp, unsigned threads = 1,
                                         std::size_t max_tokens = kDenseOracleMaxTokens);

struct BlockSparseOptions {
  unsigned threads = 1;
  // When set, each block row visits its active blocks in a seeded random order.
  std::optional<std::uint64_t> shuffle_seed;
};

// Visits only active blocks with an online softmax (running max and
// denominator). Exact mode re-applies the token mask inside each block;
// BlockApprox treats active blocks as fully unmasked.
AttentionOutput block_sparse_attention(const AttentionInputs& inp, const BlockSparseLayout& layout,
                                       const AttentionMask& mask, const BlockSparseOptions& opts = {});
// BlockApprox only: no token mask is consulted.
AttentionOutput block_sparse_attention(const AttentionInputs& inp, const BlockSparseLayout& layout,
                                       const BlockSparseOptions& opts = {});

float max_abs_difference(const AttentionOutput& a, const AttentionOutput& b);
// FNV-1a over the output bit patterns.
std::uint64_t output_checksum(const AttentionOutput& out);

struct BenchSize {
  std::size_t frames = 0;
  std::size_t tokens_per_frame = 0;
  std::size_t heads = 0;
  std::size_t head_dim = 0;
};

struct BenchConfig {
  GlobalMaskConfig mask;
  std::size_t block_size = 128;
  std::size_t repeats = 3;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  int patch_size = 16;
};

struct BenchRow {
  BenchSize size;
  std::size_t block_size = 0;
  std::string path;  // "dense" or "sparse"
  double median_ms = 0.0;
  double token_density = 0.0;
  double block_density = 0.0;
  std::uint64_t flops = 0;
  double max_abs_diff = 0.0;  // sparse rows: against the dense oracle
  std::uint64_t checksum = 0;
};

// Builds a pose-driven mask on a synthetic sequence for each size and times
// dense vs Exact block-sparse attention. The token grid for N tokens is the
// most square factorization h x w with h <= w.
std::vector<BenchRow> bench_attention(const std::vector<BenchSize>& sizes, const BenchConfig& cfg);

// Whitespace-separated table preceded by a version line and a column line:
//   # posesparse-bench 1
//   # T N heads head_dim block_size path median_ms token_density block_density flops max_abs_diff checksum
// Doubles are printed in shortest round-trip form; checksum in hex. With
// include_timing false, median_ms is printed as '-'.
void write_bench_table(std::ostream& out, const std::vector<BenchRow>& rows, bool include_timing = true);

}  // namespace posesparse

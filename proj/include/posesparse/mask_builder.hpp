#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string_view>
#include <vector>

#include "posesparse/alignment.hpp"
#include "posesparse/regions.hpp"

namespace posesparse {

// Factored attention mask over the flattened (T*N) x (T*N) token matrix.
// Entry (tq, i, tk, j) is admissible iff the frame pair is admissible and
// either tq == tk or tokens i and j share a non-background region. Frame pairs
// with tk > tq are never admissible; each frame always admits itself.
class AttentionMask {
 public:
  AttentionMask(FrameAdmissibility admissibility, RegionLabeling labels);

  std::size_t frames() const { return labels_.frames(); }
  std::size_t tokens_per_frame() const { return labels_.tokens(); }
  std::size_t total_tokens() const { return frames() * tokens_per_frame(); }

  bool frame_pair_admissible(std::size_t tq, std::size_t tk) const { return frame_pairs_[tq * frames() + tk] != 0; }
  bool allowed(std::size_t tq, std::size_t i, std::size_t tk, std::size_t j) const {
    if (!frame_pair_admissible(tq, tk)) return false;
    return tq == tk || regions_correspond(labels_.at(tq, i), labels_.at(tk, j));
  }
  // Same predicate on flattened token indices (frame-major).
  bool allowed_flat(std::size_t row, std::size_t col) const {
    const std::size_t n = tokens_per_frame();
    return allowed(row / n, row % n, col / n, col % n);
  }

  const FrameAdmissibility& admissibility() const { return admissibility_; }
  const RegionLabeling& labels() const { return labels_; }
  std::size_t admissible_frame_pairs() const;

 private:
  FrameAdmissibility admissibility_;
  RegionLabeling labels_;
  std::vector<std::uint8_t> frame_pairs_;
};

// Global (top-K pose similarity) and local (region) masks combined.
AttentionMask build_mask(const PoseSequence& seq, const TokenGrid& grid, const GlobalMaskConfig& cfg,
                         const RegionLabeling& regions, unsigned threads = 1);
// Same, with a precomputed similarity matrix.
AttentionMask build_mask(const SimilarityMatrix& sim, const GlobalMaskConfig& cfg, const RegionLabeling& regions);

enum class BlockMode : std::uint8_t { Exact = 0, BlockApprox = 1 };
std::string_view block_mode_name(BlockMode m);
BlockMode block_mode_from_name(std::string_view name);  // throws ConfigError

struct BlockIndex {
  std::uint32_t row = 0;
  std::uint32_t col = 0;
  friend auto operator<=>(const BlockIndex&, const BlockIndex&) = default;
};

class BlockSparseLayout {
 public:
  BlockSparseLayout() = default;
  // `active` need not be sorted; duplicates are removed. Throws
  // LayoutMismatchError on out-of-range blocks.
  BlockSparseLayout(std::size_t frames, std::size_t tokens_per_frame, std::size_t block_size, BlockMode mode,
                    std::vector<BlockIndex> active);
  // Every block active.
  static BlockSparseLayout dense(std::size_t frames, std::size_t tokens_per_frame, std::size_t block_size,
                                 BlockMode mode);

  std::size_t frames() const { return frames_; }
  std::size_t tokens_per_frame() const { return tokens_per_frame_; }
  std::size_t total_tokens() const { return frames_ * tokens_per_frame_; }
  std::size_t block_size() const { return block_size_; }
  BlockMode mode() const { return mode_; }
  std::size_t blocks_per_side() const { return (total_tokens() + block_size_ - 1) / block_size_; }
  std::size_t total_blocks() const { return blocks_per_side() * blocks_per_side(); }

  const std::vector<BlockIndex>& active() const { return active_; }
  // Active blocks of one block row, in ascending column order.
  std::span<const BlockIndex> row(std::size_t block_row) const;
  bool is_active(std::size_t block_row, std::size_t block_col) const;

  friend bool operator==(const BlockSparseLayout& a, const BlockSparseLayout& b) {
    return a.frames_ == b.frames_ && a.tokens_per_frame_ == b.tokens_per_frame_ && a.block_size_ == b.block_size_ &&
           a.mode_ == b.mode_ && a.active_ == b.active_;
  }

 private:
  std::size_t frames_ = 0;
  std::size_t tokens_per_frame_ = 0;
  std::size_t block_size_ = 1;
  BlockMode mode_ = BlockMode::Exact;
  std::vector<BlockIndex> active_;
  std::vector<std::size_t> row_offsets_;
};

// OR-pooling: a block is active iff any token pair inside it is admissible.
BlockSparseLayout pool_to_blocks(const AttentionMask& mask, std::size_t block_size, BlockMode mode,
                                 unsigned threads = 1);

// OR-pooling of an arbitrary square token predicate, scanned entry by entry.
BlockSparseLayout pool_token_predicate(const std::function<bool(std::size_t, std::size_t)>& admissible,
                                       std::size_t frames, std::size_t tokens_per_frame, std::size_t block_size,
                                       BlockMode mode);

struct SparsityReport {
  std::uint64_t admissible_pairs = 0;
  std::uint64_t total_pairs = 0;
  double token_pair_density = 0.0;
  std::uint64_t active_blocks = 0;
  std::uint64_t total_blocks = 0;
  double block_density = 0.0;
  // 4 * head_dim * heads per computed query/key pair (QK^T and AV, one
  // multiply and one add each). The estimate counts every pair inside active
  // blocks, clipped at the matrix edge; the mask figure counts admissible
  // pairs only.
  std::uint64_t estimated_attention_flops = 0;
  std::uint64_t masked_attention_flops = 0;
  std::uint64_t dense_attention_flops = 0;
};

// Admissible pairs are counted from the factored form: N^2 per diagonal frame
// pair, and sum over regions of |I_r(tq)| * |I_r(tk)| per off-diagonal pair.
SparsityReport sparsity_report(const BlockSparseLayout& layout, const AttentionMask& mask, std::size_t head_dim,
                               std::size_t num_heads);

// Binary layout, little-endian: "PSBL", u32 version (1), u32 T, u32 N,
// u32 block_size, u8 mode, u64 active count, then (u32 row, u32 col) pairs in
// ascending order.
void write_block_layout(std::ostream& out, const BlockSparseLayout& layout);
BlockSparseLayout read_block_layout(std::istream& in);
void save_block_layout(const std::filesystem::path& path, const BlockSparseLayout& layout);
BlockSparseLayout load_block_layout(const std::filesystem::path& path);

}  // namespace posesparse

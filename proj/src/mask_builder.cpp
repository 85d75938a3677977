#include "posesparse/mask_builder.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <string>

#include "posesparse/detail/binary.hpp"
#include "posesparse/error.hpp"
#include "posesparse/parallel.hpp"

namespace posesparse {

AttentionMask::AttentionMask(FrameAdmissibility admissibility, RegionLabeling labels)
    : admissibility_(std::move(admissibility)), labels_(std::move(labels)) {
  const std::size_t t_count = labels_.frames();
  if (admissibility_.size() != t_count) {
    throw DimensionMismatchError("attention mask: admissibility covers " + std::to_string(admissibility_.size()) +
                                 " frames, labeling covers " + std::to_string(t_count));
  }
  if (labels_.tokens() == 0 && t_count > 0) throw DimensionMismatchError("attention mask: zero tokens per frame");
  frame_pairs_.assign(t_count * t_count, 0);
  for (std::size_t tq = 0; tq < t_count; ++tq) {
    for (std::size_t tk : admissibility_[tq]) {
      if (tk > tq) throw DimensionMismatchError("attention mask: key frame after query frame breaks causality");
      frame_pairs_[tq * t_count + tk] = 1;
    }
    frame_pairs_[tq * t_count + tq] = 1;
  }
}

std::size_t AttentionMask::admissible_frame_pairs() const {
  return static_cast<std::size_t>(std::count(frame_pairs_.begin(), frame_pairs_.end(), std::uint8_t{1}));
}

AttentionMask build_mask(const SimilarityMatrix& sim, const GlobalMaskConfig& cfg, const RegionLabeling& regions) {
  if (sim.frames() != regions.frames()) {
    throw DimensionMismatchError("build_mask: similarity matrix has " + std::to_string(sim.frames()) +
                                 " frames, labeling has " + std::to_string(regions.frames()));
  }
  return AttentionMask(select_topk(sim, cfg), regions);
}

AttentionMask build_mask(const PoseSequence& seq, const TokenGrid& grid, const GlobalMaskConfig& cfg,
                         const RegionLabeling& regions, unsigned threads) {
  cfg.validate();
  if (regions.frames() != seq.frame_count() || regions.tokens() != grid.tokens()) {
    throw DimensionMismatchError("build_mask: labeling does not match the sequence and token grid");
  }
  return build_mask(similarity_matrix(seq, cfg.align, threads), cfg, regions);
}

std::string_view block_mode_name(BlockMode m) { return m == BlockMode::Exact ? "exact" : "block-approx"; }

BlockMode block_mode_from_name(std::string_view name) {
  if (name == "exact") return BlockMode::Exact;
  if (name == "block-approx") return BlockMode::BlockApprox;
  throw ConfigError("unknown block mode '" + std::string(name) + "' (expected exact or block-approx)");
}

BlockSparseLayout::BlockSparseLayout(std::size_t frames, std::size_t tokens_per_frame, std::size_t block_size,
                                     BlockMode mode, std::vector<BlockIndex> active)
    : frames_(frames), tokens_per_frame_(tokens_per_frame), block_size_(block_size), mode_(mode),
      active_(std::move(active)) {
  if (block_size_ < 1) throw ConfigError("block size must be at least 1");
  std::sort(active_.begin(), active_.end());
  active_.erase(std::unique(active_.begin(), active_.end()), active_.end());
  const std::size_t side = blocks_per_side();
  row_offsets_.assign(side + 1, 0);
  for (const auto& b : active_) {
    if (b.row >= side || b.col >= side) throw LayoutMismatchError("block index outside the attention matrix");
    ++row_offsets_[b.row + 1];
  }
  for (std::size_t r = 0; r < side; ++r) row_offsets_[r + 1] += row_offsets_[r];
}

BlockSparseLayout BlockSparseLayout::dense(std::size_t frames, std::size_t tokens_per_frame, std::size_t block_size,
                                           BlockMode mode) {
  if (block_size < 1) throw ConfigError("block size must be at least 1");
  const std::size_t side = (frames * tokens_per_frame + block_size - 1) / block_size;
  std::vector<BlockIndex> all;
  all.reserve(side * side);
  for (std::size_t r = 0; r < side; ++r) {
    for (std::size_t c = 0; c < side; ++c) all.push_back({static_cast<std::uint32_t>(r), static_cast<std::uint32_t>(c)});
  }
  return BlockSparseLayout(frames, tokens_per_frame, block_size, mode, std::move(all));
}

std::span<const BlockIndex> BlockSparseLayout::row(std::size_t block_row) const {
  if (block_row + 1 >= row_offsets_.size()) return {};
  return std::span<const BlockIndex>(active_).subspan(row_offsets_[block_row],
                                                      row_offsets_[block_row + 1] - row_offsets_[block_row]);
}

bool BlockSparseLayout::is_active(std::size_t block_row, std::size_t block_col) const {
  const auto r = row(block_row);
  return std::binary_search(r.begin(), r.end(),
                            BlockIndex{static_cast<std::uint32_t>(block_row), static_cast<std::uint32_t>(block_col)});
}

namespace {

constexpr std::uint8_t kBodyRegionBits = 0b011111;  // every label but Background

// Per frame and label, prefix counts over token positions so that the set of
// labels present in any token sub-range is an O(labels) query.
class LabelPrefix {
 public:
  explicit LabelPrefix(const RegionLabeling& labels)
      : n_(labels.tokens()), counts_(labels.frames() * kLabelCount * (labels.tokens() + 1), 0) {
    for (std::size_t t = 0; t < labels.frames(); ++t) {
      const auto slice = labels.frame(t);
      for (std::size_t l = 0; l < kLabelCount; ++l) {
        auto* row = &counts_[(t * kLabelCount + l) * (n_ + 1)];
        for (std::size_t i = 0; i < n_; ++i) row[i + 1] = row[i] + (static_cast<std::size_t>(slice[i]) == l ? 1 : 0);
      }
    }
  }

  std::uint32_t count(std::size_t frame, std::size_t label, std::size_t begin, std::size_t end) const {
    const auto* row = &counts_[(frame * kLabelCount + label) * (n_ + 1)];
    return row[end] - row[begin];
  }

  std::uint8_t present(std::size_t frame, std::size_t begin, std::size_t end) const {
    std::uint8_t bits = 0;
    for (std::size_t l = 0; l < kLabelCount; ++l) {
      if (count(frame, l, begin, end) > 0) bits |= static_cast<std::uint8_t>(1u << l);
    }
    return bits;
  }

 private:
  std::size_t n_;
  std::vector<std::uint32_t> counts_;
};

}  // namespace

BlockSparseLayout pool_to_blocks(const AttentionMask& mask, std::size_t block_size, BlockMode mode, unsigned threads) {
  if (block_size < 1) throw ConfigError("block size must be at least 1");
  const std::size_t n = mask.tokens_per_frame();
  const std::size_t total = mask.total_tokens();
  const std::size_t side = (total + block_size - 1) / block_size;
  const LabelPrefix prefix(mask.labels());

  std::vector<std::vector<BlockIndex>> rows(side);
  parallel_for(side, threads, [&](std::size_t br) {
    const std::size_t r0 = br * block_size;
    const std::size_t r1 = std::min(total, r0 + block_size);
    for (std::size_t bc = 0; bc < side; ++bc) {
      const std::size_t c0 = bc * block_size;
      const std::size_t c1 = std::min(total, c0 + block_size);
      bool active = false;
      for (std::size_t tq = r0 / n; tq <= (r1 - 1) / n && !active; ++tq) {
        const std::size_t qi0 = std::max(r0, tq * n) - tq * n;
        const std::size_t qi1 = std::min(r1, (tq + 1) * n) - tq * n;
        for (std::size_t tk = c0 / n; tk <= (c1 - 1) / n && !active; ++tk) {
          if (!mask.frame_pair_admissible(tq, tk)) continue;
          if (tq == tk) {
            active = true;
            break;
          }
          const std::size_t kj0 = std::max(c0, tk * n) - tk * n;
          const std::size_t kj1 = std::min(c1, (tk + 1) * n) - tk * n;
          active = (prefix.present(tq, qi0, qi1) & prefix.present(tk, kj0, kj1) & kBodyRegionBits) != 0;
        }
      }
      if (active) rows[br].push_back({static_cast<std::uint32_t>(br), static_cast<std::uint32_t>(bc)});
    }
  });
  std::vector<BlockIndex> all;
  for (auto& r : rows) all.insert(all.end(), r.begin(), r.end());
  return BlockSparseLayout(mask.frames(), n, block_size, mode, std::move(all));
}

BlockSparseLayout pool_token_predicate(const std::function<bool(std::size_t, std::size_t)>& admissible,
                                       std::size_t frames, std::size_t tokens_per_frame, std::size_t block_size,
                                       BlockMode mode) {
  if (block_size < 1) throw ConfigError("block size must be at least 1");
  const std::size_t total = frames * tokens_per_frame;
  const std::size_t side = (total + block_size - 1) / block_size;
  std::vector<BlockIndex> active;
  for (std::size_t br = 0; br < side; ++br) {
    for (std::size_t bc = 0; bc < side; ++bc) {
      bool any = false;
      for (std::size_t r = br * block_size; r < std::min(total, (br + 1) * block_size) && !any; ++r) {
        for (std::size_t c = bc * block_size; c < std::min(total, (bc + 1) * block_size) && !any; ++c) {
          any = admissible(r, c);
        }
      }
      if (any) active.push_back({static_cast<std::uint32_t>(br), static_cast<std::uint32_t>(bc)});
    }
  }
  return BlockSparseLayout(frames, tokens_per_frame, block_size, mode, std::move(active));
}

SparsityReport sparsity_report(const BlockSparseLayout& layout, const AttentionMask& mask, std::size_t head_dim,
                               std::size_t num_heads) {
  if (layout.frames() != mask.frames() || layout.tokens_per_frame() != mask.tokens_per_frame()) {
    throw LayoutMismatchError("sparsity_report: layout and mask dimensions differ");
  }
  if (head_dim < 1 || num_heads < 1) throw ConfigError("head_dim and num_heads must be positive");
  const std::size_t n = mask.tokens_per_frame();
  const std::size_t t_count = mask.frames();

  std::vector<std::array<std::uint64_t, kLabelCount>> region_sizes(t_count);
  for (std::size_t t = 0; t < t_count; ++t) {
    region_sizes[t].fill(0);
    for (RegionLabel l : mask.labels().frame(t)) ++region_sizes[t][static_cast<std::size_t>(l)];
  }

  SparsityReport rep;
  for (std::size_t tq = 0; tq < t_count; ++tq) {
    for (std::size_t tk = 0; tk <= tq; ++tk) {
      if (!mask.frame_pair_admissible(tq, tk)) continue;
      if (tq == tk) {
        rep.admissible_pairs += static_cast<std::uint64_t>(n) * n;
        continue;
      }
      for (RegionLabel r : kBodyRegions) {
        const auto idx = static_cast<std::size_t>(r);
        rep.admissible_pairs += region_sizes[tq][idx] * region_sizes[tk][idx];
      }
    }
  }
  const std::uint64_t total_tokens = mask.total_tokens();
  rep.total_pairs = total_tokens * total_tokens;
  rep.token_pair_density =
      rep.total_pairs == 0 ? 0.0 : static_cast<double>(rep.admissible_pairs) / static_cast<double>(rep.total_pairs);

  const std::size_t bs = layout.block_size();
  std::uint64_t block_pairs = 0;
  for (const auto& b : layout.active()) {
    const std::uint64_t h = std::min<std::uint64_t>(bs, total_tokens - std::uint64_t{b.row} * bs);
    const std::uint64_t w = std::min<std::uint64_t>(bs, total_tokens - std::uint64_t{b.col} * bs);
    block_pairs += h * w;
  }
  rep.active_blocks = layout.active().size();
  rep.total_blocks = layout.total_blocks();
  rep.block_density =
      rep.total_blocks == 0 ? 0.0 : static_cast<double>(rep.active_blocks) / static_cast<double>(rep.total_blocks);

  const std::uint64_t per_pair = 4ull * head_dim * num_heads;
  rep.estimated_attention_flops = per_pair * block_pairs;
  rep.masked_attention_flops = per_pair * rep.admissible_pairs;
  rep.dense_attention_flops = per_pair * rep.total_pairs;
  return rep;
}

namespace {
constexpr std::string_view kLayoutMagic = "PSBL";
constexpr std::uint32_t kLayoutVersion = 1;
}  // namespace

void write_block_layout(std::ostream& out, const BlockSparseLayout& layout) {
  detail::write_magic(out, kLayoutMagic, kLayoutVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(layout.frames()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(layout.tokens_per_frame()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(layout.block_size()));
  detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(layout.mode()));
  detail::write_le<std::uint64_t>(out, layout.active().size());
  for (const auto& b : layout.active()) {
    detail::write_le<std::uint32_t>(out, b.row);
    detail::write_le<std::uint32_t>(out, b.col);
  }
}

BlockSparseLayout read_block_layout(std::istream& in) {
  detail::expect_magic(in, kLayoutMagic, kLayoutVersion);
  const auto frames = detail::read_le<std::uint32_t>(in);
  const auto tokens = detail::read_le<std::uint32_t>(in);
  const auto block_size = detail::read_le<std::uint32_t>(in);
  const auto mode = detail::read_le<std::uint8_t>(in);
  if (mode > 1) throw ParseError("block layout: unknown mode byte");
  if (block_size == 0) throw ParseError("block layout: block size is zero");
  const auto count = detail::read_le<std::uint64_t>(in);
  const std::uint64_t side = (std::uint64_t{frames} * tokens + block_size - 1) / block_size;
  if (count > side * side) throw ParseError("block layout: more active blocks than the matrix holds");
  std::vector<BlockIndex> active(count);
  for (auto& b : active) {
    b.row = detail::read_le<std::uint32_t>(in);
    b.col = detail::read_le<std::uint32_t>(in);
  }
  if (!std::is_sorted(active.begin(), active.end())) throw ParseError("block layout: blocks are not sorted");
  return BlockSparseLayout(frames, tokens, block_size, static_cast<BlockMode>(mode), std::move(active));
}

void save_block_layout(const std::filesystem::path& path, const BlockSparseLayout& layout) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_block_layout(out, layout);
}

BlockSparseLayout load_block_layout(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_block_layout(in);
}

}  // namespace posesparse

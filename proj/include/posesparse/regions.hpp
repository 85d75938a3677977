#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "posesparse/alignment.hpp"
#include "posesparse/pose_io.hpp"

namespace posesparse {

enum class RegionLabel : std::uint8_t { Face = 0, Hands = 1, Arms = 2, Bodies = 3, Shoulders = 4, Background = 5 };
inline constexpr std::size_t kLabelCount = 6;
inline constexpr std::array<RegionLabel, 5> kBodyRegions = {RegionLabel::Face, RegionLabel::Hands, RegionLabel::Arms,
                                                            RegionLabel::Bodies, RegionLabel::Shoulders};

std::string_view region_name(RegionLabel r);
// One character per label for grid dumps: F H A B S and '.' for background.
char region_glyph(RegionLabel r);

// Tokens that share a non-background label may attend across frames.
inline bool regions_correspond(RegionLabel a, RegionLabel b) { return a == b && a != RegionLabel::Background; }

struct TokenGrid {
  int height_tokens = 0;
  int width_tokens = 0;
  int patch_size = 1;

  std::size_t tokens() const { return static_cast<std::size_t>(height_tokens) * static_cast<std::size_t>(width_tokens); }
  // Smallest grid of the given patch size covering the image.
  static TokenGrid covering(ImageSize image, int patch_size);
  void validate() const;                    // throws ConfigError
  void validate_covers(ImageSize image) const;  // throws ConfigError
};

struct FrameLabeling {
  std::vector<RegionLabel> labels;          // N entries, row-major over the grid
  std::vector<RegionLabel> empty_regions;   // regions with no usable keypoints
};

struct LabelOptions {
  int dilation = 1;             // Chebyshev ring width in tokens
  double min_confidence = 0.0;  // keypoints need confidence above this and to lie in-frame
};

// Labels each token by the dilated convex hull of its region's keypoints.
// A token belongs to a hull when its closed cell [c, c+1] x [r, r+1] (token
// units) intersects it. Hands and Arms are the unions of their left and right
// hulls. Overlaps resolve Face > Hands > Arms > Shoulders > Bodies; remaining
// tokens are Background.
FrameLabeling label_tokens(const PoseFrame& frame, const GroupLayout& layout, ImageSize image, const TokenGrid& grid,
                           const LabelOptions& opts = {});

// Rigid moving-least-squares deformation defined by control points src -> dst
// with weights 1 / |v - p_i|^(2 alpha). A query that coincides with a control
// point maps to that point's destination.
class MlsRigidWarp {
 public:
  MlsRigidWarp(std::vector<Point2> src, std::vector<Point2> dst, double alpha = 1.0);

  Point2 operator()(const Point2& query) const;
  std::vector<Point2> apply(std::span<const Point2> queries) const;

 private:
  std::vector<Point2> src_;
  std::vector<Point2> dst_;
  double alpha_;
};

std::vector<Point2> mls_rigid_warp(std::span<const Point2> src, std::span<const Point2> dst,
                                   std::span<const Point2> queries, double alpha = 1.0);
// Uses every keypoint with positive confidence in both frames as a control point.
std::vector<Point2> mls_rigid_warp(const PoseFrame& src, const PoseFrame& dst, std::span<const Point2> queries,
                                   double alpha = 1.0);

enum class LabelingMode { PerFrame, ReferenceFrame };

struct LabelingConfig {
  LabelOptions label;
  LabelingMode mode = LabelingMode::PerFrame;
  std::size_t reference_frame = 0;
  // Recover unusable keypoints by warping them from the best-covered frame.
  bool mls_fallback = true;
  double mls_alpha = 1.0;
};

struct LabelWarning {
  std::size_t frame = 0;
  RegionLabel region = RegionLabel::Background;
};

class RegionLabeling {
 public:
  RegionLabeling() = default;
  RegionLabeling(std::size_t frames, std::size_t tokens);

  std::size_t frames() const { return frames_; }
  std::size_t tokens() const { return tokens_; }
  RegionLabel at(std::size_t frame, std::size_t token) const { return labels_[frame * tokens_ + token]; }
  std::span<const RegionLabel> frame(std::size_t t) const {
    return std::span<const RegionLabel>(labels_).subspan(t * tokens_, tokens_);
  }
  std::span<RegionLabel> frame(std::size_t t) { return std::span<RegionLabel>(labels_).subspan(t * tokens_, tokens_); }
  std::vector<std::size_t> token_index_set(std::size_t frame, RegionLabel region) const;
  const std::vector<RegionLabel>& labels() const { return labels_; }

  std::vector<LabelWarning> warnings;

  friend bool operator==(const RegionLabeling& a, const RegionLabeling& b) {
    return a.frames_ == b.frames_ && a.tokens_ == b.tokens_ && a.labels_ == b.labels_;
  }

 private:
  std::size_t frames_ = 0;
  std::size_t tokens_ = 0;
  std::vector<RegionLabel> labels_;
};

RegionLabeling label_sequence(const PoseSequence& seq, const TokenGrid& grid, const LabelingConfig& cfg = {},
                              unsigned threads = 1);

// Predicate over token pairs of two frame slices from the same grid.
class RegionCorrespondence {
 public:
  RegionCorrespondence(std::span<const RegionLabel> query_frame, std::span<const RegionLabel> key_frame);
  bool operator()(std::size_t i, std::size_t j) const { return regions_correspond(query_[i], key_[j]); }

 private:
  std::span<const RegionLabel> query_;
  std::span<const RegionLabel> key_;
};

RegionCorrespondence region_correspondence(std::span<const RegionLabel> query_frame,
                                           std::span<const RegionLabel> key_frame);

// Binary layout, little-endian: "PSRL", u32 version (1), u32 T, u32 N, u8 label
// count, then per label a u8 name length and the name bytes, then T*N label
// bytes in frame-major order.
void write_region_labeling(std::ostream& out, const RegionLabeling& labeling);
RegionLabeling read_region_labeling(std::istream& in);
void save_region_labeling(const std::filesystem::path& path, const RegionLabeling& labeling);
RegionLabeling load_region_labeling(const std::filesystem::path& path);

// Human-readable grid dump, one glyph per token.
void dump_region_grid(std::ostream& out, const RegionLabeling& labeling, const TokenGrid& grid);

}  // namespace posesparse

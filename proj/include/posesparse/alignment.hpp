#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <vector>

#include <Eigen/Core>

#include "posesparse/pose_io.hpp"

namespace posesparse {

using Point2 = Eigen::Vector2d;

struct RigidTransform {
  Eigen::Matrix2d rotation = Eigen::Matrix2d::Identity();
  Point2 translation = Point2::Zero();
  // Always 1 unless the similarity-transform mode was requested.
  double scale = 1.0;

  static RigidTransform from_angle(double radians, Point2 translation = Point2::Zero());
  Point2 apply(const Point2& p) const { return scale * (rotation * p) + translation; }
  double angle() const;
};

struct AlignResult {
  RigidTransform transform;  // maps source points onto target points
  double residual = 0.0;     // sqrt of the summed (weighted) squared distances
};

// Closed-form least-squares fit of target ≈ transform(source). `weights`, when
// non-empty, must match the point count. Throws DegenerateError when the
// source points coincide or the total weight is zero.
AlignResult rigid_align(std::span<const Point2> source, std::span<const Point2> target,
                        std::span<const double> weights = {}, bool allow_scale = false);

struct AlignOptions {
  bool weight_by_confidence = false;
  bool allow_scale = false;
  // Groups whose keypoints take part in the fit; all by default.
  std::array<bool, kPoseGroupCount> groups{true, true, true, true, true, true, true};
};

// Frame-level wrapper: selects the configured groups and, when requested,
// weights each correspondence by the product of the two confidences.
AlignResult rigid_align(const PoseFrame& source, const PoseFrame& target, const GroupLayout& layout,
                        const AlignOptions& opts = {});

// Lower-triangular matrix of pairwise alignment residuals: at(q, k) is defined
// for k < q only.
class SimilarityMatrix {
 public:
  SimilarityMatrix() = default;
  explicit SimilarityMatrix(std::size_t frames);

  std::size_t frames() const { return frames_; }
  double at(std::size_t query, std::size_t key) const { return values_[offset(query, key)]; }
  double& at(std::size_t query, std::size_t key) { return values_[offset(query, key)]; }
  std::span<const double> row(std::size_t query) const {
    return std::span<const double>(values_).subspan(offset_row(query), query);
  }
  const std::vector<double>& values() const { return values_; }

  friend bool operator==(const SimilarityMatrix&, const SimilarityMatrix&) = default;

 private:
  static std::size_t offset_row(std::size_t q) { return q == 0 ? 0 : q * (q - 1) / 2; }
  std::size_t offset(std::size_t q, std::size_t k) const;

  std::size_t frames_ = 0;
  std::vector<double> values_;
};

// Residual of the best rigid fit of each earlier frame onto each later frame.
// Rows are computed in parallel; the result does not depend on `threads`.
SimilarityMatrix similarity_matrix(const PoseSequence& seq, const AlignOptions& opts = {}, unsigned threads = 1);

// Binary layout, little-endian: "PSSM", u32 version (1), u64 T, then the
// lower triangle as f64 in row-major order (q = 1..T-1, k = 0..q-1).
void write_similarity_matrix(std::ostream& out, const SimilarityMatrix& m);
SimilarityMatrix read_similarity_matrix(std::istream& in);
void save_similarity_matrix(const std::filesystem::path& path, const SimilarityMatrix& m);
SimilarityMatrix load_similarity_matrix(const std::filesystem::path& path);

struct GlobalMaskConfig {
  std::size_t k = 4;
  AlignOptions align;

  void validate() const;  // throws ConfigError when k == 0
};

// Per query frame, the sorted admissible key frames: the K most similar
// predecessors (ties at the K-th value go to the more recent frame) plus the
// query frame itself. Short histories admit every predecessor.
using FrameAdmissibility = std::vector<std::vector<std::size_t>>;

FrameAdmissibility select_topk(const SimilarityMatrix& sim, const GlobalMaskConfig& cfg);

}  // namespace posesparse

#include "posesparse/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

#include "posesparse/detail/binary.hpp"
#include "posesparse/error.hpp"
#include "posesparse/parallel.hpp"

namespace posesparse {

RigidTransform RigidTransform::from_angle(double radians, Point2 translation) {
  RigidTransform t;
  const double c = std::cos(radians);
  const double s = std::sin(radians);
  t.rotation << c, -s, s, c;
  t.translation = translation;
  return t;
}

double RigidTransform::angle() const { return std::atan2(rotation(1, 0), rotation(0, 0)); }

AlignResult rigid_align(std::span<const Point2> source, std::span<const Point2> target,
                        std::span<const double> weights, bool allow_scale) {
  if (source.size() != target.size()) {
    throw DimensionMismatchError("rigid_align: point counts differ (" + std::to_string(source.size()) + " vs " +
                                 std::to_string(target.size()) + ")");
  }
  if (!weights.empty() && weights.size() != source.size()) {
    throw DimensionMismatchError("rigid_align: weight count does not match point count");
  }
  if (source.size() < 2) throw DegenerateError("rigid_align: need at least two points");

  auto weight = [&](std::size_t i) { return weights.empty() ? 1.0 : weights[i]; };

  double total = 0.0;
  Point2 src_centroid = Point2::Zero();
  Point2 dst_centroid = Point2::Zero();
  for (std::size_t i = 0; i < source.size(); ++i) {
    const double w = weight(i);
    if (!(w >= 0.0)) throw RangeError("rigid_align: weights must be non-negative");
    total += w;
    src_centroid += w * source[i];
    dst_centroid += w * target[i];
  }
  if (!(total > 0.0)) throw DegenerateError("rigid_align: total weight is zero");
  src_centroid /= total;
  dst_centroid /= total;

  // Cross-covariance H = sum w p q^T of the centered sets. In 2-D the proper
  // orthogonal polar factor of H (the maximizer of tr(R H) over rotations,
  // reflections excluded) has angle atan2(H01 - H10, H00 + H11).
  Eigen::Matrix2d cross_cov = Eigen::Matrix2d::Zero();
  double src_spread = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    const Point2 p = source[i] - src_centroid;
    const Point2 q = target[i] - dst_centroid;
    cross_cov += weight(i) * p * q.transpose();
    src_spread += weight(i) * p.squaredNorm();
  }
  if (!(src_spread > 0.0)) throw DegenerateError("rigid_align: source points coincide");

  const double sin_part = cross_cov(0, 1) - cross_cov(1, 0);
  const double cos_part = cross_cov(0, 0) + cross_cov(1, 1);
  AlignResult result;
  result.transform = RigidTransform::from_angle(std::atan2(sin_part, cos_part));
  if (allow_scale) result.transform.scale = std::hypot(sin_part, cos_part) / src_spread;
  result.transform.translation =
      dst_centroid - result.transform.scale * (result.transform.rotation * src_centroid);

  double sq = 0.0;
  for (std::size_t i = 0; i < source.size(); ++i) {
    sq += weight(i) * (target[i] - result.transform.apply(source[i])).squaredNorm();
  }
  result.residual = std::sqrt(sq);
  return result;
}

AlignResult rigid_align(const PoseFrame& source, const PoseFrame& target, const GroupLayout& layout,
                        const AlignOptions& opts) {
  if (source.keypoints.size() != target.keypoints.size()) {
    throw DimensionMismatchError("rigid_align: frames have different keypoint counts");
  }
  std::vector<Point2> src;
  std::vector<Point2> dst;
  std::vector<double> weights;
  for (PoseGroup g : kAllPoseGroups) {
    if (!opts.groups[static_cast<int>(g)]) continue;
    const auto& r = layout.range(g);
    for (std::size_t i = r.begin; i < r.end; ++i) {
      const auto& a = source.keypoints.at(i);
      const auto& b = target.keypoints.at(i);
      src.emplace_back(a.x, a.y);
      dst.emplace_back(b.x, b.y);
      if (opts.weight_by_confidence) weights.push_back(a.confidence * b.confidence);
    }
  }
  return rigid_align(src, dst, weights, opts.allow_scale);
}

SimilarityMatrix::SimilarityMatrix(std::size_t frames)
    : frames_(frames), values_(frames == 0 ? 0 : frames * (frames - 1) / 2, 0.0) {}

std::size_t SimilarityMatrix::offset(std::size_t q, std::size_t k) const {
  if (q >= frames_ || k >= q) {
    throw std::out_of_range("similarity entry (" + std::to_string(q) + ", " + std::to_string(k) +
                            ") is undefined; need key < query < " + std::to_string(frames_));
  }
  return offset_row(q) + k;
}

SimilarityMatrix similarity_matrix(const PoseSequence& seq, const AlignOptions& opts, unsigned threads) {
  const std::size_t t_count = seq.frame_count();
  if (t_count == 0) throw ConfigError("similarity_matrix: sequence has no frames");
  SimilarityMatrix sim(t_count);
  parallel_for(t_count, threads, [&](std::size_t q) {
    for (std::size_t k = 0; k < q; ++k) {
      try {
        sim.at(q, k) = rigid_align(seq.frames[k], seq.frames[q], seq.layout, opts).residual;
      } catch (const DegenerateError& e) {
        throw DegenerateError("frames (query " + std::to_string(q) + ", key " + std::to_string(k) + "): " + e.what());
      }
    }
  });
  return sim;
}

namespace {
constexpr std::string_view kSimMagic = "PSSM";
constexpr std::uint32_t kSimVersion = 1;
}  // namespace

void write_similarity_matrix(std::ostream& out, const SimilarityMatrix& m) {
  detail::write_magic(out, kSimMagic, kSimVersion);
  detail::write_le<std::uint64_t>(out, m.frames());
  for (double v : m.values()) detail::write_f64(out, v);
}

SimilarityMatrix read_similarity_matrix(std::istream& in) {
  detail::expect_magic(in, kSimMagic, kSimVersion);
  const auto frames = detail::read_le<std::uint64_t>(in);
  if (frames > (1u << 20)) throw ParseError("similarity matrix: implausible frame count");
  SimilarityMatrix m(frames);
  for (std::size_t q = 1; q < frames; ++q) {
    for (std::size_t k = 0; k < q; ++k) {
      const double v = detail::read_f64(in);
      if (!std::isfinite(v) || v < 0.0) throw RangeError("similarity matrix: entries must be finite and >= 0");
      m.at(q, k) = v;
    }
  }
  return m;
}

void save_similarity_matrix(const std::filesystem::path& path, const SimilarityMatrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_similarity_matrix(out, m);
}

SimilarityMatrix load_similarity_matrix(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_similarity_matrix(in);
}

void GlobalMaskConfig::validate() const {
  if (k < 1) throw ConfigError("top-K count must be at least 1");
}

FrameAdmissibility select_topk(const SimilarityMatrix& sim, const GlobalMaskConfig& cfg) {
  cfg.validate();
  FrameAdmissibility out(sim.frames());
  std::vector<std::size_t> order;
  for (std::size_t q = 0; q < sim.frames(); ++q) {
    auto& admitted = out[q];
    if (q <= cfg.k) {
      admitted.resize(q + 1);
      std::iota(admitted.begin(), admitted.end(), std::size_t{0});
      continue;
    }
    const auto row = sim.row(q);
    order.resize(q);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.k), order.end(),
                      [&](std::size_t a, std::size_t b) { return row[a] < row[b] || (row[a] == row[b] && a > b); });
    admitted.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cfg.k));
    admitted.push_back(q);
    std::sort(admitted.begin(), admitted.end());
  }
  return out;
}

}  // namespace posesparse

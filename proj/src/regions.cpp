#include "posesparse/regions.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <ostream>
#include <string>

#include "posesparse/detail/binary.hpp"
#include "posesparse/error.hpp"
#include "posesparse/parallel.hpp"

namespace posesparse {

namespace {

constexpr std::array<std::string_view, kLabelCount> kRegionNames = {"face",   "hands",     "arms",
                                                                      "bodies", "shoulders", "background"};
constexpr std::array<char, kLabelCount> kGlyphs = {'F', 'H', 'A', 'B', 'S', '.'};

// Assignment order for overlapping hulls.
constexpr std::array<RegionLabel, 5> kPriority = {RegionLabel::Face, RegionLabel::Hands, RegionLabel::Arms,
                                                  RegionLabel::Shoulders, RegionLabel::Bodies};

RegionLabel region_of(PoseGroup g) {
  switch (g) {
    case PoseGroup::Face: return RegionLabel::Face;
    case PoseGroup::LeftHand:
    case PoseGroup::RightHand: return RegionLabel::Hands;
    case PoseGroup::LeftArm:
    case PoseGroup::RightArm: return RegionLabel::Arms;
    case PoseGroup::Body: return RegionLabel::Bodies;
    case PoseGroup::Shoulders: return RegionLabel::Shoulders;
  }
  return RegionLabel::Background;
}

double cross(const Point2& o, const Point2& a, const Point2& b) {
  return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
}

// Andrew's monotone chain. Returns CCW vertices without repeats; collinear
// input collapses to its two extreme points, identical input to one point.
std::vector<Point2> convex_hull(std::vector<Point2> pts) {
  std::sort(pts.begin(), pts.end(), [](const Point2& a, const Point2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
  if (pts.size() <= 2) return pts;
  std::vector<Point2> hull(2 * pts.size());
  std::size_t k = 0;
  for (const auto& p : pts) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0.0) --k;
    hull[k++] = p;
  }
  for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  return hull;
}

// Separating-axis test between a convex polygon (1, 2, or more vertices) and
// the closed axis-aligned square [x0, x0+1] x [y0, y0+1].
bool hull_touches_cell(const std::vector<Point2>& hull, double x0, double y0) {
  double min_x = hull[0].x(), max_x = hull[0].x(), min_y = hull[0].y(), max_y = hull[0].y();
  for (const auto& p : hull) {
    min_x = std::min(min_x, p.x());
    max_x = std::max(max_x, p.x());
    min_y = std::min(min_y, p.y());
    max_y = std::max(max_y, p.y());
  }
  if (max_x < x0 || min_x > x0 + 1.0 || max_y < y0 || min_y > y0 + 1.0) return false;
  if (hull.size() == 1) return true;
  const std::array<Point2, 4> corners = {Point2(x0, y0), Point2(x0 + 1.0, y0), Point2(x0 + 1.0, y0 + 1.0),
                                         Point2(x0, y0 + 1.0)};
  const std::size_t edges = hull.size() == 2 ? 1 : hull.size();
  for (std::size_t e = 0; e < edges; ++e) {
    const Point2& a = hull[e];
    const Point2& b = hull[(e + 1) % hull.size()];
    const Point2 normal(a.y() - b.y(), b.x() - a.x());
    double hull_lo = normal.dot(hull[0]), hull_hi = hull_lo;
    for (const auto& p : hull) {
      const double v = normal.dot(p);
      hull_lo = std::min(hull_lo, v);
      hull_hi = std::max(hull_hi, v);
    }
    double cell_lo = normal.dot(corners[0]), cell_hi = cell_lo;
    for (const auto& c : corners) {
      const double v = normal.dot(c);
      cell_lo = std::min(cell_lo, v);
      cell_hi = std::max(cell_hi, v);
    }
    if (hull_hi < cell_lo || cell_hi < hull_lo) return false;
  }
  return true;
}

void mark_hull(const std::vector<Point2>& pts, const TokenGrid& grid, std::vector<bool>& mask) {
  if (pts.empty()) return;
  const auto hull = convex_hull(pts);
  double min_x = hull[0].x(), max_x = hull[0].x(), min_y = hull[0].y(), max_y = hull[0].y();
  for (const auto& p : hull) {
    min_x = std::min(min_x, p.x());
    max_x = std::max(max_x, p.x());
    min_y = std::min(min_y, p.y());
    max_y = std::max(max_y, p.y());
  }
  const int c0 = std::clamp(static_cast<int>(std::floor(min_x)) - 1, 0, grid.width_tokens - 1);
  const int c1 = std::clamp(static_cast<int>(std::floor(max_x)), 0, grid.width_tokens - 1);
  const int r0 = std::clamp(static_cast<int>(std::floor(min_y)) - 1, 0, grid.height_tokens - 1);
  const int r1 = std::clamp(static_cast<int>(std::floor(max_y)), 0, grid.height_tokens - 1);
  for (int r = r0; r <= r1; ++r) {
    for (int c = c0; c <= c1; ++c) {
      if (hull_touches_cell(hull, c, r)) mask[static_cast<std::size_t>(r) * grid.width_tokens + c] = true;
    }
  }
}

std::vector<bool> dilate(const std::vector<bool>& mask, const TokenGrid& grid, int radius) {
  if (radius <= 0) return mask;
  std::vector<bool> out(mask.size(), false);
  for (int r = 0; r < grid.height_tokens; ++r) {
    for (int c = 0; c < grid.width_tokens; ++c) {
      if (!mask[static_cast<std::size_t>(r) * grid.width_tokens + c]) continue;
      for (int rr = std::max(0, r - radius); rr <= std::min(grid.height_tokens - 1, r + radius); ++rr) {
        for (int cc = std::max(0, c - radius); cc <= std::min(grid.width_tokens - 1, c + radius); ++cc) {
          out[static_cast<std::size_t>(rr) * grid.width_tokens + cc] = true;
        }
      }
    }
  }
  return out;
}

// Shared labeling core: `positions` are pixel coordinates, `usable` selects
// which keypoints contribute.
FrameLabeling label_points(std::span<const Point2> positions, const std::vector<bool>& usable,
                           const GroupLayout& layout, const TokenGrid& grid, int dilation) {
  const std::size_t n = grid.tokens();
  std::array<std::vector<Point2>, kLabelCount> region_points;
  std::array<std::vector<bool>, kLabelCount> region_masks;
  for (auto& m : region_masks) m.assign(n, false);

  const double inv_patch = 1.0 / grid.patch_size;
  for (PoseGroup g : kAllPoseGroups) {
    const auto& range = layout.range(g);
    std::vector<Point2> pts;
    for (std::size_t i = range.begin; i < range.end; ++i) {
      if (usable[i]) pts.push_back(positions[i] * inv_patch);
    }
    const auto region = static_cast<std::size_t>(region_of(g));
    // Left and right groups get separate hulls, unioned into one region.
    mark_hull(pts, grid, region_masks[region]);
    region_points[region].insert(region_points[region].end(), pts.begin(), pts.end());
  }

  FrameLabeling out;
  out.labels.assign(n, RegionLabel::Background);
  for (RegionLabel r : kBodyRegions) {
    const auto idx = static_cast<std::size_t>(r);
    if (region_points[idx].empty()) out.empty_regions.push_back(r);
    region_masks[idx] = dilate(region_masks[idx], grid, dilation);
  }
  for (std::size_t tok = 0; tok < n; ++tok) {
    for (RegionLabel r : kPriority) {
      if (region_masks[static_cast<std::size_t>(r)][tok]) {
        out.labels[tok] = r;
        break;
      }
    }
  }
  return out;
}

bool usable_keypoint(const Keypoint& kp, ImageSize image, double min_confidence) {
  return in_frame(kp, image) && kp.confidence > min_confidence;
}

}  // namespace

std::string_view region_name(RegionLabel r) { return kRegionNames.at(static_cast<std::size_t>(r)); }
char region_glyph(RegionLabel r) { return kGlyphs.at(static_cast<std::size_t>(r)); }

TokenGrid TokenGrid::covering(ImageSize image, int patch_size) {
  if (patch_size < 1) throw ConfigError("patch size must be at least 1");
  if (image.width <= 0 || image.height <= 0) throw ConfigError("image size must be positive");
  return {(image.height + patch_size - 1) / patch_size, (image.width + patch_size - 1) / patch_size, patch_size};
}

void TokenGrid::validate() const {
  if (height_tokens < 1 || width_tokens < 1) throw ConfigError("token grid needs at least one token");
  if (patch_size < 1) throw ConfigError("patch size must be at least 1");
}

void TokenGrid::validate_covers(ImageSize image) const {
  validate();
  if (static_cast<long long>(height_tokens) * patch_size < image.height ||
      static_cast<long long>(width_tokens) * patch_size < image.width) {
    throw ConfigError("token grid does not cover the image");
  }
}

FrameLabeling label_tokens(const PoseFrame& frame, const GroupLayout& layout, ImageSize image, const TokenGrid& grid,
                           const LabelOptions& opts) {
  grid.validate_covers(image);
  if (opts.dilation < 0) throw ConfigError("dilation must be non-negative");
  if (frame.keypoints.size() != layout.keypoint_count()) {
    throw DimensionMismatchError("label_tokens: frame keypoint count does not match the layout");
  }
  std::vector<Point2> positions;
  std::vector<bool> usable;
  positions.reserve(frame.keypoints.size());
  for (const auto& kp : frame.keypoints) {
    positions.emplace_back(kp.x, kp.y);
    usable.push_back(usable_keypoint(kp, image, opts.min_confidence));
  }
  return label_points(positions, usable, layout, grid, opts.dilation);
}

MlsRigidWarp::MlsRigidWarp(std::vector<Point2> src, std::vector<Point2> dst, double alpha)
    : src_(std::move(src)), dst_(std::move(dst)), alpha_(alpha) {
  if (src_.size() != dst_.size()) throw DimensionMismatchError("MLS: control point counts differ");
  if (src_.size() < 2) throw DegenerateError("MLS: need at least two control points");
  if (!(alpha_ > 0.0)) throw ConfigError("MLS: alpha must be positive");
  bool spread = false;
  for (std::size_t i = 0; i < src_.size(); ++i) {
    if (!src_[i].allFinite() || !dst_[i].allFinite()) throw RangeError("MLS: control points must be finite");
    if (src_[i] != src_[0]) spread = true;
  }
  if (!spread) throw DegenerateError("MLS: source control points coincide");
}

Point2 MlsRigidWarp::operator()(const Point2& v) const {
  if (!v.allFinite()) throw RangeError("MLS: query must be finite");
  std::vector<double> w(src_.size());
  double total = 0.0;
  Point2 p_star = Point2::Zero();
  Point2 q_star = Point2::Zero();
  for (std::size_t i = 0; i < src_.size(); ++i) {
    const double d2 = (src_[i] - v).squaredNorm();
    if (d2 == 0.0) return dst_[i];
    w[i] = alpha_ == 1.0 ? 1.0 / d2 : std::pow(d2, -alpha_);
    total += w[i];
    p_star += w[i] * src_[i];
    q_star += w[i] * dst_[i];
  }
  p_star /= total;
  q_star /= total;
  // The rigid MLS solution at v is the weighted best rotation of the centered
  // control sets, applied about the weighted centroids.
  double dot = 0.0;
  double crs = 0.0;
  for (std::size_t i = 0; i < src_.size(); ++i) {
    const Point2 p = src_[i] - p_star;
    const Point2 q = dst_[i] - q_star;
    dot += w[i] * p.dot(q);
    crs += w[i] * (p.x() * q.y() - p.y() * q.x());
  }
  const RigidTransform rot = RigidTransform::from_angle(std::atan2(crs, dot));
  return rot.rotation * (v - p_star) + q_star;
}

std::vector<Point2> MlsRigidWarp::apply(std::span<const Point2> queries) const {
  std::vector<Point2> out;
  out.reserve(queries.size());
  for (const auto& q : queries) out.push_back((*this)(q));
  return out;
}

std::vector<Point2> mls_rigid_warp(std::span<const Point2> src, std::span<const Point2> dst,
                                   std::span<const Point2> queries, double alpha) {
  return MlsRigidWarp({src.begin(), src.end()}, {dst.begin(), dst.end()}, alpha).apply(queries);
}

std::vector<Point2> mls_rigid_warp(const PoseFrame& src, const PoseFrame& dst, std::span<const Point2> queries,
                                   double alpha) {
  if (src.keypoints.size() != dst.keypoints.size()) throw DimensionMismatchError("MLS: frames differ in keypoint count");
  std::vector<Point2> p;
  std::vector<Point2> q;
  for (std::size_t i = 0; i < src.keypoints.size(); ++i) {
    const auto& a = src.keypoints[i];
    const auto& b = dst.keypoints[i];
    if (a.confidence > 0.0 && b.confidence > 0.0) {
      p.emplace_back(a.x, a.y);
      q.emplace_back(b.x, b.y);
    }
  }
  return MlsRigidWarp(std::move(p), std::move(q), alpha).apply(queries);
}

RegionLabeling::RegionLabeling(std::size_t frames, std::size_t tokens)
    : frames_(frames), tokens_(tokens), labels_(frames * tokens, RegionLabel::Background) {}

std::vector<std::size_t> RegionLabeling::token_index_set(std::size_t frame_index, RegionLabel region) const {
  std::vector<std::size_t> out;
  const auto slice = frame(frame_index);
  for (std::size_t i = 0; i < slice.size(); ++i) {
    if (slice[i] == region) out.push_back(i);
  }
  return out;
}

RegionLabeling label_sequence(const PoseSequence& seq, const TokenGrid& grid, const LabelingConfig& cfg,
                              unsigned threads) {
  grid.validate_covers(seq.image_size);
  if (cfg.label.dilation < 0) throw ConfigError("dilation must be non-negative");
  const std::size_t t_count = seq.frame_count();
  const std::size_t b = seq.keypoint_count();
  RegionLabeling out(t_count, grid.tokens());
  if (t_count == 0) return out;

  auto usable_mask = [&](const PoseFrame& f) {
    std::vector<bool> m(b);
    for (std::size_t i = 0; i < b; ++i) m[i] = usable_keypoint(f.keypoints[i], seq.image_size, cfg.label.min_confidence);
    return m;
  };
  auto positions_of = [&](const PoseFrame& f) {
    std::vector<Point2> p;
    p.reserve(b);
    for (const auto& kp : f.keypoints) p.emplace_back(kp.x, kp.y);
    return p;
  };

  // Anchor for MLS recovery: most usable keypoints, then highest confidence sum.
  std::size_t anchor = 0;
  if (cfg.mls_fallback) {
    std::size_t best_count = 0;
    double best_conf = -1.0;
    for (std::size_t t = 0; t < t_count; ++t) {
      const auto m = usable_mask(seq.frames[t]);
      const auto count = static_cast<std::size_t>(std::count(m.begin(), m.end(), true));
      double conf = 0.0;
      for (const auto& kp : seq.frames[t].keypoints) conf += kp.confidence;
      if (count > best_count || (count == best_count && conf > best_conf)) {
        best_count = count;
        best_conf = conf;
        anchor = t;
      }
    }
  }
  const auto anchor_usable = usable_mask(seq.frames[anchor]);
  const auto anchor_pos = positions_of(seq.frames[anchor]);

  auto label_frame = [&](std::size_t t) {
    auto positions = positions_of(seq.frames[t]);
    auto usable = usable_mask(seq.frames[t]);
    if (cfg.mls_fallback && t != anchor) {
      std::vector<Point2> ctrl_src, ctrl_dst, missing_src;
      std::vector<std::size_t> missing;
      for (std::size_t i = 0; i < b; ++i) {
        if (usable[i] && anchor_usable[i]) {
          ctrl_src.push_back(anchor_pos[i]);
          ctrl_dst.push_back(positions[i]);
        } else if (!usable[i] && anchor_usable[i]) {
          missing.push_back(i);
          missing_src.push_back(anchor_pos[i]);
        }
      }
      if (!missing.empty() && ctrl_src.size() >= 2) {
        try {
          const MlsRigidWarp warp(std::move(ctrl_src), std::move(ctrl_dst), cfg.mls_alpha);
          for (std::size_t m = 0; m < missing.size(); ++m) {
            const Point2 p = warp(missing_src[m]);
            const Keypoint probe{p.x(), p.y(), 1.0};
            if (in_frame(probe, seq.image_size)) {
              positions[missing[m]] = p;
              usable[missing[m]] = true;
            }
          }
        } catch (const DegenerateError&) {
          // Coincident control points: nothing to propagate from.
        }
      }
    }
    return label_points(positions, usable, seq.layout, grid, cfg.label.dilation);
  };

  if (cfg.mode == LabelingMode::ReferenceFrame) {
    if (cfg.reference_frame >= t_count) throw ConfigError("reference frame index out of range");
    const auto ref = label_frame(cfg.reference_frame);
    for (std::size_t t = 0; t < t_count; ++t) std::copy(ref.labels.begin(), ref.labels.end(), out.frame(t).begin());
    for (RegionLabel r : ref.empty_regions) out.warnings.push_back({cfg.reference_frame, r});
    return out;
  }

  std::vector<std::vector<RegionLabel>> empties(t_count);
  parallel_for(t_count, threads, [&](std::size_t t) {
    auto fl = label_frame(t);
    std::copy(fl.labels.begin(), fl.labels.end(), out.frame(t).begin());
    empties[t] = std::move(fl.empty_regions);
  });
  for (std::size_t t = 0; t < t_count; ++t) {
    for (RegionLabel r : empties[t]) out.warnings.push_back({t, r});
  }
  return out;
}

RegionCorrespondence::RegionCorrespondence(std::span<const RegionLabel> query_frame,
                                           std::span<const RegionLabel> key_frame)
    : query_(query_frame), key_(key_frame) {
  if (query_.size() != key_.size()) throw DimensionMismatchError("region slices come from different grids");
}

RegionCorrespondence region_correspondence(std::span<const RegionLabel> query_frame,
                                           std::span<const RegionLabel> key_frame) {
  return RegionCorrespondence(query_frame, key_frame);
}

namespace {
constexpr std::string_view kLabelMagic = "PSRL";
constexpr std::uint32_t kLabelVersion = 1;
}  // namespace

void write_region_labeling(std::ostream& out, const RegionLabeling& labeling) {
  detail::write_magic(out, kLabelMagic, kLabelVersion);
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(labeling.frames()));
  detail::write_le<std::uint32_t>(out, static_cast<std::uint32_t>(labeling.tokens()));
  detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(kLabelCount));
  for (auto name : kRegionNames) {
    detail::write_le<std::uint8_t>(out, static_cast<std::uint8_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
  }
  for (RegionLabel l : labeling.labels()) out.put(static_cast<char>(l));
}

RegionLabeling read_region_labeling(std::istream& in) {
  detail::expect_magic(in, kLabelMagic, kLabelVersion);
  const auto frames = detail::read_le<std::uint32_t>(in);
  const auto tokens = detail::read_le<std::uint32_t>(in);
  const auto count = detail::read_le<std::uint8_t>(in);
  if (count != kLabelCount) throw SchemaError("region labeling: unexpected label enumeration size");
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = detail::read_le<std::uint8_t>(in);
    std::string name(len, '\0');
    in.read(name.data(), len);
    if (!in || name != kRegionNames[i]) throw SchemaError("region labeling: label enumeration mismatch");
  }
  RegionLabeling out(frames, tokens);
  for (std::size_t t = 0; t < frames; ++t) {
    auto slice = out.frame(t);
    for (auto& l : slice) {
      const auto v = detail::read_le<std::uint8_t>(in);
      if (v >= kLabelCount) throw RangeError("region labeling: label byte out of range");
      l = static_cast<RegionLabel>(v);
    }
  }
  return out;
}

void save_region_labeling(const std::filesystem::path& path, const RegionLabeling& labeling) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  write_region_labeling(out, labeling);
}

RegionLabeling load_region_labeling(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return read_region_labeling(in);
}

void dump_region_grid(std::ostream& out, const RegionLabeling& labeling, const TokenGrid& grid) {
  if (grid.tokens() != labeling.tokens()) throw DimensionMismatchError("grid does not match labeling");
  out << "# legend: F=face H=hands A=arms B=bodies S=shoulders .=background\n";
  for (std::size_t t = 0; t < labeling.frames(); ++t) {
    out << "frame " << t << '\n';
    const auto slice = labeling.frame(t);
    for (int r = 0; r < grid.height_tokens; ++r) {
      for (int c = 0; c < grid.width_tokens; ++c) {
        out << region_glyph(slice[static_cast<std::size_t>(r) * grid.width_tokens + c]);
      }
      out << '\n';
    }
  }
}

}  // namespace posesparse

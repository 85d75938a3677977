#include "posesparse/pose_io.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>

#include "posesparse/error.hpp"

namespace posesparse {

namespace {

constexpr std::string_view kMagic = "posesparse-pose";
constexpr int kVersion = 1;

constexpr std::array<std::string_view, kPoseGroupCount> kGroupNames = {
    "face", "left_hand", "right_hand", "left_arm", "right_arm", "body", "shoulders"};

std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

// Splits a line on ASCII whitespace.
std::vector<std::string_view> tokenize(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    std::size_t j = i;
    while (j < line.size() && !std::isspace(static_cast<unsigned char>(line[j]))) ++j;
    if (j > i) out.push_back(line.substr(i, j - i));
    i = j;
  }
  return out;
}

double parse_double(std::string_view tok, std::size_t line_no) {
  // "nan" and "inf" parse here; validate() rejects them as RangeError.
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError("line " + std::to_string(line_no) + ": bad number '" + std::string(tok) + "'");
  }
  return v;
}

template <typename Int>
Int parse_int(std::string_view tok, std::size_t line_no) {
  Int v{};
  auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (ec != std::errc() || ptr != tok.data() + tok.size()) {
    throw ParseError("line " + std::to_string(line_no) + ": bad integer '" + std::string(tok) + "'");
  }
  return v;
}

bool is_upper_body(PoseGroup g) { return g != PoseGroup::Face; }

}  // namespace

std::string_view group_name(PoseGroup g) { return kGroupNames[static_cast<int>(g)]; }

PoseGroup group_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kGroupNames.size(); ++i) {
    if (kGroupNames[i] == name) return static_cast<PoseGroup>(i);
  }
  throw SchemaError("unknown keypoint group '" + std::string(name) + "'");
}

GroupLayout GroupLayout::from_counts(const std::array<std::size_t, kPoseGroupCount>& counts) {
  GroupLayout layout;
  std::size_t offset = 0;
  for (std::size_t g = 0; g < kPoseGroupCount; ++g) {
    layout.ranges_[g] = {offset, offset + counts[g]};
    offset += counts[g];
  }
  return layout;
}

std::size_t GroupLayout::keypoint_count() const {
  std::size_t total = 0;
  for (const auto& r : ranges_) total += r.size();
  return total;
}

void GroupLayout::validate() const {
  std::array<IndexRange, kPoseGroupCount> sorted = ranges_;
  for (std::size_t g = 0; g < kPoseGroupCount; ++g) {
    if (ranges_[g].end < ranges_[g].begin) {
      throw SchemaError("group '" + std::string(kGroupNames[g]) + "' has end < begin");
    }
  }
  std::sort(sorted.begin(), sorted.end(),
            [](const IndexRange& a, const IndexRange& b) { return a.begin < b.begin || (a.begin == b.begin && a.end < b.end); });
  std::size_t cursor = 0;
  for (const auto& r : sorted) {
    if (r.begin != cursor) throw SchemaError("group ranges must be disjoint and cover [0, B)");
    cursor = r.end;
  }
  if (cursor < 2) throw SchemaError("pose layout needs at least two keypoints");
}

PoseGroup GroupLayout::group_of(std::size_t keypoint) const {
  for (std::size_t g = 0; g < kPoseGroupCount; ++g) {
    if (ranges_[g].contains(keypoint)) return static_cast<PoseGroup>(g);
  }
  throw SchemaError("keypoint index " + std::to_string(keypoint) + " outside layout");
}

GroupLayout default_group_layout() {
  // face, left_hand, right_hand, left_arm, right_arm, body, shoulders
  return GroupLayout::from_counts({5, 5, 5, 2, 2, 2, 2});
}

std::span<const Keypoint> PoseSequence::group(std::size_t frame, PoseGroup g) const {
  const auto& r = layout.range(g);
  return std::span<const Keypoint>(frames.at(frame).keypoints).subspan(r.begin, r.size());
}

bool in_frame(const Keypoint& kp, ImageSize size) {
  return kp.x >= 0.0 && kp.y >= 0.0 && kp.x <= size.width && kp.y <= size.height;
}

bool is_visible(const Keypoint& kp, ImageSize size) { return in_frame(kp, size) && kp.confidence > 0.0; }

void validate(const PoseSequence& seq) {
  seq.layout.validate();
  if (!(seq.fps > 0.0) || !std::isfinite(seq.fps)) throw SchemaError("fps must be positive and finite");
  if (seq.image_size.width <= 0 || seq.image_size.height <= 0) throw SchemaError("image size must be positive");
  const std::size_t b = seq.layout.keypoint_count();
  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    const auto& f = seq.frames[t];
    if (f.frame_index != t) {
      throw SchemaError("frame " + std::to_string(t) + ": frame_index " + std::to_string(f.frame_index) +
                        " breaks the 0,1,2,... sequence");
    }
    if (f.keypoints.size() != b) {
      throw SchemaError("frame " + std::to_string(t) + ": expected " + std::to_string(b) + " keypoints, got " +
                        std::to_string(f.keypoints.size()));
    }
    for (std::size_t i = 0; i < b; ++i) {
      const auto& kp = f.keypoints[i];
      if (!std::isfinite(kp.x) || !std::isfinite(kp.y)) {
        throw RangeError("frame " + std::to_string(t) + " keypoint " + std::to_string(i) + ": non-finite coordinate");
      }
      if (!(kp.confidence >= 0.0 && kp.confidence <= 1.0)) {
        throw RangeError("frame " + std::to_string(t) + " keypoint " + std::to_string(i) + ": confidence outside [0,1]");
      }
    }
  }
}

PoseSequence read_pose_sequence(std::istream& in) {
  PoseSequence seq;
  std::string line;
  std::size_t line_no = 0;
  auto next_tokens = [&]() -> std::vector<std::string_view> {
    while (std::getline(in, line)) {
      ++line_no;
      auto toks = tokenize(line);
      if (toks.empty() || toks.front().starts_with('#')) continue;
      return toks;
    }
    return {};
  };
  auto expect_key = [&](std::string_view key, std::size_t arity) {
    auto toks = next_tokens();
    if (toks.empty()) throw ParseError("unexpected end of file, expected '" + std::string(key) + "'");
    if (toks.front() != key || toks.size() != arity + 1) {
      throw ParseError("line " + std::to_string(line_no) + ": expected '" + std::string(key) + "' with " +
                       std::to_string(arity) + " fields");
    }
    return toks;
  };

  {
    auto toks = expect_key(kMagic, 1);
    const int version = parse_int<int>(toks[1], line_no);
    if (version != kVersion) throw ParseError("unsupported pose format version " + std::to_string(version));
  }
  seq.fps = parse_double(expect_key("fps", 1)[1], line_no);
  {
    auto toks = expect_key("size", 2);
    seq.image_size = {parse_int<int>(toks[1], line_no), parse_int<int>(toks[2], line_no)};
  }
  std::array<bool, kPoseGroupCount> seen{};
  for (std::size_t g = 0; g < kPoseGroupCount; ++g) {
    auto toks = next_tokens();
    if (toks.empty() || toks.front() != "group" || toks.size() != 4) {
      throw SchemaError("line " + std::to_string(line_no) + ": expected seven 'group <name> <begin> <end>' lines");
    }
    const PoseGroup group = group_from_name(toks[1]);
    if (seen[static_cast<int>(group)]) throw SchemaError("duplicate group '" + std::string(toks[1]) + "'");
    seen[static_cast<int>(group)] = true;
    seq.layout.set(group, {parse_int<std::size_t>(toks[2], line_no), parse_int<std::size_t>(toks[3], line_no)});
  }
  seq.layout.validate();
  const std::size_t frame_count = parse_int<std::size_t>(expect_key("frames", 1)[1], line_no);
  const std::size_t b = seq.layout.keypoint_count();
  seq.frames.reserve(frame_count);
  for (std::size_t t = 0; t < frame_count; ++t) {
    auto toks = next_tokens();
    if (toks.empty()) throw ParseError("unexpected end of file after " + std::to_string(t) + " frames");
    if ((toks.size() - 1) % 3 != 0) {
      throw ParseError("line " + std::to_string(line_no) + ": keypoint fields must come in (x, y, confidence) triples");
    }
    if ((toks.size() - 1) / 3 != b) {
      throw SchemaError("line " + std::to_string(line_no) + ": expected " + std::to_string(b) + " keypoints, got " +
                        std::to_string((toks.size() - 1) / 3));
    }
    PoseFrame frame;
    frame.frame_index = parse_int<std::size_t>(toks[0], line_no);
    frame.keypoints.resize(b);
    for (std::size_t i = 0; i < b; ++i) {
      frame.keypoints[i] = {parse_double(toks[1 + 3 * i], line_no), parse_double(toks[2 + 3 * i], line_no),
                            parse_double(toks[3 + 3 * i], line_no)};
    }
    seq.frames.push_back(std::move(frame));
  }
  if (!next_tokens().empty()) throw ParseError("line " + std::to_string(line_no) + ": trailing data after last frame");
  validate(seq);
  return seq;
}

PoseSequence load_pose_sequence(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open pose file " + path.string());
  return read_pose_sequence(in);
}

void write_pose_sequence(std::ostream& out, const PoseSequence& seq) {
  out << kMagic << ' ' << kVersion << '\n';
  out << "fps " << format_double(seq.fps) << '\n';
  out << "size " << seq.image_size.width << ' ' << seq.image_size.height << '\n';
  for (PoseGroup g : kAllPoseGroups) {
    const auto& r = seq.layout.range(g);
    out << "group " << group_name(g) << ' ' << r.begin << ' ' << r.end << '\n';
  }
  out << "frames " << seq.frames.size() << '\n';
  for (const auto& f : seq.frames) {
    out << f.frame_index;
    for (const auto& kp : f.keypoints) {
      out << ' ' << format_double(kp.x) << ' ' << format_double(kp.y) << ' ' << format_double(kp.confidence);
    }
    out << '\n';
  }
}

void save_pose_sequence(const std::filesystem::path& path, const PoseSequence& seq) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write pose file " + path.string());
  write_pose_sequence(out, seq);
  if (!out) throw IoError("write failed for " + path.string());
}

void FilterPolicy::validate() const {
  for (double v : {face_conf_min, body_conf_min, body_visibility_min}) {
    if (!(v >= 0.0 && v <= 1.0)) throw ConfigError("filter thresholds must lie in [0, 1]");
  }
}

std::string_view reason_name(RejectReason r) {
  switch (r) {
    case RejectReason::FaceConfidence: return "face_confidence";
    case RejectReason::BodyConfidence: return "body_confidence";
    case RejectReason::BodyVisibility: return "body_visibility";
  }
  return "unknown";
}

FilterResult filter_frames(const PoseSequence& seq, const FilterPolicy& policy) {
  policy.validate();
  FilterResult result;
  result.sequence.fps = seq.fps;
  result.sequence.image_size = seq.image_size;
  result.sequence.layout = seq.layout;
  result.report.reserve(seq.frames.size());

  for (std::size_t t = 0; t < seq.frames.size(); ++t) {
    const auto& frame = seq.frames[t];
    FrameVerdict v;
    v.source_index = frame.frame_index;

    // An empty group has no reliable evidence and fails its threshold.
    double face_min = std::numeric_limits<double>::infinity();
    double body_min = std::numeric_limits<double>::infinity();
    std::size_t body_total = 0;
    std::size_t body_visible = 0;
    for (std::size_t i = 0; i < frame.keypoints.size(); ++i) {
      const auto& kp = frame.keypoints[i];
      if (is_upper_body(seq.layout.group_of(i))) {
        body_min = std::min(body_min, kp.confidence);
        ++body_total;
        if (is_visible(kp, seq.image_size)) ++body_visible;
      } else {
        face_min = std::min(face_min, kp.confidence);
      }
    }
    v.face_confidence = std::isinf(face_min) ? 0.0 : face_min;
    v.body_confidence = std::isinf(body_min) ? 0.0 : body_min;
    v.body_visibility = body_total == 0 ? 0.0 : static_cast<double>(body_visible) / static_cast<double>(body_total);

    if (!(v.face_confidence > policy.face_conf_min)) v.reasons.push_back(RejectReason::FaceConfidence);
    if (!(v.body_confidence > policy.body_conf_min)) v.reasons.push_back(RejectReason::BodyConfidence);
    if (!(v.body_visibility >= policy.body_visibility_min)) v.reasons.push_back(RejectReason::BodyVisibility);
    v.retained = v.reasons.empty();

    if (v.retained) {
      PoseFrame kept = frame;
      kept.frame_index = result.sequence.frames.size();
      result.sequence.frames.push_back(std::move(kept));
    }
    result.report.push_back(std::move(v));
  }
  return result;
}

}  // namespace posesparse

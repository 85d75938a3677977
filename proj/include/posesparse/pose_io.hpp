#pragma once

#include <array>
#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace posesparse {

struct Keypoint {
  double x = 0.0;
  double y = 0.0;
  double confidence = 0.0;
};

// Named keypoint groups. Every pose file declares all seven, in any order,
// as disjoint index ranges that together cover [0, B).
enum class PoseGroup : int { Face, LeftHand, RightHand, LeftArm, RightArm, Body, Shoulders };
inline constexpr std::size_t kPoseGroupCount = 7;
inline constexpr std::array<PoseGroup, kPoseGroupCount> kAllPoseGroups = {
    PoseGroup::Face,    PoseGroup::LeftHand, PoseGroup::RightHand, PoseGroup::LeftArm,
    PoseGroup::RightArm, PoseGroup::Body,    PoseGroup::Shoulders};

std::string_view group_name(PoseGroup g);
PoseGroup group_from_name(std::string_view name);  // throws SchemaError

struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  bool contains(std::size_t i) const { return i >= begin && i < end; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

class GroupLayout {
 public:
  GroupLayout() = default;

  // Contiguous layout in enum order with the given per-group counts.
  static GroupLayout from_counts(const std::array<std::size_t, kPoseGroupCount>& counts);

  void set(PoseGroup g, IndexRange r) { ranges_[static_cast<int>(g)] = r; }
  const IndexRange& range(PoseGroup g) const { return ranges_[static_cast<int>(g)]; }
  std::size_t keypoint_count() const;
  // Throws SchemaError unless the ranges are disjoint and cover [0, B).
  void validate() const;
  PoseGroup group_of(std::size_t keypoint) const;

  friend bool operator==(const GroupLayout&, const GroupLayout&) = default;

 private:
  std::array<IndexRange, kPoseGroupCount> ranges_{};
};

// Default layout used by the synthetic fixtures: 23 keypoints.
GroupLayout default_group_layout();

struct ImageSize {
  int width = 0;
  int height = 0;
  friend bool operator==(const ImageSize&, const ImageSize&) = default;
};

struct PoseFrame {
  std::size_t frame_index = 0;
  std::vector<Keypoint> keypoints;
};

struct PoseSequence {
  std::vector<PoseFrame> frames;
  double fps = 25.0;
  ImageSize image_size;
  GroupLayout layout;

  std::size_t frame_count() const { return frames.size(); }
  std::size_t keypoint_count() const { return layout.keypoint_count(); }
  std::span<const Keypoint> group(std::size_t frame, PoseGroup g) const;
};

bool in_frame(const Keypoint& kp, ImageSize size);
// Inside the image bounds and confidence > 0.
bool is_visible(const Keypoint& kp, ImageSize size);

// Throws SchemaError / RangeError on any violated invariant.
void validate(const PoseSequence& seq);

// Pose text format, version 1:
//
//   posesparse-pose 1
//   fps <double>
//   size <width> <height>
//   group <name> <begin> <end>        (seven lines, one per group)
//   frames <T>
//   <frame_index> <x> <y> <c> ... (B triples, one line per frame)
//
// Blank lines and lines starting with '#' are ignored. Numbers are written in
// shortest round-trip form, so write followed by read is bit-exact.
PoseSequence read_pose_sequence(std::istream& in);
PoseSequence load_pose_sequence(const std::filesystem::path& path);
void write_pose_sequence(std::ostream& out, const PoseSequence& seq);
void save_pose_sequence(const std::filesystem::path& path, const PoseSequence& seq);

struct FilterPolicy {
  double face_conf_min = 0.9;
  double body_conf_min = 0.8;
  double body_visibility_min = 0.9;

  void validate() const;  // throws ConfigError
};

enum class RejectReason { FaceConfidence, BodyConfidence, BodyVisibility };
std::string_view reason_name(RejectReason r);

struct FrameVerdict {
  std::size_t source_index = 0;
  bool retained = false;
  double face_confidence = 0.0;   // min over face keypoints
  double body_confidence = 0.0;   // min over upper-body keypoints
  double body_visibility = 0.0;   // visible fraction of upper-body keypoints
  std::vector<RejectReason> reasons;
};

struct FilterResult {
  PoseSequence sequence;
  std::vector<FrameVerdict> report;
};

// Keeps frames whose minimum face confidence exceeds face_conf_min, minimum
// upper-body confidence exceeds body_conf_min, and upper-body visible fraction
// is at least body_visibility_min. Upper body is every group except Face.
// Retained frames are renumbered 0..n-1; the report keeps source indices.
FilterResult filter_frames(const PoseSequence& seq, const FilterPolicy& policy);

}  // namespace posesparse

#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "posesparse/pose_io.hpp"
#include "posesparse/synthetic.hpp"

namespace fixture {

// Ten clean frames with four planted violations:
//   2: one face keypoint at exactly 0.9 (threshold is strict)
//   4: one shoulder keypoint at 0.75
//   6: three arm/hand keypoints pushed out of frame (15/18 visible)
//   8: face at 0.5 and a body keypoint at 0.3
inline posesparse::PoseSequence filter_fixture() {
  using namespace posesparse;
  SyntheticPoseOptions o;
  o.frames = 10;
  o.seed = 7;
  auto seq = synthetic_pose_sequence(o);
  const auto& L = seq.layout;
  seq.frames[2].keypoints[L.range(PoseGroup::Face).begin + 1].confidence = 0.9;
  seq.frames[4].keypoints[L.range(PoseGroup::Shoulders).begin].confidence = 0.75;
  for (std::size_t i : {L.range(PoseGroup::LeftHand).begin, L.range(PoseGroup::LeftArm).begin,
                        L.range(PoseGroup::RightArm).begin}) {
    seq.frames[6].keypoints[i].x = -5.0;
  }
  seq.frames[8].keypoints[L.range(PoseGroup::Face).begin].confidence = 0.5;
  seq.frames[8].keypoints[L.range(PoseGroup::Body).begin].confidence = 0.3;
  return seq;
}

inline const std::map<std::size_t, std::vector<std::string>>& filter_fixture_expected_rejections() {
  static const std::map<std::size_t, std::vector<std::string>> m = {
      {2, {"face_confidence"}},
      {4, {"body_confidence"}},
      {6, {"body_visibility"}},
      {8, {"face_confidence", "body_confidence"}},
  };
  return m;
}

// Fresh scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("posesparse_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace fixture

#pragma once

#include <cstdint>

#include "posesparse/pose_io.hpp"

namespace posesparse {

struct SyntheticPoseOptions {
  std::size_t frames = 8;
  ImageSize image_size{256, 256};
  double fps = 25.0;
  std::uint64_t seed = 0;
  // Pixel std-dev of per-keypoint jitter.
  double jitter = 1.0;
  // Global drift per frame in pixels, applied along a seeded direction.
  double drift = 0.5;
};

// Upper-body stick figure in the default 23-point layout, with arm swing,
// global drift, and per-point jitter. Confidences are drawn in [0.95, 1].
PoseSequence synthetic_pose_sequence(const SyntheticPoseOptions& opts);

}  // namespace posesparse

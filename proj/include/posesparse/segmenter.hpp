#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <vector>

namespace posesparse {

struct Segment {
  std::size_t begin = 0;  // half-open frame range
  std::size_t end = 0;
  std::size_t size() const { return end - begin; }
  friend bool operator==(const Segment&, const Segment&) = default;
};

struct SegmentPlan {
  std::size_t frames = 0;
  std::size_t segment_length = 16;
  std::size_t overlap = 4;
  std::vector<Segment> segments;
};

// Greedy tiling with stride segment_length - overlap; the last segment is
// clamped to end at T and may overlap its predecessor by more than `overlap`.
// Throws ConfigError unless segment_length > overlap and T >= 1.
SegmentPlan plan_segments(std::size_t frames, std::size_t segment_length, std::size_t overlap);

struct Fraction {
  std::int64_t num = 0;
  std::int64_t den = 1;

  double value() const { return static_cast<double>(num) / static_cast<double>(den); }
  friend Fraction operator+(Fraction a, Fraction b);
  friend Fraction operator*(Fraction a, Fraction b);
  friend bool operator==(const Fraction&, const Fraction&) = default;
};
Fraction reduced(Fraction f);

struct FusionTerm {
  std::size_t segment = 0;
  Fraction weight;
};

// Per frame, the weight of every segment covering it, as exact fractions.
using FusionWeights = std::vector<std::vector<FusionTerm>>;

// Segments are folded in order: where the running result and the next
// segment share L frames, position k of the shared span takes
// w(k) = (k+1)/(L+1) from the new segment and 1 - w(k) from the result.
FusionWeights fusion_weights(const SegmentPlan& plan);

// frames x width values, row-major.
struct FrameArray {
  std::size_t frames = 0;
  std::size_t width = 0;
  std::vector<double> values;

  FrameArray() = default;
  FrameArray(std::size_t f, std::size_t w, double fill = 0.0) : frames(f), width(w), values(f * w, fill) {}
  double& at(std::size_t frame, std::size_t col) { return values[frame * width + col]; }
  double at(std::size_t frame, std::size_t col) const { return values[frame * width + col]; }
};

// Fuses per-segment arrays (segments[i] covers plan.segments[i]) with the
// fusion_weights ramp. Blends are evaluated as a + w (b - a), so frames where
// segments agree come out unchanged, and frames covered once are copied.
FrameArray fuse(const std::vector<FrameArray>& segments, const SegmentPlan& plan);

void write_segment_plan(std::ostream& out, const SegmentPlan& plan);

}  // namespace posesparse

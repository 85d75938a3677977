#include "posesparse/segmenter.hpp"

#include <algorithm>
#include <numeric>
#include <ostream>
#include <string>

#include "posesparse/error.hpp"

namespace posesparse {

SegmentPlan plan_segments(std::size_t frames, std::size_t segment_length, std::size_t overlap) {
  if (frames < 1) throw ConfigError("segment plan needs at least one frame");
  if (segment_length <= overlap) throw ConfigError("segment length must exceed the overlap");
  SegmentPlan plan{frames, segment_length, overlap, {}};
  if (frames <= segment_length) {
    plan.segments.push_back({0, frames});
    return plan;
  }
  const std::size_t stride = segment_length - overlap;
  std::size_t start = 0;
  while (true) {
    if (start + segment_length >= frames) {
      plan.segments.push_back({frames - segment_length, frames});
      break;
    }
    plan.segments.push_back({start, start + segment_length});
    start += stride;
  }
  return plan;
}

Fraction reduced(Fraction f) {
  if (f.den < 0) {
    f.num = -f.num;
    f.den = -f.den;
  }
  const std::int64_t g = std::gcd(f.num, f.den);
  if (g > 1) {
    f.num /= g;
    f.den /= g;
  }
  return f;
}

Fraction operator+(Fraction a, Fraction b) {
  const std::int64_t l = std::lcm(a.den, b.den);
  return reduced({a.num * (l / a.den) + b.num * (l / b.den), l});
}

Fraction operator*(Fraction a, Fraction b) { return reduced({a.num * b.num, a.den * b.den}); }

namespace {

// Shared span between the fused prefix (ending at prefix_end) and segment s.
struct Blend {
  std::size_t begin;
  std::size_t length;
};

Blend blend_span(const Segment& seg, std::size_t prefix_end) {
  const std::size_t end = std::min(prefix_end, seg.end);
  return {seg.begin, end > seg.begin ? end - seg.begin : 0};
}

void check_plan(const SegmentPlan& plan) {
  if (plan.segments.empty()) throw ConfigError("segment plan is empty");
  if (plan.segments.front().begin != 0 || plan.segments.back().end != plan.frames) {
    throw ConfigError("segment plan does not cover [0, T)");
  }
  for (std::size_t i = 1; i < plan.segments.size(); ++i) {
    const auto& prev = plan.segments[i - 1];
    const auto& cur = plan.segments[i];
    if (cur.begin > prev.end || cur.begin <= prev.begin || cur.end <= prev.end) {
      throw ConfigError("segments must advance monotonically without gaps");
    }
  }
}

}  // namespace

FusionWeights fusion_weights(const SegmentPlan& plan) {
  check_plan(plan);
  FusionWeights weights(plan.frames);
  const auto& segs = plan.segments;
  for (std::size_t f = segs[0].begin; f < segs[0].end; ++f) weights[f].push_back({0, {1, 1}});
  std::size_t prefix_end = segs[0].end;
  for (std::size_t s = 1; s < segs.size(); ++s) {
    const Blend span = blend_span(segs[s], prefix_end);
    const auto den = static_cast<std::int64_t>(span.length + 1);
    for (std::size_t k = 0; k < span.length; ++k) {
      const Fraction w_new{static_cast<std::int64_t>(k + 1), den};
      const Fraction w_old{den - static_cast<std::int64_t>(k + 1), den};
      auto& terms = weights[span.begin + k];
      for (auto& term : terms) term.weight = term.weight * w_old;
      terms.push_back({s, reduced(w_new)});
    }
    for (std::size_t f = span.begin + span.length; f < segs[s].end; ++f) weights[f].push_back({s, {1, 1}});
    prefix_end = segs[s].end;
  }
  return weights;
}

FrameArray fuse(const std::vector<FrameArray>& segments, const SegmentPlan& plan) {
  check_plan(plan);
  if (segments.size() != plan.segments.size()) throw ShapeError("fuse: segment count does not match the plan");
  const std::size_t width = segments.front().width;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    if (segments[s].frames != plan.segments[s].size() || segments[s].width != width ||
        segments[s].values.size() != segments[s].frames * width) {
      throw ShapeError("fuse: segment " + std::to_string(s) + " does not match its planned frame range");
    }
  }

  FrameArray out(plan.frames, width);
  const auto& segs = plan.segments;
  std::copy(segments[0].values.begin(), segments[0].values.end(), out.values.begin());
  std::size_t prefix_end = segs[0].end;
  for (std::size_t s = 1; s < segs.size(); ++s) {
    const Blend span = blend_span(segs[s], prefix_end);
    const double den = static_cast<double>(span.length + 1);
    for (std::size_t k = 0; k < span.length; ++k) {
      const double w = static_cast<double>(k + 1) / den;
      const std::size_t f = span.begin + k;
      for (std::size_t c = 0; c < width; ++c) {
        const double a = out.at(f, c);
        const double b = segments[s].at(k, c);
        // Clamp guards against the last-ulp overshoot of a + w (b - a).
        out.at(f, c) = std::clamp(a + w * (b - a), std::min(a, b), std::max(a, b));
      }
    }
    for (std::size_t f = span.begin + span.length; f < segs[s].end; ++f) {
      for (std::size_t c = 0; c < width; ++c) out.at(f, c) = segments[s].at(f - segs[s].begin, c);
    }
    prefix_end = segs[s].end;
  }
  return out;
}

void write_segment_plan(std::ostream& out, const SegmentPlan& plan) {
  out << "# posesparse-segments 1\n";
  out << "frames " << plan.frames << " segment_length " << plan.segment_length << " overlap " << plan.overlap << '\n';
  for (const auto& s : plan.segments) out << "segment " << s.begin << ' ' << s.end << '\n';
}

}  // namespace posesparse

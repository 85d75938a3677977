#include "posesparse/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace posesparse {

namespace {

struct Point {
  double x;
  double y;
};

Point rotate_about(Point p, Point c, double angle) {
  const double s = std::sin(angle);
  const double k = std::cos(angle);
  return {c.x + k * (p.x - c.x) - s * (p.y - c.y), c.y + s * (p.x - c.x) + k * (p.y - c.y)};
}

}  // namespace

PoseSequence synthetic_pose_sequence(const SyntheticPoseOptions& opts) {
  std::mt19937_64 rng(opts.seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  PoseSequence seq;
  seq.fps = opts.fps;
  seq.image_size = opts.image_size;
  seq.layout = default_group_layout();

  const double w = opts.image_size.width;
  const double h = opts.image_size.height;
  const double drift_angle = 2.0 * std::numbers::pi * unit(rng);
  const double phase_l = 2.0 * std::numbers::pi * unit(rng);
  const double phase_r = 2.0 * std::numbers::pi * unit(rng);
  const double swing_rate = 0.15 + 0.2 * unit(rng);

  for (std::size_t t = 0; t < opts.frames; ++t) {
    const double td = static_cast<double>(t);
    const Point c{0.5 * w + opts.drift * td * std::cos(drift_angle),
                  0.5 * h + opts.drift * td * std::sin(drift_angle)};
    const Point head{c.x, c.y - 0.28 * h};
    const Point sh_l{c.x - 0.14 * w, c.y - 0.12 * h};
    const Point sh_r{c.x + 0.14 * w, c.y - 0.12 * h};
    const double swing_l = 0.5 * std::sin(swing_rate * td + phase_l);
    const double swing_r = 0.5 * std::sin(swing_rate * td + phase_r);
    const Point el_l = rotate_about({sh_l.x - 0.04 * w, sh_l.y + 0.15 * h}, sh_l, swing_l);
    const Point el_r = rotate_about({sh_r.x + 0.04 * w, sh_r.y + 0.15 * h}, sh_r, -swing_r);
    const Point wr_l = rotate_about({el_l.x, el_l.y + 0.13 * h}, el_l, 1.5 * swing_l);
    const Point wr_r = rotate_about({el_r.x, el_r.y + 0.13 * h}, el_r, -1.5 * swing_r);

    std::vector<Point> pts;
    pts.reserve(23);
    // face: nose, eyes, ears
    pts.push_back({head.x, head.y});
    pts.push_back({head.x - 0.025 * w, head.y - 0.02 * h});
    pts.push_back({head.x + 0.025 * w, head.y - 0.02 * h});
    pts.push_back({head.x - 0.05 * w, head.y});
    pts.push_back({head.x + 0.05 * w, head.y});
    // hands: wrist plus four finger tips fanned below it
    for (const Point& wr : {wr_l, wr_r}) {
      pts.push_back(wr);
      for (int k = 0; k < 4; ++k) pts.push_back({wr.x + (k - 1.5) * 0.012 * w, wr.y + 0.04 * h});
    }
    pts.push_back(el_l);
    pts.push_back(wr_l);
    pts.push_back(el_r);
    pts.push_back(wr_r);
    pts.push_back({c.x - 0.09 * w, c.y + 0.2 * h});
    pts.push_back({c.x + 0.09 * w, c.y + 0.2 * h});
    pts.push_back(sh_l);
    pts.push_back(sh_r);

    PoseFrame frame;
    frame.frame_index = t;
    frame.keypoints.reserve(pts.size());
    for (const auto& p : pts) {
      const double x = std::clamp(p.x + opts.jitter * noise(rng), 0.0, w);
      const double y = std::clamp(p.y + opts.jitter * noise(rng), 0.0, h);
      frame.keypoints.push_back({x, y, 0.95 + 0.05 * unit(rng)});
    }
    seq.frames.push_back(std::move(frame));
  }
  return seq;
}

}  // namespace posesparse

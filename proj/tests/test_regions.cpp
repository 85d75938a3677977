#include <doctest.h>

#include <random>
#include <sstream>

#include "oracles.hpp"
#include "posesparse/error.hpp"
#include "posesparse/regions.hpp"
#include "posesparse/synthetic.hpp"

using namespace posesparse;

namespace {

PoseSequence jittered(std::uint64_t seed, std::size_t frames, ImageSize size = {256, 256}) {
  SyntheticPoseOptions o;
  o.seed = seed;
  o.frames = frames;
  o.image_size = size;
  o.jitter = 6.0;
  o.drift = 3.0;
  return synthetic_pose_sequence(o);
}

}  // namespace

TEST_CASE("token labels match the hull oracle") {
  std::mt19937_64 rng(11);
  for (std::uint64_t seed = 0; seed < 12; ++seed) {
    const auto seq = jittered(seed, 3);
    for (int patch : {16, 32}) {
      const auto grid = TokenGrid::covering(seq.image_size, patch);
      for (int dil : {0, 1, 2}) {
        LabelOptions opts;
        opts.dilation = dil;
        for (const auto& f : seq.frames) {
          const auto got = label_tokens(f, seq.layout, seq.image_size, grid, opts).labels;
          CHECK(got == oracle::label_reference(f, seq.layout, seq.image_size, grid, dil));
        }
      }
    }
  }
}

TEST_CASE("keypoints on token corners and degenerate hulls") {
  PoseSequence seq;
  seq.image_size = {64, 64};
  seq.layout = default_group_layout();
  PoseFrame f{0, std::vector<Keypoint>(23, Keypoint{-1, -1, 0.0})};
  // A single face point exactly on a grid corner touches four tokens.
  f.keypoints[0] = {32, 32, 1.0};
  // Two collinear hand points give a segment hull.
  f.keypoints[5] = {4, 60, 1.0};
  f.keypoints[6] = {28, 60, 1.0};
  const auto grid = TokenGrid::covering(seq.image_size, 8);
  LabelOptions opts;
  opts.dilation = 0;
  const auto lab = label_tokens(f, seq.layout, seq.image_size, grid, opts);
  CHECK(lab.labels == oracle::label_reference(f, seq.layout, seq.image_size, grid, 0));
  auto at = [&](int r, int c) { return lab.labels[static_cast<std::size_t>(r * 8 + c)]; };
  CHECK(at(3, 3) == RegionLabel::Face);
  CHECK(at(4, 4) == RegionLabel::Face);
  CHECK(at(3, 4) == RegionLabel::Face);
  CHECK(at(2, 2) == RegionLabel::Background);
  CHECK(at(7, 0) == RegionLabel::Hands);
  CHECK(at(7, 3) == RegionLabel::Hands);
  CHECK(at(7, 4) == RegionLabel::Background);
  // Groups with nothing usable are reported.
  CHECK(lab.empty_regions.size() == 3);
}

TEST_CASE("overlap priority puts face above hands above arms") {
  PoseSequence seq;
  seq.image_size = {32, 32};
  seq.layout = default_group_layout();
  PoseFrame f{0, std::vector<Keypoint>(23, Keypoint{16, 16, 1.0})};
  const auto grid = TokenGrid::covering(seq.image_size, 8);
  auto lab = label_tokens(f, seq.layout, seq.image_size, grid, {0, 0.0});
  CHECK(lab.labels[2 * 4 + 2] == RegionLabel::Face);
  for (std::size_t i = 0; i < 5; ++i) f.keypoints[i].confidence = 0.0;
  lab = label_tokens(f, seq.layout, seq.image_size, grid, {0, 0.0});
  CHECK(lab.labels[2 * 4 + 2] == RegionLabel::Hands);
  for (std::size_t i = 5; i < 15; ++i) f.keypoints[i].confidence = 0.0;
  lab = label_tokens(f, seq.layout, seq.image_size, grid, {0, 0.0});
  CHECK(lab.labels[2 * 4 + 2] == RegionLabel::Arms);
  for (std::size_t i = 15; i < 19; ++i) f.keypoints[i].confidence = 0.0;
  lab = label_tokens(f, seq.layout, seq.image_size, grid, {0, 0.0});
  CHECK(lab.labels[2 * 4 + 2] == RegionLabel::Shoulders);
}

TEST_CASE("labels are a partition and background is the complement") {
  const auto seq = jittered(5, 4);
  const auto grid = TokenGrid::covering(seq.image_size, 16);
  const auto lab = label_sequence(seq, grid);
  for (std::size_t t = 0; t < seq.frame_count(); ++t) {
    std::size_t total = 0;
    for (std::size_t r = 0; r < kLabelCount; ++r) total += lab.token_index_set(t, static_cast<RegionLabel>(r)).size();
    CHECK(total == grid.tokens());
  }
}

TEST_CASE("MLS rigid warp agrees with the closed-form reference") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> g(0.0, 30.0);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = 3 + trial % 6;
    std::vector<Point2> p, q;
    for (std::size_t i = 0; i < n; ++i) {
      p.emplace_back(g(rng), g(rng));
      q.emplace_back(p.back() + Point2(g(rng), g(rng)) * 0.2);
    }
    const MlsRigidWarp warp(p, q);
    for (int k = 0; k < 10; ++k) {
      const Point2 v(g(rng), g(rng));
      CHECK((warp(v) - oracle::mls_rigid_reference(p, q, v)).norm() < 1e-9);
    }
    for (std::size_t i = 0; i < n; ++i) CHECK((warp(p[i]) - q[i]).norm() < 1e-12);
  }
}

TEST_CASE("MLS reproduces global rigid motion") {
  std::mt19937_64 rng(13);
  std::normal_distribution<double> g(0.0, 30.0);
  for (int trial = 0; trial < 20; ++trial) {
    const auto t = RigidTransform::from_angle(0.5 * trial, Point2(g(rng), g(rng)));
    std::vector<Point2> p, q;
    for (int i = 0; i < 5; ++i) {
      p.emplace_back(g(rng), g(rng));
      q.push_back(t.apply(p.back()));
    }
    for (double alpha : {0.5, 1.0, 2.0}) {
      const MlsRigidWarp warp(p, q, alpha);
      const Point2 v(g(rng), g(rng));
      CHECK((warp(v) - t.apply(v)).norm() < 1e-9);
    }
  }
}

TEST_CASE("MLS rejects degenerate control sets") {
  std::vector<Point2> one = {{0, 0}};
  CHECK_THROWS_AS(MlsRigidWarp(one, one), DegenerateError);
  std::vector<Point2> same = {{1, 1}, {1, 1}};
  CHECK_THROWS_AS(MlsRigidWarp(same, same), DegenerateError);
  std::vector<Point2> two = {{0, 0}, {1, 0}};
  std::vector<Point2> three = {{0, 0}, {1, 0}, {2, 0}};
  CHECK_THROWS_AS(MlsRigidWarp(two, three), DimensionMismatchError);
}

TEST_CASE("MLS fallback recovers a dropped hand") {
  auto seq = jittered(3, 4);
  const auto grid = TokenGrid::covering(seq.image_size, 16);
  const auto full = label_sequence(seq, grid);
  const auto range = seq.layout.range(PoseGroup::LeftHand);
  for (std::size_t i = range.begin; i < range.end; ++i) seq.frames[2].keypoints[i].confidence = 0.0;

  LabelingConfig no_mls;
  no_mls.mls_fallback = false;
  const auto dropped = label_sequence(seq, grid, no_mls);
  const auto recovered = label_sequence(seq, grid);
  auto hands = [&](const RegionLabeling& l) { return l.token_index_set(2, RegionLabel::Hands).size(); };
  CHECK(hands(dropped) < hands(full));
  CHECK(hands(recovered) > hands(dropped));
  // Frames without missing points are untouched by the fallback.
  for (std::size_t t : {0u, 1u, 3u}) CHECK(std::ranges::equal(dropped.frame(t), recovered.frame(t)));
}

TEST_CASE("reference-frame mode copies one labeling") {
  const auto seq = jittered(4, 5);
  const auto grid = TokenGrid::covering(seq.image_size, 16);
  LabelingConfig cfg;
  cfg.mode = LabelingMode::ReferenceFrame;
  cfg.reference_frame = 2;
  const auto lab = label_sequence(seq, grid, cfg);
  const auto per = label_sequence(seq, grid);
  for (std::size_t t = 0; t < 5; ++t) CHECK(std::ranges::equal(lab.frame(t), per.frame(2)));
  cfg.reference_frame = 9;
  CHECK_THROWS_AS(label_sequence(seq, grid, cfg), ConfigError);
}

TEST_CASE("labeling is thread independent and round-trips") {
  const auto seq = jittered(6, 7);
  const auto grid = TokenGrid::covering(seq.image_size, 16);
  const auto a = label_sequence(seq, grid, {}, 1);
  const auto b = label_sequence(seq, grid, {}, 8);
  CHECK(a == b);
  std::stringstream io;
  write_region_labeling(io, a);
  CHECK(read_region_labeling(io) == a);
}

TEST_CASE("region correspondence excludes background") {
  std::vector<RegionLabel> q = {RegionLabel::Face, RegionLabel::Background, RegionLabel::Hands};
  std::vector<RegionLabel> k = {RegionLabel::Face, RegionLabel::Background, RegionLabel::Arms};
  const auto c = region_correspondence(q, k);
  CHECK(c(0, 0));
  CHECK_FALSE(c(1, 1));
  CHECK_FALSE(c(2, 2));
  CHECK_FALSE(c(0, 2));
  std::vector<RegionLabel> short_k = {RegionLabel::Face};
  CHECK_THROWS_AS(region_correspondence(q, short_k), DimensionMismatchError);
}

TEST_CASE("grid must cover the image") {
  CHECK_THROWS_AS(TokenGrid::covering({0, 10}, 4), ConfigError);
  const TokenGrid small{2, 2, 8};
  CHECK_THROWS_AS(small.validate_covers({32, 32}), ConfigError);
  CHECK(TokenGrid::covering({33, 17}, 16).tokens() == 3 * 2);
}

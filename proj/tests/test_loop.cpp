#include <doctest.h>

#include <random>

#include "avm/errors.hpp"
#include "avm/loop.hpp"
#include "avm/sim.hpp"
#include "test_util.hpp"

using namespace avm;

namespace {

CategoryCensus census_of(std::size_t lane, std::size_t spot, std::size_t zebra, std::size_t arrow) {
  std::vector<LabeledPoint> pts;
  auto add = [&](std::size_t n, SemanticLabel l) {
    for (std::size_t i = 0; i < n; ++i) pts.push_back({Point3(0.1 * i, 0, 0), l});
  };
  add(lane, SemanticLabel::LaneLine);
  add(spot, SemanticLabel::ParkingSpot);
  add(zebra, SemanticLabel::ZebraCrossing);
  add(arrow, SemanticLabel::IndicatingArrow);
  return category_census(pts);
}

// Mapper fed with ground-truth poses from a noise-free simulator run.
struct SimMap {
  GarageWorld world;
  Dataset data;
  Mapper mapper;
  std::vector<double> travel;  // per frame

  explicit SimMap(std::uint64_t seed) : world(generate_world(seed, WorldTemplate::LoopCorridor)) {
    SimOptions opts;
    opts.noise = SensorNoiseModel::none();
    data = simulate_run(world, world.route, opts, seed);
    travel.push_back(0.0);
    for (std::size_t i = 1; i < data.groundtruth.size(); ++i) {
      travel.push_back(travel.back() +
                       (data.groundtruth[i].pose.translation() - data.groundtruth[i - 1].pose.translation()).norm());
    }
  }

  // Keyframes up to `travel_limit`, finalizing every full submap.
  void build(double travel_limit) {
    for (std::size_t i = 0; i < data.frames.size() && travel[i] <= travel_limit; ++i) {
      const Pose2& pose = data.groundtruth[i].pose;
      const Keyframe* last = mapper.last_keyframe();
      const Pose2 rel = last ? between(last->frontend_pose, pose) : Pose2();
      if (!keyframe_filter(data.frames[i], last, rel, mapper.config())) continue;
      const auto [kf, r] = mapper.add_keyframe(data.frames[i].timestamp(), pose, data.frames[i], travel[i]);
      if (r.finalizing) mapper.finalize_submap(*r.finalizing);
    }
  }

  Keyframe keyframe_at(std::size_t frame) const {
    Keyframe kf;
    kf.id = 1u << 20;
    kf.pose = kf.frontend_pose = data.groundtruth[frame].pose;
    kf.travel = travel[frame];
    kf.frame = downsample(data.frames[frame], 0.1);
    kf.census = category_census(kf.frame);
    return kf;
  }

  // Second-lap frame closest to the anchor of submap `id`, offset by `ahead` m along the track.
  std::size_t revisit_of(std::uint64_t id, double ahead = 0.0) const {
    const Vec2 a = mapper.submap(id).anchor.translation();
    std::size_t best = 0;
    double bd = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < travel.size(); ++i) {
      if (travel[i] < 150.0) continue;
      const double d = (data.groundtruth[i].pose.translation() - a).norm();
      if (d < bd) {
        bd = d;
        best = i;
      }
    }
    return frame_after(travel[best] + ahead);
  }

  std::size_t frame_after(double t) const {
    std::size_t i = 0;
    while (i + 1 < travel.size() && travel[i] < t) ++i;
    return i;
  }
};

}  // namespace

TEST_CASE("spq_qualify examples") {
  SpqConfig cfg;
  CHECK_FALSE(spq_qualify(CategoryCensus{}, cfg).pass);
  const auto lanes = spq_qualify(census_of(40, 0, 0, 0), cfg);
  CHECK_FALSE(lanes.pass);
  CHECK(lanes.score == doctest::Approx(40));
  // 40 lane points at weight 1 and 10 zebra points at weight 3.
  const auto mixed = spq_qualify(census_of(40, 0, 10, 0), cfg);
  CHECK(mixed.score == doctest::Approx(70));
  CHECK(mixed.distinct_categories == 2);
  CHECK(mixed.pass);
  CHECK_FALSE(spq_qualify(census_of(10, 0, 5, 0), cfg).pass);

  SpqConfig bad;
  bad.search_radius = -1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("spq monotonicity: adding points never flips pass to fail") {
  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> n(0, 30), lab(0, 3);
  SpqConfig cfg;
  for (int trial = 0; trial < 2000; ++trial) {
    std::vector<LabeledPoint> pts;
    for (int i = n(rng); i > 0; --i) pts.push_back({Point3(0, 0, 0), label_from_id(lab(rng))});
    const bool before = spq_qualify(pts, cfg).pass;
    for (int i = n(rng); i > 0; --i) pts.push_back({Point3(0, 0, 0), label_from_id(lab(rng))});
    if (before) CHECK(spq_qualify(pts, cfg).pass);
  }
}

TEST_CASE("find_loop_candidates: empty map and the travel gate") {
  const SpqConfig cfg;
  Keyframe kf;
  kf.travel = 100;
  CHECK(find_loop_candidates(kf, Pose2(), GlobalMap{}, cfg).empty());

  SimMap sm(1);
  sm.build(120.0);
  REQUIRE_FALSE(sm.mapper.global_map().empty());
  // The keyframe right after the last finalized submap sits within the
  // search radius but too close along the trajectory.
  const auto& subs = sm.mapper.global_map().submaps();
  const Submap& last = subs.rbegin()->second;
  const std::size_t f = sm.frame_after(last.travel_max + 1.0);
  const Keyframe near = sm.keyframe_at(f);
  for (const auto& c : find_loop_candidates(near, near.pose, sm.mapper.global_map(), cfg, false)) {
    CHECK(near.travel - subs.at(c.submap_id).travel_max >= cfg.min_travel_distance);
    CHECK(c.submap_id != last.id);
  }
}

TEST_CASE("find_loop_candidates: revisit after a full lap") {
  SimMap sm(1);
  sm.build(150.0);
  const std::size_t f = sm.revisit_of(0, 3.0);
  REQUIRE(sm.travel[f] > 150.0);
  const Keyframe kf = sm.keyframe_at(f);
  REQUIRE(spq_qualify(kf.census, SpqConfig{}).pass);
  const auto cands = find_loop_candidates(kf, kf.pose, sm.mapper.global_map(), SpqConfig{});
  REQUIRE_FALSE(cands.empty());
  for (std::size_t i = 1; i < cands.size(); ++i) CHECK(cands[i - 1].distance <= cands[i].distance);
  // The nearest candidate is the first-lap submap covering this place.
  const Submap& s = sm.mapper.global_map().submaps().at(cands.front().submap_id);
  CHECK(s.id == 0);
  CHECK(cands.front().distance <= 10.0);
  CHECK(test::near_pose(cands.front().predicted, between(s.anchor, kf.pose), 1e-12));
}

TEST_CASE("verify_loop: same frame gives the identity") {
  SimMap sm(2);
  const std::size_t f = sm.frame_after(20.0);
  const SemanticFrame frame = downsample(sm.data.frames[f], 0.1);
  const TargetCloud target(frame.points(), 0.5);
  LoopCandidate c;
  const auto cl = verify_loop(c, frame, target, LoopVerifyConfig{});
  REQUIRE(cl.has_value());
  CHECK(test::near_pose(cl->transform, Pose2(), 1e-6));
  CHECK(cl->rms < 1e-6);
  CHECK(cl->inlier_fraction == doctest::Approx(1.0));
}

TEST_CASE("verify_loop recovers the relative pose through 1.5 m of drift") {
  SimMap sm(1);
  sm.build(150.0);
  int checked = 0;
  for (double ahead : {0.0, 3.0, 6.0}) {
    const std::size_t f = sm.revisit_of(0, ahead);
    const Keyframe kf = sm.keyframe_at(f);
    const auto cands = find_loop_candidates(kf, kf.pose, sm.mapper.global_map(), SpqConfig{});
    if (cands.empty()) continue;
    const auto& s = sm.mapper.global_map().submaps().at(cands.front().submap_id);
    const Pose2 truth = between(s.anchor, kf.pose);
    for (const Pose2& drift : {Pose2(1.2, 0.9, 0.03), Pose2(-0.9, 1.2, -0.03), Pose2(1.5, 0, 0)}) {
      LoopCandidate c = cands.front();
      c.predicted = compose(truth, drift);
      const auto cl = verify_loop(c, kf.frame, *s.target, LoopVerifyConfig{});
      REQUIRE(cl.has_value());
      CHECK((cl->transform.translation() - truth.translation()).norm() < 0.1);
      CHECK(std::abs(wrap_angle(cl->transform.yaw - truth.yaw)) < 0.01);
      ++checked;
    }
  }
  CHECK(checked >= 6);
}

TEST_CASE("verify_loop rejects an aliased aisle") {
  // Both aisles share the same periodic parking dividers; the two arrows
  // sit half a spot further along in the second one, so no shift aligns
  // both structures.
  auto place = [](double arrow_x) {
    std::vector<LabeledPoint> pts;
    for (int k = 0; k <= 10; ++k) {
      for (int i = 0; i < 40; ++i) pts.push_back({Point3(2.5 * k, 2.75 + 0.1 * i, 0), SemanticLabel::ParkingSpot});
    }
    for (double x0 : {arrow_x, arrow_x + 6.3}) {
      for (int i = 0; i < 10; ++i) {
        for (int j = 0; j < 20; ++j) {
          pts.push_back({Point3(x0 + 0.1 * i, -2.3 + 0.1 * j, 0), SemanticLabel::IndicatingArrow});
        }
      }
    }
    return pts;
  };
  const TargetCloud target(place(10.0), 0.5);
  const SemanticFrame other(0, 0, place(11.25));
  LoopCandidate c;
  for (const Pose2& guess : {Pose2(), Pose2(-1.25, 0, 0), Pose2(1.25, 0, 0), Pose2(-0.6, 0.3, 0.02)}) {
    c.predicted = guess;
    const auto cl = verify_loop(c, other, target, LoopVerifyConfig{});
    CHECK_MESSAGE(!cl.has_value(), "accepted at " << (cl ? cl->transform.x : 0.0) << " inliers "
                                                  << (cl ? cl->inlier_fraction : 0.0));
  }
  // The true place is accepted.
  c.predicted = Pose2(0.4, 0.2, 0.02);
  const auto ok = verify_loop(c, SemanticFrame(0, 0, place(10.0)), target, LoopVerifyConfig{});
  REQUIRE(ok.has_value());
  // Lattice-sampled blocks leave shallow nearest-neighbour minima a few cm wide.
  CHECK(ok->transform.translation().norm() < 0.05);
  CHECK(std::abs(ok->transform.yaw) < 0.01);
}

TEST_CASE("LoopVerifyConfig validation") {
  LoopVerifyConfig c;
  CHECK_NOTHROW(c.validate());
  c.radii.clear();
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.min_inlier_fraction = 1.5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.radii = {1.0, -0.5};
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "avm/errors.hpp"
#include "avm/mapping.hpp"
#include "test_util.hpp"

using namespace avm;

namespace {

// Points on a 0.2 m lattice, offset to sit inside 0.1 m downsample buckets.
std::vector<LabeledPoint> patch(double x0, double y0, int nx, int ny, SemanticLabel l = SemanticLabel::LaneLine) {
  std::vector<LabeledPoint> pts;
  for (int i = 0; i < nx; ++i) {
    for (int j = 0; j < ny; ++j) pts.push_back({Point3(x0 + 0.2 * i + 0.05, y0 + 0.2 * j + 0.05, 0.0), l});
  }
  return pts;
}

SemanticFrame frame_of(std::vector<LabeledPoint> pts, double t = 0.0) { return SemanticFrame(t, 0, std::move(pts)); }

Keyframe make_kf(std::uint64_t id, const Pose2& pose, std::vector<LabeledPoint> pts) {
  Keyframe kf;
  kf.id = id;
  kf.timestamp = static_cast<double>(id);
  kf.frontend_pose = kf.pose = pose;
  kf.travel = static_cast<double>(id);
  kf.frame = frame_of(std::move(pts), kf.timestamp);
  kf.census = category_census(kf.frame);
  return kf;
}

bool same_cloud(std::vector<LabeledPoint> a, std::vector<LabeledPoint> b, double tol) {
  if (a.size() != b.size()) return false;
  auto key = [](const LabeledPoint& p) { return std::tuple(static_cast<int>(p.label), p.p.x(), p.p.y()); };
  auto less = [&](const LabeledPoint& x, const LabeledPoint& y) { return key(x) < key(y); };
  std::sort(a.begin(), a.end(), less);
  std::sort(b.begin(), b.end(), less);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].label != b[i].label || (a[i].p - b[i].p).norm() > tol) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("MappingConfig validation") {
  MappingConfig c;
  CHECK_NOTHROW(c.validate());
  CHECK(c.overlap_start() == 5);
  c.submap_capacity = 1;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.overlap_fraction = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.downsample_cell = 0;
  CHECK_THROWS_AS(Mapper{c}, ConfigError);
}

TEST_CASE("keyframe_filter") {
  const MappingConfig cfg;
  const SemanticFrame f = frame_of(patch(0, 0, 10, 10));
  CHECK(keyframe_filter(f, nullptr, Pose2(), cfg));

  const Keyframe last = make_kf(0, Pose2(), patch(0, 0, 10, 10));
  CHECK_FALSE(keyframe_filter(f, &last, Pose2(), cfg));

  // 40 of 100 points shared with the last keyframe, 60 new.
  auto pts = patch(0, 0, 10, 4);
  auto fresh = patch(10, 10, 10, 6);
  pts.insert(pts.end(), fresh.begin(), fresh.end());
  CHECK(frame_difference(last.frame, frame_of(pts), Pose2(), cfg.difference_radius) == doctest::Approx(0.6));
  CHECK(keyframe_filter(frame_of(pts), &last, Pose2(), cfg));

  // 40% novel stays below the threshold.
  auto pts40 = patch(0, 0, 10, 6);
  auto fresh40 = patch(10, 10, 10, 4);
  pts40.insert(pts40.end(), fresh40.begin(), fresh40.end());
  CHECK_FALSE(keyframe_filter(frame_of(pts40), &last, Pose2(), cfg));

  // The relative pose is honoured: the same scene seen from 1.2 m ahead.
  std::vector<LabeledPoint> moved;
  for (const auto& p : last.frame.points()) moved.push_back({Point3(p.p.x() - 1.2, p.p.y(), 0), p.label});
  CHECK_FALSE(keyframe_filter(frame_of(moved), &last, Pose2(1.2, 0, 0), cfg));
  CHECK(keyframe_filter(frame_of(moved), &last, Pose2(), cfg));
}

TEST_CASE("insert lifecycle: capacity 10, overlap 0.5") {
  Mapper m;
  const auto first = *m.current_submap();
  const auto second = *m.next_submap();
  for (std::uint64_t k = 1; k <= 5; ++k) {
    const auto r = m.insert_keyframe(make_kf(k, Pose2(k, 0, 0), patch(0, 0, 3, 3)));
    CHECK(r.submaps == std::vector<std::uint64_t>{first});
    CHECK_FALSE(r.finalizing.has_value());
  }
  CHECK(m.submap(second).keyframe_ids.empty());
  for (std::uint64_t k = 6; k <= 10; ++k) {
    const auto r = m.insert_keyframe(make_kf(k, Pose2(k, 0, 0), patch(0, 0, 3, 3)));
    CHECK(r.submaps == std::vector<std::uint64_t>{first, second});
    if (k == 6) CHECK(r.created == std::vector<std::uint64_t>{second});
  }
  // The tenth keyframe fills the first submap.
  CHECK(m.submap(first).state == SubmapState::Finalizing);
  CHECK(m.submap(first).keyframe_ids.size() == 10);
  CHECK(*m.current_submap() == second);
  CHECK(m.submap(second).keyframe_ids == std::vector<std::uint64_t>{6, 7, 8, 9, 10});
  const auto third = *m.next_submap();

  const auto r = m.insert_keyframe(make_kf(11, Pose2(11, 0, 0), patch(0, 0, 3, 3)));
  CHECK(r.submaps == std::vector<std::uint64_t>{second, third});
  CHECK(m.submap(second).keyframe_ids.size() == 6);
  CHECK(m.submap(second).anchor.x == doctest::Approx(6.0));
  CHECK_THROWS_AS(m.insert_keyframe(make_kf(11, Pose2(), {})), StructuralError);
}

TEST_CASE("steady-state membership and overlap") {
  MappingConfig cfg;
  Mapper m(cfg);
  for (std::uint64_t k = 0; k < 57; ++k) m.insert_keyframe(make_kf(k, Pose2(0.5 * k, 0, 0), patch(0, 0, 2, 2)));
  std::map<std::uint64_t, int> membership;
  std::vector<const Submap*> full;
  for (const auto& [id, s] : m.submaps()) {
    CHECK(s.keyframe_ids.size() <= cfg.submap_capacity);
    for (auto k : s.keyframe_ids) ++membership[k];
    if (s.keyframe_ids.size() == cfg.submap_capacity) full.push_back(&s);
  }
  for (const auto& [k, n] : membership) {
    CHECK(n >= 1);
    CHECK(n <= 2);
  }
  CHECK(membership.size() == 57);
  for (std::size_t i = 1; i < full.size(); ++i) {
    std::vector<std::uint64_t> shared;
    std::set_intersection(full[i - 1]->keyframe_ids.begin(), full[i - 1]->keyframe_ids.end(),
                          full[i]->keyframe_ids.begin(), full[i]->keyframe_ids.end(), std::back_inserter(shared));
    CHECK(shared.size() == 5);
  }
}

TEST_CASE("finalize_submap: unchanged poses keep the incremental cloud") {
  Mapper m;
  std::mt19937_64 rng(4);
  for (std::uint64_t k = 0; k < 10; ++k) {
    m.insert_keyframe(make_kf(k, test::random_pose(rng, 5.0), patch(0, 0, 5, 5, SemanticLabel::ParkingSpot)));
  }
  const auto id = m.submaps().begin()->first;
  const auto incremental = m.submap(id).cloud;
  m.finalize_submap(id);
  CHECK(m.submap(id).state == SubmapState::Finalized);
  CHECK(same_cloud(incremental, m.submap(id).cloud, 1e-9));
  REQUIRE(m.global_map().submaps().count(id) == 1);
  CHECK(m.submap(id).target != nullptr);
}

TEST_CASE("finalize_submap: a shifted keyframe moves its points") {
  Mapper m;
  // Two keyframes far enough apart not to share buckets.
  m.insert_keyframe(make_kf(0, Pose2(), patch(0, 0, 3, 3)));
  m.insert_keyframe(make_kf(1, Pose2(10, 0, 0), patch(0, 0, 3, 3)));
  const auto id = m.submaps().begin()->first;
  const auto before = m.submap(id).cloud;
  m.apply_poses({{1, Pose2(10.5, 0, 0)}}, {});
  m.finalize_submap(id);
  std::vector<LabeledPoint> expected;
  for (const auto& p : before) {
    const double dx = p.p.x() > 5 ? 0.5 : 0.0;
    expected.push_back({Point3(p.p.x() + dx, p.p.y(), 0), p.label});
  }
  CHECK(same_cloud(downsample_points(expected, 0.1), m.submap(id).cloud, 1e-9));
}

TEST_CASE("finalize_submap vs from-scratch rebuild under random corrections") {
  std::mt19937_64 rng(8);
  for (int trial = 0; trial < 10; ++trial) {
    Mapper m;
    std::vector<Keyframe> kfs;
    for (std::uint64_t k = 0; k < 10; ++k) {
      auto pts = patch(-1, -1, 8, 8, k % 2 ? SemanticLabel::LaneLine : SemanticLabel::ZebraCrossing);
      kfs.push_back(make_kf(k, test::random_pose(rng, 20.0), pts));
      m.insert_keyframe(kfs.back());
    }
    std::map<std::uint64_t, Pose2> poses;
    std::normal_distribution<double> n(0.0, 0.3);
    for (const auto& kf : kfs) poses[kf.id] = compose(kf.pose, Pose2(n(rng), n(rng), 0.1 * n(rng)));
    const auto id = m.submaps().begin()->first;
    const Pose2 anchor = poses.at(0);
    m.apply_poses(poses, {{id, anchor}});
    m.finalize_submap(id);
    // Oracle: every keyframe point taken to the corrected anchor frame.
    std::vector<LabeledPoint> all;
    for (const auto& kf : kfs) {
      const Pose2 rel = compose(inverse(anchor), poses.at(kf.id));
      for (const auto& p : kf.frame.points()) {
        const Vec2 q = rel.apply(p.xy());
        all.push_back({Point3(q.x(), q.y(), 0), p.label});
      }
    }
    CHECK(same_cloud(downsample_points(all, 0.1), m.submap(id).cloud, 1e-9));
  }
}

TEST_CASE("global map merged cloud") {
  MappingConfig cfg;
  cfg.submap_capacity = 4;
  std::mt19937_64 rng(2);
  auto build = [&](bool reverse) {
    Mapper m(cfg);
    std::mt19937_64 r(2);
    for (std::uint64_t k = 0; k < 13; ++k) m.insert_keyframe(make_kf(k, test::random_pose(r, 30.0), patch(0, 0, 4, 4)));
    std::vector<std::uint64_t> ids;
    for (const auto& [id, s] : m.submaps()) {
      if (!s.keyframe_ids.empty()) ids.push_back(id);
    }
    if (reverse) std::reverse(ids.begin(), ids.end());
    for (auto id : ids) m.finalize_submap(id);
    return std::pair(m.global_map().merged_cloud(), m.global_map().submaps());
  };
  const auto [fwd, subs] = build(false);
  const auto [rev, subs2] = build(true);
  CHECK(same_cloud(fwd, rev, 1e-9));
  std::vector<LabeledPoint> oracle;
  for (const auto& [id, s] : subs) {
    for (const auto& p : s.cloud) {
      const Vec2 q = s.anchor.apply(p.xy());
      oracle.push_back({Point3(q.x(), q.y(), 0), p.label});
    }
  }
  CHECK(same_cloud(fwd, oracle, 1e-9));
  CHECK_THROWS_AS(GlobalMap{}.update(Submap{}), LookupError);
}

TEST_CASE("active target cloud") {
  Mapper m;
  CHECK(m.active_target_cloud() == nullptr);
  const auto pts = patch(0, 0, 6, 6);
  m.insert_keyframe(make_kf(0, Pose2(2, 3, 0.5), pts));
  auto t = m.active_target_cloud();
  REQUIRE(t != nullptr);
  CHECK(t->size() == pts.size());
  // In the tracking frame.
  const Vec2 expected = Pose2(2, 3, 0.5).apply(pts.front().xy());
  bool found = false;
  for (const auto& p : t->points()) found = found || (p.xy() - expected).norm() < 1e-9;
  CHECK(found);

  // After three submaps the target only holds the current one.
  for (std::uint64_t k = 1; k < 26; ++k) m.insert_keyframe(make_kf(k, Pose2(4.0 * k, 0, 0), patch(0, 0, 6, 6)));
  for (const auto& [id, s] : m.submaps()) {
    if (s.state == SubmapState::Finalizing) m.finalize_submap(id);
  }
  const auto& cur = m.submap(*m.current_submap());
  t = m.active_target_cloud();
  CHECK(t->size() == cur.cloud.size());
  CHECK(t->size() < m.global_map().merged_cloud().size());

  // Index queries agree with a linear scan.
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-5, 110);
  for (int i = 0; i < 200; ++i) {
    const Vec2 q(u(rng), 1.2 * u(rng) / 110);
    const auto hit = t->index().nearest(q, 0.5, SemanticLabel::LaneLine);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& p : t->points()) best = std::min(best, (p.xy() - q).norm());
    if (best <= 0.5) {
      REQUIRE(hit.has_value());
      CHECK((t->points()[hit->index].xy() - q).norm() == doctest::Approx(best));
    } else {
      CHECK_FALSE(hit.has_value());
    }
  }
}

TEST_CASE("map cloud and trajectory files") {
  const auto dir = std::filesystem::temp_directory_path() / "avm_mapping_io";
  std::filesystem::create_directories(dir);
  const auto pts = patch(0, 0, 3, 3, SemanticLabel::IndicatingArrow);
  write_map_cloud(dir / "map.txt", pts);
  const auto back = read_map_cloud(dir / "map.txt");
  CHECK(same_cloud(pts, back, 1e-8));

  std::vector<StampedPose> traj = {{0.0, Pose2(1, 2, 0.3)}, {0.1, Pose2(1.5, 2, 0.31)}};
  write_trajectory(dir / "traj.txt", traj);
  const auto tb = read_trajectory(dir / "traj.txt");
  REQUIRE(tb.size() == 2);
  CHECK(test::near_pose(tb[1].pose, traj[1].pose, 1e-10));
  {
    std::ofstream out(dir / "bad.txt");
    out << "# avm-trajectory v1\n0.1 0 0 0\n0.1 1 1 1\n";
  }
  CHECK_THROWS_AS(read_trajectory(dir / "bad.txt"), SchemaError);
  std::filesystem::remove_all(dir);
}

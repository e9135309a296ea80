#include "avm/sim.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "avm/errors.hpp"

namespace avm {

const char* to_string(WorldTemplate t) {
  switch (t) {
    case WorldTemplate::GridGarage: return "grid-garage";
    case WorldTemplate::LoopCorridor: return "loop-corridor";
    case WorldTemplate::FigureEight: return "figure-eight";
  }
  return "?";
}

WorldTemplate template_from_string(const std::string& name) {
  if (name == "grid-garage") return WorldTemplate::GridGarage;
  if (name == "loop-corridor") return WorldTemplate::LoopCorridor;
  if (name == "figure-eight") return WorldTemplate::FigureEight;
  throw ConfigError("unknown world template '" + name + "'");
}

// ------------------------------------------------------------- primitives

Vec2 Primitive::bbox_min() const {
  Vec2 m = pts.front();
  for (const auto& p : pts) m = m.cwiseMin(p);
  return shape == Shape::Stroke ? Vec2(m.array() - width / 2) : m;
}

Vec2 Primitive::bbox_max() const {
  Vec2 m = pts.front();
  for (const auto& p : pts) m = m.cwiseMax(p);
  return shape == Shape::Stroke ? Vec2(m.array() + width / 2) : m;
}

namespace {

double segment_distance(const Vec2& p, const Vec2& a, const Vec2& b) {
  const Vec2 ab = b - a;
  const double len2 = ab.squaredNorm();
  const double t = len2 > 0 ? std::clamp((p - a).dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (a + t * ab - p).norm();
}

bool inside_polygon(const Vec2& p, const std::vector<Vec2>& poly) {
  bool in = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Vec2& a = poly[i];
    const Vec2& b = poly[j];
    if ((a.y() > p.y()) != (b.y() > p.y()) && p.x() < (b.x() - a.x()) * (p.y() - a.y()) / (b.y() - a.y()) + a.x()) {
      in = !in;
    }
  }
  return in;
}

Vec2 left_of(const Vec2& d) { return {-d.y(), d.x()}; }

}  // namespace

bool Primitive::covers(const Vec2& p) const {
  if (shape == Shape::Stroke) return segment_distance(p, pts[0], pts[1]) <= width / 2;
  return inside_polygon(p, pts);
}

const Landmark& GarageWorld::landmark(const std::string& name) const {
  for (const auto& l : landmarks) {
    if (l.name == name) return l;
  }
  throw LookupError("unknown landmark '" + name + "'");
}

bool GarageWorld::contains(const Vec2& p) const {
  return (p.array() >= extent_min.array()).all() && (p.array() <= extent_max.array()).all();
}

// ------------------------------------------------------------------ route

namespace {

struct Leg {
  Vec2 a, b, dir;
  double len = 0.0;
  double speed = 0.0;
};

struct Corner {
  Vec2 center;
  double radius = 0.0;
  double start = 0.0;  // polar angle of the entry point around the center
  double sweep = 0.0;  // signed, positive = left turn
  double speed = 0.0;
  std::size_t waypoint = 0;
};

struct RouteSample {
  Vec2 p;
  double heading = 0.0;
  double curvature = 0.0;
  double s = 0.0;
  double speed = 0.0;
  std::size_t waypoint = 0;  // waypoint of the leg or corner
};

struct Route {
  std::vector<Leg> legs;
  std::vector<Corner> corners;
  std::vector<RouteSample> samples;
  double length = 0.0;
  bool closed = true;

  // Sample at arc length s (wrapped on closed routes, clamped otherwise).
  const RouteSample& at(double s) const {
    if (closed) {
      s = std::fmod(s, length);
      if (s < 0) s += length;
    } else {
      s = std::clamp(s, 0.0, length);
    }
    auto it = std::lower_bound(samples.begin(), samples.end(), s,
                               [](const RouteSample& r, double v) { return r.s < v; });
    if (it == samples.end()) return samples.back();
    return *it;
  }
};

Route build_route(const TrajectorySpec& spec) {
  const auto& w = spec.waypoints;
  const std::size_t n = w.size();
  if (n < 2 || (spec.closed && n < 3)) throw GenerationError("route needs at least 2 (open) or 3 (closed) waypoints");
  for (std::size_t i = 0; i < n; ++i) {
    if (!(w[i].speed >= 0)) throw GenerationError("waypoint " + std::to_string(i) + " has a negative speed");
  }
  const double r = spec.corner_radius;
  std::vector<double> tangent(n, 0.0), turn(n, 0.0);
  std::vector<Vec2> entry(n), exit(n);
  for (std::size_t i = 0; i < n; ++i) {
    entry[i] = exit[i] = w[i].p;
    if (!spec.closed && (i == 0 || i + 1 == n)) continue;
    const Vec2 din = (w[i].p - w[(i + n - 1) % n].p).normalized();
    const Vec2 dout = (w[(i + 1) % n].p - w[i].p).normalized();
    turn[i] = std::atan2(din.x() * dout.y() - din.y() * dout.x(), din.dot(dout));
    if (std::abs(turn[i]) < 1e-9) continue;
    tangent[i] = r * std::tan(std::abs(turn[i]) / 2);
    entry[i] = w[i].p - din * tangent[i];
    exit[i] = w[i].p + dout * tangent[i];
  }

  Route route;
  route.closed = spec.closed;
  const std::size_t nlegs = spec.closed ? n : n - 1;
  const double ds = 0.05;
  double s = 0.0;
  auto push = [&](const Vec2& p, double heading, double k, double speed, std::size_t wp) {
    route.samples.push_back({p, heading, k, s, speed, wp});
  };
  for (std::size_t i = 0; i < nlegs; ++i) {
    const std::size_t j = (i + 1) % n;
    Leg leg;
    leg.a = exit[i];
    leg.b = entry[j];
    leg.len = (leg.b - leg.a).norm();
    const double full = (w[j].p - w[i].p).norm();
    if (tangent[i] + tangent[j] > full + 1e-9) {
      throw GenerationError("corner radius too large for the leg ending at waypoint " + std::to_string(j));
    }
    leg.dir = (w[j].p - w[i].p).normalized();
    leg.speed = w[i].speed;
    route.legs.push_back(leg);
    const double heading = std::atan2(leg.dir.y(), leg.dir.x());
    const int steps = std::max(1, static_cast<int>(std::ceil(leg.len / ds)));
    for (int k = 0; k < steps; ++k) {
      push(leg.a + leg.dir * (leg.len * k / steps), heading, 0.0, leg.speed, i);
      s += leg.len / steps;
    }
    if (tangent[j] > 0) {
      Corner c;
      c.radius = r;
      c.sweep = turn[j];
      const Vec2 side = turn[j] > 0 ? left_of(leg.dir) : Vec2(-left_of(leg.dir));
      c.center = entry[j] + side * r;
      const Vec2 rel = entry[j] - c.center;
      c.start = std::atan2(rel.y(), rel.x());
      c.speed = std::min(w[i].speed, w[j].speed);
      c.waypoint = j;
      route.corners.push_back(c);
      const double arc = std::abs(c.sweep) * r;
      const int asteps = std::max(1, static_cast<int>(std::ceil(arc / ds)));
      const double sign = c.sweep > 0 ? 1.0 : -1.0;
      for (int k = 0; k < asteps; ++k) {
        const double phi = c.start + c.sweep * k / asteps;
        push(c.center + r * Vec2(std::cos(phi), std::sin(phi)), wrap_angle(phi + sign * std::numbers::pi / 2),
             sign / r, c.speed, j);
        s += arc / asteps;
      }
    }
  }
  if (!spec.closed) {
    const Leg& last = route.legs.back();
    push(last.b, std::atan2(last.dir.y(), last.dir.x()), 0.0, last.speed, n - 1);
  }
  route.length = s;
  return route;
}

// ------------------------------------------------------------- decoration

constexpr double kHalfLane = 2.75;
constexpr double kSpotWidth = 2.5;
constexpr double kSpotDepth = 4.0;
constexpr double kLine = 0.15;

struct Decor {
  bool lane_left = false, lane_right = false;
  bool park_left = false, park_right = false;
  bool dashed_center = false;
  int arrows = 0;
  bool zebra_end = false;
};

class WorldBuilder {
 public:
  WorldBuilder(GarageWorld& w, std::mt19937_64& rng) : w_(w), rng_(rng) {}

  void stroke(SemanticLabel l, const Vec2& a, const Vec2& b, double width = kLine) {
    w_.primitives.push_back({l, Primitive::Shape::Stroke, {a, b}, width});
  }
  void polygon(SemanticLabel l, std::vector<Vec2> pts) {
    w_.primitives.push_back({l, Primitive::Shape::Polygon, std::move(pts), 0.0});
  }

  // Polyline along an offset of a straight stretch, optionally dashed.
  void line_along(const Vec2& a, const Vec2& d, double len, double offset, bool dashed) {
    const Vec2 n = left_of(d);
    if (!dashed) {
      stroke(SemanticLabel::LaneLine, a + n * offset, a + d * len + n * offset);
      return;
    }
    std::uniform_real_distribution<double> phase(0.0, 2.0);
    for (double x = phase(rng_); x + 0.5 < len; x += 4.0) {
      stroke(SemanticLabel::LaneLine, a + d * x + n * offset, a + d * std::min(x + 2.0, len) + n * offset);
    }
  }

  std::size_t parking_row(const Leg& leg, double side, double margin = 2.0) {
    const double usable = leg.len - 2 * margin;
    if (usable < kSpotWidth) return 0;
    const auto count = static_cast<std::size_t>(std::floor(usable / kSpotWidth));
    const Vec2 n = left_of(leg.dir) * side;
    const Vec2 start = leg.a + leg.dir * (margin + (usable - count * kSpotWidth) / 2);
    for (std::size_t k = 0; k <= count; ++k) {
      const Vec2 base = start + leg.dir * (k * kSpotWidth);
      stroke(SemanticLabel::ParkingSpot, base + n * kHalfLane, base + n * (kHalfLane + kSpotDepth));
    }
    stroke(SemanticLabel::ParkingSpot, start + n * (kHalfLane + kSpotDepth),
           start + leg.dir * (count * kSpotWidth) + n * (kHalfLane + kSpotDepth));
    return count;
  }

  // Stripes parallel to the driving direction, spread across the road.
  void zebra(const Vec2& c, const Vec2& d) {
    const Vec2 n = left_of(d);
    for (double y = -kHalfLane + 0.4; y + 0.45 <= kHalfLane - 0.4 + 1e-9; y += 0.9) {
      const Vec2 o = c + n * y;
      polygon(SemanticLabel::ZebraCrossing,
              {o - d * 1.0, o + d * 1.0, o + d * 1.0 + n * 0.45, o - d * 1.0 + n * 0.45});
    }
  }

  void arrow(const Vec2& c, const Vec2& d) {
    const Vec2 n = left_of(d);
    auto at = [&](double along, double lat) { return Vec2(c + d * along + n * lat); };
    polygon(SemanticLabel::IndicatingArrow, {at(-1.0, -0.15), at(0.3, -0.15), at(0.3, -0.45), at(1.0, 0.0),
                                             at(0.3, 0.45), at(0.3, 0.15), at(-1.0, 0.15)});
  }

  void decorate(const Leg& leg, const Decor& dec) {
    if (dec.lane_left) line_along(leg.a, leg.dir, leg.len, kHalfLane, false);
    if (dec.lane_right) line_along(leg.a, leg.dir, leg.len, -kHalfLane, false);
    if (dec.dashed_center) line_along(leg.a, leg.dir, leg.len, 0.0, true);
    if (dec.park_left) w_.parking_spots += parking_row(leg, 1.0);
    if (dec.park_right) w_.parking_spots += parking_row(leg, -1.0);
    if (dec.zebra_end && leg.len > 4.0) zebra(leg.b - leg.dir * 2.0, leg.dir);
    if (dec.arrows > 0 && leg.len > 10.0) {
      // Arrows in the right half of the lane, spread over the leg.
      const double span = (leg.len - 8.0) / dec.arrows;
      std::uniform_real_distribution<double> u(0.0, span);
      for (int k = 0; k < dec.arrows; ++k) {
        const double x = 4.0 + k * span + u(rng_);
        arrow(leg.a + leg.dir * x - left_of(leg.dir) * 1.3, leg.dir);
      }
    }
  }

  // Outer edge line around a corner, as short strokes.
  void corner_edge(const Corner& c) {
    const double sign = c.sweep > 0 ? 1.0 : -1.0;
    const double rr = c.radius + kHalfLane;
    const int pieces = std::max(2, static_cast<int>(std::ceil(std::abs(c.sweep) * rr / 0.5)));
    Vec2 prev = c.center + rr * Vec2(std::cos(c.start), std::sin(c.start));
    for (int k = 1; k <= pieces; ++k) {
      const double phi = c.start + c.sweep * k / pieces;
      const Vec2 p = c.center + rr * Vec2(std::cos(phi), std::sin(phi));
      stroke(SemanticLabel::LaneLine, prev, p);
      prev = p;
    }
    (void)sign;
  }

 private:
  GarageWorld& w_;
  std::mt19937_64& rng_;
};

void choose_landmarks(GarageWorld& w, const Route& route, std::mt19937_64& rng) {
  // Marking vertices close to the route, picked at spread-out arc lengths.
  struct Cand {
    Vec2 p;
    std::size_t prim;
  };
  std::vector<Cand> cands;
  for (std::size_t i = 0; i < w.primitives.size(); ++i) {
    for (const auto& v : w.primitives[i].pts) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t k = 0; k < route.samples.size(); k += 10) best = std::min(best, (route.samples[k].p - v).norm());
      if (best <= 5.5) cands.push_back({v, i});
    }
  }
  std::uniform_real_distribution<double> jitter(0.0, 0.05);
  const char* names[] = {"A", "B", "C", "D", "E", "F"};
  std::vector<std::size_t> used;
  for (int k = 0; k < 6; ++k) {
    const double s = route.length * (0.04 + k / 6.0 + jitter(rng));
    const Vec2 target = route.at(s).p;
    double best = std::numeric_limits<double>::infinity();
    const Cand* pick = nullptr;
    for (const auto& c : cands) {
      if (std::find(used.begin(), used.end(), c.prim) != used.end()) continue;
      const double d = (c.p - target).norm();
      if (d < best) {
        best = d;
        pick = &c;
      }
    }
    if (pick == nullptr) throw GenerationError("not enough markings for landmarks");
    used.push_back(pick->prim);
    w.landmarks.push_back({names[k], pick->p});
  }
}

void check_extents(const GarageWorld& w) {
  for (const auto& p : w.primitives) {
    if (!w.contains(p.bbox_min()) || !w.contains(p.bbox_max())) {
      throw GenerationError(std::string("marking outside the world extents in template ") + to_string(w.kind));
    }
  }
}

}  // namespace

GarageWorld generate_world(std::uint64_t seed, WorldTemplate tmpl) {
  GarageWorld w;
  w.kind = tmpl;
  std::mt19937_64 rng(seed ^ 0x5eedu);
  WorldBuilder b(w, rng);

  switch (tmpl) {
    case WorldTemplate::LoopCorridor: {
      // 60 x 40 m rectangle; the north side carries only solid lane lines.
      w.extent_min = Vec2(0, 0);
      w.extent_max = Vec2(80, 60);
      w.route.waypoints = {{{10, 10}, 2.5}, {{70, 10}, 2.5}, {{70, 50}, 2.5}, {{10, 50}, 2.5}};
      w.route.corner_radius = 5.0;
      w.route.laps = 1.3;
      const Route r = build_route(w.route);
      Decor south{.park_left = true, .park_right = true, .dashed_center = true, .arrows = 2, .zebra_end = true};
      Decor east{.lane_left = true, .park_right = true, .dashed_center = true, .arrows = 1, .zebra_end = true};
      Decor north{.lane_left = true, .lane_right = true};
      Decor west{.lane_left = true, .park_right = true, .dashed_center = true, .arrows = 1, .zebra_end = true};
      b.decorate(r.legs[0], south);
      b.decorate(r.legs[1], east);
      b.decorate(r.legs[2], north);
      b.decorate(r.legs[3], west);
      for (const auto& c : r.corners) b.corner_edge(c);
      choose_landmarks(w, r, rng);
      break;
    }
    case WorldTemplate::GridGarage: {
      // Four rows of perpendicular spots (edge rows and a back-to-back
      // block) between two aisles, with end aisles for turning.
      w.extent_min = Vec2(0, 0);
      w.extent_max = Vec2(60, 30);
      const double depth = 4.5, end_aisle = 6.0;
      w.spot_rows = 4;
      w.spot_cols = static_cast<std::size_t>(std::floor((60.0 - 2 * end_aisle) / kSpotWidth));
      w.parking_spots = w.spot_rows * w.spot_cols;
      const double x0 = end_aisle + (60.0 - 2 * end_aisle - w.spot_cols * kSpotWidth) / 2;
      const double x1 = x0 + w.spot_cols * kSpotWidth;
      // (back line y, open edge y) per row.
      const std::pair<double, double> rows[] = {{0.5, 0.5 + depth}, {15.0, 15.0 - depth}, {15.0, 15.0 + depth},
                                                {29.5, 29.5 - depth}};
      for (const auto& [back, open] : rows) {
        for (std::size_t k = 0; k <= w.spot_cols; ++k) {
          const double x = x0 + k * kSpotWidth;
          b.stroke(SemanticLabel::ParkingSpot, Vec2(x, back), Vec2(x, open));
        }
      }
      b.stroke(SemanticLabel::ParkingSpot, Vec2(x0, 0.5), Vec2(x1, 0.5));
      b.stroke(SemanticLabel::ParkingSpot, Vec2(x0, 15.0), Vec2(x1, 15.0));
      b.stroke(SemanticLabel::ParkingSpot, Vec2(x0, 29.5), Vec2(x1, 29.5));

      w.route.waypoints = {{{3, 7.75}, 2.5}, {{57, 7.75}, 2.5}, {{57, 22.25}, 2.5}, {{3, 22.25}, 2.5}};
      w.route.corner_radius = 3.0;
      w.route.laps = 1.3;
      const Route r = build_route(w.route);
      b.line_along(Vec2(x0, 7.75), Vec2(1, 0), x1 - x0, 0.0, true);
      b.line_along(Vec2(x1, 22.25), Vec2(-1, 0), x1 - x0, 0.0, true);
      b.stroke(SemanticLabel::LaneLine, Vec2(0.4, 4.0), Vec2(0.4, 26.0));
      b.stroke(SemanticLabel::LaneLine, Vec2(59.6, 4.0), Vec2(59.6, 26.0));
      b.zebra(Vec2(3, 15), Vec2(0, -1));
      b.zebra(Vec2(57, 15), Vec2(0, 1));
      std::uniform_real_distribution<double> ux(x0 + 3, x1 - 3);
      for (int k = 0; k < 2; ++k) b.arrow(Vec2(ux(rng), 7.75 - 1.3), Vec2(1, 0));
      for (int k = 0; k < 2; ++k) b.arrow(Vec2(ux(rng), 22.25 + 1.3), Vec2(-1, 0));
      choose_landmarks(w, r, rng);
      break;
    }
    case WorldTemplate::FigureEight: {
      // Bow-tie: two diagonals crossing at the center joined by two
      // southbound legs.
      w.extent_min = Vec2(0, 0);
      w.extent_max = Vec2(80, 50);
      w.route.waypoints = {{{12, 10}, 2.5}, {{68, 40}, 2.5}, {{68, 10}, 2.5}, {{12, 40}, 2.5}};
      w.route.corner_radius = 5.0;
      w.route.laps = 1.3;
      const Route r = build_route(w.route);
      Decor diag{.lane_left = true, .lane_right = true, .dashed_center = true, .arrows = 2};
      Decor east{.lane_right = true, .park_left = true, .dashed_center = true, .arrows = 1, .zebra_end = true};
      Decor west{.lane_left = true, .park_right = true, .dashed_center = true, .arrows = 1, .zebra_end = true};
      b.decorate(r.legs[0], diag);
      b.decorate(r.legs[1], east);
      b.decorate(r.legs[2], diag);
      b.decorate(r.legs[3], west);
      b.zebra(Vec2(40, 25) - r.legs[0].dir * 5.0, r.legs[0].dir);
      for (const auto& c : r.corners) b.corner_edge(c);
      choose_landmarks(w, r, rng);
      break;
    }
  }
  check_extents(w);
  return w;
}

// ---------------------------------------------------------------- sensing

void SensorNoiseModel::validate() const {
  if (wheel_rate_sigma < 0 || wheel_scale_sigma < 0 || imu_yaw_rate_sigma < 0 || imu_bias_walk < 0 ||
      imu_accel_sigma < 0 || point_jitter < 0) {
    throw ConfigError("noise sigmas must be non-negative");
  }
  if (!(dropout >= 0 && dropout <= 1)) throw ConfigError("dropout must lie in [0, 1]");
}

SensorNoiseModel SensorNoiseModel::none() {
  SensorNoiseModel n;
  n.wheel_rate_sigma = n.wheel_scale_sigma = n.imu_yaw_rate_sigma = n.imu_bias_walk = 0.0;
  n.imu_accel_sigma = n.point_jitter = n.dropout = 0.0;
  return n;
}

std::vector<LabeledPoint> observe(const GarageWorld& world, const Pose2& pose, const SimOptions& opts,
                                  std::mt19937_64* rng) {
  const double hl = opts.footprint_length / 2, hw = opts.footprint_width / 2;
  Vec2 lo = Vec2::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
  for (const Vec2& c : {Vec2(hl, hw), Vec2(hl, -hw), Vec2(-hl, hw), Vec2(-hl, -hw)}) {
    const Vec2 g = pose.apply(c);
    lo = lo.cwiseMin(g);
    hi = hi.cwiseMax(g);
  }
  const Pose2 inv = inverse(pose);
  const double step = opts.sample_spacing;
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  std::normal_distribution<double> jitter(0.0, 1.0);
  const double sigma = rng ? opts.noise.point_jitter : 0.0;

  std::vector<LabeledPoint> out;
  auto emit = [&](const Vec2& world_pt, SemanticLabel label) {
    Vec2 v = inv.apply(world_pt);
    if (sigma > 0) v += sigma * Vec2(jitter(*rng), jitter(*rng));
    if (std::abs(v.x()) > hl || std::abs(v.y()) > hw) return;
    out.push_back({Point3(v.x(), v.y(), 0.0), label});
  };

  std::vector<const Primitive*> visible;
  for (const auto& prim : world.primitives) {
    const Vec2 pmin = prim.bbox_min(), pmax = prim.bbox_max();
    if ((pmax.array() < lo.array()).any() || (pmin.array() > hi.array()).any()) continue;
    visible.push_back(&prim);
  }
  std::vector<bool> keep(visible.size(), true);
  if (rng && opts.noise.dropout > 0) {
    for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = u01(*rng) >= opts.noise.dropout;
  }
  auto sample = [&](const std::vector<bool>& keep) {
    for (std::size_t i = 0; i < visible.size(); ++i) {
      if (!keep[i]) continue;
      const Primitive& prim = *visible[i];
      const Vec2 pmin = prim.bbox_min(), pmax = prim.bbox_max();
      if (prim.shape == Primitive::Shape::Stroke) {
        const Vec2 a = prim.pts[0], d = prim.pts[1] - prim.pts[0];
        const double len = d.norm();
        if (len <= 0) continue;
        const double phase = rng ? u01(*rng) * step : 0.0;
        for (double x = phase; x <= len + 1e-9; x += step) emit(a + d * (x / len), prim.label);
      } else {
        const Vec2 off = rng ? Vec2(u01(*rng) * step, u01(*rng) * step) : Vec2::Zero();
        for (double x = std::floor(pmin.x() / step) * step + off.x(); x <= pmax.x(); x += step) {
          for (double y = std::floor(pmin.y() / step) * step + off.y(); y <= pmax.y(); y += step) {
            if (prim.covers(Vec2(x, y))) emit(Vec2(x, y), prim.label);
          }
        }
      }
    }
  };
  sample(keep);
  // Dropout never blanks a frame that would otherwise see markings.
  if (out.empty() && std::find(keep.begin(), keep.end(), false) != keep.end()) {
    sample(std::vector<bool>(visible.size(), true));
  }
  return out;
}

Image render_label_mask(const GarageWorld& world, const Pose2& pose, const BevCameraModel& bev) {
  Image mask(bev.width(), bev.height(), 1, 0);
  const Pose2 inv = inverse(pose);
  // Rasterize each primitive over the pixel box of its bounds; earlier
  // primitives win where markings overlap.
  for (const auto& prim : world.primitives) {
    const Vec2 pmin = prim.bbox_min(), pmax = prim.bbox_max();
    Pixel lo = Pixel::Constant(std::numeric_limits<double>::infinity()), hi = -lo;
    for (const Vec2& c : {pmin, pmax, Vec2(pmin.x(), pmax.y()), Vec2(pmax.x(), pmin.y())}) {
      const Vec2 v = inv.apply(c);
      const Pixel px = bev.vehicle_to_pixel(Point3(v.x(), v.y(), 0.0));
      lo = lo.cwiseMin(px);
      hi = hi.cwiseMax(px);
    }
    const int u0 = std::max(0, static_cast<int>(std::floor(lo.x()))), u1 = std::min(bev.width() - 1, static_cast<int>(std::ceil(hi.x())));
    const int v0 = std::max(0, static_cast<int>(std::floor(lo.y()))), v1 = std::min(bev.height() - 1, static_cast<int>(std::ceil(hi.y())));
    const std::uint8_t gray = kMaskGrayLevels[label_index(prim.label)];
    for (int v = v0; v <= v1; ++v) {
      for (int u = u0; u <= u1; ++u) {
        if (mask.at(u, v) != 0) continue;
        const Vec2 g = pose.apply(bev.pixel_to_vehicle(Pixel(u + 0.5, v + 0.5)).head<2>());
        if (prim.covers(g)) mask.at(u, v) = gray;
      }
    }
  }
  return mask;
}

// ------------------------------------------------------------- simulation

Dataset simulate_run(const GarageWorld& world, const TrajectorySpec& traj, const SimOptions& opts,
                     std::uint64_t seed) {
  opts.noise.validate();
  if (!(opts.rates.frame_hz > 0) || !(opts.rates.odometry_hz > 0)) throw GenerationError("sensor rates must be positive");
  const double ratio = opts.rates.odometry_hz / opts.rates.frame_hz;
  const auto frame_every = static_cast<long>(std::lround(ratio));
  if (frame_every < 1 || std::abs(ratio - frame_every) > 1e-9) {
    throw GenerationError("odometry rate must be an integer multiple of the frame rate");
  }
  for (std::size_t i = 0; i < traj.waypoints.size(); ++i) {
    if (!world.contains(traj.waypoints[i].p)) {
      throw GenerationError("waypoint " + std::to_string(i) + " lies outside the world");
    }
  }
  const Route route = build_route(traj);
  const double total = traj.closed ? traj.laps * route.length : route.length;
  const double dt = 1.0 / opts.rates.odometry_hz;

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const SensorNoiseModel& nz = opts.noise;
  std::array<double, 4> scale{};
  for (auto& s : scale) s = 1.0 + nz.wheel_scale_sigma * gauss(rng);
  double bias = 0.0;
  const BevCameraModel bev = BevCameraModel::centered();

  Dataset d;
  d.landmarks = world.landmarks;
  const RouteSample& start = route.samples.front();
  Pose2 pose(start.p.x(), start.p.y(), start.heading);
  double v = 0.0, travelled = 0.0;
  std::size_t idx = 0;  // nearest route sample
  double laps_done = 0.0;
  const long max_steps = static_cast<long>(10.0 * total / 0.1 / dt) + 1000;

  for (long k = 0;; ++k) {
    if (k > max_steps) throw GenerationError("vehicle failed to complete the route");
    const double t = static_cast<double>(k) / opts.rates.odometry_hz;

    // Progress along the route: nearest sample within a forward window.
    {
      std::size_t best = idx;
      double bd = (route.samples[idx].p - pose.translation()).squaredNorm();
      for (std::size_t j = 1; j < 200; ++j) {
        std::size_t c = idx + j;
        if (c >= route.samples.size()) {
          if (!route.closed) break;
          c -= route.samples.size();
        }
        const double dd = (route.samples[c].p - pose.translation()).squaredNorm();
        if (dd < bd) {
          bd = dd;
          best = c;
        }
      }
      if (best < idx) laps_done += 1.0;
      idx = best;
    }
    if (!world.contains(pose.translation())) {
      throw GenerationError("vehicle left the world near waypoint " + std::to_string(route.samples[idx].waypoint));
    }
    const double progress = laps_done * route.length + route.samples[idx].s;
    const double remaining = total - progress;

    // Speed target: leg speed, curvature ahead, and a stop at the end.
    double vt = route.samples[idx].speed;
    for (double ahead = 0.0; ahead <= 8.0; ahead += 0.5) {
      const double kap = std::abs(route.at(progress + ahead).curvature);
      if (kap > 1e-9) vt = std::min(vt, std::sqrt(traj.max_lateral_accel / kap));
    }
    vt = std::min(vt, std::sqrt(2.0 * traj.max_accel * std::max(remaining, 0.0)));

    // Pure pursuit on the lookahead point.
    const Vec2 target = route.at(progress + traj.lookahead).p;
    const Vec2 rel = inverse(pose).apply(target);
    const double ld2 = std::max(rel.squaredNorm(), 1e-6);
    double omega = v * 2.0 * rel.y() / ld2;
    omega = std::clamp(omega, -traj.max_yaw_rate, traj.max_yaw_rate);

    if (k % frame_every == 0) {
      std::vector<LabeledPoint> pts;
      if (opts.render_masks) {
        GarageWorld visible = world;
        if (nz.dropout > 0) {
          std::uniform_real_distribution<double> u01(0.0, 1.0);
          std::erase_if(visible.primitives, [&](const Primitive&) { return u01(rng) < nz.dropout; });
        }
        pts = frame_from_label_mask(render_label_mask(visible, pose, bev), bev, t, 0, opts.mask_stride).points();
        if (pts.empty() && visible.primitives.size() < world.primitives.size()) {
          pts = frame_from_label_mask(render_label_mask(world, pose, bev), bev, t, 0, opts.mask_stride).points();
        }
      } else {
        pts = observe(world, pose, opts, &rng);
      }
      d.frames.emplace_back(t, d.frames.size(), std::move(pts));
      d.groundtruth.push_back({t, pose});
    }

    // Sensors report the twist held over [t, t + dt].
    WheelSample ws;
    ws.t = t;
    ws.radius = opts.wheel_radius;
    ws.track = opts.track;
    const double wl = (v - omega * opts.track / 2) / opts.wheel_radius;
    const double wr = (v + omega * opts.track / 2) / opts.wheel_radius;
    const std::array<double, 4> nominal = {wl, wr, wl, wr};
    for (int i = 0; i < 4; ++i) ws.rates[i] = nominal[i] * scale[i] + nz.wheel_rate_sigma * gauss(rng);
    d.wheel.push_back(ws);

    const double v_next = std::clamp(vt, v - traj.max_accel * dt, v + traj.max_accel * dt);
    ImuSample im;
    im.t = t;
    im.yaw_rate = omega + bias + nz.imu_yaw_rate_sigma * gauss(rng);
    im.accel = Vec2((v_next - v) / dt + nz.imu_accel_sigma * gauss(rng), v * omega + nz.imu_accel_sigma * gauss(rng));
    d.imu.push_back(im);
    bias += nz.imu_bias_walk * std::sqrt(dt) * gauss(rng);

    if (remaining <= 0.01 && v <= 1e-9 && k > 0) break;
    pose = compose(pose, integrate_twist(v, omega, dt));
    travelled += v * dt;
    v = std::max(v_next, 0.0);
    if (remaining <= 0.01) v = 0.0;
  }
  (void)travelled;
  return d;
}

// -------------------------------------------------------------- landmarks

std::vector<LandmarkDistance> ground_truth_distances(const std::vector<Landmark>& landmarks,
                                                     const std::vector<std::string>& names) {
  std::vector<Vec2> pts;
  for (const auto& n : names) {
    auto it = std::find_if(landmarks.begin(), landmarks.end(), [&](const Landmark& l) { return l.name == n; });
    if (it == landmarks.end()) throw LookupError("unknown landmark '" + n + "'");
    pts.push_back(it->p);
  }
  std::vector<LandmarkDistance> out;
  for (std::size_t i = 0; i < names.size(); ++i) {
    for (std::size_t j = i + 1; j < names.size(); ++j) out.push_back({names[i], names[j], (pts[i] - pts[j]).norm()});
  }
  return out;
}

std::vector<LandmarkDistance> ground_truth_distances(const GarageWorld& world, const std::vector<std::string>& names) {
  return ground_truth_distances(world.landmarks, names);
}

// ------------------------------------------------------------ dataset I/O

void write_landmarks(const std::filesystem::path& path, const std::vector<Landmark>& lm) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "# avm-landmarks v1\n# name x y\n" << std::setprecision(17);
  for (const auto& l : lm) out << l.name << " " << l.p.x() << " " << l.p.y() << "\n";
}

std::vector<Landmark> read_landmarks(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<Landmark> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    Landmark l;
    double x, y;
    if (!(ss >> l.name >> x >> y)) throw SchemaError(path.string(), lineno, "expected '<name> <x> <y>'");
    l.p = Vec2(x, y);
    out.push_back(l);
  }
  return out;
}

void write_dataset(const std::filesystem::path& dir, const Dataset& d) {
  std::filesystem::create_directories(dir);
  write_frames(dir / "frames.txt", d.frames);
  write_wheel(dir / "wheel.txt", d.wheel);
  write_imu(dir / "imu.txt", d.imu);
  if (!d.groundtruth.empty()) write_trajectory(dir / "groundtruth.txt", d.groundtruth);
  if (!d.landmarks.empty()) write_landmarks(dir / "landmarks.txt", d.landmarks);
}

namespace {

std::vector<SemanticFrame> read_mask_frames(const std::filesystem::path& dir, int stride) {
  const auto index = dir / "masks.txt";
  std::ifstream in(index);
  if (!in) throw InputError("cannot open " + index.string());
  const BevCameraModel bev = BevCameraModel::centered();
  std::vector<SemanticFrame> frames;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ss(line);
    double t = 0.0;
    std::string file;
    if (!(ss >> t >> file)) throw SchemaError(index.string(), lineno, "expected: t path");
    if (!frames.empty() && !(t > frames.back().timestamp())) {
      throw SchemaError(index.string(), lineno, "timestamps must increase");
    }
    const Image mask = read_pnm(dir / file);
    if (mask.channels != 1) throw SchemaError(index.string(), lineno, "mask is not a gray image: " + file);
    frames.push_back(frame_from_label_mask(mask, bev, t, frames.size(), stride));
  }
  return frames;
}

}  // namespace

Dataset read_dataset(const std::filesystem::path& dir, int mask_stride) {
  if (!std::filesystem::is_directory(dir)) throw InputError("dataset directory not found: " + dir.string());
  Dataset d;
  if (!std::filesystem::exists(dir / "frames.txt") && std::filesystem::exists(dir / "masks.txt")) {
    d.frames = read_mask_frames(dir, mask_stride);
  } else {
    d.frames = read_frames(dir / "frames.txt");
  }
  d.wheel = read_wheel(dir / "wheel.txt");
  d.imu = read_imu(dir / "imu.txt");
  if (std::filesystem::exists(dir / "groundtruth.txt")) d.groundtruth = read_trajectory(dir / "groundtruth.txt");
  if (std::filesystem::exists(dir / "landmarks.txt")) d.landmarks = read_landmarks(dir / "landmarks.txt");
  return d;
}

}  // namespace avm

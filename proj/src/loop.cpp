#include "avm/loop.hpp"

#include <algorithm>

#include "avm/errors.hpp"

namespace avm {

void SpqConfig::validate() const {
  if (min_distinct_categories < 0 || min_weighted_score < 0 || min_travel_distance < 0 || search_radius < 0) {
    throw ConfigError("SPQ thresholds must be non-negative");
  }
}

SpqResult spq_qualify(const CategoryCensus& census, const SpqConfig& cfg) {
  SpqResult r;
  r.score = census.score;
  r.distinct_categories = census.distinct_categories;
  r.pass = census.distinct_categories >= cfg.min_distinct_categories && census.score >= cfg.min_weighted_score &&
           census.total() > 0;
  return r;
}

SpqResult spq_qualify(const std::vector<LabeledPoint>& pts, const SpqConfig& cfg) {
  return spq_qualify(category_census(pts, cfg.weights), cfg);
}

std::vector<LoopCandidate> find_loop_candidates(const Keyframe& kf, const Pose2& kf_global, const GlobalMap& map,
                                                const SpqConfig& cfg, bool use_spq) {
  std::vector<LoopCandidate> out;
  for (const auto& [id, s] : map.submaps()) {
    if (s.state != SubmapState::Finalized) continue;
    if (kf.travel - s.travel_max < cfg.min_travel_distance) continue;
    const double d = (s.anchor.translation() - kf_global.translation()).norm();
    if (d > cfg.search_radius) continue;
    if (use_spq && !spq_qualify(s.cloud, cfg).pass) continue;
    out.push_back({kf.id, id, between(s.anchor, kf_global), d});
  }
  std::stable_sort(out.begin(), out.end(), [](const auto& a, const auto& b) { return a.distance < b.distance; });
  return out;
}

void LoopVerifyConfig::validate() const {
  if (radii.empty()) throw ConfigError("loop verification needs at least one ICP stage");
  for (double r : radii) {
    if (!(r > 0)) throw ConfigError("loop verification radii must be positive");
  }
  if (!(search_window >= 0) || !(search_step > 0) || !(search_yaw >= 0) || !(search_yaw_step > 0) ||
      !(hit_radius > 0) || max_samples == 0) {
    throw ConfigError("loop search window, steps, hit radius and sample count must be positive");
  }
  if (!(max_ambiguity > 0 && max_ambiguity <= 1)) throw ConfigError("max_ambiguity must lie in (0, 1]");
  if (!(min_inlier_fraction >= 0 && min_inlier_fraction <= 1)) throw ConfigError("min_inlier_fraction must lie in [0, 1]");
  if (!(max_rms > 0)) throw ConfigError("max_rms must be positive");
  icp.validate();
}

namespace {

// Per-label occupancy raster of the target, dilated by the hit radius.
class HitRaster {
 public:
  HitRaster(const std::vector<LabeledPoint>& pts, double cell, double radius, double margin) : cell_(cell) {
    lo_ = Vec2::Constant(std::numeric_limits<double>::infinity());
    Vec2 hi = -lo_;
    for (const auto& p : pts) {
      lo_ = lo_.cwiseMin(p.xy());
      hi = hi.cwiseMax(p.xy());
    }
    lo_ -= Vec2::Constant(margin);
    hi += Vec2::Constant(margin);
    nx_ = static_cast<int>(std::ceil((hi.x() - lo_.x()) / cell)) + 1;
    ny_ = static_cast<int>(std::ceil((hi.y() - lo_.y()) / cell)) + 1;
    bits_.assign(kLabelCount, std::vector<bool>(static_cast<std::size_t>(nx_) * ny_, false));
    const int reach = static_cast<int>(std::ceil(radius / cell));
    for (const auto& p : pts) {
      const int cx = static_cast<int>(std::floor((p.p.x() - lo_.x()) / cell));
      const int cy = static_cast<int>(std::floor((p.p.y() - lo_.y()) / cell));
      auto& b = bits_[label_index(p.label)];
      for (int dx = -reach; dx <= reach; ++dx) {
        for (int dy = -reach; dy <= reach; ++dy) {
          const int x = cx + dx, y = cy + dy;
          if (x < 0 || y < 0 || x >= nx_ || y >= ny_) continue;
          const Vec2 c = lo_ + cell * Vec2(x + 0.5, y + 0.5);
          if ((c - p.xy()).norm() <= radius) b[static_cast<std::size_t>(y) * nx_ + x] = true;
        }
      }
    }
  }

  bool hit(const Vec2& q, SemanticLabel l) const {
    const int x = static_cast<int>(std::floor((q.x() - lo_.x()) / cell_));
    const int y = static_cast<int>(std::floor((q.y() - lo_.y()) / cell_));
    if (x < 0 || y < 0 || x >= nx_ || y >= ny_) return false;
    return bits_[label_index(l)][static_cast<std::size_t>(y) * nx_ + x];
  }

 private:
  double cell_;
  Vec2 lo_;
  int nx_ = 0, ny_ = 0;
  std::vector<std::vector<bool>> bits_;
};

}  // namespace

SearchPeak correlative_search(const std::vector<LabeledPoint>& source, const TargetCloud& target, const Pose2& center,
                              const LoopVerifyConfig& cfg) {
  const double cell = std::min(cfg.search_step, cfg.hit_radius);
  const HitRaster raster(target.points(), cell, cfg.hit_radius, 1.0);
  std::vector<LabeledPoint> sample;
  const std::size_t stride = std::max<std::size_t>(1, (source.size() + cfg.max_samples - 1) / cfg.max_samples);
  for (std::size_t i = 0; i < source.size(); i += stride) sample.push_back(source[i]);
  const double n = static_cast<double>(sample.size());

  const int nt = static_cast<int>(std::floor(cfg.search_window / cfg.search_step + 1e-9));
  const int nr = static_cast<int>(std::floor(cfg.search_yaw / cfg.search_yaw_step + 1e-9));
  const int w = 2 * nt + 1, nyaw = 2 * nr + 1;
  std::vector<double> score(static_cast<std::size_t>(w) * w * nyaw, 0.0);
  auto at = [&](int k, int i, int j) -> double& { return score[(static_cast<std::size_t>(k) * w + i) * w + j]; };
  std::vector<Vec2> rotated(sample.size());
  for (int k = 0; k < nyaw; ++k) {
    const Mat2 r = Pose2(0, 0, center.yaw + (k - nr) * cfg.search_yaw_step).rotation();
    for (std::size_t s = 0; s < sample.size(); ++s) rotated[s] = r * sample[s].xy();
    for (int i = 0; i < w; ++i) {
      for (int j = 0; j < w; ++j) {
        const Vec2 t = center.translation() + cfg.search_step * Vec2(i - nt, j - nt);
        std::size_t hits = 0;
        for (std::size_t s = 0; s < sample.size(); ++s) hits += raster.hit(rotated[s] + t, sample[s].label) ? 1 : 0;
        at(k, i, j) = static_cast<double>(hits) / n;
      }
    }
  }
  auto pose_of = [&](int k, int i, int j) {
    const Vec2 t = center.translation() + cfg.search_step * Vec2(i - nt, j - nt);
    return Pose2(t.x(), t.y(), center.yaw + (k - nr) * cfg.search_yaw_step);
  };
  auto is_local_max = [&](int k, int i, int j) {
    const double v = at(k, i, j);
    for (int dk = -1; dk <= 1; ++dk) {
      for (int di = -1; di <= 1; ++di) {
        for (int dj = -1; dj <= 1; ++dj) {
          const int kk = k + dk, ii = i + di, jj = j + dj;
          if ((dk | di | dj) == 0 || kk < 0 || ii < 0 || jj < 0 || kk >= nyaw || ii >= w || jj >= w) continue;
          if (at(kk, ii, jj) > v) return false;
        }
      }
    }
    return true;
  };

  SearchPeak peak;
  for (int k = 0; k < nyaw; ++k) {
    for (int i = 0; i < w; ++i) {
      for (int j = 0; j < w; ++j) {
        if (at(k, i, j) > peak.score) {
          peak.score = at(k, i, j);
          peak.pose = pose_of(k, i, j);
        }
      }
    }
  }
  // Runner-up: the best other local maximum. Ridges along line-like
  // structure fall off monotonically and do not count.
  for (int k = 0; k < nyaw; ++k) {
    for (int i = 0; i < w; ++i) {
      for (int j = 0; j < w; ++j) {
        const Pose2 p = pose_of(k, i, j);
        if ((p.translation() - peak.pose.translation()).norm() <= cfg.peak_separation) continue;
        if (at(k, i, j) > peak.runner_up && is_local_max(k, i, j)) peak.runner_up = at(k, i, j);
      }
    }
  }
  return peak;
}

std::optional<LoopClosure> verify_loop(const LoopCandidate& candidate, const SemanticFrame& kf_frame,
                                       const TargetCloud& submap_target, const LoopVerifyConfig& cfg) {
  if (kf_frame.empty() || submap_target.empty()) return std::nullopt;
  const SearchPeak peak = correlative_search(kf_frame.points(), submap_target, candidate.predicted, cfg);
  if (peak.score <= 0.0) return std::nullopt;
  const double ambiguity = peak.runner_up / peak.score;
  if (ambiguity > cfg.max_ambiguity) return std::nullopt;

  // Refine on the part of the frame that overlaps the submap at the peak,
  // so structure outside the submap cannot drag the solution.
  const double cell = std::min(cfg.search_step, cfg.hit_radius);
  auto overlap_subset = [&](const Pose2& at, double radius) {
    const HitRaster overlap(submap_target.points(), cell, radius, 1.0);
    std::vector<LabeledPoint> subset;
    for (const auto& p : kf_frame.points()) {
      if (overlap.hit(at.apply(p.xy()), p.label)) subset.push_back(p);
    }
    return subset;
  };
  Pose2 guess = peak.pose;
  IcpResult r;
  // Loose overlap at the peak, then a tight one at the refined pose.
  for (double sel : {2.0 * cfg.hit_radius, cfg.hit_radius}) {
    const auto subset = overlap_subset(guess, sel);
    for (double radius : cfg.radii) {
      IcpConfig stage = cfg.icp;
      stage.correspondence_radius = radius;
      r = icp_register(subset, submap_target, guess, stage);
      if (r.inlier_count < 3) return std::nullopt;
      guess = r.transform;
    }
  }
  const double inlier_fraction = static_cast<double>(r.inlier_count) / static_cast<double>(kf_frame.size());
  if (!r.converged || inlier_fraction < cfg.min_inlier_fraction || r.rms_residual > cfg.max_rms) return std::nullopt;
  return LoopClosure{candidate, r.transform, r.rms_residual, inlier_fraction, peak.score, ambiguity, r.information};
}

}  // namespace avm

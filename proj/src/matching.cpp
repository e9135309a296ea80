#include "avm/matching.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>

#include "avm/errors.hpp"

namespace avm {

void IcpConfig::validate() const {
  if (!(correspondence_radius > 0)) throw ConfigError("icp: correspondence_radius must be positive");
  if (max_iterations < 1) throw ConfigError("icp: max_iterations must be >= 1");
  if (!(sigma_floor > 0) || !(points_per_observation >= 1)) throw ConfigError("icp: bad information settings");
}

namespace {

constexpr double kNormalRadius = 0.35;

}  // namespace

TargetCloud::TargetCloud(std::vector<LabeledPoint> points, double cell)
    : points_(std::move(points)), index_(LabeledGrid::from_points(points_, cell)) {
  // Structure tensors from same-label neighbours. Line-like neighbourhoods
  // constrain only their normal; corners and blobs constrain both axes.
  constraint_.resize(points_.size(), Mat2::Identity());
  std::unordered_map<std::uint64_t, std::vector<std::uint32_t>> buckets;
  auto key = [](std::int64_t cx, std::int64_t cy, std::size_t l) {
    const auto ux = static_cast<std::uint64_t>(cx + (1LL << 29)) & ((1ULL << 30) - 1);
    const auto uy = static_cast<std::uint64_t>(cy + (1LL << 29)) & ((1ULL << 30) - 1);
    return (ux << 34) | (uy << 4) | static_cast<std::uint64_t>(l);
  };
  auto cell_of = [](double v) { return static_cast<std::int64_t>(std::floor(v / kNormalRadius)); };
  for (std::size_t i = 0; i < points_.size(); ++i) {
    buckets[key(cell_of(points_[i].p.x()), cell_of(points_[i].p.y()), label_index(points_[i].label))].push_back(
        static_cast<std::uint32_t>(i));
  }
  const double r2 = kNormalRadius * kNormalRadius;
  for (std::size_t i = 0; i < points_.size(); ++i) {
    const Vec2 c = points_[i].xy();
    const std::size_t l = label_index(points_[i].label);
    const auto cx = cell_of(c.x()), cy = cell_of(c.y());
    Vec2 sum = Vec2::Zero();
    Mat2 sq = Mat2::Zero();
    int n = 0;
    for (int dx = -1; dx <= 1; ++dx) {
      for (int dy = -1; dy <= 1; ++dy) {
        const auto it = buckets.find(key(cx + dx, cy + dy, l));
        if (it == buckets.end()) continue;
        for (auto j : it->second) {
          const Vec2 d = points_[j].xy() - c;
          if (d.squaredNorm() > r2) continue;
          sum += d;
          sq += d * d.transpose();
          ++n;
        }
      }
    }
    if (n < 4) continue;
    const Vec2 mean = sum / n;
    const Mat2 cov = sq / n - mean * mean.transpose();
    Eigen::SelfAdjointEigenSolver<Mat2> es(cov);
    const double lmin = es.eigenvalues()(0), lmax = es.eigenvalues()(1);
    if (lmax <= 0) continue;
    if (lmin < 0.05 * lmax) {
      const Vec2 nrm = es.eigenvectors().col(0);
      constraint_[i] = nrm * nrm.transpose();
    }
  }
}

Pose2 rigid_align_2d(std::span<const Vec2> src, std::span<const Vec2> dst) {
  if (src.size() != dst.size()) throw InputError("rigid_align_2d: size mismatch");
  if (src.size() < 2) throw DegenerateError("rigid_align_2d: need at least 2 pairs");
  const double n = static_cast<double>(src.size());
  Vec2 ps = Vec2::Zero(), qs = Vec2::Zero();
  for (std::size_t i = 0; i < src.size(); ++i) {
    ps += src[i];
    qs += dst[i];
  }
  ps /= n;
  qs /= n;
  Mat2 h = Mat2::Zero();
  double spread = 0.0;
  for (std::size_t i = 0; i < src.size(); ++i) {
    const Vec2 a = src[i] - ps, b = dst[i] - qs;
    h += a * b.transpose();
    spread += a.squaredNorm();
  }
  if (spread < 1e-20 * std::max(1.0, ps.squaredNorm())) {
    throw DegenerateError("rigid_align_2d: all source points coincide");
  }
  Eigen::JacobiSVD<Mat2> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Mat2 u = svd.matrixU(), v = svd.matrixV();
  Mat2 d = Mat2::Identity();
  d(1, 1) = (v * u.transpose()).determinant() < 0 ? -1.0 : 1.0;
  const Mat2 r = v * d * u.transpose();
  const Vec2 t = qs - r * ps;
  return {t.x(), t.y(), std::atan2(r(1, 0), r(0, 0))};
}

namespace {

struct Correspondences {
  std::vector<Vec2> src;
  std::vector<Vec2> dst;
  std::vector<std::size_t> target_idx;
  double truncated_sse = 0.0;
  double inlier_sse = 0.0;
  bool cross_label = false;
};

Correspondences correspond(const std::vector<LabeledPoint>& source, const TargetCloud& target, const Pose2& t,
                           const IcpConfig& cfg) {
  Correspondences c;
  const double r = cfg.correspondence_radius, r2 = r * r;
  c.src.reserve(source.size());
  c.dst.reserve(source.size());
  for (const auto& p : source) {
    const Vec2 q = t.apply(p.xy());
    const auto hit = target.index().nearest(q, r, cfg.label_strict ? std::optional(p.label) : std::nullopt);
    if (!hit) {
      c.truncated_sse += r2;
      continue;
    }
    c.truncated_sse += hit->dist2;
    c.inlier_sse += hit->dist2;
    c.src.push_back(p.xy());
    c.dst.push_back(target.index().point(hit->index));
    c.target_idx.push_back(hit->index);
    if (target.index().label(hit->index) != p.label) c.cross_label = true;
  }
  return c;
}

}  // namespace

IcpResult icp_register(const std::vector<LabeledPoint>& source, const TargetCloud& target, const Pose2& initial,
                       const IcpConfig& cfg) {
  cfg.validate();
  IcpResult res;
  res.transform = initial;
  if (source.empty() || target.empty()) return res;
  const double n = static_cast<double>(source.size());

  Pose2 t = initial;
  bool settled = false;
  Correspondences c = correspond(source, target, t, cfg);
  res.cost_history.push_back(std::sqrt(c.truncated_sse / n));
  res.used_cross_label_pairs = c.cross_label;
  for (int it = 0; it < cfg.max_iterations; ++it) {
    if (c.src.size() < 3) break;
    const Pose2 next = rigid_align_2d(c.src, c.dst);
    const Pose2 step = between(t, next);
    t = next;
    res.iterations = it + 1;
    c = correspond(source, target, t, cfg);
    res.cost_history.push_back(std::sqrt(c.truncated_sse / n));
    res.used_cross_label_pairs = res.used_cross_label_pairs || c.cross_label;
    if (std::hypot(step.x, step.y) < cfg.eps_translation && std::abs(step.yaw) < cfg.eps_rotation) {
      settled = true;
      break;
    }
  }
  res.transform = t;
  res.inlier_count = c.src.size();
  res.inlier_fraction = static_cast<double>(c.src.size()) / n;
  res.rms_residual = c.src.empty() ? 0.0 : std::sqrt(c.inlier_sse / static_cast<double>(c.src.size()));
  res.converged = settled && c.src.size() >= 3 && res.inlier_count >= cfg.min_inliers;

  if (c.src.size() >= 3) {
    const double sigma = std::max(res.rms_residual, cfg.sigma_floor);
    const Mat2 rot = t.rotation();
    Mat3 h = Mat3::Zero();
    for (std::size_t i = 0; i < c.src.size(); ++i) {
      const Vec2 rp = rot * c.src[i];
      Eigen::Matrix<double, 2, 3> j;
      j << 1, 0, -rp.y(), 0, 1, rp.x();
      h += j.transpose() * target.constraint(c.target_idx[i]) * j;
    }
    res.information = h / (sigma * sigma * cfg.points_per_observation);
  }
  return res;
}

IcpResult icp_register(const SemanticFrame& source, const TargetCloud& target, const Pose2& initial,
                       const IcpConfig& cfg) {
  return icp_register(source.points(), target, initial, cfg);
}

std::vector<IcpResult> icp_register_stages(const std::vector<LabeledPoint>& source, const TargetCloud& target,
                                           const Pose2& initial, const IcpConfig& cfg,
                                           std::span<const double> radii) {
  if (radii.empty()) throw ConfigError("icp_register_stages: no radii");
  std::vector<IcpResult> out;
  Pose2 guess = initial;
  for (double r : radii) {
    IcpConfig stage = cfg;
    stage.correspondence_radius = r;
    out.push_back(icp_register(source, target, guess, stage));
    if (out.back().inlier_count < 3) break;
    guess = out.back().transform;
  }
  return out;
}

Mat3 floor_information(const Mat3& info, double cond) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(0.5 * (info + info.transpose()));
  Eigen::Vector3d ev = es.eigenvalues();
  const double top = std::max(ev.maxCoeff(), 1e-12);
  for (int i = 0; i < 3; ++i) ev(i) = std::max(ev(i), top / cond);
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

Mat3 information_to_covariance(const Mat3& info, double cond) {
  Eigen::SelfAdjointEigenSolver<Mat3> es(floor_information(info, cond));
  const Eigen::Vector3d inv = es.eigenvalues().cwiseInverse();
  return es.eigenvectors() * inv.asDiagonal() * es.eigenvectors().transpose();
}

Mat3 information_in_body_frame(const Mat3& info, const Pose2& pose) {
  Mat3 g = Mat3::Identity();
  g.topLeftCorner<2, 2>() = pose.rotation();  // body -> target
  return g.transpose() * info * g;
}

}  // namespace avm

#include "avm/semantic.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <tuple>

#include "avm/errors.hpp"
#include "avm/spatial_index.hpp"

namespace avm {

std::string_view label_name(SemanticLabel l) {
  switch (l) {
    case SemanticLabel::LaneLine: return "lane_line";
    case SemanticLabel::ParkingSpot: return "parking_spot";
    case SemanticLabel::ZebraCrossing: return "zebra_crossing";
    case SemanticLabel::IndicatingArrow: return "indicating_arrow";
  }
  return "unknown";
}

SemanticLabel label_from_id(int id) {
  if (id < 0 || id >= static_cast<int>(kLabelCount)) throw InputError("unknown label id " + std::to_string(id));
  return static_cast<SemanticLabel>(id);
}

LabelWeights::LabelWeights(std::array<double, kLabelCount> w) : w_(w) {
  for (double v : w_) {
    if (!(v > 0.0)) throw ConfigError("label weights must be strictly positive");
  }
}

SemanticFrame::SemanticFrame(double timestamp, std::uint64_t seq, std::vector<LabeledPoint> points)
    : timestamp_(timestamp), seq_(seq), points_(std::move(points)) {
  for (const auto& p : points_) {
    if (!(std::abs(p.p.z()) < 1e-6)) throw DomainError("SemanticFrame: point off the ground plane");
  }
}

std::vector<LabeledPoint> downsample_points(const std::vector<LabeledPoint>& pts, double cell) {
  if (!(cell > 0)) throw DomainError("downsample: cell must be positive");
  struct Acc {
    double sx = 0, sy = 0;
    std::size_t n = 0;
  };
  std::map<std::tuple<std::int64_t, std::int64_t, std::uint8_t>, Acc> buckets;
  for (const auto& p : pts) {
    const auto k = std::make_tuple(static_cast<std::int64_t>(std::floor(p.p.x() / cell)),
                                   static_cast<std::int64_t>(std::floor(p.p.y() / cell)),
                                   static_cast<std::uint8_t>(p.label));
    auto& a = buckets[k];
    a.sx += p.p.x();
    a.sy += p.p.y();
    ++a.n;
  }
  std::vector<LabeledPoint> out;
  out.reserve(buckets.size());
  for (const auto& [k, a] : buckets) {
    const double n = static_cast<double>(a.n);
    out.push_back({Point3(a.sx / n, a.sy / n, 0.0), static_cast<SemanticLabel>(std::get<2>(k))});
  }
  return out;
}

SemanticFrame downsample(const SemanticFrame& frame, double cell) {
  return {frame.timestamp(), frame.seq(), downsample_points(frame.points(), cell)};
}

double frame_difference(const SemanticFrame& a, const SemanticFrame& b, const Pose2& pose_ab, double radius) {
  if (!(radius > 0)) throw DomainError("frame_difference: radius must be positive");
  if (b.empty()) return 1.0;
  if (a.empty()) return 1.0;
  const LabeledGrid index = LabeledGrid::from_points(a.points(), radius);
  std::size_t matched = 0;
  for (const auto& p : b.points()) {
    if (index.nearest(pose_ab.apply(p.xy()), radius, p.label)) ++matched;
  }
  return 1.0 - static_cast<double>(matched) / static_cast<double>(b.size());
}

std::size_t CategoryCensus::total() const {
  std::size_t n = 0;
  for (auto c : counts) n += c;
  return n;
}

CategoryCensus category_census(const std::vector<LabeledPoint>& pts, const LabelWeights& weights) {
  CategoryCensus c;
  for (const auto& p : pts) ++c.counts[label_index(p.label)];
  for (std::size_t l = 0; l < kLabelCount; ++l) {
    c.score += weights[kAllLabels[l]] * static_cast<double>(c.counts[l]);
    if (c.counts[l] > 0) ++c.distinct_categories;
  }
  return c;
}

CategoryCensus category_census(const SemanticFrame& frame, const LabelWeights& weights) {
  return category_census(frame.points(), weights);
}

std::optional<SemanticLabel> label_from_gray(std::uint8_t g) {
  for (std::size_t l = 0; l < kLabelCount; ++l) {
    if (kMaskGrayLevels[l] == g) return kAllLabels[l];
  }
  return std::nullopt;
}

SemanticFrame frame_from_label_mask(const Image& mask, const BevCameraModel& bev, double timestamp,
                                    std::uint64_t seq, int stride) {
  if (mask.channels != 1) throw InputError("label mask must be single-channel");
  if (mask.width != bev.width() || mask.height != bev.height()) {
    throw InputError("label mask size does not match the BEV camera");
  }
  stride = std::max(1, stride);
  std::vector<LabeledPoint> pts;
  for (int v = 0; v < mask.height; v += stride) {
    for (int u = 0; u < mask.width; u += stride) {
      const auto label = label_from_gray(mask.at(u, v));
      if (!label) continue;
      Point3 p = bev.pixel_to_vehicle(Pixel(u + 0.5, v + 0.5));
      p.z() = 0.0;
      pts.push_back({p, *label});
    }
  }
  return {timestamp, seq, std::move(pts)};
}

void write_frames(const std::filesystem::path& path, const std::vector<SemanticFrame>& frames) {
  std::ofstream out(path);
  if (!out) throw InputError("cannot write " + path.string());
  out << "# avm-frames v1\n";
  out << std::setprecision(17);
  for (const auto& f : frames) {
    out << "frame " << f.seq() << " " << f.timestamp() << " " << f.size() << "\n";
    for (const auto& p : f.points()) {
      out << p.p.x() << " " << p.p.y() << " " << static_cast<int>(p.label) << "\n";
    }
  }
}

std::vector<SemanticFrame> read_frames(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  const std::string file = path.string();
  std::vector<SemanticFrame> frames;
  std::string line;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      if (!header && line.rfind("# avm-frames", 0) == 0) {
        if (line != "# avm-frames v1") throw SchemaError(file, lineno, "unsupported frames version");
        header = true;
      }
      continue;
    }
    std::istringstream ss(line);
    std::string tag;
    std::uint64_t seq = 0;
    double t = 0;
    std::size_t n = 0;
    if (!(ss >> tag >> seq >> t >> n) || tag != "frame") throw SchemaError(file, lineno, "expected 'frame <seq> <t> <n>'");
    if (!frames.empty() && !(t > frames.back().timestamp())) {
      throw SchemaError(file, lineno, "frame timestamps must strictly increase");
    }
    std::vector<LabeledPoint> pts;
    pts.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (!std::getline(in, line)) throw SchemaError(file, lineno, "truncated point list");
      ++lineno;
      std::istringstream ps(line);
      double x, y;
      int id;
      if (!(ps >> x >> y >> id) || id < 0 || id >= static_cast<int>(kLabelCount)) {
        throw SchemaError(file, lineno, "expected '<x> <y> <label_id>'");
      }
      pts.push_back({Point3(x, y, 0.0), static_cast<SemanticLabel>(id)});
    }
    frames.emplace_back(t, seq, std::move(pts));
  }
  return frames;
}

}  // namespace avm

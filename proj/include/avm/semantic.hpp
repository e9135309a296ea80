#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string_view>
#include <vector>

#include "avm/camera.hpp"
#include "avm/geometry.hpp"
#include "avm/image.hpp"

namespace avm {

enum class SemanticLabel : std::uint8_t { LaneLine = 0, ParkingSpot = 1, ZebraCrossing = 2, IndicatingArrow = 3 };

inline constexpr std::size_t kLabelCount = 4;
inline constexpr std::array<SemanticLabel, kLabelCount> kAllLabels = {
    SemanticLabel::LaneLine, SemanticLabel::ParkingSpot, SemanticLabel::ZebraCrossing,
    SemanticLabel::IndicatingArrow};

inline std::size_t label_index(SemanticLabel l) { return static_cast<std::size_t>(l); }
std::string_view label_name(SemanticLabel l);
/// Throws InputError for ids outside 0..3.
SemanticLabel label_from_id(int id);

/// Per-category importance used by the loop pre-qualification score.
class LabelWeights {
 public:
  /// Defaults: LaneLine 1, ParkingSpot 2, ZebraCrossing 3, IndicatingArrow 3.
  LabelWeights() : w_{1.0, 2.0, 3.0, 3.0} {}
  /// Throws ConfigError unless every weight is strictly positive.
  explicit LabelWeights(std::array<double, kLabelCount> w);

  double operator[](SemanticLabel l) const { return w_[label_index(l)]; }
  const std::array<double, kLabelCount>& values() const { return w_; }

 private:
  std::array<double, kLabelCount> w_;
};

struct LabeledPoint {
  Point3 p;
  SemanticLabel label;

  Vec2 xy() const { return p.head<2>(); }
};

/// Labeled ground points in the vehicle frame for one BEV frame.
class SemanticFrame {
 public:
  SemanticFrame() = default;
  /// Throws DomainError if any point is off the ground plane (|z| >= 1e-6).
  SemanticFrame(double timestamp, std::uint64_t seq, std::vector<LabeledPoint> points);

  double timestamp() const { return timestamp_; }
  std::uint64_t seq() const { return seq_; }
  const std::vector<LabeledPoint>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }

 private:
  double timestamp_ = 0.0;
  std::uint64_t seq_ = 0;
  std::vector<LabeledPoint> points_;
};

/// Voxel grid on (x, y, label): one point per occupied bucket at the bucket
/// centroid. Output is ordered by bucket key.
std::vector<LabeledPoint> downsample_points(const std::vector<LabeledPoint>& pts, double cell);
SemanticFrame downsample(const SemanticFrame& frame, double cell);

/// Fraction of `b`'s points without a same-label point of `a` within
/// `radius`, after moving `b` into `a`'s frame with `pose_ab`. Empty b -> 1.
double frame_difference(const SemanticFrame& a, const SemanticFrame& b, const Pose2& pose_ab, double radius);

struct CategoryCensus {
  std::array<std::size_t, kLabelCount> counts{};
  double score = 0.0;
  int distinct_categories = 0;

  std::size_t total() const;
};

CategoryCensus category_census(const std::vector<LabeledPoint>& pts, const LabelWeights& weights = {});
CategoryCensus category_census(const SemanticFrame& frame, const LabelWeights& weights = {});

// ---- interchange

/// Gray levels used by label-mask images; 0 is background.
inline constexpr std::array<std::uint8_t, kLabelCount> kMaskGrayLevels = {64, 128, 192, 255};
std::optional<SemanticLabel> label_from_gray(std::uint8_t g);

/// Decodes a BEV label mask through the BEV camera model (one point per
/// labeled pixel center, `stride` subsamples rows and columns).
SemanticFrame frame_from_label_mask(const Image& mask, const BevCameraModel& bev, double timestamp,
                                    std::uint64_t seq, int stride = 1);

/// Frame stream text file; see docs/formats.md. Reading enforces strictly
/// increasing timestamps and reports SchemaError with line numbers.
void write_frames(const std::filesystem::path& path, const std::vector<SemanticFrame>& frames);
std::vector<SemanticFrame> read_frames(const std::filesystem::path& path);

}  // namespace avm

#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "avm/geometry.hpp"
#include "avm/image.hpp"

namespace avm {

using Pixel = Eigen::Vector2d;

/// Kannala-Brandt fisheye projection: the image radius is an odd polynomial
/// of the incidence angle theta,
///   r(theta) = k1 theta + k2 theta^3 + k3 theta^5 + k4 theta^7 + k5 theta^9,
/// scaled by `focal` pixels around the principal point.
class FisheyeModel {
 public:
  static constexpr double kDefaultThetaMax = 100.0 * std::numbers::pi / 180.0;

  /// Throws DomainError if r(theta) is not strictly increasing on
  /// [0, theta_max] (checked by dense sampling) or focal <= 0.
  FisheyeModel(std::array<double, 5> k, double focal, Pixel principal_point,
               double theta_max = kDefaultThetaMax);

  const std::array<double, 5>& coefficients() const { return k_; }
  double focal() const { return focal_; }
  const Pixel& principal_point() const { return pp_; }
  double theta_max() const { return theta_max_; }

  /// Normalized radius r(theta) (before multiplying by focal).
  double radius(double theta) const;
  double radius_derivative(double theta) const;

  /// Pixel for a ray at incidence `theta` and azimuth `phi`.
  /// Throws DomainError unless 0 <= theta < theta_max.
  Pixel forward(double theta, double phi) const;

  /// (theta, phi) for a pixel; bracketed root find on the monotone r(theta).
  /// Throws OutOfFieldError when the pixel radius exceeds r(theta_max).
  std::pair<double, double> inverse(const Pixel& px) const;

  /// Camera-frame ray (z along the principal axis) to pixel and back.
  Pixel project(const Vec3& ray) const;
  Vec3 unproject(const Pixel& px) const;

 private:
  std::array<double, 5> k_;
  double focal_;
  Pixel pp_;
  double theta_max_;
};

Pixel fisheye_forward(const FisheyeModel& model, double theta, double phi);
std::pair<double, double> fisheye_inverse(const FisheyeModel& model, const Pixel& px);

/// Plane-to-plane projective map, stored with h(2,2) == 1.
class Homography {
 public:
  Homography() : h_(Mat3::Identity()) {}
  /// Normalizes so that h(2,2) == 1. Throws DomainError when h(2,2) ~ 0 or
  /// |det| <= 1e-12 after normalization.
  explicit Homography(const Mat3& h);

  const Mat3& matrix() const { return h_; }
  Homography inverse() const { return Homography(h_.inverse()); }

  /// Homogeneous multiply then projective divide. Throws ProjectiveError when
  /// the point maps to infinity (|w| < 1e-12).
  Pixel apply(const Pixel& px) const;

 private:
  Mat3 h_;
};

inline Homography operator*(const Homography& a, const Homography& b) {
  return Homography(a.matrix() * b.matrix());
}

Pixel apply_homography(const Homography& h, const Pixel& px);

struct PointPair {
  Pixel src;
  Pixel dst;
};

struct HomographyEstimate {
  Homography h;
  double rms_reprojection = 0.0;  // pixels, over the input pairs
};

/// Hartley-normalized DLT. Needs >= 4 pairs in general position; throws
/// RankDeficiencyError otherwise.
HomographyEstimate estimate_homography(const std::vector<PointPair>& pairs);

/// Virtual top-down BEV camera. Pixels back-project with K^-1 onto the
/// z_c = 1 m plane, then T_vc maps them into the vehicle frame.
class BevCameraModel {
 public:
  static constexpr double kDefaultMetersPerPixel = 0.0105;

  BevCameraModel(const Mat3& intrinsics, const Transform3& t_vc, double pixels_per_meter, int width,
                 int height);

  /// Camera centered over the vehicle origin looking straight down, image u
  /// to the vehicle's right and v towards the rear, at `meters_per_pixel`.
  static BevCameraModel centered(double meters_per_pixel = kDefaultMetersPerPixel, int width = 1354,
                                 int height = 1632);

  const Mat3& intrinsics() const { return k_; }
  const Transform3& t_vc() const { return t_vc_; }
  double pixels_per_meter() const { return ppm_; }
  int width() const { return width_; }
  int height() const { return height_; }

  /// Throws OutOfFieldError for pixels outside the image.
  Point3 pixel_to_vehicle(const Pixel& px) const;
  /// Throws DomainError for points off the ground plane (|z| >= 1e-6) or
  /// behind the camera.
  Pixel vehicle_to_pixel(const Point3& p) const;

 private:
  Mat3 k_;
  Mat3 k_inv_;
  Transform3 t_vc_;
  Transform3 t_cv_;
  double ppm_;
  int width_;
  int height_;
};

Point3 bev_pixel_to_vehicle(const BevCameraModel& model, const Pixel& px);
Pixel vehicle_to_bev_pixel(const BevCameraModel& model, const Point3& p);

/// One physical surround camera: fisheye intrinsics, the pinhole used for the
/// undistorted image, and the undistorted-image -> BEV homography.
struct SurroundCamera {
  std::string name;
  FisheyeModel fisheye;
  double undistorted_focal = 0.0;
  Pixel undistorted_principal_point = Pixel::Zero();
  Homography undistorted_to_bev;
  int width = 0;
  int height = 0;

  /// Undistorted (pinhole) pixel for a fisheye pixel, and back.
  Pixel undistort(const Pixel& fisheye_px) const;
  Pixel distort(const Pixel& undistorted_px) const;
};

/// Four-camera BEV composition on label/gray images. Cameras are visited in
/// order and each valid sample overwrites earlier ones (last writer wins).
/// `bev_masks[i]` is a BEV-sized validity mask for camera i (nonzero = the
/// camera may write that pixel); an empty mask means the whole view.
Image stitch_bev(const std::vector<SurroundCamera>& cameras, const std::vector<Image>& images,
                 const std::vector<Image>& bev_masks, int bev_width, int bev_height);

struct Calibration {
  BevCameraModel bev = BevCameraModel::centered();
  std::vector<SurroundCamera> cameras;
};

/// JSON calibration file; schema in docs/formats.md.
Calibration load_calibration(const std::filesystem::path& path);
void save_calibration(const std::filesystem::path& path, const Calibration& calib);

}  // namespace avm

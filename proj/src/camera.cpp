#include "avm/camera.hpp"

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <cmath>
#include <fstream>

#include <json.hpp>

#include "avm/errors.hpp"

namespace avm {

// ---------------------------------------------------------------- fisheye

FisheyeModel::FisheyeModel(std::array<double, 5> k, double focal, Pixel principal_point,
                           double theta_max)
    : k_(k), focal_(focal), pp_(std::move(principal_point)), theta_max_(theta_max) {
  if (!(focal_ > 0.0)) throw DomainError("FisheyeModel: focal must be positive");
  if (!(theta_max_ > 0.0) || theta_max_ > std::numbers::pi) {
    throw DomainError("FisheyeModel: theta_max must lie in (0, pi]");
  }
  constexpr int kSamples = 4096;
  double prev = radius(0.0);
  for (int i = 1; i <= kSamples; ++i) {
    const double r = radius(theta_max_ * i / kSamples);
    if (!(r > prev)) throw DomainError("FisheyeModel: r(theta) is not monotonically increasing");
    prev = r;
  }
}

double FisheyeModel::radius(double theta) const {
  const double t2 = theta * theta;
  // Horner in theta^2.
  return theta * (k_[0] + t2 * (k_[1] + t2 * (k_[2] + t2 * (k_[3] + t2 * k_[4]))));
}

double FisheyeModel::radius_derivative(double theta) const {
  const double t2 = theta * theta;
  return k_[0] + t2 * (3 * k_[1] + t2 * (5 * k_[2] + t2 * (7 * k_[3] + t2 * 9 * k_[4])));
}

Pixel FisheyeModel::forward(double theta, double phi) const {
  if (!(theta >= 0.0 && theta < theta_max_)) {
    throw DomainError("fisheye_forward: theta " + std::to_string(theta) + " outside [0, theta_max)");
  }
  const double r = focal_ * radius(theta);
  return pp_ + r * Pixel(std::cos(phi), std::sin(phi));
}

std::pair<double, double> FisheyeModel::inverse(const Pixel& px) const {
  const Pixel d = px - pp_;
  const double rho = d.norm() / focal_;
  if (rho == 0.0) return {0.0, 0.0};
  if (rho > radius(theta_max_)) throw OutOfFieldError("fisheye_inverse: pixel beyond r(theta_max)");
  const double phi = std::atan2(d.y(), d.x());

  // Safeguarded Newton inside a shrinking bracket.
  double lo = 0.0, hi = theta_max_;
  double th = std::min(rho / std::max(k_[0], 1e-12), 0.5 * (lo + hi));
  if (th <= lo || th >= hi) th = 0.5 * (lo + hi);
  for (int it = 0; it < 200; ++it) {
    const double f = radius(th) - rho;
    if (f > 0) hi = th;
    else lo = th;
    const double df = radius_derivative(th);
    double next = df > 0 ? th - f / df : 0.5 * (lo + hi);
    if (!(next > lo && next < hi)) next = 0.5 * (lo + hi);
    if (std::abs(next - th) < 1e-15 || hi - lo < 1e-15) {
      th = next;
      break;
    }
    th = next;
  }
  return {th, phi};
}

Pixel FisheyeModel::project(const Vec3& ray) const {
  const double theta = std::atan2(ray.head<2>().norm(), ray.z());
  const double phi = std::atan2(ray.y(), ray.x());
  return forward(theta, phi);
}

Vec3 FisheyeModel::unproject(const Pixel& px) const {
  const auto [theta, phi] = inverse(px);
  const double s = std::sin(theta);
  return {s * std::cos(phi), s * std::sin(phi), std::cos(theta)};
}

Pixel fisheye_forward(const FisheyeModel& model, double theta, double phi) { return model.forward(theta, phi); }

std::pair<double, double> fisheye_inverse(const FisheyeModel& model, const Pixel& px) {
  return model.inverse(px);
}

// ------------------------------------------------------------- homography

Homography::Homography(const Mat3& h) {
  if (std::abs(h(2, 2)) < 1e-12) throw DomainError("Homography: h(2,2) is ~0, cannot normalize");
  h_ = h / h(2, 2);
  if (std::abs(h_.determinant()) <= 1e-12) throw DomainError("Homography: matrix is singular");
}

Pixel Homography::apply(const Pixel& px) const {
  const Vec3 q = h_ * Vec3(px.x(), px.y(), 1.0);
  if (std::abs(q.z()) < 1e-12) throw ProjectiveError("apply_homography: point maps to infinity");
  return q.head<2>() / q.z();
}

Pixel apply_homography(const Homography& h, const Pixel& px) { return h.apply(px); }

namespace {

// Similarity moving the centroid to the origin with mean distance sqrt(2).
Mat3 hartley_normalizer(const std::vector<Pixel>& pts) {
  Pixel c = Pixel::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double mean = 0.0;
  for (const auto& p : pts) mean += (p - c).norm();
  mean /= static_cast<double>(pts.size());
  if (mean < 1e-15) throw RankDeficiencyError("estimate_homography: all points coincide");
  const double s = std::sqrt(2.0) / mean;
  Mat3 t;
  t << s, 0, -s * c.x(), 0, s, -s * c.y(), 0, 0, 1;
  return t;
}

}  // namespace

HomographyEstimate estimate_homography(const std::vector<PointPair>& pairs) {
  const auto n = static_cast<Eigen::Index>(pairs.size());
  if (n < 4) throw RankDeficiencyError("estimate_homography: need at least 4 pairs");
  std::vector<Pixel> src, dst;
  src.reserve(pairs.size());
  dst.reserve(pairs.size());
  for (const auto& p : pairs) {
    src.push_back(p.src);
    dst.push_back(p.dst);
  }
  const Mat3 ts = hartley_normalizer(src);
  const Mat3 td = hartley_normalizer(dst);

  Eigen::MatrixXd a = Eigen::MatrixXd::Zero(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Vec3 s = ts * Vec3(src[i].x(), src[i].y(), 1.0);
    const Vec3 d = td * Vec3(dst[i].x(), dst[i].y(), 1.0);
    const double x = s.x(), y = s.y(), u = d.x(), v = d.y();
    a.row(2 * i) << -x, -y, -1, 0, 0, 0, u * x, u * y, u;
    a.row(2 * i + 1) << 0, 0, 0, -x, -y, -1, v * x, v * y, v;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const auto& sv = svd.singularValues();
  // A solvable configuration leaves exactly one null direction: the 8th
  // singular value must stay away from zero.
  if (sv.size() < 8 || sv(7) < 1e-9 * sv(0)) {
    throw RankDeficiencyError("estimate_homography: degenerate configuration (collinear points)");
  }
  const Eigen::VectorXd hvec = svd.matrixV().col(8);
  Mat3 hn;
  hn << hvec(0), hvec(1), hvec(2), hvec(3), hvec(4), hvec(5), hvec(6), hvec(7), hvec(8);
  const Mat3 h = td.inverse() * hn * ts;
  HomographyEstimate out;
  try {
    out.h = Homography(h);
  } catch (const DomainError& e) {
    throw RankDeficiencyError(std::string("estimate_homography: ") + e.what());
  }
  double sse = 0.0;
  for (const auto& p : pairs) sse += (out.h.apply(p.src) - p.dst).squaredNorm();
  out.rms_reprojection = std::sqrt(sse / static_cast<double>(n));
  return out;
}

// -------------------------------------------------------------------- BEV

BevCameraModel::BevCameraModel(const Mat3& intrinsics, const Transform3& t_vc, double pixels_per_meter,
                               int width, int height)
    : k_(intrinsics), t_vc_(t_vc), t_cv_(t_vc.inverse()), ppm_(pixels_per_meter), width_(width),
      height_(height) {
  if (k_(1, 0) != 0.0 || k_(2, 0) != 0.0 || k_(2, 1) != 0.0 || !(k_(0, 0) > 0) || !(k_(1, 1) > 0) ||
      !(k_(2, 2) > 0)) {
    throw DomainError("BevCameraModel: K must be upper-triangular with positive diagonal");
  }
  if (!(ppm_ > 0) || width_ <= 0 || height_ <= 0) {
    throw DomainError("BevCameraModel: scale and image size must be positive");
  }
  k_ /= k_(2, 2);
  k_inv_ = k_.inverse();
}

BevCameraModel BevCameraModel::centered(double meters_per_pixel, int width, int height) {
  const double f = 1.0 / meters_per_pixel;  // z_c = 1 m: one meter spans f pixels
  Mat3 k;
  k << f, 0, width / 2.0, 0, f, height / 2.0, 0, 0, 1;
  Mat3 r;  // camera x -> vehicle -y, camera y -> vehicle -x, optical axis down
  r << 0, -1, 0, -1, 0, 0, 0, 0, -1;
  return {k, Transform3(r, Vec3(0, 0, 1.0)), f, width, height};
}

Point3 BevCameraModel::pixel_to_vehicle(const Pixel& px) const {
  if (!(px.x() >= 0 && px.y() >= 0 && px.x() <= width_ && px.y() <= height_)) {
    throw OutOfFieldError("bev_pixel_to_vehicle: pixel outside the BEV image");
  }
  const Vec3 pc = k_inv_ * Vec3(px.x(), px.y(), 1.0);  // z_c == 1
  return t_vc_.apply(pc);
}

Pixel BevCameraModel::vehicle_to_pixel(const Point3& p) const {
  if (std::abs(p.z()) >= 1e-6) throw DomainError("vehicle_to_bev_pixel: point is off the ground plane");
  const Vec3 pc = t_cv_.apply(p);
  if (pc.z() <= 1e-9) throw DomainError("vehicle_to_bev_pixel: point is behind the camera plane");
  const Vec3 q = k_ * (pc / pc.z());
  return q.head<2>();
}

Point3 bev_pixel_to_vehicle(const BevCameraModel& model, const Pixel& px) { return model.pixel_to_vehicle(px); }

Pixel vehicle_to_bev_pixel(const BevCameraModel& model, const Point3& p) { return model.vehicle_to_pixel(p); }

// --------------------------------------------------------------- surround

Pixel SurroundCamera::undistort(const Pixel& fisheye_px) const {
  const Vec3 ray = fisheye.unproject(fisheye_px);
  if (ray.z() <= 1e-9) throw OutOfFieldError("undistort: ray does not hit the pinhole plane");
  return undistorted_principal_point + undistorted_focal * ray.head<2>() / ray.z();
}

Pixel SurroundCamera::distort(const Pixel& undistorted_px) const {
  const Pixel d = (undistorted_px - undistorted_principal_point) / undistorted_focal;
  return fisheye.project(Vec3(d.x(), d.y(), 1.0));
}

Image stitch_bev(const std::vector<SurroundCamera>& cameras, const std::vector<Image>& images,
                 const std::vector<Image>& bev_masks, int bev_width, int bev_height) {
  if (images.size() != cameras.size()) throw InputError("stitch_bev: one image per camera required");
  Image out(bev_width, bev_height, 1, 0);
  for (std::size_t c = 0; c < cameras.size(); ++c) {
    const auto& cam = cameras[c];
    const Homography bev_to_undist = cam.undistorted_to_bev.inverse();
    const Image* mask = c < bev_masks.size() && !bev_masks[c].empty() ? &bev_masks[c] : nullptr;
    for (int v = 0; v < bev_height; ++v) {
      for (int u = 0; u < bev_width; ++u) {
        if (mask && mask->at(u, v) == 0) continue;
        try {
          const Pixel und = bev_to_undist.apply(Pixel(u + 0.5, v + 0.5));
          const Pixel fp = cam.distort(und);
          const int fu = static_cast<int>(std::floor(fp.x()));
          const int fv = static_cast<int>(std::floor(fp.y()));
          if (!images[c].contains(fu, fv)) continue;
          out.at(u, v) = images[c].at(fu, fv);
        } catch (const Error&) {
          continue;  // outside this camera's field
        }
      }
    }
  }
  return out;
}

// ------------------------------------------------------------ calibration

namespace {

using nlohmann::json;

json mat_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(row);
  }
  return rows;
}

template <int R, int C>
Eigen::Matrix<double, R, C> json_to_mat(const json& j, const char* what) {
  Eigen::Matrix<double, R, C> m;
  if (!j.is_array() || j.size() != R) throw ConfigError(std::string("calibration: bad matrix ") + what);
  for (int r = 0; r < R; ++r) {
    if (!j[r].is_array() || j[r].size() != C) throw ConfigError(std::string("calibration: bad matrix ") + what);
    for (int c = 0; c < C; ++c) m(r, c) = j[r][c].get<double>();
  }
  return m;
}

}  // namespace

Calibration load_calibration(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open calibration " + path.string());
  json j;
  try {
    j = json::parse(in);
    Calibration calib;
    const auto& b = j.at("bev");
    calib.bev = BevCameraModel(json_to_mat<3, 3>(b.at("K"), "K"),
                               Transform3::from_matrix(json_to_mat<4, 4>(b.at("T_vc"), "T_vc")),
                               b.at("pixels_per_meter").get<double>(), b.at("image_size").at(0).get<int>(),
                               b.at("image_size").at(1).get<int>());
    for (const auto& c : j.value("cameras", json::array())) {
      const auto& f = c.at("fisheye");
      std::array<double, 5> k{};
      for (int i = 0; i < 5; ++i) k[i] = f.at("k").at(i).get<double>();
      FisheyeModel fm(k, f.at("focal").get<double>(),
                      Pixel(f.at("principal_point").at(0).get<double>(), f.at("principal_point").at(1).get<double>()),
                      f.value("theta_max", FisheyeModel::kDefaultThetaMax));
      const auto& u = c.at("undistorted");
      calib.cameras.push_back(SurroundCamera{
          c.at("name").get<std::string>(), fm, u.at("focal").get<double>(),
          Pixel(u.at("principal_point").at(0).get<double>(), u.at("principal_point").at(1).get<double>()),
          Homography(json_to_mat<3, 3>(c.at("H"), "H")), c.at("image_size").at(0).get<int>(),
          c.at("image_size").at(1).get<int>()});
    }
    return calib;
  } catch (const json::exception& e) {
    throw ConfigError("calibration " + path.string() + ": " + e.what());
  }
}

void save_calibration(const std::filesystem::path& path, const Calibration& calib) {
  json j;
  j["bev"] = {{"K", mat_to_json(calib.bev.intrinsics())},
              {"T_vc", mat_to_json(calib.bev.t_vc().matrix())},
              {"pixels_per_meter", calib.bev.pixels_per_meter()},
              {"image_size", {calib.bev.width(), calib.bev.height()}}};
  j["cameras"] = json::array();
  for (const auto& c : calib.cameras) {
    const auto& k = c.fisheye.coefficients();
    j["cameras"].push_back(
        {{"name", c.name},
         {"fisheye",
          {{"k", {k[0], k[1], k[2], k[3], k[4]}},
           {"focal", c.fisheye.focal()},
           {"principal_point", {c.fisheye.principal_point().x(), c.fisheye.principal_point().y()}},
           {"theta_max", c.fisheye.theta_max()}}},
         {"undistorted",
          {{"focal", c.undistorted_focal},
           {"principal_point", {c.undistorted_principal_point.x(), c.undistorted_principal_point.y()}}}},
         {"H", mat_to_json(c.undistorted_to_bev.matrix())},
         {"image_size", {c.width, c.height}}});
  }
  std::ofstream out(path);
  if (!out) throw InputError("cannot write calibration " + path.string());
  out << j.dump(2) << "\n";
}

}  // namespace avm

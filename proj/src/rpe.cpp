#include "tomofocus/rpe.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include "tomofocus/errors.hpp"
#include "tomofocus/parallel.hpp"

namespace tomofocus {

MarkerSet generate_markers(const std::vector<double>& radii, int per_sphere, std::uint64_t seed) {
  if (radii.empty()) throw ConfigError("marker set needs at least one sphere");
  if (per_sphere < 1) throw ConfigError("marker set needs at least one point per sphere");
  for (double r : radii)
    if (!(r > 0)) throw ConfigError("marker sphere radii must be positive");
  const int k = per_sphere * static_cast<int>(radii.size());
  if (k < 6) throw ConfigError("at least six markers are required");

  MarkerSet m;
  m.points.resize(4, k);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  std::mt19937_64 rng(seed);
  int col = 0;
  for (double r : radii) {
    Mat3 rot = Mat3::Identity();
    if (seed != 0) {
      std::uniform_real_distribution<double> a(-180.0, 180.0);
      rot = motion_to_matrix(RigidMotion{0, 0, 0, a(rng), a(rng), a(rng)}).block<3, 3>(0, 0);
    }
    for (int i = 0; i < per_sphere; ++i) {
      const double z = 1.0 - (2.0 * i + 1.0) / per_sphere;
      const double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
      const double phi = golden * i;
      const Vec3 p = rot * Vec3(rho * std::cos(phi), rho * std::sin(phi), z);
      m.points.col(col) << r * p.normalized(), 1.0;
      m.radii.push_back(r);
      ++col;
    }
  }
  return m;
}

MarkerSet default_markers(double scale) { return generate_markers({30 * scale, 60 * scale, 90 * scale}, 30); }

std::string_view variant_name(RpeVariant v) {
  switch (v) {
    case RpeVariant::all: return "all";
    case RpeVariant::in_plane: return "in_plane";
    case RpeVariant::out_plane: return "out_plane";
  }
  return "?";
}

double marker_rpe(const Intrinsics& k, const ProjectionMatrix& p, const ProjectionMatrix& pt, const Vec4& a) {
  const auto [u1, v1] = project_point(p, a);
  const auto [u2, v2] = project_point(pt, a);
  const double du = (u1 - u2) * k.du, dv = (v1 - v2) * k.dv;
  return du * du + dv * dv;
}

double view_rpe(const Intrinsics& k, const ProjectionMatrix& p, const ProjectionMatrix& pt, const MarkerSet& m,
                RpeMode mode) {
  if (m.size() < 6) throw DomainError("at least six markers are required");
  const Eigen::Matrix<double, 3, Eigen::Dynamic> x = p.matrix() * m.points;
  const Eigen::Matrix<double, 3, Eigen::Dynamic> y = pt.matrix() * m.points;
  if (!(x.row(2).minCoeff() > 1e-9) || !(y.row(2).minCoeff() > 1e-9))
    throw GeometryError("a marker lies at or behind the source");
  const Eigen::ArrayXXd du = (x.row(0).array() / x.row(2).array() - y.row(0).array() / y.row(2).array()) * k.du;
  const Eigen::ArrayXXd dv = (x.row(1).array() / x.row(2).array() - y.row(1).array() / y.row(2).array()) * k.dv;
  const Eigen::ArrayXXd sq = du.square() + dv.square();
  if (mode == RpeMode::rms) return std::sqrt(sq.mean());
  return sq.sqrt().mean();
}

RigidMotion mask_motion(const RigidMotion& m, RpeVariant v) {
  if (v == RpeVariant::all) return m;
  RigidMotion out;
  for (Axis a : kAllAxes)
    if (is_in_plane(a) == (v == RpeVariant::in_plane)) out[a] = m[a];
  return out;
}

RpeProfile rpe_profile(const EffectiveTrajectory& eff, const MarkerSet& m, RpeVariant v, RpeMode mode) {
  const Trajectory& base = eff.base();
  RpeProfile out{std::vector<double>(eff.size(), 0.0), v};
  parallel_for(eff.size(), [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      const RigidMotion mi = mask_motion(eff.motion()[i], v);
      if (mi.is_identity()) continue;
      out.values[i] = view_rpe(base.intrinsics(), base[i].p, base[i].p * motion_to_matrix(mi), m, mode);
    }
  });
  return out;
}

double mean_rpe(const EffectiveTrajectory& eff, const MarkerSet& m, RpeMode mode) {
  const RpeProfile p = rpe_profile(eff, m, RpeVariant::all, mode);
  double s = 0;
  for (double x : p.values) s += x;
  return s / static_cast<double>(p.values.size());
}

namespace {

// Similarity transform moving the centroid to 0 and the mean distance to sqrt(dim).
template <int D>
Eigen::Matrix<double, D + 1, D + 1> normalizer(const std::vector<Eigen::Matrix<double, D, 1>>& pts) {
  Eigen::Matrix<double, D, 1> c = Eigen::Matrix<double, D, 1>::Zero();
  for (const auto& p : pts) c += p;
  c /= static_cast<double>(pts.size());
  double d = 0;
  for (const auto& p : pts) d += (p - c).norm();
  d /= static_cast<double>(pts.size());
  if (!(d > 0)) throw DegenerateError("all correspondence points coincide");
  const double s = std::sqrt(double(D)) / d;
  Eigen::Matrix<double, D + 1, D + 1> t = Eigen::Matrix<double, D + 1, D + 1>::Identity();
  t.template topLeftCorner<D, D>() *= s;
  t.template topRightCorner<D, 1>() = -s * c;
  return t;
}

}  // namespace

ProjectionMatrix solve_projection_from_markers(const std::vector<Vec3>& points3d,
                                               const std::vector<Eigen::Vector2d>& points2d) {
  const std::size_t n = points3d.size();
  if (points2d.size() != n) throw ShapeError("3-D and 2-D point counts differ");
  if (n < 6) throw DomainError("at least six correspondences are required, got " + std::to_string(n));

  const Mat4 t3 = normalizer<3>(points3d);
  const Mat3 t2 = normalizer<2>(points2d);
  Eigen::MatrixXd a(2 * n, 12);
  for (std::size_t i = 0; i < n; ++i) {
    const Vec4 x = t3 * points3d[i].homogeneous();
    const Vec3 y = t2 * points2d[i].homogeneous();
    const double u = y(0) / y(2), v = y(1) / y(2);
    a.row(2 * i) << x.transpose(), Eigen::RowVector4d::Zero(), -u * x.transpose();
    a.row(2 * i + 1) << Eigen::RowVector4d::Zero(), x.transpose(), -v * x.transpose();
  }
  const Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd s = svd.singularValues();
  // A unique solution needs a one-dimensional null space: rank 11.
  if (s.size() < 12 || s(10) <= 1e-8 * s(0))
    throw DegenerateError("marker configuration does not determine P (rank " +
                          std::to_string((s.array() > 1e-8 * s(0)).count()) + " < 11)");
  const Eigen::VectorXd h = svd.matrixV().col(11);
  Mat34 pn;
  pn << h.segment<4>(0).transpose(), h.segment<4>(4).transpose(), h.segment<4>(8).transpose();
  const Mat34 p = t2.inverse() * pn * t3;
  return ProjectionMatrix(p);
}

}  // namespace tomofocus

#include "tomofocus/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "tomofocus/errors.hpp"

namespace tomofocus {

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

Mat3 rot_x(double deg) {
  const double c = std::cos(deg * kDeg), s = std::sin(deg * kDeg);
  Mat3 r;
  r << 1, 0, 0, 0, c, -s, 0, s, c;
  return r;
}

Mat3 rot_y(double deg) {
  const double c = std::cos(deg * kDeg), s = std::sin(deg * kDeg);
  Mat3 r;
  r << c, 0, s, 0, 1, 0, -s, 0, c;
  return r;
}

Mat3 rot_z(double deg) {
  const double c = std::cos(deg * kDeg), s = std::sin(deg * kDeg);
  Mat3 r;
  r << c, -s, 0, s, c, 0, 0, 0, 1;
  return r;
}

}  // namespace

void Intrinsics::validate() const {
  if (!(sid > 0)) throw ConfigError("intrinsics: sid must be positive");
  if (!(sdd > sid)) throw ConfigError("intrinsics: sdd must exceed sid");
  if (nu < 2 || nv < 2) throw ConfigError("intrinsics: detector needs at least 2x2 pixels");
  if (!(du > 0) || !(dv > 0)) throw ConfigError("intrinsics: pixel pitch must be positive");
  if (!std::isfinite(cu) || !std::isfinite(cv)) throw ConfigError("intrinsics: principal point not finite");
}

double Intrinsics::half_fan_rad() const { return std::atan(0.5 * nu * du / sdd); }

double Intrinsics::fan_angle_deg() const { return 2.0 * half_fan_rad() / kDeg; }

Intrinsics Intrinsics::centered(double sid, double sdd, int nu, int nv, double du, double dv) {
  Intrinsics k;
  k.sid = sid;
  k.sdd = sdd;
  k.nu = nu;
  k.nv = nv;
  k.du = du;
  k.dv = dv;
  k.cu = 0.5 * (nu - 1);
  k.cv = 0.5 * (nv - 1);
  return k;
}

ProjectionMatrix::ProjectionMatrix(const Mat34& p) : p_(p) {
  if (!p_.allFinite()) throw GeometryError("projection matrix has non-finite entries");
  const double n = p_.block<1, 3>(2, 0).norm();
  if (n < 1e-300) throw GeometryError("projection matrix has a zero depth row");
  p_ /= n;
  if (p_(2, 3) < 0) p_ = -p_;
  const double det = p_.block<3, 3>(0, 0).determinant();
  const double scale = p_.block<3, 3>(0, 0).norm();
  if (std::abs(det) <= 1e-12 * scale * scale * scale) throw GeometryError("projection matrix is rank deficient");
}

Vec3 ProjectionMatrix::source_position() const {
  const Mat3 m = p_.block<3, 3>(0, 0);
  return -m.partialPivLu().solve(p_.col(3));
}

Vec3 ProjectionMatrix::ray_direction(double u, double v) const {
  const Mat3 m = p_.block<3, 3>(0, 0);
  Vec3 d = m.partialPivLu().solve(Vec3(u, v, 1.0));
  if (p_.block<1, 3>(2, 0).dot(d) < 0) d = -d;
  return d.normalized();
}

std::string_view axis_name(Axis a) {
  switch (a) {
    case Axis::tx: return "tx";
    case Axis::ty: return "ty";
    case Axis::tz: return "tz";
    case Axis::rx: return "rx";
    case Axis::ry: return "ry";
    case Axis::rz: return "rz";
  }
  return "?";
}

Axis parse_axis(std::string_view name) {
  std::string s;
  for (char c : name)
    if (c != '_') s.push_back(c);
  for (Axis a : kAllAxes)
    if (s == axis_name(a)) return a;
  throw ConfigError("unknown motion axis '" + std::string(name) + "'");
}

bool is_in_plane(Axis a) { return a == Axis::tx || a == Axis::ty || a == Axis::rz; }

double& RigidMotion::operator[](Axis a) {
  switch (a) {
    case Axis::tx: return tx;
    case Axis::ty: return ty;
    case Axis::tz: return tz;
    case Axis::rx: return rx;
    case Axis::ry: return ry;
    case Axis::rz: return rz;
  }
  return tx;
}

double RigidMotion::operator[](Axis a) const { return const_cast<RigidMotion&>(*this)[a]; }

RigidMotion RigidMotion::from_matrix(const Mat4& m) {
  RigidMotion r;
  r.ry = -std::asin(std::clamp(m(2, 0), -1.0, 1.0)) / kDeg;
  r.rx = std::atan2(m(2, 1), m(2, 2)) / kDeg;
  r.rz = std::atan2(m(1, 0), m(0, 0)) / kDeg;
  r.tx = m(0, 3);
  r.ty = m(1, 3);
  r.tz = m(2, 3);
  return r;
}

Mat4 motion_to_matrix(const RigidMotion& m) {
  Mat4 out = Mat4::Identity();
  out.block<3, 3>(0, 0) = rot_z(m.rz) * rot_y(m.ry) * rot_x(m.rx);
  out(0, 3) = m.tx;
  out(1, 3) = m.ty;
  out(2, 3) = m.tz;
  return out;
}

Mat4 rigid_inverse(const Mat4& m) {
  Mat4 out = Mat4::Identity();
  const Mat3 rt = m.block<3, 3>(0, 0).transpose();
  out.block<3, 3>(0, 0) = rt;
  out.block<3, 1>(0, 3) = -rt * m.block<3, 1>(0, 3);
  return out;
}

Trajectory::Trajectory(Intrinsics intrinsics, std::vector<View> views)
    : intrinsics_(intrinsics), views_(std::move(views)) {
  intrinsics_.validate();
  if (views_.size() < 2) throw ConfigError("trajectory needs at least two views");
  for (std::size_t i = 1; i < views_.size(); ++i)
    if (!(views_[i].angle_deg > views_[i - 1].angle_deg))
      throw ConfigError("trajectory angles must be strictly increasing");
}

Trajectory build_short_scan(const Intrinsics& intrinsics, int n_views, double start_angle_deg) {
  intrinsics.validate();
  if (n_views < 2) throw ConfigError("short scan needs at least two views");
  const double span = 180.0 + intrinsics.fan_angle_deg();
  std::vector<View> views;
  views.reserve(n_views);
  for (int i = 0; i < n_views; ++i) {
    const double beta_deg = start_angle_deg + span * i / (n_views - 1);
    const double b = beta_deg * kDeg;
    const Vec3 n(-std::sin(b), std::cos(b), 0.0);  // source -> isocenter
    const Vec3 eu(std::cos(b), std::sin(b), 0.0);
    const Vec3 ev(0.0, 0.0, 1.0);
    const Vec3 src = -intrinsics.sid * n;
    Mat34 p;
    p.block<1, 3>(0, 0) = (intrinsics.sdd / intrinsics.du) * eu.transpose() + intrinsics.cu * n.transpose();
    p.block<1, 3>(1, 0) = (intrinsics.sdd / intrinsics.dv) * ev.transpose() + intrinsics.cv * n.transpose();
    p.block<1, 3>(2, 0) = n.transpose();
    for (int r = 0; r < 3; ++r) p(r, 3) = -p.block<1, 3>(r, 0).dot(src);
    views.push_back({ProjectionMatrix(p), beta_deg});
  }
  return Trajectory(intrinsics, std::move(views));
}

std::pair<double, double> project_point(const ProjectionMatrix& p, const Vec4& a) {
  const Eigen::Vector3d x = p.matrix() * a;
  if (!(x(2) > 1e-9)) throw GeometryError("point lies at or behind the source");
  return {x(0) / x(2), x(1) / x(2)};
}

EffectiveTrajectory::EffectiveTrajectory(Trajectory base)
    : EffectiveTrajectory(base, std::vector<RigidMotion>(base.size())) {}

EffectiveTrajectory::EffectiveTrajectory(Trajectory base, std::vector<RigidMotion> motion)
    : base_(std::move(base)), motion_(std::move(motion)) {
  if (motion_.size() != base_.size())
    throw ShapeError("motion list has " + std::to_string(motion_.size()) + " entries, trajectory has " +
                     std::to_string(base_.size()) + " views");
  composed_.reserve(base_.size());
  for (std::size_t i = 0; i < base_.size(); ++i) {
    if (motion_[i].is_identity())
      composed_.push_back(base_[i].p);
    else
      composed_.push_back(base_[i].p * motion_to_matrix(motion_[i]));
  }
}

Trajectory EffectiveTrajectory::as_trajectory() const {
  std::vector<View> views;
  views.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) views.push_back({composed_[i], base_[i].angle_deg});
  return Trajectory(base_.intrinsics(), std::move(views));
}

EffectiveTrajectory compose(const Trajectory& base, const std::vector<RigidMotion>& motion) {
  return EffectiveTrajectory(base, motion);
}

EffectiveTrajectory compose(const EffectiveTrajectory& eff, const std::vector<RigidMotion>& motion) {
  if (motion.size() != eff.size()) throw ShapeError("motion list length does not match view count");
  std::vector<RigidMotion> total(eff.size());
  for (std::size_t i = 0; i < eff.size(); ++i) {
    if (motion[i].is_identity())
      total[i] = eff.motion()[i];
    else if (eff.motion()[i].is_identity())
      total[i] = motion[i];
    else
      total[i] = RigidMotion::from_matrix(motion_to_matrix(eff.motion()[i]) * motion_to_matrix(motion[i]));
  }
  return EffectiveTrajectory(eff.base(), std::move(total));
}

}  // namespace tomofocus

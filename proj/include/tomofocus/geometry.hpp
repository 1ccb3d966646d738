#pragma once

#include <Eigen/Dense>
#include <array>
#include <string_view>
#include <utility>
#include <vector>

namespace tomofocus {

using Mat34 = Eigen::Matrix<double, 3, 4>;
using Mat4 = Eigen::Matrix4d;
using Mat3 = Eigen::Matrix3d;
using Vec3 = Eigen::Vector3d;
using Vec4 = Eigen::Vector4d;

// Detector and source placement of a circular C-arm style system.
// Distances and pitches are in mm; (cu, cv) is the principal point in pixels.
struct Intrinsics {
  double sid = 375.0;
  double sdd = 600.0;
  int nu = 128;
  int nv = 96;
  double du = 1.6;
  double dv = 1.6;
  double cu = 63.5;
  double cv = 47.5;

  void validate() const;
  // Full fan angle of the detector in degrees, measured at the pixel edges.
  double fan_angle_deg() const;
  double half_fan_rad() const;

  // Principal point at the detector center.
  static Intrinsics centered(double sid, double sdd, int nu, int nv, double du, double dv);
};

// 3x4 camera matrix, kept scale-normalized: the third row of the left 3x3
// block has unit norm and the isocenter has positive depth. With that
// normalization depth() is the distance from the source plane in mm.
class ProjectionMatrix {
 public:
  ProjectionMatrix() = default;
  explicit ProjectionMatrix(const Mat34& p);

  const Mat34& matrix() const { return p_; }
  double operator()(int r, int c) const { return p_(r, c); }

  double depth(const Vec4& a) const { return p_.row(2).dot(a); }
  double isocenter_depth() const { return p_(2, 3); }

  Vec3 source_position() const;
  // Unit direction from the source through detector pixel (u, v).
  Vec3 ray_direction(double u, double v) const;

  ProjectionMatrix operator*(const Mat4& m) const { return ProjectionMatrix(p_ * m); }

 private:
  Mat34 p_ = Mat34::Zero();
};

enum class Axis : int { tx = 0, ty = 1, tz = 2, rx = 3, ry = 4, rz = 5 };

inline constexpr std::array<Axis, 6> kAllAxes = {Axis::tx, Axis::ty, Axis::tz,
                                                 Axis::rx, Axis::ry, Axis::rz};

std::string_view axis_name(Axis a);
// Accepts "tx", "t_x", "rz", ... ; throws ConfigError otherwise.
Axis parse_axis(std::string_view name);
bool is_in_plane(Axis a);

// Rigid pose: Euler angles in degrees, translations in mm.
struct RigidMotion {
  double tx = 0, ty = 0, tz = 0;
  double rx = 0, ry = 0, rz = 0;

  double& operator[](Axis a);
  double operator[](Axis a) const;
  bool is_identity() const { return tx == 0 && ty == 0 && tz == 0 && rx == 0 && ry == 0 && rz == 0; }

  // Inverse of motion_to_matrix for a rigid 4x4 matrix.
  static RigidMotion from_matrix(const Mat4& m);
};

// R = Rz(rz) * Ry(ry) * Rx(rx) about the isocenter, followed by the translation.
Mat4 motion_to_matrix(const RigidMotion& m);
Mat4 rigid_inverse(const Mat4& m);

struct View {
  ProjectionMatrix p;
  double angle_deg = 0;
};

class Trajectory {
 public:
  Trajectory() = default;
  Trajectory(Intrinsics intrinsics, std::vector<View> views);

  const Intrinsics& intrinsics() const { return intrinsics_; }
  const std::vector<View>& views() const { return views_; }
  std::size_t size() const { return views_.size(); }
  const View& operator[](std::size_t i) const { return views_[i]; }
  double angular_span_deg() const { return views_.back().angle_deg - views_.front().angle_deg; }
  double start_angle_deg() const { return views_.front().angle_deg; }

 private:
  Intrinsics intrinsics_;
  std::vector<View> views_;
};

// Circular short scan over 180 degrees plus the fan angle. At beta = 0 the
// source sits on the -y axis and the gantry rotates about +z.
Trajectory build_short_scan(const Intrinsics& intrinsics, int n_views, double start_angle_deg);

// Dehomogenized detector position (u, v) in pixels.
std::pair<double, double> project_point(const ProjectionMatrix& p, const Vec4& a);

// Calibration P together with the per-view motion M; the composed matrices
// P_i * M_i are cached.
class EffectiveTrajectory {
 public:
  EffectiveTrajectory() = default;
  explicit EffectiveTrajectory(Trajectory base);
  EffectiveTrajectory(Trajectory base, std::vector<RigidMotion> motion);

  const Trajectory& base() const { return base_; }
  const std::vector<RigidMotion>& motion() const { return motion_; }
  const std::vector<ProjectionMatrix>& composed() const { return composed_; }
  const ProjectionMatrix& operator[](std::size_t i) const { return composed_[i]; }
  std::size_t size() const { return composed_.size(); }
  const Intrinsics& intrinsics() const { return base_.intrinsics(); }

  // The composed geometry viewed as a plain trajectory (same angles).
  Trajectory as_trajectory() const;

 private:
  Trajectory base_;
  std::vector<RigidMotion> motion_;
  std::vector<ProjectionMatrix> composed_;
};

// E = P o M. Throws ShapeError on a length mismatch.
EffectiveTrajectory compose(const Trajectory& base, const std::vector<RigidMotion>& motion);
// (P o M) o C = P o (M C): keeps the calibration separable from the motion.
EffectiveTrajectory compose(const EffectiveTrajectory& eff, const std::vector<RigidMotion>& motion);

}  // namespace tomofocus

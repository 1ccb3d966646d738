#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string_view>
#include <vector>

#include "tomofocus/geometry.hpp"

namespace tomofocus {

// Virtual 3-D markers, stored as a 4 x K homogeneous matrix.
struct MarkerSet {
  Eigen::Matrix<double, 4, Eigen::Dynamic> points;
  std::vector<double> radii;  // sphere radius of each marker

  int size() const { return static_cast<int>(points.cols()); }
  Vec4 operator[](int k) const { return points.col(k); }
};

// Fibonacci lattice on each sphere. A non-zero seed applies a random rotation
// per sphere; seed 0 keeps the canonical lattice.
MarkerSet generate_markers(const std::vector<double>& radii, int per_sphere, std::uint64_t seed = 0);
// 30 markers on each of the spheres 30, 60, 90 mm times `scale`.
MarkerSet default_markers(double scale = 0.5);

enum class RpeVariant { all, in_plane, out_plane };
std::string_view variant_name(RpeVariant v);

// RMS is the root of the mean squared marker error; Mean averages the
// unsquared distances instead.
enum class RpeMode { rms, mean };

// Squared detector distance in mm^2 between the projections of a.
double marker_rpe(const Intrinsics& k, const ProjectionMatrix& p, const ProjectionMatrix& pt, const Vec4& a);
double view_rpe(const Intrinsics& k, const ProjectionMatrix& p, const ProjectionMatrix& pt, const MarkerSet& m,
                RpeMode mode = RpeMode::rms);

// Keeps only the parameters of one group: in-plane (rz, tx, ty) or
// out-plane (rx, ry, tz).
RigidMotion mask_motion(const RigidMotion& m, RpeVariant v);

struct RpeProfile {
  std::vector<double> values;
  RpeVariant variant = RpeVariant::all;
};

RpeProfile rpe_profile(const EffectiveTrajectory& eff, const MarkerSet& m, RpeVariant v, RpeMode mode = RpeMode::rms);
double mean_rpe(const EffectiveTrajectory& eff, const MarkerSet& m, RpeMode mode = RpeMode::rms);

// DLT estimate of P from >= 6 correspondences (points in mm, pixels in
// detector coordinates). Throws DomainError for fewer points and
// DegenerateError for configurations that do not fix P (e.g. coplanar).
ProjectionMatrix solve_projection_from_markers(const std::vector<Vec3>& points3d,
                                               const std::vector<Eigen::Vector2d>& points2d);

}  // namespace tomofocus

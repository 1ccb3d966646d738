#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "tomofocus/geometry.hpp"

namespace tomofocus {

// Inclusive range of view indices.
struct ViewRange {
  int first = 0;
  int last = -1;
  int size() const { return last >= first ? last - first + 1 : 0; }
  bool contains(int i) const { return i >= first && i <= last; }
  bool operator==(const ViewRange&) const = default;
};

// Akima's local cubic interpolant. Node slopes come from the weighted
// difference rule; the two missing differences on each end are extrapolated
// linearly, as in Akima's original method.
class AkimaSpline {
 public:
  AkimaSpline(std::vector<double> x, std::vector<double> y);

  double operator()(double x) const;
  const std::vector<double>& nodes() const { return x_; }
  const std::vector<double>& values() const { return y_; }
  const std::vector<double>& slopes() const { return t_; }

 private:
  std::vector<double> x_, y_, t_;
};

// Six splines (tx, ty, tz, rx, ry, rz) sharing one set of node positions.
class MotionSplineSet {
 public:
  MotionSplineSet() = default;
  MotionSplineSet(std::vector<double> positions, Eigen::MatrixXd values);

  // M nodes spread uniformly over [0, n_views - 1], all values zero.
  static MotionSplineSet uniform(int n_nodes, int n_views);

  int node_count() const { return static_cast<int>(positions_.size()); }
  const std::vector<double>& positions() const { return positions_; }
  const Eigen::MatrixXd& values() const { return values_; }
  double value(Axis a, int node) const { return values_(static_cast<int>(a), node); }
  void set_value(Axis a, int node, double v) { values_(static_cast<int>(a), node) = v; }

  AkimaSpline spline(Axis a) const;
  bool is_zero() const { return values_.isZero(0.0); }

  // Views whose curve value can depend on the given node: Akima slopes reach
  // two nodes to each side, so the curve changes on (x[j-3], x[j+3]).
  ViewRange node_support(int node, int n_views) const;

 private:
  std::vector<double> positions_;
  Eigen::MatrixXd values_;  // 6 x M
};

// t(m): per-view values of all six axes, 6 x N.
struct MotionCurves {
  Eigen::MatrixXd values;
  int view_count() const { return static_cast<int>(values.cols()); }
  double operator()(Axis a, int view) const { return values(static_cast<int>(a), view); }
  static MotionCurves zeros(int n_views) { return {Eigen::MatrixXd::Zero(6, n_views)}; }
};

double akima_eval(const AkimaSpline& s, double x);
MotionCurves curves_from_splines(const MotionSplineSet& m, int n_views);
// Re-evaluates a single axis of `curves` from `m` on the given views.
void update_curves(const MotionSplineSet& m, Axis a, ViewRange views, MotionCurves& curves);
std::vector<RigidMotion> annihilating_motion(const MotionCurves& t);

// One axis of random motion: node values i.i.d. uniform in [-amplitude,
// amplitude], confined to a window of ceil(N/3) views placed uniformly inside
// `safe` (the views unaffected by redundancy weighting). Only nodes whose two
// neighbours also fall inside the window are non-zero, which keeps the Akima
// curve itself inside the window.
struct RandomMotion {
  MotionSplineSet splines;
  ViewRange window;
};
RandomMotion random_motion(Axis axis, double amplitude, int n_nodes, int n_views, ViewRange safe, std::uint64_t seed);

}  // namespace tomofocus

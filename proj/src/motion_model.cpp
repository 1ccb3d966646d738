#include "tomofocus/motion_model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <string>

#include "tomofocus/errors.hpp"

namespace tomofocus {

AkimaSpline::AkimaSpline(std::vector<double> x, std::vector<double> y) : x_(std::move(x)), y_(std::move(y)) {
  const std::size_t n = x_.size();
  if (n < 2) throw DomainError("Akima spline needs at least two nodes");
  if (y_.size() != n) throw ShapeError("Akima spline: node and value counts differ");
  for (std::size_t i = 1; i < n; ++i)
    if (!(x_[i] > x_[i - 1])) throw DomainError("Akima spline: node positions must be strictly increasing");

  // Differences m[k + 2] = slope of interval k, padded by two on each side.
  std::vector<double> m(n + 3);
  for (std::size_t k = 0; k + 1 < n; ++k) m[k + 2] = (y_[k + 1] - y_[k]) / (x_[k + 1] - x_[k]);
  if (n == 2) {
    m[0] = m[1] = m[3] = m[4] = m[2];
  } else {
    m[1] = 2.0 * m[2] - m[3];
    m[0] = 2.0 * m[1] - m[2];
    m[n + 1] = 2.0 * m[n] - m[n - 1];
    m[n + 2] = 2.0 * m[n + 1] - m[n];
  }

  t_.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    // m[i + 2] is the interval to the right of node i.
    const double w_left = std::abs(m[i + 3] - m[i + 2]);
    const double w_right = std::abs(m[i + 1] - m[i]);
    const double den = w_left + w_right;
    t_[i] = den > 0 ? (w_left * m[i + 1] + w_right * m[i + 2]) / den : 0.5 * (m[i + 1] + m[i + 2]);
  }
}

double AkimaSpline::operator()(double x) const {
  const std::size_t n = x_.size();
  if (!(x >= x_.front() && x <= x_.back()))
    throw DomainError("Akima spline evaluated at " + std::to_string(x) + " outside [" + std::to_string(x_.front()) +
                      ", " + std::to_string(x_.back()) + "]");
  if (x == x_.back()) return y_.back();
  const auto it = std::upper_bound(x_.begin(), x_.end(), x);
  const std::size_t i = static_cast<std::size_t>(it - x_.begin()) - 1;
  if (i + 1 >= n) return y_.back();
  const double h = x_[i + 1] - x_[i];
  const double d = x - x_[i];
  const double slope = (y_[i + 1] - y_[i]) / h;
  const double c2 = (3.0 * slope - 2.0 * t_[i] - t_[i + 1]) / h;
  const double c3 = (t_[i] + t_[i + 1] - 2.0 * slope) / (h * h);
  return y_[i] + d * (t_[i] + d * (c2 + d * c3));
}

double akima_eval(const AkimaSpline& s, double x) { return s(x); }

MotionSplineSet::MotionSplineSet(std::vector<double> positions, Eigen::MatrixXd values)
    : positions_(std::move(positions)), values_(std::move(values)) {
  if (positions_.size() < 2) throw DomainError("spline set needs at least two nodes");
  if (values_.rows() != 6 || values_.cols() != static_cast<Eigen::Index>(positions_.size()))
    throw ShapeError("spline set values must be 6 x M");
  for (std::size_t i = 1; i < positions_.size(); ++i)
    if (!(positions_[i] > positions_[i - 1])) throw DomainError("spline node positions must be strictly increasing");
}

MotionSplineSet MotionSplineSet::uniform(int n_nodes, int n_views) {
  if (n_nodes < 2) throw ConfigError("spline set needs at least two nodes");
  if (n_views < 2) throw ConfigError("spline set needs at least two views");
  std::vector<double> pos(n_nodes);
  for (int j = 0; j < n_nodes; ++j) pos[j] = static_cast<double>(j) * (n_views - 1) / (n_nodes - 1);
  pos.back() = n_views - 1;
  return MotionSplineSet(std::move(pos), Eigen::MatrixXd::Zero(6, n_nodes));
}

AkimaSpline MotionSplineSet::spline(Axis a) const {
  const Eigen::RowVectorXd row = values_.row(static_cast<int>(a));
  return AkimaSpline(positions_, std::vector<double>(row.data(), row.data() + row.size()));
}

ViewRange MotionSplineSet::node_support(int node, int n_views) const {
  const int m = node_count();
  ViewRange r{0, n_views - 1};
  if (node - 3 >= 0) r.first = static_cast<int>(std::floor(positions_[node - 3])) + 1;
  if (node + 3 <= m - 1) r.last = static_cast<int>(std::ceil(positions_[node + 3])) - 1;
  r.first = std::clamp(r.first, 0, n_views - 1);
  r.last = std::clamp(r.last, 0, n_views - 1);
  return r;
}

namespace {

void check_span(const MotionSplineSet& m, int n_views) {
  if (m.node_count() < 2) throw DomainError("empty spline set");
  if (std::abs(m.positions().front()) > 1e-9 || std::abs(m.positions().back() - (n_views - 1)) > 1e-9)
    throw DomainError("spline nodes must span [0, n_views - 1]");
}

}  // namespace

MotionCurves curves_from_splines(const MotionSplineSet& m, int n_views) {
  check_span(m, n_views);
  MotionCurves c = MotionCurves::zeros(n_views);
  for (Axis a : kAllAxes) update_curves(m, a, ViewRange{0, n_views - 1}, c);
  return c;
}

void update_curves(const MotionSplineSet& m, Axis a, ViewRange views, MotionCurves& curves) {
  const int row = static_cast<int>(a);
  if (m.values().row(row).isZero(0.0)) {
    for (int i = views.first; i <= views.last; ++i) curves.values(row, i) = 0.0;
    return;
  }
  const AkimaSpline s = m.spline(a);
  const double last = m.positions().back();
  for (int i = views.first; i <= views.last; ++i) curves.values(row, i) = s(std::min<double>(i, last));
}

std::vector<RigidMotion> annihilating_motion(const MotionCurves& t) {
  std::vector<RigidMotion> out(t.view_count());
  for (int i = 0; i < t.view_count(); ++i)
    for (Axis a : kAllAxes) out[i][a] = t(a, i);
  return out;
}

RandomMotion random_motion(Axis axis, double amplitude, int n_nodes, int n_views, ViewRange safe, std::uint64_t seed) {
  if (!(amplitude >= 0)) throw ConfigError("motion amplitude must be non-negative");
  RandomMotion out{MotionSplineSet::uniform(n_nodes, n_views), {}};
  const int length = (n_views + 2) / 3;
  const int room = safe.size() - length;
  if (room < 0)
    throw ConfigError("a window of " + std::to_string(length) + " views does not fit the redundancy-safe range of " +
                      std::to_string(safe.size()) + " views");

  std::mt19937_64 rng(seed);
  const int start = safe.first + static_cast<int>(std::uniform_int_distribution<int>(0, room)(rng));
  out.window = {start, start + length - 1};

  const auto& pos = out.splines.positions();
  std::vector<int> active;
  for (int j = 1; j + 1 < n_nodes; ++j)
    if (pos[j - 1] >= out.window.first && pos[j + 1] <= out.window.last) active.push_back(j);
  if (active.empty())
    throw ConfigError("motion window of " + std::to_string(length) + " views holds no interior spline node; use more nodes");

  std::uniform_real_distribution<double> value(-amplitude, amplitude);
  for (int j : active) out.splines.set_value(axis, j, amplitude > 0 ? value(rng) : 0.0);
  return out;
}

}  // namespace tomofocus

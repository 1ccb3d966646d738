#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"
#include "tomofocus/errors.hpp"
#include "tomofocus/fdk.hpp"
#include "tomofocus/motion_model.hpp"
#include "tomofocus/rpe.hpp"

using namespace tomofocus;

namespace {

// Naive triple loop: views x markers x coordinates.
std::vector<double> naive_profile(const EffectiveTrajectory& eff, const MarkerSet& m) {
  const Intrinsics& k = eff.intrinsics();
  std::vector<double> out;
  for (std::size_t i = 0; i < eff.size(); ++i) {
    const Mat34& p = eff.base()[i].p.matrix();
    const Mat34& q = eff[i].matrix();
    double sum = 0;
    for (int j = 0; j < m.size(); ++j) {
      double a[3] = {0, 0, 0}, b[3] = {0, 0, 0};
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) {
          a[r] += p(r, c) * m.points(c, j);
          b[r] += q(r, c) * m.points(c, j);
        }
      const double du = (a[0] / a[2] - b[0] / b[2]) * k.du;
      const double dv = (a[1] / a[2] - b[1] / b[2]) * k.dv;
      sum += du * du + dv * dv;
    }
    out.push_back(std::sqrt(sum / m.size()));
  }
  return out;
}

}  // namespace

TEST_CASE("marker generation") {
  const MarkerSet m = default_markers(1.0);
  CHECK(m.size() == 90);
  for (int k = 0; k < m.size(); ++k) {
    CHECK(m.points(3, k) == 1.0);
    CHECK(std::abs(m[k].head<3>().norm() - m.radii[k]) <= 1e-9);
  }
  for (int s = 0; s < 3; ++s) {
    Vec3 c = Vec3::Zero();
    for (int k = 30 * s; k < 30 * (s + 1); ++k) c += m[k].head<3>();
    c /= 30;
    CHECK(c.norm() <= 0.05 * m.radii[30 * s]);
  }
  const MarkerSet r = generate_markers({10, 20}, 15, 7);
  CHECK(r.size() == 30);
  for (int k = 0; k < r.size(); ++k) CHECK(std::abs(r[k].head<3>().norm() - r.radii[k]) <= 1e-9);
  CHECK_THROWS_AS(generate_markers({10}, 5), ConfigError);
  CHECK_THROWS_AS(generate_markers({-1, 2}, 5), ConfigError);
}

TEST_CASE("marker and view RPE") {
  const Trajectory t = testutil::small_scan(10);
  const Intrinsics& k = t.intrinsics();
  const MarkerSet m = default_markers(0.5);
  CHECK(view_rpe(k, t[3].p, t[3].p, m) == 0.0);

  // a translation parallel to the detector, seen at the isocenter marker
  RigidMotion shift;
  shift.tx = 1.5;  // view 0: e_u = +x
  const ProjectionMatrix moved = t[0].p * motion_to_matrix(shift);
  const double expected = 1.5 * k.sdd / k.sid;
  CHECK(marker_rpe(k, t[0].p, moved, Vec4(0, 0, 0, 1)) == doctest::Approx(expected * expected).epsilon(1e-12));
  testutil::Gen g(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Vec4 a = g.point(30).homogeneous();
    CHECK(marker_rpe(k, t[0].p, moved, a) == doctest::Approx(marker_rpe(k, moved, t[0].p, a)).epsilon(1e-14));
  }
}

TEST_CASE("constant detector shift gives view RPE equal to the shift") {
  const Trajectory t = testutil::small_scan(10);
  const Intrinsics& k = t.intrinsics();
  // shift the detector image by (3, 4) pixels: a mm offset of 5 * pitch
  Mat34 h = t[2].p.matrix();
  Mat3 shift = Mat3::Identity();
  shift(0, 2) = 3;
  shift(1, 2) = 4;
  const ProjectionMatrix q(shift * h);
  const double d = 5 * k.du;
  CHECK(view_rpe(k, t[2].p, q, default_markers(0.5)) == doctest::Approx(d).epsilon(1e-12));
  CHECK(view_rpe(k, t[2].p, q, default_markers(0.5), RpeMode::mean) == doctest::Approx(d).epsilon(1e-12));
}

TEST_CASE("vectorized profile equals the naive loop") {
  const Trajectory t = testutil::small_scan(40);
  const MarkerSet m = default_markers(0.5);
  testutil::Gen g(9);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<RigidMotion> ms(t.size());
    for (auto& x : ms) x = g.motion(3, 3);
    const EffectiveTrajectory e(t, ms);
    const auto fast = rpe_profile(e, m, RpeVariant::all).values;
    const auto slow = naive_profile(e, m);
    for (std::size_t i = 0; i < fast.size(); ++i) CHECK(std::abs(fast[i] - slow[i]) <= 1e-12 * std::max(1.0, slow[i]));
  }
  CHECK(mean_rpe(EffectiveTrajectory(t), m) == 0.0);
}

TEST_CASE("in-plane and out-plane decomposition") {
  const Trajectory t = testutil::small_scan(30);
  const MarkerSet m = default_markers(0.5);
  for (Axis a : kAllAxes) {
    std::vector<RigidMotion> ms(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) ms[i][a] = 0.1 * double(i % 7) + 0.2;
    const EffectiveTrajectory e(t, ms);
    const auto ip = rpe_profile(e, m, RpeVariant::in_plane).values;
    const auto op = rpe_profile(e, m, RpeVariant::out_plane).values;
    const auto all = rpe_profile(e, m, RpeVariant::all).values;
    const bool ip_zero = std::all_of(ip.begin(), ip.end(), [](double x) { return x == 0.0; });
    const bool op_zero = std::all_of(op.begin(), op.end(), [](double x) { return x == 0.0; });
    CHECK(ip_zero != op_zero);
    CHECK(ip_zero == !is_in_plane(a));
    CHECK(all == (ip_zero ? op : ip));
  }
}

TEST_CASE("windowed motion profile vanishes outside the window") {
  const Trajectory t = testutil::small_scan(200);
  const ViewRange safe = parker_safe_range(t);
  const MarkerSet m = default_markers(0.5);
  for (std::uint64_t seed = 1; seed < 6; ++seed) {
    const RandomMotion r = random_motion(kAllAxes[seed], 3.0, 20, 200, safe, seed);
    const EffectiveTrajectory e(t, annihilating_motion(curves_from_splines(r.splines, 200)));
    const auto p = rpe_profile(e, m, RpeVariant::all).values;
    for (int i = 0; i < 200; ++i)
      if (!r.window.contains(i)) CHECK(p[i] == 0.0);
    double s = 0;
    for (double x : p) s += x;
    CHECK(mean_rpe(e, m) == doctest::Approx(s / 200).epsilon(1e-14));
  }
}

TEST_CASE("mRPE does not decrease with amplitude and is view independent") {
  const Trajectory t = testutil::small_scan(200);
  const MarkerSet m = default_markers(0.5);
  for (Axis a : kAllAxes) {
    double prev = 0;
    for (double amp : {0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 15.0}) {
      std::vector<RigidMotion> ms(t.size());
      for (int i = 60; i < 120; ++i) ms[i][a] = amp * std::sin(3.14159 * (i - 60) / 60.0);
      const double v = mean_rpe(EffectiveTrajectory(t, ms), m);
      CHECK(v >= prev);
      prev = v;
    }
  }
  // one displaced view at the start or the end of the scan; rz and tz act
  // the same way in every view frame
  RigidMotion d;
  d.tz = 2.0;
  d.rz = 1.0;
  std::vector<RigidMotion> first(t.size()), last(t.size());
  first[5] = d;
  last[194] = d;
  const double a = mean_rpe(EffectiveTrajectory(t, first), m), b = mean_rpe(EffectiveTrajectory(t, last), m);
  CHECK(std::abs(a - b) <= 0.02 * a);
}

TEST_CASE("projection matrix from markers") {
  const Trajectory t = testutil::small_scan(10);
  testutil::Gen g(12);
  const MarkerSet m = default_markers(0.5);
  for (int view : {0, 4, 9}) {
    std::vector<Vec3> p3;
    std::vector<Eigen::Vector2d> p2;
    for (int k = 0; k < m.size(); ++k) {
      p3.push_back(m[k].head<3>());
      const auto [u, v] = project_point(t[view].p, m[k]);
      p2.emplace_back(u, v);
    }
    const ProjectionMatrix est = solve_projection_from_markers(p3, p2);
    CHECK((est.matrix() - t[view].p.matrix()).cwiseAbs().maxCoeff() <= 1e-6 * t[view].p.matrix().cwiseAbs().maxCoeff());
    double worst = 0;
    for (std::size_t k = 0; k < p3.size(); ++k) {
      const auto [u, v] = project_point(est, p3[k].homogeneous());
      worst = std::max({worst, std::abs(u - p2[k](0)), std::abs(v - p2[k](1))});
    }
    CHECK(worst <= 1e-6);
  }
  std::vector<Vec3> five(5, Vec3::Zero());
  std::vector<Eigen::Vector2d> five2(5, Eigen::Vector2d::Zero());
  CHECK_THROWS_AS(solve_projection_from_markers(five, five2), DomainError);

  std::vector<Vec3> plane;
  std::vector<Eigen::Vector2d> img;
  for (int k = 0; k < 20; ++k) {
    const Vec3 p(g.uniform(-20, 20), g.uniform(-20, 20), 0.0);
    plane.push_back(p);
    const auto [u, v] = project_point(t[0].p, p.homogeneous());
    img.emplace_back(u, v);
  }
  CHECK_THROWS_AS(solve_projection_from_markers(plane, img), DegenerateError);
}

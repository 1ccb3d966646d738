#include <doctest.h>

#include <cmath>
#include <numbers>

#include "test_util.hpp"
#include "tomofocus/errors.hpp"
#include "tomofocus/geometry.hpp"

using namespace tomofocus;

TEST_CASE("isocenter projects to the principal point in every view") {
  const Intrinsics k;
  const Trajectory t = build_short_scan(k, 37, 10.0);
  for (const auto& v : t.views()) {
    const auto [u, w] = project_point(v.p, Vec4(0, 0, 0, 1));
    CHECK(u == doctest::Approx(k.cu).epsilon(1e-12));
    CHECK(w == doctest::Approx(k.cv).epsilon(1e-12));
  }
}

TEST_CASE("short scan span with nu*du equal to sdd") {
  Intrinsics k = Intrinsics::centered(300, 600, 100, 20, 6.0, 6.0);
  const Trajectory t = build_short_scan(k, 11, 0.0);
  const double expected = 180.0 + 2.0 * std::atan(0.5) * 180.0 / std::numbers::pi;
  CHECK(t.angular_span_deg() == doctest::Approx(expected).epsilon(1e-12));
  CHECK(expected == doctest::Approx(233.13).epsilon(1e-4));
  // even spacing
  for (std::size_t i = 1; i < t.size(); ++i)
    CHECK(t[i].angle_deg - t[i - 1].angle_deg == doctest::Approx(expected / 10).epsilon(1e-12));
}

TEST_CASE("magnification of an x offset at beta = 0") {
  const Intrinsics k;
  const Trajectory t = build_short_scan(k, 5, 0.0);
  for (double d : {-3.0, 0.5, 7.0}) {
    const auto [u, v] = project_point(t[0].p, Vec4(d, 0, 0, 1));
    CHECK(u - k.cu == doctest::Approx(d * k.sdd / k.sid / k.du).epsilon(1e-12));
    CHECK(v == doctest::Approx(k.cv));
  }
}

TEST_CASE("magnification law for small in-plane displacements at any view") {
  testutil::Gen g(3);
  const Intrinsics k;
  const Trajectory t = build_short_scan(k, 20, 0.0);
  for (const auto& view : t.views()) {
    const double b = view.angle_deg * std::numbers::pi / 180.0;
    const Vec3 eu(std::cos(b), std::sin(b), 0);
    const double d = g.uniform(-0.3, 0.3);
    const auto [u, v] = project_point(view.p, (Vec3(d * eu)).homogeneous());
    const double expected = d * k.sdd / k.sid / k.du;
    CHECK(std::abs((u - k.cu) - expected) <= 1e-3 * std::abs(expected) + 1e-12);
  }
}

TEST_CASE("invalid intrinsics are rejected") {
  Intrinsics k;
  k.sdd = k.sid;
  CHECK_THROWS_AS(build_short_scan(k, 10, 0), ConfigError);
  CHECK_THROWS_AS(build_short_scan(Intrinsics{}, 1, 0), ConfigError);
  k = Intrinsics{};
  k.du = 0;
  CHECK_THROWS_AS(k.validate(), ConfigError);
}

TEST_CASE("project_point divides by depth") {
  Mat34 m = Mat34::Zero();
  m.block<3, 3>(0, 0) = Mat3::Identity();
  const ProjectionMatrix p(m);
  const auto [u, v] = project_point(p, Vec4(2, 4, 2, 1));
  CHECK(u == doctest::Approx(1.0));
  CHECK(v == doctest::Approx(2.0));
  CHECK_THROWS_AS(project_point(p, Vec4(1, 1, 0, 1)), GeometryError);
  CHECK_THROWS_AS(project_point(p, Vec4(1, 1, -1, 1)), GeometryError);
}

TEST_CASE("project_point matches scalar arithmetic and is scale invariant") {
  testutil::Gen g(11);
  for (int trial = 0; trial < 50; ++trial) {
    Mat34 m;
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) m(r, c) = g.uniform(-1, 1);
    m(2, 3) = 5.0 + g.uniform(0, 1);
    m.block<3, 3>(0, 0) += 2.0 * Mat3::Identity();
    const ProjectionMatrix p(m);
    const Vec4 a(g.uniform(-1, 1), g.uniform(-1, 1), g.uniform(-1, 1), 1.0);
    double x = 0, y = 0, w = 0;
    for (int c = 0; c < 4; ++c) {
      x += p(0, c) * a(c);
      y += p(1, c) * a(c);
      w += p(2, c) * a(c);
    }
    if (w <= 1e-6) continue;
    const auto [u, v] = project_point(p, a);
    CHECK(std::abs(u - x / w) <= 1e-12 * std::max(1.0, std::abs(u)));
    CHECK(std::abs(v - y / w) <= 1e-12 * std::max(1.0, std::abs(v)));
    const double lambda = g.uniform(0.1, 10);
    const ProjectionMatrix p2(lambda * m);
    const auto [u2, v2] = project_point(p2, 3.7 * a);
    CHECK(u2 == doctest::Approx(u).epsilon(1e-12));
    CHECK(v2 == doctest::Approx(v).epsilon(1e-12));
  }
}

TEST_CASE("projection matrices are normalized") {
  const Trajectory t = build_short_scan(Intrinsics{}, 9, 0);
  for (const auto& v : t.views()) {
    CHECK(v.p.matrix().block<1, 3>(2, 0).norm() == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(v.p.isocenter_depth() == doctest::Approx(375.0).epsilon(1e-12));
  }
  Mat34 m = Mat34::Zero();
  CHECK_THROWS_AS(ProjectionMatrix{m}, GeometryError);
  m(2, 2) = 1;
  m(0, 0) = 1;
  CHECK_THROWS_AS(ProjectionMatrix{m}, GeometryError);
  // negative depth gets flipped
  Mat34 q = Mat34::Zero();
  q.block<3, 3>(0, 0) = -2.0 * Mat3::Identity();
  q(2, 3) = -10;
  CHECK(ProjectionMatrix(q).isocenter_depth() == doctest::Approx(5.0));
}

TEST_CASE("motion_to_matrix basics") {
  CHECK(motion_to_matrix(RigidMotion{}).isApprox(Mat4::Identity(), 0));
  RigidMotion m;
  m.rz = 90;
  const Vec4 x = motion_to_matrix(m) * Vec4(1, 0, 0, 1);
  CHECK(x(0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(x(1) == doctest::Approx(1.0));
  CHECK(axis_name(parse_axis("t_x")) == "tx");
  CHECK_THROWS_AS(parse_axis("qx"), ConfigError);
}

TEST_CASE("rotation blocks are orthonormal and invert by reversed negated parameters") {
  testutil::Gen g(5);
  for (int trial = 0; trial < 100; ++trial) {
    const RigidMotion m = g.motion(30, 20);
    const Mat4 a = motion_to_matrix(m);
    const Mat3 r = a.block<3, 3>(0, 0);
    CHECK((r.transpose() * r - Mat3::Identity()).norm() <= 1e-10);
    CHECK(r.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    // inverse: translate back, then rotations in reverse order
    RigidMotion t{-m.tx, -m.ty, -m.tz, 0, 0, 0}, x, y, z;
    x.rx = -m.rx;
    y.ry = -m.ry;
    z.rz = -m.rz;
    const Mat4 inv = motion_to_matrix(x) * motion_to_matrix(y) * motion_to_matrix(z) * motion_to_matrix(t);
    CHECK((inv * a - Mat4::Identity()).norm() <= 1e-10);
    CHECK((rigid_inverse(a) * a - Mat4::Identity()).norm() <= 1e-10);
    const RigidMotion back = RigidMotion::from_matrix(a);
    for (Axis ax : kAllAxes) CHECK(back[ax] == doctest::Approx(m[ax]).epsilon(1e-9));
  }
}

TEST_CASE("compose with identity motion keeps the base") {
  const Trajectory t = build_short_scan(Intrinsics{}, 12, 0);
  const EffectiveTrajectory e = compose(t, std::vector<RigidMotion>(t.size()));
  for (std::size_t i = 0; i < t.size(); ++i) CHECK(e[i].matrix() == t[i].p.matrix());
  CHECK_THROWS_AS(compose(t, std::vector<RigidMotion>(3)), ShapeError);
}

TEST_CASE("compose matches hand multiplication and annihilation restores the base") {
  testutil::Gen g(17);
  const Trajectory t = build_short_scan(Intrinsics{}, 15, 0);
  std::vector<RigidMotion> m(t.size()), c(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) {
    m[i] = g.motion(5, 10);
    c[i] = RigidMotion::from_matrix(rigid_inverse(motion_to_matrix(m[i])));
  }
  const EffectiveTrajectory e = compose(t, m);
  // hand multiplication on one view, scalar loops
  const Mat34& p = t[4].p.matrix();
  const Mat4 a = motion_to_matrix(m[4]);
  Mat34 hand = Mat34::Zero();
  for (int r = 0; r < 3; ++r)
    for (int col = 0; col < 4; ++col)
      for (int k = 0; k < 4; ++k) hand(r, col) += p(r, k) * a(k, col);
  hand /= hand.block<1, 3>(2, 0).norm();
  CHECK((e[4].matrix() - hand).cwiseAbs().maxCoeff() <= 1e-12 * hand.cwiseAbs().maxCoeff());

  const EffectiveTrajectory back = compose(e, c);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const Mat34 d = back[i].matrix() - t[i].p.matrix();
    CHECK(d.cwiseAbs().maxCoeff() <= 1e-10 * t[i].p.matrix().cwiseAbs().maxCoeff());
  }
}

TEST_CASE("cached composed matrices match recomputation") {
  testutil::Gen g(23);
  const Trajectory t = build_short_scan(Intrinsics{}, 10, 0);
  std::vector<RigidMotion> m(t.size());
  for (auto& x : m) x = g.motion(3, 3);
  const EffectiveTrajectory e(t, m);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const ProjectionMatrix again = t[i].p * motion_to_matrix(m[i]);
    CHECK((again.matrix() - e[i].matrix()).cwiseAbs().maxCoeff() <= 1e-12);
  }
  const Trajectory as = e.as_trajectory();
  CHECK(as.size() == t.size());
}

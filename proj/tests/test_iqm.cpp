#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "test_util.hpp"
#include "tomofocus/errors.hpp"
#include "tomofocus/fdk.hpp"
#include "tomofocus/iqm.hpp"

using namespace tomofocus;

namespace {

SliceTriplets filled(const SliceSet& set, double v) {
  SliceTriplets s = SliceTriplets::zeros(set);
  for (auto& img : s.slices) std::fill(img.data.begin(), img.data.end(), v);
  return s;
}

// Direct per-window SSIM on a 2-D image with explicit Gaussian weights.
double naive_ssim(const std::vector<double>& a, const std::vector<double>& b, int ny, int nx) {
  const int h = 5;
  double w[11], s = 0;
  for (int i = 0; i < 11; ++i) s += (w[i] = std::exp(-0.5 * (i - h) * (i - h) / (1.5 * 1.5)));
  for (double& x : w) x /= s;
  double lo = 1e300, hi = -1e300;
  for (std::size_t i = 0; i < a.size(); ++i) {
    lo = std::min({lo, a[i], b[i]});
    hi = std::max({hi, a[i], b[i]});
  }
  const double c1 = std::pow(0.01 * (hi - lo), 2), c2 = std::pow(0.03 * (hi - lo), 2);
  double total = 0;
  int n = 0;
  for (int y = h; y < ny - h; ++y)
    for (int x = h; x < nx - h; ++x) {
      double ma = 0, mb = 0, aa = 0, bb = 0, ab = 0;
      for (int dy = -h; dy <= h; ++dy)
        for (int dx = -h; dx <= h; ++dx) {
          const double k = w[dy + h] * w[dx + h];
          const double p = a[(y + dy) * nx + x + dx], q = b[(y + dy) * nx + x + dx];
          ma += k * p;
          mb += k * q;
          aa += k * p * p;
          bb += k * q * q;
          ab += k * p * q;
        }
      const double va = aa - ma * ma, vb = bb - mb * mb, cv = ab - ma * mb;
      total += (2 * ma * mb + c1) * (2 * cv + c2) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
      ++n;
    }
  return 100 * total / n;
}

}  // namespace

TEST_CASE("entropy") {
  const SliceSet set = make_slice_set({0.1});
  const BoneWindow w{0.0, 1.0, 16};
  CHECK(entropy_iqm(filled(set, 0.5), w).score == 0.0);

  SliceTriplets two = filled(set, 0.1);
  std::size_t total = 0, half = 0;
  for (auto& img : two.slices) total += img.data.size();
  for (auto& img : two.slices)
    for (auto& v : img.data)
      if (half < total / 2) {
        v = 0.9;
        ++half;
      }
  CHECK(entropy_iqm(two, w).score == doctest::Approx(1.0).epsilon(1e-12));

  // permutation invariance
  testutil::Gen g(3);
  SliceTriplets r = SliceTriplets::zeros(set);
  for (auto& img : r.slices)
    for (auto& v : img.data) v = g.uniform(-0.2, 1.2);
  SliceTriplets p = r;
  std::reverse(p.slices[0].data.begin(), p.slices[0].data.end());
  std::swap(p.slices[1].data[0], p.slices[4].data[2]);
  CHECK(entropy_iqm(r, w).score == entropy_iqm(p, w).score);
  const double h = entropy_iqm(r, w).score;
  CHECK(h > 0);
  CHECK(h <= std::log2(16.0) + 1e-12);

  // values outside the window do not count
  SliceTriplets q = r;
  for (auto& v : q.slices[2].data)
    if (v < 0 || v > 1) v = 5.0;
  CHECK(entropy_iqm(q, w).score == entropy_iqm(r, w).score);

  CHECK_THROWS_AS(entropy_iqm(filled(set, 2.0), w), DegenerateError);
  CHECK_THROWS_AS(entropy_iqm(r, BoneWindow{1.0, 0.5, 16}), ConfigError);
  const BoneWindow b = BoneWindow::for_phantom(default_head_phantom(0.5));
  CHECK(b.lower == doctest::Approx(0.25 * default_head_phantom(0.5).max_density()));
}

TEST_CASE("total variation") {
  const SliceSet set = make_slice_set({0.1});
  CHECK(tv_iqm(filled(set, 3.0)).score == 0.0);
  // a vertical step of height h contributes h per row
  SliceTriplets s = SliceTriplets::zeros(set);
  double expected = 0;
  for (auto& img : s.slices) {
    for (int r = 0; r < img.rows; ++r)
      for (int c = img.cols / 2; c < img.cols; ++c) img(r, c) = 0.7;
    expected += 0.7 * img.rows;
  }
  CHECK(tv_iqm(s).score == doctest::Approx(expected).epsilon(1e-12));
  testutil::Gen g(5);
  for (auto& img : s.slices)
    for (auto& v : img.data) v = g.uniform(0, 1);
  SliceTriplets d = s;
  for (auto& img : d.slices)
    for (auto& v : img.data) v = 2 * v + 4;
  CHECK(tv_iqm(d).score == doctest::Approx(2 * tv_iqm(s).score).epsilon(1e-12));
}

TEST_CASE("soft classification") {
  const auto c = soft_classify({0.2, 0.0, 0.1, 0.4}, {0.0, 0.2, 0.1, 0.0}, {0.0, 0.2, 0.1, 0.0}, 0.1);
  CHECK(c == std::vector<bool>{false, false, false, true});
  CHECK_THROWS_AS(soft_classify({1}, {1, 2}, {1}), ShapeError);
}

TEST_CASE("SSIM") {
  testutil::Gen g(7);
  const int ny = 30, nx = 40;
  std::vector<double> a(ny * nx), b(ny * nx), n(ny * nx);
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < nx; ++x) {
      a[y * nx + x] = std::sin(0.2 * x) * std::cos(0.15 * y);
      b[y * nx + x] = a[y * nx + x] + g.uniform(-0.2, 0.2);
      n[y * nx + x] = g.uniform(-1, 1);
    }
  CHECK(ssim(a, a, 1, ny, nx) == doctest::Approx(100.0).epsilon(1e-12));
  CHECK(ssim(a, b, 1, ny, nx) == doctest::Approx(naive_ssim(a, b, ny, nx)).epsilon(1e-10));
  CHECK(ssim(a, b, 1, ny, nx) == doctest::Approx(ssim(b, a, 1, ny, nx)).epsilon(1e-12));
  CHECK(ssim(a, n, 1, ny, nx) < 20.0);
  CHECK(ssim(a, b, 1, ny, nx) < 100.0);

  std::vector<std::uint8_t> none(ny * nx, 0), left(ny * nx, 0);
  CHECK_THROWS_AS(ssim(a, b, 1, ny, nx, &none), DomainError);
  for (int y = 0; y < ny; ++y)
    for (int x = 0; x < 15; ++x) left[y * nx + x] = 1;
  std::vector<double> c = b;
  for (int y = 0; y < ny; ++y)
    for (int x = 30; x < nx; ++x) c[y * nx + x] = g.uniform(-3, 3);
  CHECK(ssim(a, c, 1, ny, nx, &left) < 100.0);
  CHECK_THROWS_AS(ssim(a, std::vector<double>(5), 1, ny, nx), ShapeError);
  CHECK_THROWS_AS(ssim(std::vector<double>(50), std::vector<double>(50), 1, 5, 10), ShapeError);
}

TEST_CASE("masks") {
  const SliceSet set = make_slice_set({0.5});
  const SliceMasks cyl = cylinder_mask(set);
  const auto& ax = set.plane(Orientation::axial, 1);
  const auto& m = cyl.masks[3 * 0 + 1];
  CHECK(m[std::size_t(ax.rows / 2) * ax.cols + ax.cols / 2] == 1);
  CHECK(m[0] == 0);
  const SliceMasks nasal = nasal_mask(set, default_head_phantom(0.5));
  std::size_t on = 0, all = 0;
  for (const auto& k : nasal.masks) {
    on += std::count(k.begin(), k.end(), 1);
    all += k.size();
  }
  CHECK(on > 0);
  CHECK(on < all / 4);
  CHECK_THROWS_AS(nasal_mask(set, Phantom("x", {Ellipsoid{}})), ConfigError);
}

TEST_CASE("static reconstruction is structurally close to the phantom") {
  const SliceSet set = make_slice_set({0.5});
  const Phantom ph = default_head_phantom(0.5);
  const Trajectory t = build_short_scan(Intrinsics{}, 200, 0.0);
  const ProjectionStack raw = render_projections(ph, t);
  const FdkReconstructor fdk(t, raw);
  const SliceTriplets rec = fdk.reconstruct(set, EffectiveTrajectory(t));
  const SliceTriplets gt = sample_phantom(ph, set);
  const SliceMasks cyl = cylinder_mask(set);
  const double s = ssim(rec, gt, &cyl);
  MESSAGE("static SSIM vs phantom: " << s);
  CHECK(s > 90.0);
  const double e_static = entropy_iqm(rec, BoneWindow::for_phantom(ph)).score;
  std::vector<RigidMotion> ms(t.size());
  for (int i = 60; i < 120; ++i) ms[i].tx = 3.0 * std::sin(3.14159 * (i - 60) / 60.0);
  const SliceTriplets moved = fdk.reconstruct(set, EffectiveTrajectory(t, ms));
  CHECK(ssim(moved, rec, &cyl) < 100.0);
  CHECK(tv_iqm(moved).score > tv_iqm(rec).score);
  MESSAGE("entropy static " << e_static << " moved " << entropy_iqm(moved, BoneWindow::for_phantom(ph)).score);
}

#include "tomofocus/iqm.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "tomofocus/appearance.hpp"
#include "tomofocus/errors.hpp"
#include "tomofocus/parallel.hpp"

namespace tomofocus {

void BoneWindow::validate() const {
  if (!(lower < upper)) throw ConfigError("bone window: lower bound must be below the upper bound");
  if (bins < 2) throw ConfigError("bone window: at least two bins are required");
}

BoneWindow BoneWindow::for_phantom(const Phantom& ph, int bins) {
  const double top = ph.max_density();
  BoneWindow w{0.25 * top, 1.0 * top, bins};
  w.validate();
  return w;
}

IqmValue entropy_iqm(const SliceTriplets& s, const BoneWindow& w) {
  w.validate();
  std::vector<std::uint64_t> hist(w.bins, 0);
  std::uint64_t total = 0;
  const double scale = w.bins / (w.upper - w.lower);
  for (const auto& img : s.slices)
    for (double x : img.data) {
      if (!(x >= w.lower && x <= w.upper)) continue;
      const int b = std::min(w.bins - 1, static_cast<int>((x - w.lower) * scale));
      ++hist[b];
      ++total;
    }
  if (total == 0) throw DegenerateError("no slice value falls inside the bone window");
  double h = 0;
  for (std::uint64_t c : hist) {
    if (c == 0) continue;
    const double p = static_cast<double>(c) / static_cast<double>(total);
    h -= p * std::log2(p);
  }
  return {h, {}, {}, {}};
}

IqmValue tv_iqm(const SliceTriplets& s) {
  double tv = 0;
  for (const auto& img : s.slices)
    for (int r = 0; r < img.rows; ++r)
      for (int c = 0; c < img.cols; ++c) {
        const double dx = c + 1 < img.cols ? img(r, c + 1) - img(r, c) : 0.0;
        const double dy = r + 1 < img.rows ? img(r + 1, c) - img(r, c) : 0.0;
        tv += std::sqrt(dx * dx + dy * dy);
      }
  return {tv, {}, {}, {}};
}

IqmValue oracle_iqm(const EffectiveTrajectory& eff, const MarkerSet& m, RpeMode mode) {
  return {mean_rpe(eff, m, mode), {}, {}, {}};
}

IqmValue learned_iqm(const SliceTriplets& s, const RegressorModel& model) {
  const Prediction p = model.predict(s);
  return {p.r1, p.r2, p.r3, p.r4};
}

std::vector<bool> soft_classify(const std::vector<double>& r2, const std::vector<double>& r3,
                                const std::vector<double>& r4, double threshold) {
  if (r2.size() != r3.size() || r2.size() != r4.size()) throw ShapeError("soft_classify: head lengths differ");
  std::vector<bool> out(r2.size());
  for (std::size_t i = 0; i < r2.size(); ++i) out[i] = 0.5 * r2[i] + 0.25 * r3[i] + 0.25 * r4[i] > threshold;
  return out;
}

namespace {

template <typename Inside>
SliceMasks make_mask(const SliceSet& set, Inside inside) {
  SliceMasks m;
  for (int i = 0; i < 9; ++i) {
    const auto& pl = set.planes[i];
    m.masks[i].assign(pl.pixel_count(), 0);
    for (int r = 0; r < pl.rows; ++r)
      for (int c = 0; c < pl.cols; ++c) m.masks[i][std::size_t(r) * pl.cols + c] = inside(pl.position(r, c)) ? 1 : 0;
  }
  return m;
}

}  // namespace

SliceMasks cylinder_mask(const SliceSet& set) {
  const auto& g = set.volume;
  const double rx = 0.5 * g.spacing * (g.nx - 1), ry = 0.5 * g.spacing * (g.ny - 1);
  const double r = std::min(rx, ry);
  return make_mask(set, [&](const Vec3& p) { return p.x() * p.x() + p.y() * p.y() <= r * r; });
}

SliceMasks sphere_mask(const SliceSet& set, const Vec3& center, double radius) {
  return make_mask(set, [&](const Vec3& p) { return (p - center).squaredNorm() <= radius * radius; });
}

SliceMasks nasal_mask(const SliceSet& set, const Phantom& ph, double margin) {
  Vec3 lo = Vec3::Constant(1e300), hi = Vec3::Constant(-1e300);
  bool any = false;
  for (const auto& e : ph.ellipsoids())
    if (e.label.rfind("nasal", 0) == 0) {
      const double r = e.semi_axes.maxCoeff();
      lo = lo.cwiseMin(e.center - Vec3::Constant(r + margin));
      hi = hi.cwiseMax(e.center + Vec3::Constant(r + margin));
      any = true;
    }
  if (!any) throw ConfigError("phantom '" + ph.name() + "' has no nasal structures");
  return make_mask(set, [&](const Vec3& p) { return (p.array() >= lo.array()).all() && (p.array() <= hi.array()).all(); });
}

namespace {

std::vector<double> gaussian_taps(const SsimOptions& opt) {
  if (opt.taps < 1 || opt.taps % 2 == 0) throw ConfigError("SSIM window needs an odd tap count");
  std::vector<double> w(opt.taps);
  const int h = opt.taps / 2;
  double s = 0;
  for (int i = 0; i < opt.taps; ++i) {
    const double x = i - h;
    w[i] = std::exp(-0.5 * x * x / (opt.sigma * opt.sigma));
    s += w[i];
  }
  for (auto& x : w) x /= s;
  return w;
}

struct Dims {
  int nz, ny, nx;
  std::size_t size() const { return std::size_t(nz) * ny * nx; }
};

// Valid-mode separable filtering along every axis longer than 1.
std::vector<double> filter_valid(const std::vector<double>& in, Dims d, const std::vector<double>& w, Dims& out) {
  const int t = static_cast<int>(w.size());
  std::vector<double> cur = in;
  Dims cd = d;
  if (cd.nx > 1) {
    Dims nd{cd.nz, cd.ny, cd.nx - t + 1};
    std::vector<double> next(nd.size(), 0.0);
    for (int z = 0; z < cd.nz; ++z)
      for (int y = 0; y < cd.ny; ++y) {
        const double* src = cur.data() + (std::size_t(z) * cd.ny + y) * cd.nx;
        double* dst = next.data() + (std::size_t(z) * nd.ny + y) * nd.nx;
        for (int x = 0; x < nd.nx; ++x) {
          double s = 0;
          for (int k = 0; k < t; ++k) s += w[k] * src[x + k];
          dst[x] = s;
        }
      }
    cur.swap(next);
    cd = nd;
  }
  if (cd.ny > 1) {
    Dims nd{cd.nz, cd.ny - t + 1, cd.nx};
    std::vector<double> next(nd.size(), 0.0);
    for (int z = 0; z < cd.nz; ++z)
      for (int y = 0; y < nd.ny; ++y)
        for (int k = 0; k < t; ++k) {
          const double* src = cur.data() + (std::size_t(z) * cd.ny + y + k) * cd.nx;
          double* dst = next.data() + (std::size_t(z) * nd.ny + y) * nd.nx;
          for (int x = 0; x < nd.nx; ++x) dst[x] += w[k] * src[x];
        }
    cur.swap(next);
    cd = nd;
  }
  if (cd.nz > 1) {
    Dims nd{cd.nz - t + 1, cd.ny, cd.nx};
    std::vector<double> next(nd.size(), 0.0);
    const std::size_t plane = std::size_t(cd.ny) * cd.nx;
    for (int z = 0; z < nd.nz; ++z)
      for (int k = 0; k < t; ++k) {
        const double* src = cur.data() + std::size_t(z + k) * plane;
        double* dst = next.data() + std::size_t(z) * plane;
        for (std::size_t i = 0; i < plane; ++i) dst[i] += w[k] * src[i];
      }
    cur.swap(next);
    cd = nd;
  }
  out = cd;
  return cur;
}

struct SsimSum {
  double sum = 0;
  std::size_t count = 0;
};

SsimSum ssim_sum(const std::vector<double>& a, const std::vector<double>& b, Dims d, double range,
                 const std::vector<std::uint8_t>* mask, const SsimOptions& opt) {
  if (a.size() != d.size() || b.size() != d.size()) throw ShapeError("SSIM inputs differ in shape");
  if (mask && mask->size() != d.size()) throw ShapeError("SSIM mask shape mismatch");
  const auto w = gaussian_taps(opt);
  for (int n : {d.nz, d.ny, d.nx})
    if (n > 1 && n < opt.taps) throw ShapeError("image axis shorter than the SSIM window");

  std::vector<double> aa(a.size()), bb(a.size()), ab(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    aa[i] = a[i] * a[i];
    bb[i] = b[i] * b[i];
    ab[i] = a[i] * b[i];
  }
  Dims vd{};
  const auto ma = filter_valid(a, d, w, vd), mb = filter_valid(b, d, w, vd);
  const auto saa = filter_valid(aa, d, w, vd), sbb = filter_valid(bb, d, w, vd), sab = filter_valid(ab, d, w, vd);
  const double c1 = (opt.k1 * range) * (opt.k1 * range), c2 = (opt.k2 * range) * (opt.k2 * range);
  const int h = opt.taps / 2;
  const int oz = d.nz > 1 ? h : 0, oy = d.ny > 1 ? h : 0, ox = d.nx > 1 ? h : 0;

  SsimSum out;
  for (int z = 0; z < vd.nz; ++z)
    for (int y = 0; y < vd.ny; ++y)
      for (int x = 0; x < vd.nx; ++x) {
        if (mask) {
          const std::size_t centre = (std::size_t(z + oz) * d.ny + (y + oy)) * d.nx + (x + ox);
          if (!(*mask)[centre]) continue;
        }
        const std::size_t i = (std::size_t(z) * vd.ny + y) * vd.nx + x;
        const double mua = ma[i], mub = mb[i];
        const double va = saa[i] - mua * mua, vb = sbb[i] - mub * mub, cov = sab[i] - mua * mub;
        out.sum += ((2 * mua * mub + c1) * (2 * cov + c2)) / ((mua * mua + mub * mub + c1) * (va + vb + c2));
        ++out.count;
      }
  return out;
}

double joint_range(const std::vector<const std::vector<double>*>& xs) {
  double lo = 1e300, hi = -1e300;
  for (const auto* v : xs)
    for (double x : *v) {
      lo = std::min(lo, x);
      hi = std::max(hi, x);
    }
  const double r = hi - lo;
  return r > 0 ? r : 1.0;
}

}  // namespace

double ssim(const std::vector<double>& a, const std::vector<double>& b, int nz, int ny, int nx,
            const std::vector<std::uint8_t>* mask, const SsimOptions& opt) {
  const double range = joint_range({&a, &b});
  const SsimSum s = ssim_sum(a, b, Dims{nz, ny, nx}, range, mask, opt);
  if (s.count == 0) throw DomainError("SSIM: no window centre inside the mask");
  return 100.0 * s.sum / static_cast<double>(s.count);
}

double ssim(const SliceTriplets& a, const SliceTriplets& b, const SliceMasks* mask, const SsimOptions& opt) {
  if (!a.same_shape(b)) throw ShapeError("SSIM: slice shapes differ");
  std::vector<const std::vector<double>*> all;
  for (int i = 0; i < 9; ++i) {
    all.push_back(&a.slices[i].data);
    all.push_back(&b.slices[i].data);
  }
  const double range = joint_range(all);
  SsimSum total;
  for (int i = 0; i < 9; ++i) {
    const auto& sa = a.slices[i];
    const SsimSum s = ssim_sum(sa.data, b.slices[i].data, Dims{1, sa.rows, sa.cols}, range,
                               mask ? &mask->masks[i] : nullptr, opt);
    total.sum += s.sum;
    total.count += s.count;
  }
  if (total.count == 0) throw DomainError("SSIM: no window centre inside the mask");
  return 100.0 * total.sum / static_cast<double>(total.count);
}

double ssim(const Volume& a, const Volume& b, const SsimOptions& opt) {
  if (a.grid.nx != b.grid.nx || a.grid.ny != b.grid.ny || a.grid.nz != b.grid.nz)
    throw ShapeError("SSIM: volume shapes differ");
  const std::vector<double> da(a.data.begin(), a.data.end()), db(b.data.begin(), b.data.end());
  return ssim(da, db, a.grid.nz, a.grid.ny, a.grid.nx, nullptr, opt);
}

}  // namespace tomofocus

#include "tomofocus/fdk.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <mutex>
#include <numbers>

#include "tomofocus/errors.hpp"
#include "tomofocus/parallel.hpp"

namespace tomofocus {

namespace {

constexpr double kPi = std::numbers::pi;
std::atomic<std::uint64_t> g_filter_runs{0};
std::mutex g_fftw_planner;

}  // namespace

std::string_view orientation_label(Orientation o) {
  switch (o) {
    case Orientation::axial: return "ax";
    case Orientation::coronal: return "co";
    case Orientation::sagittal: return "sa";
  }
  return "?";
}

std::size_t SliceSet::pixel_count() const {
  std::size_t n = 0;
  for (const auto& p : planes) n += p.pixel_count();
  return n;
}

std::size_t SliceSet::offset(int plane_index) const {
  std::size_t n = 0;
  for (int i = 0; i < plane_index; ++i) n += planes[i].pixel_count();
  return n;
}

SliceSet make_slice_set(const SliceLayout& layout) {
  if (!(layout.scale > 0) || !(layout.spacing > 0)) throw ConfigError("slice layout: scale and spacing must be positive");
  auto dim = [&](int n) { return std::max(2, static_cast<int>(std::lround(n * layout.scale))); };
  const int nx = dim(216), ny = dim(256), nz = dim(70);
  SliceSet set;
  set.volume = VoxelGrid::centered(nx, ny, nz, layout.spacing);
  const double s = layout.spacing;
  const Vec3 lo = set.volume.origin;
  const Vec3 extent = s * Vec3(nx - 1, ny - 1, nz - 1);
  const Vec3 ex(s, 0, 0), ey(0, s, 0), ez(0, 0, s);
  for (int k = 0; k < 3; ++k) {
    const double f = layout.offset_fraction * (k - 1);
    // axial: rows along x, columns along y, fixed z
    set.planes[k] = {Orientation::axial, nx, ny, Vec3(lo.x(), lo.y(), f * extent.z()), ex, ey};
    // coronal: rows along z, columns along x, fixed y
    set.planes[3 + k] = {Orientation::coronal, nz, nx, Vec3(lo.x(), f * extent.y(), lo.z()), ez, ex};
    // sagittal: rows along z, columns along y, fixed x
    set.planes[6 + k] = {Orientation::sagittal, nz, ny, Vec3(f * extent.x(), lo.y(), lo.z()), ez, ey};
  }
  return set;
}

SliceTriplets SliceTriplets::zeros(const SliceSet& set) {
  SliceTriplets t;
  for (int i = 0; i < 9; ++i) {
    t.slices[i].rows = set.planes[i].rows;
    t.slices[i].cols = set.planes[i].cols;
    t.slices[i].data.assign(set.planes[i].pixel_count(), 0.0);
  }
  return t;
}

std::size_t SliceTriplets::pixel_count() const {
  std::size_t n = 0;
  for (const auto& s : slices) n += s.data.size();
  return n;
}

bool SliceTriplets::same_shape(const SliceTriplets& other) const {
  for (int i = 0; i < 9; ++i)
    if (slices[i].rows != other.slices[i].rows || slices[i].cols != other.slices[i].cols) return false;
  return true;
}

SliceTriplets sample_phantom(const Phantom& ph, const SliceSet& set) {
  SliceTriplets out = SliceTriplets::zeros(set);
  for (int i = 0; i < 9; ++i) {
    const auto& pl = set.planes[i];
    for (int r = 0; r < pl.rows; ++r)
      for (int c = 0; c < pl.cols; ++c) out.slices[i](r, c) = phantom_value(ph, pl.position(r, c));
  }
  return out;
}

FilteredStack FilteredStack::from(const ProjectionStack& raw) {
  FilteredStack s;
  s.n_views = raw.n_views;
  s.nv = raw.nv;
  s.nu = raw.nu;
  s.data = raw.data;
  return s;
}

std::uint64_t FilteredStack::hash() const {
  std::uint64_t h = 1469598103934665603ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
  for (std::size_t i = 0; i < data.size() * sizeof(float); ++i) {
    h ^= bytes[i];
    h *= 1099511628211ULL;
  }
  return h;
}

FilteredStack cosine_weight(FilteredStack stack, const Intrinsics& k) {
  if (stack.cosine_weighted) throw StateError("projections are already cosine weighted");
  if (stack.nu != k.nu || stack.nv != k.nv) throw ShapeError("projection size does not match the detector");
  std::vector<float> w(std::size_t(k.nv) * k.nu);
  for (int v = 0; v < k.nv; ++v)
    for (int u = 0; u < k.nu; ++u) {
      const double uh = (u - k.cu) * k.du, vh = (v - k.cv) * k.dv;
      w[std::size_t(v) * k.nu + u] = static_cast<float>(k.sdd / std::sqrt(k.sdd * k.sdd + uh * uh + vh * vh));
    }
  parallel_for(stack.n_views, [&](std::size_t b, std::size_t e) {
    for (std::size_t i = b; i < e; ++i) {
      float* p = stack.view(static_cast<int>(i));
      for (std::size_t j = 0; j < w.size(); ++j) p[j] *= w[j];
    }
  });
  stack.cosine_weighted = true;
  return stack;
}

double parker_weight(double beta, double gamma, double delta) {
  double w;
  if (beta < 0) {
    w = 0.0;
  } else if (beta < 2.0 * (delta - gamma)) {
    const double s = std::sin(0.25 * kPi * beta / (delta - gamma));
    w = s * s;
  } else if (beta <= kPi - 2.0 * gamma) {
    w = 1.0;
  } else if (beta <= kPi + 2.0 * delta) {
    const double s = std::sin(0.25 * kPi * (kPi + 2.0 * delta - beta) / (delta + gamma));
    w = s * s;
  } else {
    w = 0.0;
  }
  return std::clamp(w, 0.0, 1.0);
}

double parker_gamma(const Intrinsics& k, double u) {
  // Column u > cu looks along +e_u; with the gantry turning about +z that ray
  // is measured again from beta + pi + 2 gamma when gamma carries this sign.
  return -std::atan((u - k.cu) * k.du / k.sdd);
}

Eigen::MatrixXd parker_weights(const Trajectory& traj) {
  const auto& k = traj.intrinsics();
  const double span = traj.angular_span_deg();
  const double needed = 180.0 + k.fan_angle_deg();
  if (span < needed - 1e-9)
    throw ConfigError("angular span " + std::to_string(span) + " deg is shorter than a short scan (" +
                      std::to_string(needed) + " deg)");
  const double delta = 0.5 * (span * kPi / 180.0 - kPi);
  Eigen::MatrixXd w(traj.size(), k.nu);
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const double beta = (traj[i].angle_deg - traj.start_angle_deg()) * kPi / 180.0;
    for (int u = 0; u < k.nu; ++u) w(i, u) = parker_weight(beta, parker_gamma(k, u), delta);
  }
  return w;
}

FilteredStack apply_parker(FilteredStack stack, const Eigen::MatrixXd& weights) {
  if (stack.parker_weighted) throw StateError("projections are already Parker weighted");
  if (weights.rows() != stack.n_views || weights.cols() != stack.nu) throw ShapeError("Parker weight shape mismatch");
  for (int i = 0; i < stack.n_views; ++i) {
    float* p = stack.view(i);
    for (int v = 0; v < stack.nv; ++v)
      for (int u = 0; u < stack.nu; ++u) p[std::size_t(v) * stack.nu + u] *= static_cast<float>(weights(i, u));
  }
  stack.parker_weighted = true;
  return stack;
}

ViewRange parker_safe_range(const Trajectory& traj, double threshold) {
  const Eigen::MatrixXd w = parker_weights(traj);
  ViewRange r{-1, -2};
  for (int i = 0; i < w.rows(); ++i)
    if (w.row(i).mean() > threshold) {
      if (r.first < 0) r.first = i;
      r.last = i;
    }
  if (r.first < 0) return ViewRange{0, -1};
  return r;
}

struct RampFilter::Plans {
  fftw_plan forward = nullptr;
  fftw_plan backward = nullptr;
  int length = 0;
};

double RampFilter::kernel(int n, double du) {
  if (n == 0) return 1.0 / (8.0 * du * du);
  if (n % 2 == 0) return 0.0;
  return -1.0 / (2.0 * kPi * kPi * double(n) * double(n) * du * du);
}

RampFilter::RampFilter(int nu, double du) : nu_(nu), du_(du), plans_(std::make_unique<Plans>()) {
  if (nu < 2 || !(du > 0)) throw ConfigError("ramp filter needs nu >= 2 and positive pitch");
  length_ = 1;
  while (length_ < 2 * nu) length_ *= 2;
  plans_->length = length_;
  const int half = length_ / 2 + 1;

  double* real = fftw_alloc_real(length_);
  fftw_complex* spec = fftw_alloc_complex(half);
  {
    std::lock_guard lock(g_fftw_planner);
    plans_->forward = fftw_plan_dft_r2c_1d(length_, real, spec, FFTW_ESTIMATE);
    plans_->backward = fftw_plan_dft_c2r_1d(length_, spec, real, FFTW_ESTIMATE);
  }
  for (int i = 0; i < length_; ++i) {
    const int n = i < length_ / 2 ? i : i - length_;
    real[i] = kernel(n, du);
  }
  fftw_execute_dft_r2c(plans_->forward, real, spec);
  transfer_.resize(half);
  // Convolution integral: scale by the sample spacing.
  for (int k = 0; k < half; ++k) transfer_[k] = spec[k][0] * du;
  fftw_free(real);
  fftw_free(spec);
}

RampFilter::~RampFilter() {
  std::lock_guard lock(g_fftw_planner);
  if (plans_->forward) fftw_destroy_plan(plans_->forward);
  if (plans_->backward) fftw_destroy_plan(plans_->backward);
}

namespace {

template <typename T>
void run_filter(const std::vector<double>& transfer, fftw_plan fwd, fftw_plan bwd, int length, int nu, const T* in,
                T* out) {
  const int half = length / 2 + 1;
  double* real = fftw_alloc_real(length);
  fftw_complex* spec = fftw_alloc_complex(half);
  for (int i = 0; i < nu; ++i) real[i] = in[i];
  for (int i = nu; i < length; ++i) real[i] = 0.0;
  fftw_execute_dft_r2c(fwd, real, spec);
  for (int k = 0; k < half; ++k) {
    spec[k][0] *= transfer[k];
    spec[k][1] *= transfer[k];
  }
  fftw_execute_dft_c2r(bwd, spec, real);
  const double norm = 1.0 / length;
  for (int i = 0; i < nu; ++i) out[i] = static_cast<T>(real[i] * norm);
  fftw_free(real);
  fftw_free(spec);
}

}  // namespace

void RampFilter::filter_row(const float* in, float* out) const {
  run_filter(transfer_, plans_->forward, plans_->backward, length_, nu_, in, out);
}

void RampFilter::filter_row(const double* in, double* out) const {
  run_filter(transfer_, plans_->forward, plans_->backward, length_, nu_, in, out);
}

FilteredStack ramp_filter(FilteredStack stack, const Intrinsics& k) {
  if (!stack.cosine_weighted) throw StateError("ramp filtering expects cosine weighted projections");
  if (stack.ramp_filtered) throw StateError("projections are already ramp filtered");
  const RampFilter filter(stack.nu, k.du);
  parallel_for(stack.n_views, [&](std::size_t b, std::size_t e) {
    std::vector<float> row(stack.nu);
    for (std::size_t i = b; i < e; ++i) {
      float* p = stack.view(static_cast<int>(i));
      for (int v = 0; v < stack.nv; ++v) {
        float* r = p + std::size_t(v) * stack.nu;
        filter.filter_row(r, row.data());
        std::copy(row.begin(), row.end(), r);
      }
    }
  });
  stack.ramp_filtered = true;
  return stack;
}

SliceTriplets SliceAccumulator::to_triplets(const SliceSet& set) const {
  SliceTriplets t = SliceTriplets::zeros(set);
  std::size_t off = 0;
  for (int i = 0; i < 9; ++i) {
    std::copy_n(values.begin() + off, t.slices[i].data.size(), t.slices[i].data.begin());
    off += t.slices[i].data.size();
  }
  return t;
}

namespace {

// Short-scan angular integration: unit-sum redundancy weights count every ray
// once while the |eta|/2 ramp assumes double coverage, hence the factor 2;
// sdd/sid converts the detector-plane convolution to the isocenter plane.
std::vector<double> short_scan_view_scale(const Trajectory& traj) {
  const auto& k = traj.intrinsics();
  const std::size_t n = traj.size();
  std::vector<double> s(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double lo = traj[i == 0 ? 0 : i - 1].angle_deg;
    const double hi = traj[i + 1 == n ? n - 1 : i + 1].angle_deg;
    const double dbeta = 0.5 * (hi - lo) * kPi / 180.0;
    s[i] = 2.0 * (k.sdd / k.sid) * dbeta;
  }
  return s;
}

struct RowTask {
  int plane;
  int row;
  std::size_t offset;
};

void accumulate_views(const SliceSet& set, const std::vector<ProjectionMatrix>& geometry, const FilteredStack& y,
                      const std::vector<double>& view_scale, ViewRange views, SliceAccumulator& acc, double sign) {
  if (!y.ready()) throw StateError("back-projection needs cosine, Parker and ramp weighted projections");
  if (geometry.size() != static_cast<std::size_t>(y.n_views) || view_scale.size() != geometry.size())
    throw ShapeError("geometry and projection view counts differ");
  if (acc.values.size() != set.pixel_count()) acc.values.assign(set.pixel_count(), 0.0);
  if (views.size() <= 0) return;
  if (views.first < 0 || views.last >= y.n_views) throw ShapeError("view range outside the projection stack");

  std::vector<RowTask> tasks;
  std::size_t off = 0;
  for (int p = 0; p < 9; ++p) {
    for (int r = 0; r < set.planes[p].rows; ++r) tasks.push_back({p, r, off + std::size_t(r) * set.planes[p].cols});
    off += set.planes[p].pixel_count();
  }

  const int nu = y.nu, nv = y.nv;
  const double umax = nu - 1, vmax = nv - 1;
  parallel_for(tasks.size(), [&](std::size_t tb, std::size_t te) {
    for (int i = views.first; i <= views.last; ++i) {
      const Mat34& pm = geometry[i].matrix();
      const double w0 = pm(2, 3);
      const double scale = sign * view_scale[i];
      const float* img = y.view(i);
      for (std::size_t t = tb; t < te; ++t) {
        const RowTask& task = tasks[t];
        const SlicePlane& pl = set.planes[task.plane];
        const Vec3 start = pl.origin + task.row * pl.row_step;
        const Eigen::Vector3d h0 = pm.block<3, 3>(0, 0) * start + pm.col(3);
        const Eigen::Vector3d hc = pm.block<3, 3>(0, 0) * pl.col_step;
        double x = h0(0), yy = h0(1), w = h0(2);
        double* out = acc.values.data() + task.offset;
        for (int c = 0; c < pl.cols; ++c, x += hc(0), yy += hc(1), w += hc(2)) {
          if (!(w > 1e-9)) continue;
          const double inv = 1.0 / w;
          const double u = x * inv, v = yy * inv;
          if (!(u >= 0 && u <= umax && v >= 0 && v <= vmax)) continue;
          const int iu = std::min(static_cast<int>(u), nu - 2);
          const int iv = std::min(static_cast<int>(v), nv - 2);
          const double fu = u - iu, fv = v - iv;
          const float* p0 = img + std::size_t(iv) * nu + iu;
          const float* p1 = p0 + nu;
          const double val = (1.0 - fv) * ((1.0 - fu) * p0[0] + fu * p0[1]) + fv * ((1.0 - fu) * p1[0] + fu * p1[1]);
          const double uw = w0 * inv;
          out[c] += scale * uw * uw * val;
        }
      }
    }
  });
}

}  // namespace

FdkReconstructor::FdkReconstructor(const Trajectory& base, const ProjectionStack& raw) : base_(base) {
  const auto& k = base.intrinsics();
  if (raw.n_views != static_cast<int>(base.size()) || raw.nu != k.nu || raw.nv != k.nv)
    throw ShapeError("projection stack does not match the trajectory");
  FilteredStack s = cosine_weight(FilteredStack::from(raw), k);
  s = apply_parker(std::move(s), parker_weights(base));
  filtered_ = ramp_filter(std::move(s), k);
  view_scale_ = short_scan_view_scale(base);
  ++g_filter_runs;
}

std::uint64_t FdkReconstructor::filter_runs() { return g_filter_runs.load(); }

void FdkReconstructor::accumulate(const SliceSet& set, const std::vector<ProjectionMatrix>& geometry, ViewRange views,
                                  SliceAccumulator& acc, double sign) const {
  accumulate_views(set, geometry, filtered_, view_scale_, views, acc, sign);
}

SliceTriplets FdkReconstructor::reconstruct(const SliceSet& set, const std::vector<ProjectionMatrix>& geometry) const {
  SliceAccumulator acc;
  accumulate(set, geometry, ViewRange{0, filtered_.n_views - 1}, acc);
  return acc.to_triplets(set);
}

SliceTriplets FdkReconstructor::reconstruct(const SliceSet& set, const EffectiveTrajectory& eff) const {
  if (eff.size() != base_.size()) throw ShapeError("effective trajectory view count differs from the data");
  return reconstruct(set, eff.composed());
}

SliceTriplets backproject(const SliceSet& set, const EffectiveTrajectory& eff, const FilteredStack& y,
                          const std::vector<double>& view_scale) {
  SliceAccumulator acc;
  accumulate_views(set, eff.composed(), y, view_scale, ViewRange{0, y.n_views - 1}, acc, 1.0);
  return acc.to_triplets(set);
}

SliceTriplets reconstruct(const SliceSet& set, const EffectiveTrajectory& eff, const ProjectionStack& raw) {
  return FdkReconstructor(eff.base(), raw).reconstruct(set, eff);
}

}  // namespace tomofocus

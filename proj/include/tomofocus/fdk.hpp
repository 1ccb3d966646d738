#pragma once

#include <Eigen/Dense>
#include <array>
#include <atomic>
#include <cstdint>
#include <memory>
#include <string_view>
#include <vector>

#include "tomofocus/geometry.hpp"
#include "tomofocus/motion_model.hpp"
#include "tomofocus/phantom.hpp"

namespace tomofocus {

enum class Orientation : int { axial = 0, coronal = 1, sagittal = 2 };
std::string_view orientation_label(Orientation o);  // "ax", "co", "sa"

// One planar slice: pixel (r, c) sits at origin + r * row_step + c * col_step.
struct SlicePlane {
  Orientation orientation = Orientation::axial;
  int rows = 0, cols = 0;
  Vec3 origin = Vec3::Zero();
  Vec3 row_step = Vec3::Zero();
  Vec3 col_step = Vec3::Zero();
  std::size_t pixel_count() const { return std::size_t(rows) * cols; }
  Vec3 position(int r, int c) const { return origin + r * row_step + c * col_step; }
};

// Nine slices, three per orientation, inside a reference volume.
struct SliceSet {
  std::array<SlicePlane, 9> planes;
  VoxelGrid volume;  // the volume the slices are taken from

  const SlicePlane& plane(Orientation o, int k) const { return planes[3 * static_cast<int>(o) + k]; }
  std::size_t pixel_count() const;
  std::size_t offset(int plane_index) const;  // start of a plane in a flat buffer
};

// Slice dimensions scale the reference layout (axial 216x256, coronal 70x216,
// sagittal 70x256 at 0.84 mm) by `scale`; spacing stays fixed. Triplets sit at
// -20 %, 0 and +20 % of the volume extent along each slice normal.
struct SliceLayout {
  double scale = 0.5;
  double spacing = 0.84;
  double offset_fraction = 0.2;
};
SliceSet make_slice_set(const SliceLayout& layout);

struct SliceImage {
  int rows = 0, cols = 0;
  std::vector<double> data;
  double operator()(int r, int c) const { return data[std::size_t(r) * cols + c]; }
  double& operator()(int r, int c) { return data[std::size_t(r) * cols + c]; }
};

struct SliceTriplets {
  std::array<SliceImage, 9> slices;

  const SliceImage& at(Orientation o, int k) const { return slices[3 * static_cast<int>(o) + k]; }
  SliceImage& at(Orientation o, int k) { return slices[3 * static_cast<int>(o) + k]; }
  static SliceTriplets zeros(const SliceSet& set);
  std::size_t pixel_count() const;
  bool same_shape(const SliceTriplets& other) const;
};

// Ground truth sampled at the slice coordinates.
SliceTriplets sample_phantom(const Phantom& ph, const SliceSet& set);

// Weighted / filtered projections Y'. Flags record which steps were applied.
struct FilteredStack {
  int n_views = 0, nv = 0, nu = 0;
  std::vector<float> data;
  bool cosine_weighted = false;
  bool parker_weighted = false;
  bool ramp_filtered = false;

  static FilteredStack from(const ProjectionStack& raw);
  const float* view(int i) const { return data.data() + std::size_t(i) * nv * nu; }
  float* view(int i) { return data.data() + std::size_t(i) * nv * nu; }
  bool ready() const { return cosine_weighted && parker_weighted && ramp_filtered; }
  std::uint64_t hash() const;
};

FilteredStack cosine_weight(FilteredStack stack, const Intrinsics& k);

// Parker redundancy weight for scan angle beta (from the scan start) and fan
// angle gamma, both in radians; `delta` is half the angular excess over pi.
double parker_weight(double beta, double gamma, double delta);
// Fan angle of detector column u in the convention of parker_weight().
double parker_gamma(const Intrinsics& k, double u);
// N x nu weights (independent of v). Throws ConfigError if the span is
// shorter than 180 degrees plus the fan angle.
Eigen::MatrixXd parker_weights(const Trajectory& traj);
FilteredStack apply_parker(FilteredStack stack, const Eigen::MatrixXd& weights);
// Views whose mean weight over the detector exceeds `threshold`.
ViewRange parker_safe_range(const Trajectory& traj, double threshold = 0.99);

// Row-wise convolution with the band-limited |eta|/2 ramp. The discrete
// transfer function is the DFT of the sampled band-limited kernel on a zero
// padded grid of length >= 2 nu, so the impulse response equals that kernel.
class RampFilter {
 public:
  RampFilter(int nu, double du);
  ~RampFilter();
  RampFilter(const RampFilter&) = delete;
  RampFilter& operator=(const RampFilter&) = delete;

  int padded_length() const { return length_; }
  // Sampled kernel value at integer lag n (units 1/mm^2).
  static double kernel(int n, double du);
  // Transfer function at DFT bin k of the padded grid.
  double response(int k) const { return transfer_[k]; }
  void filter_row(const float* in, float* out) const;
  void filter_row(const double* in, double* out) const;

 private:
  struct Plans;
  int nu_;
  double du_;
  int length_;
  std::vector<double> transfer_;
  std::unique_ptr<Plans> plans_;
};

FilteredStack ramp_filter(FilteredStack stack, const Intrinsics& k);

// Accumulated back-projection values of all nine slices in one flat buffer.
struct SliceAccumulator {
  std::vector<double> values;
  SliceTriplets to_triplets(const SliceSet& set) const;
};

// Filtered projections + short-scan normalization, computed once per data
// set; back-projection can then be repeated for any geometry.
class FdkReconstructor {
 public:
  FdkReconstructor(const Trajectory& base, const ProjectionStack& raw);

  const FilteredStack& filtered() const { return filtered_; }
  const Trajectory& base() const { return base_; }
  // Process-wide count of filtering passes (cosine + Parker + ramp).
  static std::uint64_t filter_runs();

  SliceTriplets reconstruct(const SliceSet& set, const EffectiveTrajectory& eff) const;
  SliceTriplets reconstruct(const SliceSet& set, const std::vector<ProjectionMatrix>& geometry) const;
  // Adds `sign` times the contribution of views in `views` to acc.
  void accumulate(const SliceSet& set, const std::vector<ProjectionMatrix>& geometry, ViewRange views,
                  SliceAccumulator& acc, double sign = 1.0) const;
  // Per-view factor of the discrete angular integral.
  double view_scale(int i) const { return view_scale_[i]; }

 private:
  Trajectory base_;
  FilteredStack filtered_;
  std::vector<double> view_scale_;
};

SliceTriplets backproject(const SliceSet& set, const EffectiveTrajectory& eff, const FilteredStack& y,
                          const std::vector<double>& view_scale);
SliceTriplets reconstruct(const SliceSet& set, const EffectiveTrajectory& eff, const ProjectionStack& raw);

}  // namespace tomofocus

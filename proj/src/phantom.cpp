#include "tomofocus/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "tomofocus/errors.hpp"
#include "tomofocus/parallel.hpp"

namespace tomofocus {

namespace {

// World -> unit-sphere map of one ellipsoid.
struct Prepared {
  Mat3 to_unit;
  Vec3 center;
  double density;
};

Prepared prepare(const Ellipsoid& e) {
  const Mat3 r = motion_to_matrix(RigidMotion{0, 0, 0, e.rotation.rx, e.rotation.ry, e.rotation.rz}).block<3, 3>(0, 0);
  const Mat3 inv_axes = e.semi_axes.cwiseInverse().asDiagonal();
  return {inv_axes * r.transpose(), e.center, e.density};
}

double prepared_chord(const Prepared& e, const Vec3& src, const Vec3& dir) {
  const Vec3 p = e.to_unit * (src - e.center);
  const Vec3 d = e.to_unit * dir;
  const double a = d.squaredNorm();
  const double b = p.dot(d);
  const double c = p.squaredNorm() - 1.0;
  const double disc = b * b - a * c;
  if (disc <= 0) return 0.0;
  return 2.0 * std::sqrt(disc) / a;
}

std::vector<Prepared> prepare_all(const Phantom& ph) {
  std::vector<Prepared> out;
  for (const auto& e : ph.ellipsoids()) out.push_back(prepare(e));
  for (const auto& e : ph.metal()) out.push_back(prepare(e));
  return out;
}

double integrate(const std::vector<Prepared>& prepared, const Vec3& src, const Vec3& dir) {
  double sum = 0.0;
  for (const auto& e : prepared) {
    const double len = prepared_chord(e, src, dir);
    if (len > 0) sum += e.density * len;
  }
  return sum;
}

Ellipsoid make(std::string label, Vec3 c, Vec3 axes, double density, RigidMotion rot = {}) {
  Ellipsoid e;
  e.label = std::move(label);
  e.center = c;
  e.semi_axes = axes;
  e.density = density;
  e.rotation = rot;
  return e;
}

RigidMotion rz(double deg) {
  RigidMotion m;
  m.rz = deg;
  return m;
}

// Full-size head layout (mm); scaled on construction.
std::vector<Ellipsoid> head_layout() {
  return {
      make("scalp", {0, 0, 0}, {80, 100, 116}, 0.1),
      make("skull", {0, 0, 0}, {76, 96, 110}, 0.9),
      make("brain", {0, 0, 0}, {70, 90, 104}, -0.8),
      make("ventricle_l", {-12, 5, 10}, {8, 25, 15}, -0.05, rz(15)),
      make("ventricle_r", {12, 5, 10}, {8, 25, 15}, -0.05, rz(-15)),
      make("lesion_a", {25, -30, 0}, {10, 8, 8}, 0.08),
      make("lesion_b", {-30, 20, -10}, {6, 6, 6}, 0.1),
      make("lesion_c", {0, -50, 15}, {12, 6, 8}, 0.06),
      make("temporal_l", {-60, -10, -5}, {8, 12, 9}, 0.55),
      make("temporal_r", {60, -10, -5}, {8, 12, 9}, 0.55),
      make("nasal_septum", {0, 84, -20}, {4, 9, 18}, 0.5),
      make("nasal_l", {-14, 78, -10}, {5, 6, 10}, 0.4, rz(20)),
      make("nasal_r", {14, 78, -10}, {5, 6, 10}, 0.4, rz(-20)),
      make("calcification", {40, 40, 5}, {5, 4, 6}, 0.7),
  };
}

std::vector<Ellipsoid> metal_layout() {
  return {
      make("metal_a", {-15, 70, -12}, {2.5, 2.5, 2.5}, 4.0),
      make("metal_b", {18, 66, -8}, {2.5, 2.5, 2.5}, 4.0),
  };
}

Ellipsoid scaled(Ellipsoid e, double s) {
  e.center *= s;
  e.semi_axes *= s;
  return e;
}

}  // namespace

void Ellipsoid::validate() const {
  if (!(semi_axes.minCoeff() > 0)) throw ConfigError("ellipsoid '" + label + "': semi-axes must be positive");
  if (!center.allFinite() || !std::isfinite(density)) throw ConfigError("ellipsoid '" + label + "': non-finite value");
}

double Ellipsoid::volume() const { return 4.0 / 3.0 * std::numbers::pi * semi_axes.prod(); }

bool Ellipsoid::contains(const Vec3& p) const {
  const Prepared e = prepare(*this);
  return (e.to_unit * (p - e.center)).squaredNorm() <= 1.0;
}

double Ellipsoid::chord(const Vec3& src, const Vec3& dir) const { return prepared_chord(prepare(*this), src, dir); }

Phantom::Phantom(std::string name, std::vector<Ellipsoid> ellipsoids, std::vector<Ellipsoid> metal)
    : name_(std::move(name)), ellipsoids_(std::move(ellipsoids)), metal_(std::move(metal)) {
  if (ellipsoids_.empty() && metal_.empty()) throw ConfigError("phantom has no ellipsoids");
  for_each([](const Ellipsoid& e) { e.validate(); });
}

double Phantom::bounding_radius() const {
  double r = 0;
  for_each([&](const Ellipsoid& e) { r = std::max(r, e.center.norm() + e.semi_axes.maxCoeff()); });
  return r;
}

double Phantom::max_density() const {
  // Probe centres and the points just inside each axis tip; this catches
  // shells (skull) as well as solid inserts.
  double best = 0;
  for_each([&](const Ellipsoid& e) {
    const Mat3 r = motion_to_matrix(e.rotation).block<3, 3>(0, 0);
    best = std::max(best, phantom_value(*this, e.center));
    for (int k = 0; k < 3; ++k)
      for (double sign : {-1.0, 1.0}) {
        const Vec3 tip = e.center + sign * 0.995 * e.semi_axes(k) * r.col(k);
        best = std::max(best, phantom_value(*this, tip));
      }
  });
  return best;
}

void Phantom::validate_for(const Intrinsics& k) const {
  if (!(bounding_radius() < k.sid)) throw ConfigError("phantom '" + name_ + "' extends beyond the source orbit");
}

Phantom operator+(const Phantom& a, const Phantom& b) {
  auto e = a.ellipsoids_;
  e.insert(e.end(), b.ellipsoids_.begin(), b.ellipsoids_.end());
  auto m = a.metal_;
  m.insert(m.end(), b.metal_.begin(), b.metal_.end());
  return Phantom(a.name_ + "+" + b.name_, std::move(e), std::move(m));
}

Phantom Phantom::scaled_density(double factor) const {
  Phantom out = *this;
  for (auto& e : out.ellipsoids_) e.density *= factor;
  for (auto& e : out.metal_) e.density *= factor;
  return out;
}

Phantom default_head_phantom(double scale) {
  std::vector<Ellipsoid> e;
  for (const auto& x : head_layout()) e.push_back(scaled(x, scale));
  return Phantom("head", std::move(e));
}

Phantom head_phantom_variant(double scale, std::uint64_t seed, bool with_metal) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  const Vec3 size(1.0 + 0.07 * unit(rng), 1.0 + 0.07 * unit(rng), 1.0 + 0.05 * unit(rng));
  const double yaw = 4.0 * unit(rng);
  const Mat3 r = motion_to_matrix(rz(yaw)).block<3, 3>(0, 0);

  std::vector<Ellipsoid> out;
  const auto layout = head_layout();
  for (std::size_t i = 0; i < layout.size(); ++i) {
    Ellipsoid e = layout[i];
    e.center = e.center.cwiseProduct(size);
    e.semi_axes = e.semi_axes.cwiseProduct(size);
    if (i >= 3) {
      // Inner structures move and change contrast independently.
      e.center += Vec3(4.0 * unit(rng), 4.0 * unit(rng), 3.0 * unit(rng));
      e.semi_axes *= 1.0 + 0.15 * unit(rng);
      e.density *= 1.0 + 0.2 * unit(rng);
    }
    e.center = r * e.center;
    e.rotation.rz += yaw;
    out.push_back(scaled(e, scale));
  }
  std::vector<Ellipsoid> metal;
  if (with_metal)
    for (auto e : metal_layout()) {
      e.center = r * e.center.cwiseProduct(size);
      metal.push_back(scaled(e, scale));
    }
  return Phantom("head_" + std::to_string(seed) + (with_metal ? "_metal" : ""), std::move(out), std::move(metal));
}

void VoxelGrid::validate() const {
  if (nx < 1 || ny < 1 || nz < 1) throw ConfigError("voxel grid dimensions must be positive");
  if (!(spacing > 0)) throw ConfigError("voxel spacing must be positive");
}

VoxelGrid VoxelGrid::centered(int nx, int ny, int nz, double spacing) {
  VoxelGrid g{nx, ny, nz, spacing, Vec3::Zero()};
  g.origin = -0.5 * spacing * Vec3(nx - 1, ny - 1, nz - 1);
  g.validate();
  return g;
}

double line_integral(const Phantom& ph, const Vec3& src, const Vec3& dir) { return integrate(prepare_all(ph), src, dir); }

ProjectionStack render_projections(const Phantom& ph, const Trajectory& traj, const RenderOptions& opts) {
  const auto& k = traj.intrinsics();
  ph.validate_for(k);
  const auto prepared = prepare_all(ph);
  ProjectionStack out(static_cast<int>(traj.size()), k.nv, k.nu);
  parallel_for(traj.size(), [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const ProjectionMatrix& p = traj[i].p;
      const Vec3 src = p.source_position();
      const Mat3 minv = p.matrix().block<3, 3>(0, 0).inverse();
      std::mt19937_64 rng(opts.noise_seed * 1000003ULL + i);
      std::normal_distribution<double> noise(0.0, opts.noise_sigma > 0 ? opts.noise_sigma : 1.0);
      for (int v = 0; v < k.nv; ++v)
        for (int u = 0; u < k.nu; ++u) {
          // M * d = (u, v, 1) puts d in front of the source.
          const Vec3 d = minv * Vec3(u, v, 1.0);
          double value = integrate(prepared, src, d.normalized());
          if (opts.noise_sigma > 0) value += noise(rng);
          out(static_cast<int>(i), v, u) = static_cast<float>(value);
        }
    }
  });
  return out;
}

double phantom_value(const Phantom& ph, const Vec3& p) {
  double sum = 0;
  for (const auto& e : ph.ellipsoids())
    if (e.contains(p)) sum += e.density;
  for (const auto& e : ph.metal())
    if (e.contains(p)) sum += e.density;
  return sum;
}

Volume voxelize(const Phantom& ph, const VoxelGrid& grid) {
  grid.validate();
  const auto prepared = prepare_all(ph);
  Volume vol{grid, std::vector<float>(grid.voxel_count(), 0.f)};
  parallel_for(grid.nz, [&](std::size_t z0, std::size_t z1) {
    for (int iz = static_cast<int>(z0); iz < static_cast<int>(z1); ++iz)
      for (int iy = 0; iy < grid.ny; ++iy)
        for (int ix = 0; ix < grid.nx; ++ix) {
          const Vec3 p = grid.position(ix, iy, iz);
          double sum = 0;
          for (const auto& e : prepared)
            if ((e.to_unit * (p - e.center)).squaredNorm() <= 1.0) sum += e.density;
          vol.at(ix, iy, iz) = static_cast<float>(sum);
        }
  });
  return vol;
}

}  // namespace tomofocus

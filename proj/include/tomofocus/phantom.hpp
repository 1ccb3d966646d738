#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tomofocus/geometry.hpp"

namespace tomofocus {

struct Ellipsoid {
  Vec3 center = Vec3::Zero();
  Vec3 semi_axes = Vec3::Ones();
  // Orientation as Euler angles (degrees); translations are ignored.
  RigidMotion rotation;
  double density = 1.0;
  std::string label;

  void validate() const;
  double volume() const;
  bool contains(const Vec3& p) const;
  // Chord length of the ray src + s * dir (dir of unit length).
  double chord(const Vec3& src, const Vec3& dir) const;
};

// Additive ellipsoid phantom. Metal inserts are small high-density spheres
// kept separately so they can be switched on per variant.
class Phantom {
 public:
  Phantom() = default;
  Phantom(std::string name, std::vector<Ellipsoid> ellipsoids, std::vector<Ellipsoid> metal = {});

  const std::string& name() const { return name_; }
  const std::vector<Ellipsoid>& ellipsoids() const { return ellipsoids_; }
  const std::vector<Ellipsoid>& metal() const { return metal_; }
  double bounding_radius() const;
  double max_density() const;

  // Checks that the phantom fits inside the source orbit.
  void validate_for(const Intrinsics& k) const;

  friend Phantom operator+(const Phantom& a, const Phantom& b);
  Phantom scaled_density(double factor) const;

 private:
  template <typename F>
  void for_each(F&& f) const {
    for (const auto& e : ellipsoids_) f(e);
    for (const auto& e : metal_) f(e);
  }

  std::string name_;
  std::vector<Ellipsoid> ellipsoids_;
  std::vector<Ellipsoid> metal_;
};

// Head-like phantom: skull shell, brain, ventricles, small inner lesions and
// dense anterior "nasal" structures. `scale` shrinks all lengths.
Phantom default_head_phantom(double scale = 0.5);
// Seeded anatomical variant of the default head: global size, feature
// positions and densities are jittered; metal inserts optional.
Phantom head_phantom_variant(double scale, std::uint64_t seed, bool with_metal);

struct VoxelGrid {
  int nx = 0, ny = 0, nz = 0;
  double spacing = 0.84;
  Vec3 origin = Vec3::Zero();  // world position of voxel (0, 0, 0)

  void validate() const;
  Vec3 position(int ix, int iy, int iz) const { return origin + spacing * Vec3(ix, iy, iz); }
  std::size_t voxel_count() const { return static_cast<std::size_t>(nx) * ny * nz; }
  // Grid centred on the isocenter.
  static VoxelGrid centered(int nx, int ny, int nz, double spacing);
};

// Projection stack, view-major: value(i, v, u).
struct ProjectionStack {
  int n_views = 0, nv = 0, nu = 0;
  std::vector<float> data;

  ProjectionStack() = default;
  ProjectionStack(int n, int nv_, int nu_) : n_views(n), nv(nv_), nu(nu_), data(std::size_t(n) * nv_ * nu_, 0.f) {}
  float& operator()(int i, int v, int u) { return data[(std::size_t(i) * nv + v) * nu + u]; }
  float operator()(int i, int v, int u) const { return data[(std::size_t(i) * nv + v) * nu + u]; }
  float* view(int i) { return data.data() + std::size_t(i) * nv * nu; }
  const float* view(int i) const { return data.data() + std::size_t(i) * nv * nu; }
};

struct Volume {
  VoxelGrid grid;
  std::vector<float> data;  // x fastest, then y, then z
  float& at(int ix, int iy, int iz) { return data[(std::size_t(iz) * grid.ny + iy) * grid.nx + ix]; }
  float at(int ix, int iy, int iz) const { return data[(std::size_t(iz) * grid.ny + iy) * grid.nx + ix]; }
};

double line_integral(const Phantom& ph, const Vec3& src, const Vec3& dir);

struct RenderOptions {
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;
};
ProjectionStack render_projections(const Phantom& ph, const Trajectory& traj, const RenderOptions& opts = {});

Volume voxelize(const Phantom& ph, const VoxelGrid& grid);
// Sum of densities of ellipsoids containing p.
double phantom_value(const Phantom& ph, const Vec3& p);

}  // namespace tomofocus

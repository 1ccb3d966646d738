#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "tomofocus/fdk.hpp"
#include "tomofocus/phantom.hpp"
#include "tomofocus/rpe.hpp"

namespace tomofocus {

class RegressorModel;

// Lower is better. Learned metrics also carry the per-view heads.
struct IqmValue {
  double score = 0;
  std::vector<double> r2, r3, r4;
};

struct BoneWindow {
  double lower = 0.25;
  double upper = 1.0;
  int bins = 256;

  void validate() const;
  // [0.25, 1.0] of the phantom's attenuation range [0, max density].
  static BoneWindow for_phantom(const Phantom& ph, int bins = 256);
};

// Shannon entropy (bits) of the joint histogram of all nine slices. Only
// values inside the window are counted; throws DegenerateError when none is.
IqmValue entropy_iqm(const SliceTriplets& s, const BoneWindow& w);
// Sum of isotropic forward-difference gradient magnitudes over all slices.
IqmValue tv_iqm(const SliceTriplets& s);
// True mRPE of the candidate geometry.
IqmValue oracle_iqm(const EffectiveTrajectory& eff, const MarkerSet& m, RpeMode mode = RpeMode::rms);
// R1 of the appearance model; r2..r4 attached.
IqmValue learned_iqm(const SliceTriplets& s, const RegressorModel& model);

// true = motion affected (positive): 0.5 r2 + 0.25 r3 + 0.25 r4 > threshold.
std::vector<bool> soft_classify(const std::vector<double>& r2, const std::vector<double>& r3,
                                const std::vector<double>& r4, double threshold = 0.1);

// Pixel masks for the nine slices (1 = inside).
struct SliceMasks {
  std::array<std::vector<std::uint8_t>, 9> masks;
};
// Largest cylinder about the z axis inscribed in the slice volume.
SliceMasks cylinder_mask(const SliceSet& set);
SliceMasks sphere_mask(const SliceSet& set, const Vec3& center, double radius);
// Box around the phantom's "nasal" inserts (labels starting with "nasal").
SliceMasks nasal_mask(const SliceSet& set, const Phantom& ph, double margin = 2.0);

struct SsimOptions {
  double sigma = 1.5;
  int taps = 11;
  double k1 = 0.01, k2 = 0.03;
};

// Mean local SSIM x 100 between two images of shape (nz, ny, nx), x fastest.
// Axes of length 1 are not filtered, so 2-D images use nz = 1. Windows must
// fit entirely; the optional mask selects window centres.
double ssim(const std::vector<double>& a, const std::vector<double>& b, int nz, int ny, int nx,
            const std::vector<std::uint8_t>* mask = nullptr, const SsimOptions& opt = {});
// Pooled over the nine slices; the data range is shared across slices.
double ssim(const SliceTriplets& a, const SliceTriplets& b, const SliceMasks* mask = nullptr,
            const SsimOptions& opt = {});
double ssim(const Volume& a, const Volume& b, const SsimOptions& opt = {});

}  // namespace tomofocus

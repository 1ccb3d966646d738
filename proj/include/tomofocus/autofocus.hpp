#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "tomofocus/appearance.hpp"
#include "tomofocus/fdk.hpp"
#include "tomofocus/iqm.hpp"
#include "tomofocus/motion_model.hpp"

namespace tomofocus {

struct Stage {
  double step = 1.0;    // initial simplex step (deg or mm)
  int max_iterations = 2;  // simplex iterations per node
};

struct StageSchedule {
  std::vector<Stage> stages{{1.0, 2}, {1.0, 2}, {1.0, 2}, {0.5, 100}, {0.5, 100}};
  double tol = 1e-3;
  void validate() const;
  // single stage used after the main optimization of the "+" variants
  static StageSchedule fine_tune() { return {{{0.5, 100}}, 1e-3}; }
};

struct SimplexResult {
  double x = 0, fx = 0;
  int iterations = 0;
  int evaluations = 0;
};

// Called for every function evaluation: simplex iteration (0 = initial
// vertices), point, value.
using SimplexObserver = std::function<void(int, double, double)>;

// Nelder-Mead on a two-vertex simplex {x0, x0 + step}. Stops after max_iter
// iterations or when the vertices are closer than tol. `f0` may carry a known
// f(x0). Throws DivergenceError when f returns a non-finite value.
SimplexResult nelder_mead_1d(const std::function<double(double)>& f, double x0, double step, int max_iter,
                             double tol, const SimplexObserver& observer = {}, std::optional<double> f0 = {});

enum class IqmKind { entropy, tv, learned, oracle };

struct IqmSpec {
  IqmKind kind = IqmKind::entropy;
  BoneWindow window;
  std::shared_ptr<const RegressorModel> model;  // learned
  std::shared_ptr<const MarkerSet> markers;     // oracle
  RpeMode rpe_mode = RpeMode::rms;

  std::string name() const;
  bool needs_reconstruction() const { return kind != IqmKind::oracle; }
  void validate() const;
};

// Projections filtered once plus the geometry the data effectively follow
// (calibrated trajectory composed with the patient motion).
struct AutofocusProblem {
  const FdkReconstructor* fdk = nullptr;
  SliceSet set;
  EffectiveTrajectory observed;
};

struct TraceRow {
  int stage = 0;
  Axis axis = Axis::tx;
  int node = 0;
  int iteration = 0;
  double value = 0;
  double score = 0;
};

struct AutofocusOptions {
  std::vector<Axis> axes{kAllAxes.begin(), kAllAxes.end()};
  StageSchedule schedule;
  // true = view may move; curves are forced to zero on false views
  std::optional<std::vector<bool>> mask;
};

struct CompensationResult {
  MotionSplineSet splines;  // estimated annihilation nodes
  MotionCurves curves;      // t(m), after the mask projection
  std::vector<RigidMotion> annihilating;
  SliceTriplets reconstruction;
  double score = 0;  // the IQM of `reconstruction`
  std::vector<TraceRow> trace;
  int stages_run = 0;
  double seconds = 0;
};

// Evaluation order of the axes within a stage.
inline constexpr std::array<Axis, 6> kAxisOrder = {Axis::tz, Axis::tx, Axis::ty, Axis::rx, Axis::ry, Axis::rz};

// Curves of `m` with the mask applied.
MotionCurves masked_curves(const MotionSplineSet& m, int n_views, const std::optional<std::vector<bool>>& mask);
// Reconstruction with annihilating curves c applied on top of the observed geometry.
SliceTriplets reconstruct_corrected(const AutofocusProblem& p, const MotionCurves& c);
double evaluate_iqm(const IqmSpec& iqm, const AutofocusProblem& p, const MotionCurves& c, const SliceTriplets* recon);

// R1 of the learned metric with the curves projected to zero on negative views.
double constrained_objective(const AutofocusProblem& p, const IqmSpec& learned, const std::vector<bool>& mask,
                             const MotionSplineSet& m);
// Soft classification of the uncorrected reconstruction.
std::vector<bool> learned_mask(const AutofocusProblem& p, const RegressorModel& model, double threshold = 0.1);

CompensationResult optimize_trajectory(const AutofocusProblem& p, const IqmSpec& iqm, const MotionSplineSet& m0,
                                       const AutofocusOptions& opt);
// One more stage from prior.splines with a second metric.
CompensationResult fine_tune(const AutofocusProblem& p, const CompensationResult& prior, const IqmSpec& second,
                             const AutofocusOptions& opt);

}  // namespace tomofocus

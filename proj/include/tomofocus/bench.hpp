#pragma once

#include <memory>
#include <string>
#include <vector>

#include "tomofocus/autofocus.hpp"

namespace tomofocus {

struct Scenario {
  std::string name = "A";
  int motion_nodes = 20;
  int annihilation_nodes = 20;
  double amplitude = 2.0;  // peak of the motion curve (deg or mm)
  int lobes = 1;           // 1: single sin^2 bump, >1: alternating lobes

  void validate() const;
  static Scenario a() { return {"A", 20, 20, 2.0, 1}; }
  static Scenario b() { return {"B", 17, 40, 5.0, 3}; }
  static Scenario by_name(const std::string& name);
};

// The scenario's motion on one axis: node values shaped as a smooth bump (A)
// or alternating lobes (B) with peak |value| = amplitude, on the nodes whose
// neighbours lie inside `safe`; all other nodes are zero.
MotionSplineSet scenario_motion(const Scenario& sc, Axis axis, int n_views, ViewRange safe);

// Mean over views and the given axes of |t_est + t_gt|: zero when the
// annihilating curve cancels the motion.
double misalignment(const MotionCurves& est, const MotionCurves& gt, const std::vector<Axis>& axes);
// Axes default to those on which either curve is non-zero.
double misalignment(const MotionSplineSet& est, const MotionSplineSet& gt, int n_views);

enum class Method { none, ent, ent_plus, tv, tv_plus, cnn, cnn_plus, gt };
inline constexpr std::array<Method, 8> kAllMethods = {Method::none, Method::ent, Method::ent_plus, Method::tv,
                                                      Method::tv_plus, Method::cnn, Method::cnn_plus, Method::gt};
std::string method_name(Method m);  // None, Ent, Ent+, Tv, Tv+, Cnn, Cnn+, Gt
Method parse_method(const std::string& s);
bool needs_model(Method m);

struct BenchConfig {
  std::vector<Scenario> scenarios{Scenario::a(), Scenario::b()};
  std::vector<Axis> axes{kAllAxes.begin(), kAllAxes.end()};
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  StageSchedule schedule;
  double threshold = 0.1;  // soft classifier
  int bins = 256;          // entropy histogram
  RpeMode rpe_mode = RpeMode::rms;
  double marker_scale = 0.5;
  void validate() const;
};

struct BenchRow {
  std::string scenario;
  Axis axis = Axis::tx;
  std::string metric;
  std::string phantom;  // "mean" in summary rows
  double misalignment = 0;
  double ssim = 0;
  double ssim_voi = 0;  // NaN when the phantom has no nasal structures
  double score = 0;
  double runtime_s = 0;
};

struct BenchCurves {
  std::string scenario;
  Axis axis = Axis::tx;
  std::string metric;
  std::string phantom;
  MotionCurves gt, est;
};

struct BenchTable {
  std::vector<BenchRow> rows;     // per cell and phantom
  std::vector<BenchRow> summary;  // mean over phantoms per (scenario, axis, metric)
  std::vector<BenchCurves> curves;
};

// Cells (phantom, scenario, axis) run in parallel; results are stored in a
// fixed order.
BenchTable run_benchmark(const BenchConfig& cfg, const std::vector<Phantom>& phantoms, const Trajectory& base,
                         const SliceSet& set, std::shared_ptr<const RegressorModel> model,
                         const ProgressFn& progress = {});

// Comma separated, locale independent. Runtimes go to a separate table so
// result files stay reproducible.
std::string bench_csv(const std::vector<BenchRow>& rows);
std::string bench_timing_csv(const std::vector<BenchRow>& rows);
std::string misalignment_svg(const BenchTable& t, const std::string& scenario);
std::string curve_svg(const BenchCurves& c);

}  // namespace tomofocus

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tomofocus/autofocus.hpp"
#include "tomofocus/bench.hpp"
#include "tomofocus/io.hpp"

namespace tomofocus {

struct GeometryConfig {
  Intrinsics intrinsics;
  int n_views = 200;
  double start_angle_deg = 0.0;
  double desk_scale = 0.5;  // slice dimensions, phantom size and marker radii
  double slice_spacing = 0.84;
};

// default | variant | file
struct PhantomConfig {
  std::string kind = "default";
  std::uint64_t seed = 1;
  bool metal = false;
  std::string path;
};

// none | random | scenario | splines
struct MotionConfig {
  std::string kind = "none";
  Axis axis = Axis::tx;
  double amplitude = 2.0;
  int nodes = 20;
  std::string scenario = "A";
  std::optional<MotionSplineSet> splines;
  double noise_sigma = 0.0;
};

struct MetricConfig {
  std::string name = "Ent";  // Ent, Tv, Cnn, Gt
  double window_lower = 0.25;  // fractions of the phantom's maximum density
  double window_upper = 1.0;
  int bins = 256;
  std::string model;
  double threshold = 0.1;
  RpeMode rpe_mode = RpeMode::rms;
  BoneWindow window_for(const Phantom& ph) const;
};

struct OptimizerConfig {
  StageSchedule schedule;
  std::vector<Axis> axes{kAxisOrder.begin(), kAxisOrder.end()};
  int annihilation_nodes = 20;
  std::string fine_tune;  // empty or a second metric name
};

struct TrainingConfig {
  DatasetConfig data{5000, 0.0, 6.0, 20, 1, RpeMode::rms};
  TrainConfig train{1e-3, 32, 90, 15, 1};
  int phantoms = 12;
  std::vector<int> held_out{10, 11};
  bool write_dataset = false;
};

struct BenchmarkConfig {
  std::vector<std::string> scenarios{"A", "B"};
  std::vector<Axis> axes{kAllAxes.begin(), kAllAxes.end()};
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  int phantoms = 1;
  bool plots = false;
};

struct OutputConfig {
  std::string dir = "out";
  bool timing = false;  // wall-clock files are opt-in so outputs stay byte-identical
  bool volume = false;  // cmd_reconstruct also writes a volume
};

struct ExperimentConfig {
  GeometryConfig geometry;
  PhantomConfig phantom;
  MotionConfig motion;
  MetricConfig metric;
  OptimizerConfig optimizer;
  TrainingConfig training;
  BenchmarkConfig benchmark;
  std::uint64_t seed = 1;  // motion and noise
  int threads = 0;
  OutputConfig output;

  void validate() const;
  // Unknown keys anywhere raise ConfigError; missing keys keep defaults.
  static ExperimentConfig from_json(const json& j);
  json to_json() const;
  std::string hash() const;

  Trajectory trajectory() const;
  SliceSet slices() const;
  MarkerSet markers() const;
  Phantom make_phantom() const;
  // variant phantoms used by training and the benchmark
  std::vector<Phantom> phantom_series(int count) const;
  // output dir; relative paths resolve against $TOMOFOCUS_OUTPUT_ROOT when set
  fs::path output_dir() const;
};

ExperimentConfig load_config(const fs::path& p);
// "a.b.c=value": value is parsed as JSON, or taken as a string if that fails.
void apply_override(json& j, const std::string& assignment);

}  // namespace tomofocus

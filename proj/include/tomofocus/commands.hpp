#pragma once

#include <string>
#include <vector>

#include "tomofocus/config.hpp"

namespace tomofocus {

// Every command writes its resolved config (<name>.config.json), a summary
// (<name>.summary.json) and its artifacts, each with a sidecar, into the
// output directory.
struct CommandResult {
  std::vector<fs::path> files;
  json summary;
};

CommandResult cmd_phantom(const ExperimentConfig& cfg, const ProgressFn& progress = {});
CommandResult cmd_simulate(const ExperimentConfig& cfg, const ProgressFn& progress = {});
CommandResult cmd_reconstruct(const ExperimentConfig& cfg, const ProgressFn& progress = {});
CommandResult cmd_train(const ExperimentConfig& cfg, const ProgressFn& progress = {});
CommandResult cmd_autofocus(const ExperimentConfig& cfg, const ProgressFn& progress = {});
CommandResult cmd_benchmark(const ExperimentConfig& cfg, const ProgressFn& progress = {});
// Markdown digest of the summaries and benchmark tables found in the output dir.
CommandResult cmd_report(const ExperimentConfig& cfg, const ProgressFn& progress = {});

// Motion of the config on the given trajectory (zero for kind "none").
MotionSplineSet config_motion(const ExperimentConfig& cfg, const Trajectory& base);
// Reconstructs a whole voxel grid by stacking axial planes.
Volume reconstruct_volume(const FdkReconstructor& fdk, const VoxelGrid& grid, const EffectiveTrajectory& eff);

}  // namespace tomofocus

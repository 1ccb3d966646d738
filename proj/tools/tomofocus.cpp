#include <CLI11.hpp>

#include <iostream>
#include <map>

#include "tomofocus/commands.hpp"
#include "tomofocus/errors.hpp"

using namespace tomofocus;

namespace {

struct Flags {
  std::string config;
  std::vector<std::string> set;
  std::string output;
  int threads = -1;
  long long seed = -1;
  std::string axis, metric, model, motion, scenario, fine_tune;
  double amplitude = -1;
  int samples = -1, epochs = -1, phantoms = -1;
  bool plots = false, timing = false, volume = false, quiet = false;
};

// Flags are written into the JSON before validation, so they win over the file.
json resolve(const Flags& f) {
  json j = f.config.empty() ? json::object() : read_json(f.config);
  auto put = [&](const std::string& key, const json& v) { apply_override(j, key + "=" + v.dump()); };
  for (const auto& s : f.set) apply_override(j, s);
  if (!f.output.empty()) put("output.dir", f.output);
  if (f.threads >= 0) put("threads", f.threads);
  if (f.seed >= 0) put("seeds.motion", f.seed);
  if (!f.axis.empty()) put("motion.axis", f.axis);
  if (!f.metric.empty()) put("metric.name", f.metric);
  if (!f.model.empty()) put("metric.model", f.model);
  if (!f.motion.empty()) put("motion.kind", f.motion);
  if (!f.scenario.empty()) put("motion.scenario", f.scenario);
  if (!f.fine_tune.empty()) put("optimizer.fine_tune", f.fine_tune);
  if (f.amplitude >= 0) put("motion.amplitude", f.amplitude);
  if (f.samples > 0) put("training.samples", f.samples);
  if (f.epochs > 0) put("training.max_epochs", f.epochs);
  if (f.phantoms > 0) put("benchmark.phantoms", f.phantoms);
  if (f.plots) put("benchmark.plots", true);
  if (f.timing) put("output.timing", true);
  if (f.volume) put("output.volume", true);
  return j;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Rigid motion simulation and autofocus compensation for cone-beam CT"};
  app.require_subcommand(1, 1);
  Flags f;
  using Cmd = CommandResult (*)(const ExperimentConfig&, const ProgressFn&);
  const std::vector<std::tuple<std::string, std::string, Cmd>> commands{
      {"phantom", "write the phantom definition and its voxelized ground truth", cmd_phantom},
      {"simulate", "render projections and the motion metadata", cmd_simulate},
      {"reconstruct", "FDK reconstruction of the (moved) scan", cmd_reconstruct},
      {"train", "generate a data set and train the appearance model", cmd_train},
      {"autofocus", "estimate the motion by optimizing an image quality metric", cmd_autofocus},
      {"benchmark", "run the scenario benchmark and write tables (and plots)", cmd_benchmark},
      {"report", "summarize the outputs found in the output directory", cmd_report}};
  std::map<CLI::App*, Cmd> dispatch;
  for (const auto& [name, help, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("-c,--config", f.config, "experiment config (JSON)");
    sub->add_option("--set", f.set, "override a config key, e.g. --set motion.amplitude=3");
    sub->add_option("-o,--output", f.output, "output directory");
    sub->add_option("-j,--threads", f.threads, "worker threads (0 = all cores, 1 = reproducible)");
    sub->add_option("--seed", f.seed, "motion and noise seed");
    sub->add_option("--axis", f.axis, "motion axis (tx ty tz rx ry rz)");
    sub->add_option("--amplitude", f.amplitude, "motion amplitude (mm or deg)");
    sub->add_option("--motion", f.motion, "none | random | scenario | splines");
    sub->add_option("--scenario", f.scenario, "A | B");
    sub->add_option("--metric", f.metric, "Ent | Tv | Cnn | Gt");
    sub->add_option("--model", f.model, "trained model file");
    sub->add_option("--fine-tune", f.fine_tune, "second metric for a final stage");
    sub->add_option("--samples", f.samples, "training samples");
    sub->add_option("--epochs", f.epochs, "maximum training epochs");
    sub->add_option("--phantoms", f.phantoms, "benchmark phantoms");
    sub->add_flag("--plots", f.plots, "write SVG plots");
    sub->add_flag("--timing", f.timing, "also write wall-clock timings");
    sub->add_flag("--volume", f.volume, "also reconstruct the full volume");
    sub->add_flag("-q,--quiet", f.quiet, "no progress output");
    dispatch[sub] = fn;
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : exit_codes::config;
  }

  try {
    const ExperimentConfig cfg = ExperimentConfig::from_json(resolve(f));
    ProgressFn progress;
    if (!f.quiet) progress = [](const std::string& s) { std::cerr << s << "\n"; };
    const CommandResult r = dispatch.at(app.get_subcommands().front())(cfg, progress);
    std::cout << r.summary.dump(2) << "\n";
    return exit_codes::ok;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code(e);
  }
}

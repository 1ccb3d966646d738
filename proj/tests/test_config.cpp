#include <doctest.h>

#include <cstdlib>

#include "tomofocus/commands.hpp"
#include "tomofocus/errors.hpp"

using namespace tomofocus;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "tomofocus_test_config" / name;
  fs::remove_all(p);
  return p;
}

// A quick configuration: coarse slices, few views.
ExperimentConfig small_config(const fs::path& out) {
  json j = {{"geometry", {{"n_views", 60}, {"desk_scale", 0.2}, {"slice_spacing", 2.1}}},
            {"output", {{"dir", out.string()}}},
            {"threads", 1}};
  return ExperimentConfig::from_json(j);
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = read_text(e.path());
  return files;
}

}  // namespace

TEST_CASE("config schema") {
  const ExperimentConfig d = ExperimentConfig::from_json(json::object());
  CHECK(d.geometry.n_views == 200);
  CHECK(d.metric.threshold == 0.1);
  CHECK(d.optimizer.schedule.stages.size() == 5);

  // resolved config reads back to the same thing
  ExperimentConfig c = d;
  c.motion.kind = "random";
  c.motion.axis = Axis::ry;
  c.optimizer.axes = {Axis::rz, Axis::tx};
  c.benchmark.methods = {Method::gt, Method::cnn_plus};
  c.motion.splines = MotionSplineSet::uniform(6, 200);
  const ExperimentConfig back = ExperimentConfig::from_json(c.to_json());
  CHECK(back.to_json() == c.to_json());
  CHECK(back.hash() == c.hash());
  CHECK(back.hash() != d.hash());
  // output location does not change the hash
  c.output.dir = "elsewhere";
  CHECK(c.hash() == back.hash());

  CHECK_THROWS_AS(ExperimentConfig::from_json({{"bogus", 1}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"metric", {{"nmae", "Ent"}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"optimizer", {{"stages", {{{"step", 1}, {"iters", 2}}}}}}}),
                  ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"geometry", {{"n_views", "many"}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"motion", {{"axis", "tw"}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"metric", {{"name", "Foo"}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"benchmark", {{"methods", {"Ent", "X"}}}}}), ConfigError);
  CHECK_THROWS_AS(ExperimentConfig::from_json({{"training", {{"held_out", {40}}}}}), ConfigError);
}

TEST_CASE("overrides and output root") {
  json j = {{"motion", {{"amplitude", 1.0}}}};
  apply_override(j, "motion.amplitude=3.5");
  apply_override(j, "metric.name=Tv");
  apply_override(j, "optimizer.axes=[\"tx\"]");
  const ExperimentConfig c = ExperimentConfig::from_json(j);
  CHECK(c.motion.amplitude == 3.5);
  CHECK(c.metric.name == "Tv");
  CHECK(c.optimizer.axes == std::vector<Axis>{Axis::tx});
  CHECK_THROWS_AS(apply_override(j, "novalue"), ConfigError);
  CHECK_THROWS_AS(apply_override(j, "motion.amplitude.x=1"), ConfigError);

  ExperimentConfig o;
  o.output.dir = "run1";
  setenv("TOMOFOCUS_OUTPUT_ROOT", "/tmp/root", 1);
  CHECK(o.output_dir() == fs::path("/tmp/root/run1"));
  o.output.dir = "/abs/run";
  CHECK(o.output_dir() == fs::path("/abs/run"));
  unsetenv("TOMOFOCUS_OUTPUT_ROOT");
  o.output.dir = "run1";
  CHECK(o.output_dir() == fs::path("run1"));
}

TEST_CASE("phantom command") {
  const fs::path out = scratch("phantom");
  ExperimentConfig c = small_config(out);
  c.geometry.slice_spacing = 0.84;
  c.geometry.desk_scale = 0.5;
  const CommandResult r = cmd_phantom(c);
  CHECK(fs::exists(out / "phantom.json"));
  CHECK(fs::exists(out / "ground_truth.f32"));
  CHECK(fs::exists(out / "ground_truth.f32.json"));
  CHECK(fs::exists(out / "phantom.config.json"));
  const double vm = r.summary.at("voxel_mass"), am = r.summary.at("analytic_mass");
  CHECK(std::abs(vm - am) <= 0.02 * am);
  const Phantom back = phantom_from_json(read_json(out / "phantom.json"));
  CHECK(to_json(back) == to_json(default_head_phantom(0.5)));
  const auto first = snapshot(out);
  cmd_phantom(c);
  CHECK(snapshot(out) == first);
}

TEST_CASE("simulate and reconstruct") {
  const fs::path out = scratch("sim");
  ExperimentConfig c = small_config(out);
  c.motion.amplitude = 0.0;
  c.motion.kind = "random";
  CHECK(cmd_simulate(c).summary.at("mrpe") == 0.0);

  c.motion.amplitude = 3.0;
  c.motion.axis = Axis::tx;
  const CommandResult r = cmd_simulate(c);
  const auto first = snapshot(out);
  cmd_simulate(c);
  CHECK(snapshot(out) == first);
  // stored mRPE equals a recomputation from the stored splines
  const json m = read_json(out / "motion.json");
  const MotionSplineSet sp = splines_from_json(m.at("splines"));
  const double mrpe = compute_labels(c.trajectory(), sp, c.markers()).mrpe;
  CHECK(m.at("mrpe").get<double>() == doctest::Approx(mrpe).epsilon(1e-12));
  CHECK(mrpe > 0.1);
  const ProjectionStack p = read_projections(out / "projections.f32");
  CHECK(p.n_views == 60);
  CHECK(p.nu == c.geometry.intrinsics.nu);

  const CommandResult moved = cmd_reconstruct(c);
  const SliceTriplets s_moved = read_slices(out / "slices.f32");
  const SliceSet set = c.slices();
  REQUIRE(s_moved.same_shape(SliceTriplets::zeros(set)));
  const json side = read_sidecar(out / "slices.f32", "slices");
  CHECK(side.at("config_hash") == c.hash());

  // identity motion gives the plain reconstruction bit for bit
  c.motion.kind = "none";
  cmd_reconstruct(c);
  const SliceTriplets s_static = read_slices(out / "slices.f32");
  const Trajectory base = c.trajectory();
  FdkReconstructor fdk(base, render_projections(c.make_phantom(), base));
  const SliceTriplets ref = fdk.reconstruct(set, EffectiveTrajectory(base));
  // files hold binary32
  for (int k = 0; k < 9; ++k) {
    std::vector<double> r32(ref.slices[k].data.size());
    for (std::size_t i = 0; i < r32.size(); ++i) r32[i] = float(ref.slices[k].data[i]);
    CHECK(s_static.slices[k].data == r32);
  }
  CHECK(s_static.slices[4].data != s_moved.slices[4].data);

  c.output.volume = true;
  cmd_reconstruct(c);
  const Volume v = read_volume(out / "volume.f32");
  CHECK(v.grid.nx == set.volume.nx);
  CHECK(v.grid.nz == set.volume.nz);
  CHECK(v.data.size() == set.volume.voxel_count());
}

TEST_CASE("static desk-scale reconstruction fidelity") {
  const fs::path out = scratch("desk");
  ExperimentConfig c;
  c.output.dir = out.string();
  const CommandResult r = cmd_reconstruct(c);
  MESSAGE("SSIM vs truth: " << r.summary.at("ssim_vs_truth").get<double>());
  CHECK(r.summary.at("ssim_vs_truth").get<double>() >= 90.0);
}

TEST_CASE("autofocus, train, benchmark and report commands") {
  const fs::path out = scratch("af");
  ExperimentConfig c = small_config(out);
  c.motion.kind = "scenario";
  c.motion.axis = Axis::tx;
  c.optimizer.axes = {Axis::tx};
  c.optimizer.annihilation_nodes = 12;
  c.metric.name = "Gt";
  c.optimizer.schedule.stages = {{1.0, 2}, {0.5, 20}};
  const CommandResult r = cmd_autofocus(c);
  CHECK(r.summary.at("misalignment").get<double>() < 0.2 * r.summary.at("misalignment_none").get<double>());
  CHECK(r.summary.at("ssim_corrected").get<double>() > r.summary.at("ssim_uncorrected").get<double>());
  const std::string trace = read_text(out / "trace.csv");
  CHECK(trace.rfind("stage,axis,node,iteration,value,score", 0) == 0);
  CHECK(fs::exists(out / "estimate.json.json"));
  CHECK(fs::exists(out / "corrected.f32"));
  CHECK(r.summary.find("seconds") == r.summary.end());

  c.metric.name = "Cnn";
  CHECK_THROWS_AS(cmd_autofocus(c), ConfigError);
  c.metric.model = (out / "missing.bin").string();
  CHECK_THROWS_AS(cmd_autofocus(c), ConfigError);

  ExperimentConfig t = small_config(out);
  t.geometry.desk_scale = 0.15;
  t.training.data.n_samples = 12;
  t.training.phantoms = 3;
  t.training.held_out = {2};
  t.training.train.max_epochs = 2;
  t.training.train.batch_size = 4;
  const CommandResult tr = cmd_train(t);
  CHECK(fs::exists(out / "model.bin"));
  const RegressorModel model = RegressorModel::load((out / "model.bin").string());
  CHECK(model.descriptor().n_views == 60);
  const std::string hist = read_text(out / "history.csv");
  CHECK(std::count(hist.begin(), hist.end(), '\n') == 1 + tr.summary.at("epochs").get<int>());

  ExperimentConfig b = small_config(out);
  b.benchmark.scenarios = {"A"};
  b.benchmark.axes = {Axis::tz, Axis::rz};
  b.benchmark.methods = {Method::none, Method::gt};
  b.optimizer.schedule.stages = {{1.0, 2}};
  cmd_benchmark(b);
  const std::string summary = read_text(out / "bench_summary.csv");
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 1 + 2 * 2);
  CHECK(!fs::exists(out / "misalignment_A.svg"));
  CHECK(!fs::exists(out / "bench_timing.csv"));
  const std::string rows = read_text(out / "bench_rows.csv");
  b.benchmark.plots = true;
  cmd_benchmark(b);
  CHECK(fs::exists(out / "misalignment_A.svg"));
  CHECK(read_text(out / "bench_rows.csv") == rows);

  cmd_report(b);
  const std::string md = read_text(out / "report.md");
  CHECK(md.find("Scenario A: misalignment") != std::string::npos);
  CHECK(md.find("## autofocus") != std::string::npos);
  CHECK_THROWS_AS(cmd_report(small_config(scratch("empty"))), IoError);
}

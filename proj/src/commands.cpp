#include "tomofocus/commands.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "tomofocus/errors.hpp"
#include "tomofocus/parallel.hpp"

namespace tomofocus {

namespace {

// Shared bookkeeping of one command run.
class Run {
 public:
  Run(const ExperimentConfig& cfg, std::string name) : cfg_(cfg), name_(std::move(name)), hash_(cfg.hash()) {
    set_thread_count(unsigned(cfg.threads));
    dir_ = cfg.output_dir();
    try {
      fs::create_directories(dir_);
    } catch (const fs::filesystem_error& e) {
      throw IoError("cannot create output directory " + dir_.string() + ": " + e.what());
    }
    write_text(dir_ / (name_ + ".config.json"), cfg.to_json().dump(2) + "\n");
    res_.files.push_back(dir_ / (name_ + ".config.json"));
  }

  const fs::path& dir() const { return dir_; }
  const std::string& hash() const { return hash_; }
  fs::path path(const std::string& file) const { return dir_ / file; }

  json params(json extra = json::object()) const {
    extra["command"] = name_;
    extra["config"] = cfg_.to_json();
    return extra;
  }
  // text artifact with its sidecar
  void text(const std::string& file, const std::string& body, const std::string& kind, json extra = json::object()) {
    write_text(path(file), body);
    write_sidecar(path(file), make_sidecar(kind, hash_, params(std::move(extra))));
    added(file);
  }
  void added(const std::string& file) { res_.files.push_back(path(file)); }

  CommandResult finish(json summary) {
    summary["command"] = name_;
    summary["config_hash"] = hash_;
    write_text(path(name_ + ".summary.json"), summary.dump(2) + "\n");
    res_.files.push_back(path(name_ + ".summary.json"));
    res_.summary = std::move(summary);
    return std::move(res_);
  }

 private:
  const ExperimentConfig& cfg_;
  std::string name_;
  std::string hash_;
  fs::path dir_;
  CommandResult res_;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void note(const ProgressFn& p, const std::string& s) {
  if (p) p(s);
}

// Projections of the configured phantom. Earlier simulate output is reused
// when it was made from the same config.
ProjectionStack projections_for(const ExperimentConfig& cfg, const Run& run, const Trajectory& base,
                                const Phantom& ph) {
  const fs::path p = run.path("projections.f32");
  if (fs::exists(p) && fs::exists(sidecar_path(p))) {
    const json side = read_sidecar(p, "projections");
    if (side.value("config_hash", "") == run.hash()) return read_projections(p);
  }
  RenderOptions ro;
  ro.noise_sigma = cfg.motion.noise_sigma;
  ro.noise_seed = cfg.seed;
  return render_projections(ph, base, ro);
}

std::shared_ptr<const RegressorModel> load_model(const std::string& path) {
  if (path.empty()) throw ConfigError("metric Cnn needs metric.model (path to a trained model)");
  if (!fs::exists(path)) throw ConfigError("model file not found: " + path);
  return std::make_shared<RegressorModel>(RegressorModel::load(path));
}

IqmSpec metric_spec(const std::string& name, const ExperimentConfig& cfg, const Phantom& ph,
                    std::shared_ptr<const RegressorModel>& model) {
  IqmSpec s;
  s.window = cfg.metric.window_for(ph);
  s.rpe_mode = cfg.metric.rpe_mode;
  if (name == "Ent") s.kind = IqmKind::entropy;
  else if (name == "Tv") s.kind = IqmKind::tv;
  else if (name == "Gt") {
    s.kind = IqmKind::oracle;
    s.markers = std::make_shared<MarkerSet>(cfg.markers());
  } else if (name == "Cnn") {
    s.kind = IqmKind::learned;
    if (!model) model = load_model(cfg.metric.model);
    s.model = model;
  } else {
    throw ConfigError("unknown metric " + name);
  }
  return s;
}

json rigid_list(const std::vector<RigidMotion>& v) {
  json a = json::array();
  for (const auto& m : v) a.push_back(to_json(m));
  return a;
}

std::string eval_csv(const EvalReport& r) {
  std::string out = csv_line({"sample", "phantom", "axis", "amplitude", "true_mrpe", "pred_mrpe"});
  for (const EvalRow& e : r.rows)
    out += csv_line({std::to_string(e.sample), std::to_string(e.phantom), std::string(axis_name(e.axis)),
                     format_number(e.amplitude), format_number(e.true_mrpe), format_number(e.pred_mrpe)});
  return out;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> f;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
      const char c = line[i];
      if (quoted) {
        if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') cur += '"', ++i;
        else if (c == '"') quoted = false;
        else cur += c;
      } else if (c == '"') quoted = true;
      else if (c == ',') f.push_back(std::move(cur)), cur.clear();
      else cur += c;
    }
    f.push_back(std::move(cur));
    rows.push_back(std::move(f));
  }
  return rows;
}

}  // namespace

MotionSplineSet config_motion(const ExperimentConfig& cfg, const Trajectory& base) {
  const int n = int(base.size());
  const MotionConfig& m = cfg.motion;
  if (m.kind == "none") return MotionSplineSet::uniform(m.nodes, n);
  if (m.kind == "random") return random_motion(m.axis, m.amplitude, m.nodes, n, parker_safe_range(base), cfg.seed).splines;
  if (m.kind == "scenario") return scenario_motion(Scenario::by_name(m.scenario), m.axis, n, parker_safe_range(base));
  return *m.splines;
}

Volume reconstruct_volume(const FdkReconstructor& fdk, const VoxelGrid& grid, const EffectiveTrajectory& eff) {
  grid.validate();
  Volume v;
  v.grid = grid;
  v.data.assign(grid.voxel_count(), 0.f);
  // nine axial planes per pass; the last pass repeats its final plane
  for (int z0 = 0; z0 < grid.nz; z0 += 9) {
    SliceSet set;
    set.volume = grid;
    for (int k = 0; k < 9; ++k) {
      SlicePlane& pl = set.planes[k];
      pl.orientation = Orientation::axial;
      pl.rows = grid.ny;
      pl.cols = grid.nx;
      pl.origin = grid.position(0, 0, std::min(z0 + k, grid.nz - 1));
      pl.row_step = Vec3(0, grid.spacing, 0);
      pl.col_step = Vec3(grid.spacing, 0, 0);
    }
    const SliceTriplets s = fdk.reconstruct(set, eff);
    for (int k = 0; k < 9 && z0 + k < grid.nz; ++k) {
      const auto& d = s.slices[k].data;
      std::copy(d.begin(), d.end(), v.data.begin() + std::ptrdiff_t(std::size_t(z0 + k) * grid.nx * grid.ny));
    }
  }
  return v;
}

CommandResult cmd_phantom(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  Run run(cfg, "phantom");
  const Phantom ph = cfg.make_phantom();
  ph.validate_for(cfg.geometry.intrinsics);
  run.text("phantom.json", to_json(ph).dump(2) + "\n", "phantom");

  // grid large enough to hold the whole phantom
  const double h = cfg.geometry.slice_spacing;
  const int n = int(std::ceil(2 * ph.bounding_radius() / h)) + 2;
  const VoxelGrid grid = VoxelGrid::centered(n, n, n, h);
  note(progress, "voxelizing " + std::to_string(n) + "^3");
  const Volume v = voxelize(ph, grid);
  write_volume(run.path("ground_truth.f32"), v, run.hash(), run.params({{"phantom", ph.name()}}));
  run.added("ground_truth.f32");

  double voxel_mass = 0;
  for (float x : v.data) voxel_mass += x;
  voxel_mass *= h * h * h;
  double analytic = 0;
  for (const Ellipsoid& e : ph.ellipsoids()) analytic += e.density * e.volume();
  for (const Ellipsoid& e : ph.metal()) analytic += e.density * e.volume();
  return run.finish({{"phantom", ph.name()},
                     {"ellipsoids", ph.ellipsoids().size()},
                     {"metal", ph.metal().size()},
                     {"grid", {n, n, n}},
                     {"voxel_mass", voxel_mass},
                     {"analytic_mass", analytic}});
}

CommandResult cmd_simulate(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  Run run(cfg, "simulate");
  const Trajectory base = cfg.trajectory();
  const Phantom ph = cfg.make_phantom();
  ph.validate_for(base.intrinsics());
  run.text("trajectory.json", to_json(base).dump(2) + "\n", "trajectory");

  note(progress, "rendering " + std::to_string(base.size()) + " views");
  RenderOptions ro;
  ro.noise_sigma = cfg.motion.noise_sigma;
  ro.noise_seed = cfg.seed;
  const ProjectionStack raw = render_projections(ph, base, ro);
  write_projections(run.path("projections.f32"), raw, base.intrinsics(), "trajectory.json", run.hash(),
                    run.params({{"phantom", ph.name()}}));
  run.added("projections.f32");

  const MotionSplineSet m = config_motion(cfg, base);
  const MarkerSet markers = cfg.markers();
  const Labels y = compute_labels(base, m, markers, cfg.metric.rpe_mode);
  const EffectiveTrajectory eff(base, annihilating_motion(curves_from_splines(m, int(base.size()))));
  std::vector<RpeProfile> profiles;
  for (RpeVariant v : {RpeVariant::all, RpeVariant::in_plane, RpeVariant::out_plane})
    profiles.push_back(rpe_profile(eff, markers, v, cfg.metric.rpe_mode));
  run.text("rpe_profile.csv", profile_csv(profiles), "rpe_profile");
  const json motion = {{"kind", cfg.motion.kind},
                       {"splines", to_json(m)},
                       {"mrpe", y.mrpe},
                       {"per_view", rigid_list(eff.motion())}};
  run.text("motion.json", motion.dump(2) + "\n", "motion");
  return run.finish({{"views", base.size()}, {"mrpe", y.mrpe}, {"max_projection", *std::max_element(raw.data.begin(), raw.data.end())}});
}

CommandResult cmd_reconstruct(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  Run run(cfg, "reconstruct");
  const Trajectory base = cfg.trajectory();
  const Phantom ph = cfg.make_phantom();
  const SliceSet set = cfg.slices();
  const FdkReconstructor fdk(base, projections_for(cfg, run, base, ph));
  const MotionSplineSet m = config_motion(cfg, base);
  const EffectiveTrajectory eff(base, annihilating_motion(curves_from_splines(m, int(base.size()))));
  note(progress, "reconstructing nine slices");
  const SliceTriplets s = fdk.reconstruct(set, eff);
  write_slices(run.path("slices.f32"), s, set, run.hash(), run.params());
  run.added("slices.f32");

  const SliceMasks cyl = cylinder_mask(set);
  json summary = {{"ssim_vs_truth", ssim(s, sample_phantom(ph, set), &cyl)},
                  {"entropy", entropy_iqm(s, cfg.metric.window_for(ph)).score},
                  {"tv", tv_iqm(s).score},
                  {"mrpe", mean_rpe(eff, cfg.markers(), cfg.metric.rpe_mode)}};
  if (cfg.output.volume) {
    note(progress, "reconstructing volume");
    const Volume v = reconstruct_volume(fdk, set.volume, eff);
    write_volume(run.path("volume.f32"), v, run.hash(), run.params());
    run.added("volume.f32");
  }
  return run.finish(summary);
}

CommandResult cmd_train(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  Run run(cfg, "train");
  const auto t0 = std::chrono::steady_clock::now();
  const Trajectory base = cfg.trajectory();
  const SliceSet set = cfg.slices();
  const std::vector<Phantom> phantoms = cfg.phantom_series(cfg.training.phantoms);
  DatasetConfig dc = cfg.training.data;
  dc.rpe_mode = cfg.metric.rpe_mode;
  const Dataset d = generate_dataset(phantoms, base, set, cfg.markers(), dc, progress);
  if (cfg.training.write_dataset) {
    write_dataset(run.path("dataset"), d, run.hash());
    run.added("dataset");
  }
  auto [tr, va] = split_by_phantom(d, cfg.training.held_out);
  if (tr.size() == 0 || va.size() == 0) throw ConfigError("training: split left an empty set");
  const RegressorModel init(ModelDescriptor::for_slices(set, int(base.size())), cfg.training.train.seed);
  const TrainResult r = train(init, tr, va, cfg.training.train, progress);

  r.model.save(run.path("model.bin").string());
  write_sidecar(run.path("model.bin"),
                make_sidecar("model", run.hash(), run.params({{"descriptor", r.model.descriptor().to_json()}})));
  run.added("model.bin");
  run.text("history.csv", history_csv(r.history), "history");
  const EvalReport rep = evaluate(r.model, va, cfg.metric.threshold);
  run.text("evaluation.csv", eval_csv(rep), "evaluation");
  json summary = {{"train_samples", tr.size()},
                  {"val_samples", va.size()},
                  {"parameters", r.model.parameters().size()},
                  {"best_epoch", r.best_epoch},
                  {"epochs", r.history.size()},
                  {"initial_train_loss", r.initial_train_loss},
                  {"pearson", rep.pearson},
                  {"mean_abs_error", rep.mean_abs_error},
                  {"fn_rate", rep.fn_rate},
                  {"fp_rate", rep.fp_rate}};
  if (cfg.output.timing) summary["seconds"] = seconds_since(t0);
  return run.finish(summary);
}

CommandResult cmd_autofocus(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  Run run(cfg, "autofocus");
  const Trajectory base = cfg.trajectory();
  const int n = int(base.size());
  const Phantom ph = cfg.make_phantom();
  const SliceSet set = cfg.slices();
  std::shared_ptr<const RegressorModel> model;
  // metrics are resolved first so a missing model fails before any work
  const IqmSpec first = metric_spec(cfg.metric.name, cfg, ph, model);
  std::optional<IqmSpec> second;
  if (!cfg.optimizer.fine_tune.empty()) second = metric_spec(cfg.optimizer.fine_tune, cfg, ph, model);

  const FdkReconstructor fdk(base, projections_for(cfg, run, base, ph));
  const MotionSplineSet m = config_motion(cfg, base);
  const MotionCurves gt = curves_from_splines(m, n);
  const AutofocusProblem prob{&fdk, set, compose(base, annihilating_motion(gt))};
  AutofocusOptions opt;
  opt.axes = cfg.optimizer.axes;
  opt.schedule = cfg.optimizer.schedule;
  if (first.kind == IqmKind::learned) opt.mask = learned_mask(prob, *model, cfg.metric.threshold);

  note(progress, "optimizing with " + first.name());
  const MotionSplineSet m0 = MotionSplineSet::uniform(cfg.optimizer.annihilation_nodes, n);
  CompensationResult r = optimize_trajectory(prob, first, m0, opt);
  if (second) {
    note(progress, "fine tuning with " + second->name());
    const double s0 = r.seconds;
    r = fine_tune(prob, r, *second, opt);
    r.seconds += s0;
  }

  run.text("trace.csv", trace_csv(r.trace), "trace");
  const json estimate = {{"splines", to_json(r.splines)}, {"per_view", rigid_list(r.annihilating)}};
  run.text("estimate.json", estimate.dump(2) + "\n", "estimate");
  write_slices(run.path("corrected.f32"), r.reconstruction, set, run.hash(), run.params());
  run.added("corrected.f32");

  const SliceMasks cyl = cylinder_mask(set);
  const SliceTriplets reference = fdk.reconstruct(set, EffectiveTrajectory(base));
  const SliceTriplets uncorrected = reconstruct_corrected(prob, MotionCurves::zeros(n));
  std::vector<Axis> moved;
  for (Axis a : kAllAxes)
    if (!gt.values.row(int(a)).isZero(0.0)) moved.push_back(a);
  json summary = {{"metric", first.name() + (second ? "+" + second->name() : "")},
                  {"score", r.score},
                  {"stages_run", r.stages_run},
                  {"evaluations", r.trace.size()},
                  {"ssim_corrected", ssim(r.reconstruction, reference, &cyl)},
                  {"ssim_uncorrected", ssim(uncorrected, reference, &cyl)}};
  if (!moved.empty()) {
    summary["misalignment"] = misalignment(r.curves, gt, moved);
    summary["misalignment_none"] = misalignment(MotionCurves::zeros(n), gt, moved);
  }
  if (cfg.output.timing) summary["seconds"] = r.seconds;
  return run.finish(summary);
}

CommandResult cmd_benchmark(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  Run run(cfg, "benchmark");
  const Trajectory base = cfg.trajectory();
  const SliceSet set = cfg.slices();
  std::vector<Phantom> phantoms{cfg.make_phantom()};
  for (int i = 1; i < cfg.benchmark.phantoms; ++i)
    phantoms.push_back(head_phantom_variant(cfg.geometry.desk_scale, 1000 + std::uint64_t(i), i % 3 == 0));

  BenchConfig bc;
  bc.scenarios.clear();
  for (const auto& s : cfg.benchmark.scenarios) bc.scenarios.push_back(Scenario::by_name(s));
  bc.axes = cfg.benchmark.axes;
  bc.methods = cfg.benchmark.methods;
  bc.schedule = cfg.optimizer.schedule;
  bc.threshold = cfg.metric.threshold;
  bc.bins = cfg.metric.bins;
  bc.rpe_mode = cfg.metric.rpe_mode;
  bc.marker_scale = cfg.geometry.desk_scale;
  std::shared_ptr<const RegressorModel> model;
  if (std::any_of(bc.methods.begin(), bc.methods.end(), needs_model)) model = load_model(cfg.metric.model);

  const BenchTable t = run_benchmark(bc, phantoms, base, set, model, progress);
  run.text("bench_rows.csv", bench_csv(t.rows), "bench_rows");
  run.text("bench_summary.csv", bench_csv(t.summary), "bench_summary");
  if (cfg.output.timing) run.text("bench_timing.csv", bench_timing_csv(t.rows), "bench_timing");
  if (cfg.benchmark.plots) {
    for (const auto& s : bc.scenarios)
      run.text("misalignment_" + s.name + ".svg", misalignment_svg(t, s.name), "plot");
    for (const BenchCurves& c : t.curves)
      if (c.phantom == phantoms.front().name() && c.metric != "None")
        run.text("curves_" + c.scenario + "_" + std::string(axis_name(c.axis)) + "_" +
                     (c.metric.back() == '+' ? c.metric.substr(0, c.metric.size() - 1) + "plus" : c.metric) + ".svg",
                 curve_svg(c), "plot");
  }
  json summary = {{"rows", t.rows.size()}, {"summary_rows", t.summary.size()}, {"phantoms", phantoms.size()}};
  json mis = json::object();
  for (const BenchRow& r : t.summary)
    mis[r.scenario][std::string(axis_name(r.axis))][r.metric] = r.misalignment;
  summary["misalignment"] = mis;
  return run.finish(summary);
}

CommandResult cmd_report(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  Run run(cfg, "report");
  std::ostringstream md;
  md << "# Results\n\n";
  bool any = false;
  for (const char* name : {"phantom", "simulate", "reconstruct", "train", "autofocus"}) {
    const fs::path p = run.path(std::string(name) + ".summary.json");
    if (!fs::exists(p)) continue;
    any = true;
    const json s = read_json(p);
    md << "## " << name << "\n\n| key | value |\n|---|---|\n";
    for (auto it = s.begin(); it != s.end(); ++it) {
      if (it.key() == "command") continue;
      md << "| " << it.key() << " | "
         << (it->is_number() ? format_number(it->get<double>()) : it->is_string() ? it->get<std::string>() : it->dump())
         << " |\n";
    }
    md << "\n";
  }
  const fs::path bench = run.path("bench_summary.csv");
  if (fs::exists(bench)) {
    any = true;
    const auto rows = parse_csv(read_text(bench));
    // scenario -> metric -> axis -> (misalignment, ssim)
    std::map<std::string, std::map<std::string, std::map<std::string, std::pair<std::string, std::string>>>> tab;
    std::vector<std::string> axes, metrics;
    for (std::size_t i = 1; i < rows.size(); ++i) {
      const auto& r = rows[i];
      if (r.size() < 6) continue;
      tab[r[0]][r[2]][r[1]] = {r[4], r[5]};
      if (std::find(axes.begin(), axes.end(), r[1]) == axes.end()) axes.push_back(r[1]);
      if (std::find(metrics.begin(), metrics.end(), r[2]) == metrics.end()) metrics.push_back(r[2]);
    }
    for (const auto& [sc, by_metric] : tab) {
      for (int which = 0; which < 2; ++which) {
        md << "## Scenario " << sc << ": " << (which == 0 ? "misalignment" : "SSIM") << "\n\n| metric |";
        for (const auto& a : axes) md << " " << a << " |";
        md << "\n|---|";
        for (std::size_t k = 0; k < axes.size(); ++k) md << "---|";
        md << "\n";
        for (const auto& m : metrics) {
          auto it = by_metric.find(m);
          if (it == by_metric.end()) continue;
          md << "| " << m << " |";
          for (const auto& a : axes) {
            auto c = it->second.find(a);
            md << " " << (c == it->second.end() ? "" : which == 0 ? c->second.first : c->second.second) << " |";
          }
          md << "\n";
        }
        md << "\n";
      }
    }
  }
  if (!any) throw IoError("report: no command outputs in " + run.dir().string());
  note(progress, "writing report.md");
  run.text("report.md", md.str(), "report");
  return run.finish({{"sections", any}});
}

}  // namespace tomofocus

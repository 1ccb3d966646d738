#include "tomofocus/config.hpp"

#include <cstdlib>
#include <set>

#include "tomofocus/errors.hpp"

namespace tomofocus {

namespace {

// Reads the keys of one JSON object and complains about the ones nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError("config: " + where() + " must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    used_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception&) {
      throw ConfigError("config: bad value for " + where() + key);
    }
  }
  void get_axis(const char* key, Axis& out) {
    std::string s(axis_name(out));
    get(key, s);
    out = axis(key, s);
  }
  void get_axes(const char* key, std::vector<Axis>& out) {
    std::vector<std::string> names;
    for (Axis a : out) names.emplace_back(axis_name(a));
    get(key, names);
    out.clear();
    for (const auto& n : names) out.push_back(axis(key, n));
  }
  const json* sub(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!used_.count(it.key())) throw ConfigError("config: unknown key " + where() + it.key());
  }

 private:
  std::string where() const { return path_.empty() ? "" : path_ + "."; }
  Axis axis(const char* key, const std::string& s) const {
    try {
      return parse_axis(s);
    } catch (const Error&) {
      throw ConfigError("config: bad axis for " + where() + key);
    }
  }

  const json& j_;
  std::string path_;
  std::set<std::string> used_;
};

RpeMode parse_rpe_mode(const std::string& s) {
  if (s == "rms") return RpeMode::rms;
  if (s == "mean") return RpeMode::mean;
  throw ConfigError("config: rpe_mode must be rms or mean");
}
std::string rpe_mode_name(RpeMode m) { return m == RpeMode::rms ? "rms" : "mean"; }

json axes_json(const std::vector<Axis>& axes) {
  json a = json::array();
  for (Axis x : axes) a.push_back(std::string(axis_name(x)));
  return a;
}

const std::set<std::string> kMetricNames{"Ent", "Tv", "Cnn", "Gt"};

}  // namespace

BoneWindow MetricConfig::window_for(const Phantom& ph) const {
  const double m = ph.max_density();
  BoneWindow w{window_lower * m, window_upper * m, bins};
  w.validate();
  return w;
}

void ExperimentConfig::validate() const {
  geometry.intrinsics.validate();
  if (geometry.n_views < 3) throw ConfigError("config: geometry.n_views must be >= 3");
  if (!(geometry.desk_scale > 0)) throw ConfigError("config: geometry.desk_scale must be positive");
  if (!(geometry.slice_spacing > 0)) throw ConfigError("config: geometry.slice_spacing must be positive");
  if (phantom.kind != "default" && phantom.kind != "variant" && phantom.kind != "file")
    throw ConfigError("config: phantom.kind must be default, variant or file");
  if (phantom.kind == "file" && phantom.path.empty()) throw ConfigError("config: phantom.path is empty");
  if (motion.kind != "none" && motion.kind != "random" && motion.kind != "scenario" && motion.kind != "splines")
    throw ConfigError("config: motion.kind must be none, random, scenario or splines");
  if (motion.kind == "splines" && !motion.splines) throw ConfigError("config: motion.splines missing");
  if (motion.kind == "random" && (motion.nodes < 4 || !(motion.amplitude >= 0)))
    throw ConfigError("config: random motion needs >= 4 nodes and amplitude >= 0");
  if (motion.kind == "scenario") Scenario::by_name(motion.scenario);
  if (motion.noise_sigma < 0) throw ConfigError("config: motion.noise_sigma must be >= 0");
  if (!kMetricNames.count(metric.name)) throw ConfigError("config: metric.name must be Ent, Tv, Cnn or Gt");
  if (!(metric.window_lower < metric.window_upper) || metric.bins < 2)
    throw ConfigError("config: bad metric window");
  optimizer.schedule.validate();
  if (optimizer.axes.empty()) throw ConfigError("config: optimizer.axes is empty");
  if (optimizer.annihilation_nodes < 4) throw ConfigError("config: optimizer.annihilation_nodes must be >= 4");
  if (!optimizer.fine_tune.empty() && !kMetricNames.count(optimizer.fine_tune))
    throw ConfigError("config: optimizer.fine_tune must be empty or a metric name");
  training.train.validate();
  if (training.data.n_samples < 1 || training.phantoms < 2) throw ConfigError("config: training needs samples and >= 2 phantoms");
  for (int h : training.held_out)
    if (h < 0 || h >= training.phantoms) throw ConfigError("config: training.held_out index out of range");
  if (benchmark.phantoms < 1) throw ConfigError("config: benchmark.phantoms must be >= 1");
  for (const auto& s : benchmark.scenarios) Scenario::by_name(s);
  if (threads < 0) throw ConfigError("config: threads must be >= 0");
  if (output.dir.empty()) throw ConfigError("config: output.dir is empty");
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  Section top(j, "");
  if (const json* g = top.sub("geometry")) {
    Section s(*g, "geometry");
    if (const json* k = s.sub("intrinsics")) {
      Section ks(*k, "geometry.intrinsics");
      Intrinsics& in = c.geometry.intrinsics;
      ks.get("sid", in.sid);
      ks.get("sdd", in.sdd);
      ks.get("nu", in.nu);
      ks.get("nv", in.nv);
      ks.get("du", in.du);
      ks.get("dv", in.dv);
      // principal point follows the detector size unless given
      in.cu = (in.nu - 1) / 2.0;
      in.cv = (in.nv - 1) / 2.0;
      ks.get("cu", in.cu);
      ks.get("cv", in.cv);
      ks.finish();
    }
    s.get("n_views", c.geometry.n_views);
    s.get("start_angle_deg", c.geometry.start_angle_deg);
    s.get("desk_scale", c.geometry.desk_scale);
    s.get("slice_spacing", c.geometry.slice_spacing);
    s.finish();
  }
  if (const json* p = top.sub("phantom")) {
    Section s(*p, "phantom");
    s.get("kind", c.phantom.kind);
    s.get("seed", c.phantom.seed);
    s.get("metal", c.phantom.metal);
    s.get("path", c.phantom.path);
    s.finish();
  }
  if (const json* m = top.sub("motion")) {
    Section s(*m, "motion");
    s.get("kind", c.motion.kind);
    s.get_axis("axis", c.motion.axis);
    s.get("amplitude", c.motion.amplitude);
    s.get("nodes", c.motion.nodes);
    s.get("scenario", c.motion.scenario);
    s.get("noise_sigma", c.motion.noise_sigma);
    if (const json* sp = s.sub("splines"); sp && !sp->is_null()) c.motion.splines = splines_from_json(*sp);
    s.finish();
  }
  if (const json* m = top.sub("metric")) {
    Section s(*m, "metric");
    s.get("name", c.metric.name);
    s.get("window_lower", c.metric.window_lower);
    s.get("window_upper", c.metric.window_upper);
    s.get("bins", c.metric.bins);
    s.get("model", c.metric.model);
    s.get("threshold", c.metric.threshold);
    std::string mode = rpe_mode_name(c.metric.rpe_mode);
    s.get("rpe_mode", mode);
    c.metric.rpe_mode = parse_rpe_mode(mode);
    s.finish();
  }
  if (const json* o = top.sub("optimizer")) {
    Section s(*o, "optimizer");
    if (const json* st = s.sub("stages")) {
      if (!st->is_array()) throw ConfigError("config: optimizer.stages must be an array");
      c.optimizer.schedule.stages.clear();
      for (const json& e : *st) {
        Section es(e, "optimizer.stages[]");
        Stage stage;
        es.get("step", stage.step);
        es.get("max_iterations", stage.max_iterations);
        es.finish();
        c.optimizer.schedule.stages.push_back(stage);
      }
    }
    s.get("tol", c.optimizer.schedule.tol);
    s.get_axes("axes", c.optimizer.axes);
    s.get("annihilation_nodes", c.optimizer.annihilation_nodes);
    s.get("fine_tune", c.optimizer.fine_tune);
    s.finish();
  }
  if (const json* t = top.sub("training")) {
    Section s(*t, "training");
    s.get("samples", c.training.data.n_samples);
    s.get("amplitude_min", c.training.data.amplitude_min);
    s.get("amplitude_max", c.training.data.amplitude_max);
    s.get("motion_nodes", c.training.data.motion_nodes);
    s.get("learning_rate", c.training.train.learning_rate);
    s.get("batch_size", c.training.train.batch_size);
    s.get("max_epochs", c.training.train.max_epochs);
    s.get("patience", c.training.train.patience);
    s.get("phantoms", c.training.phantoms);
    s.get("held_out", c.training.held_out);
    s.get("write_dataset", c.training.write_dataset);
    s.finish();
  }
  if (const json* b = top.sub("benchmark")) {
    Section s(*b, "benchmark");
    s.get("scenarios", c.benchmark.scenarios);
    s.get_axes("axes", c.benchmark.axes);
    std::vector<std::string> methods;
    for (Method m : c.benchmark.methods) methods.push_back(method_name(m));
    s.get("methods", methods);
    c.benchmark.methods.clear();
    for (const auto& m : methods) c.benchmark.methods.push_back(parse_method(m));
    s.get("phantoms", c.benchmark.phantoms);
    s.get("plots", c.benchmark.plots);
    s.finish();
  }
  if (const json* sd = top.sub("seeds")) {
    Section s(*sd, "seeds");
    s.get("motion", c.seed);
    s.get("data", c.training.data.seed);
    s.get("train", c.training.train.seed);
    s.finish();
  }
  top.get("threads", c.threads);
  if (const json* o = top.sub("output")) {
    Section s(*o, "output");
    s.get("dir", c.output.dir);
    s.get("timing", c.output.timing);
    s.get("volume", c.output.volume);
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

json ExperimentConfig::to_json() const {
  const Intrinsics& k = geometry.intrinsics;
  json stages = json::array();
  for (const Stage& s : optimizer.schedule.stages) stages.push_back({{"step", s.step}, {"max_iterations", s.max_iterations}});
  json methods = json::array();
  for (Method m : benchmark.methods) methods.push_back(method_name(m));
  json j;
  j["geometry"] = {{"intrinsics",
                    {{"sid", k.sid}, {"sdd", k.sdd}, {"nu", k.nu}, {"nv", k.nv}, {"du", k.du}, {"dv", k.dv},
                     {"cu", k.cu}, {"cv", k.cv}}},
                   {"n_views", geometry.n_views},
                   {"start_angle_deg", geometry.start_angle_deg},
                   {"desk_scale", geometry.desk_scale},
                   {"slice_spacing", geometry.slice_spacing}};
  j["phantom"] = {{"kind", phantom.kind}, {"seed", phantom.seed}, {"metal", phantom.metal}, {"path", phantom.path}};
  j["motion"] = {{"kind", motion.kind},
                 {"axis", std::string(axis_name(motion.axis))},
                 {"amplitude", motion.amplitude},
                 {"nodes", motion.nodes},
                 {"scenario", motion.scenario},
                 {"noise_sigma", motion.noise_sigma},
                 {"splines", motion.splines ? tomofocus::to_json(*motion.splines) : json(nullptr)}};
  j["metric"] = {{"name", metric.name},
                 {"window_lower", metric.window_lower},
                 {"window_upper", metric.window_upper},
                 {"bins", metric.bins},
                 {"model", metric.model},
                 {"threshold", metric.threshold},
                 {"rpe_mode", rpe_mode_name(metric.rpe_mode)}};
  j["optimizer"] = {{"stages", stages},
                    {"tol", optimizer.schedule.tol},
                    {"axes", axes_json(optimizer.axes)},
                    {"annihilation_nodes", optimizer.annihilation_nodes},
                    {"fine_tune", optimizer.fine_tune}};
  j["training"] = {{"samples", training.data.n_samples},
                   {"amplitude_min", training.data.amplitude_min},
                   {"amplitude_max", training.data.amplitude_max},
                   {"motion_nodes", training.data.motion_nodes},
                   {"learning_rate", training.train.learning_rate},
                   {"batch_size", training.train.batch_size},
                   {"max_epochs", training.train.max_epochs},
                   {"patience", training.train.patience},
                   {"phantoms", training.phantoms},
                   {"held_out", training.held_out},
                   {"write_dataset", training.write_dataset}};
  j["benchmark"] = {{"scenarios", benchmark.scenarios},
                    {"axes", axes_json(benchmark.axes)},
                    {"methods", methods},
                    {"phantoms", benchmark.phantoms},
                    {"plots", benchmark.plots}};
  j["seeds"] = {{"motion", seed}, {"data", training.data.seed}, {"train", training.train.seed}};
  j["threads"] = threads;
  j["output"] = {{"dir", output.dir}, {"timing", output.timing}, {"volume", output.volume}};
  return j;
}

std::string ExperimentConfig::hash() const {
  json j = to_json();
  // where results go and how many threads compute them does not change them
  j.erase("output");
  j.erase("threads");
  return hex64(fnv1a(j.dump()));
}

Trajectory ExperimentConfig::trajectory() const {
  return build_short_scan(geometry.intrinsics, geometry.n_views, geometry.start_angle_deg);
}

SliceSet ExperimentConfig::slices() const { return make_slice_set({geometry.desk_scale, geometry.slice_spacing}); }

MarkerSet ExperimentConfig::markers() const { return default_markers(geometry.desk_scale); }

Phantom ExperimentConfig::make_phantom() const {
  if (phantom.kind == "default") return default_head_phantom(geometry.desk_scale);
  if (phantom.kind == "variant") return head_phantom_variant(geometry.desk_scale, phantom.seed, phantom.metal);
  return phantom_from_json(read_json(phantom.path));
}

std::vector<Phantom> ExperimentConfig::phantom_series(int count) const {
  std::vector<Phantom> out;
  for (int i = 0; i < count; ++i)
    out.push_back(head_phantom_variant(geometry.desk_scale, phantom.seed + std::uint64_t(i), i % 3 == 0));
  return out;
}

fs::path ExperimentConfig::output_dir() const {
  fs::path p(output.dir);
  if (p.is_relative())
    if (const char* root = std::getenv("TOMOFOCUS_OUTPUT_ROOT"); root && *root) p = fs::path(root) / p;
  return p;
}

ExperimentConfig load_config(const fs::path& p) { return ExperimentConfig::from_json(read_json(p)); }

void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override must look like key.path=value: " + assignment);
  const std::string key = assignment.substr(0, eq), text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("override has an empty key: " + assignment);
    if (!node->is_object()) {
      if (!node->is_null()) throw ConfigError("override path is not an object: " + assignment);
      *node = json::object();
    }
    node = &(*node)[part];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  *node = std::move(value);
}

}  // namespace tomofocus

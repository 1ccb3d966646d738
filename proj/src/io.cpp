#include "tomofocus/io.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "tomofocus/errors.hpp"

namespace tomofocus {

std::string format_number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

std::string csv_line(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    const std::string& f = fields[i];
    if (f.find_first_of(",\"\n") != std::string::npos) {
      out += '"';
      for (char c : f) {
        if (c == '"') out += '"';
        out += c;
      }
      out += '"';
    } else {
      out += f;
    }
  }
  out += '\n';
  return out;
}

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

void write_text(const fs::path& p, const std::string& text) {
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot write " + p.string());
  f << text;
  if (!f) throw IoError("write failed: " + p.string());
}

std::string read_text(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  if (!f) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

json read_json(const fs::path& p) {
  const std::string text = read_text(p);
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(p.string() + ": " + e.what());
  }
}

void write_f32(const fs::path& p, const std::vector<float>& v) {
  std::string bytes(v.size() * 4, '\0');
  for (std::size_t i = 0; i < v.size(); ++i) {
    const std::uint32_t u = std::bit_cast<std::uint32_t>(v[i]);
    for (int b = 0; b < 4; ++b) bytes[4 * i + b] = static_cast<char>((u >> (8 * b)) & 0xff);
  }
  write_text(p, bytes);
}

void write_f32(const fs::path& p, const std::vector<double>& v) {
  write_f32(p, std::vector<float>(v.begin(), v.end()));
}

std::vector<float> read_f32(const fs::path& p, std::size_t expected) {
  const std::string bytes = read_text(p);
  if (bytes.size() != expected * 4)
    throw IoError(p.string() + ": expected " + std::to_string(expected * 4) + " bytes, found " +
                  std::to_string(bytes.size()));
  std::vector<float> out(expected);
  for (std::size_t i = 0; i < expected; ++i) {
    std::uint32_t u = 0;
    for (int b = 0; b < 4; ++b) u |= std::uint32_t(static_cast<unsigned char>(bytes[4 * i + b])) << (8 * b);
    out[i] = std::bit_cast<float>(u);
  }
  return out;
}

fs::path sidecar_path(const fs::path& artifact) { return fs::path(artifact.string() + ".json"); }

json make_sidecar(const std::string& kind, const std::string& config_hash, json params) {
  return {{"schema_version", kSchemaVersion}, {"kind", kind}, {"config_hash", config_hash}, {"params", std::move(params)}};
}

void write_sidecar(const fs::path& artifact, const json& sidecar) {
  write_text(sidecar_path(artifact), sidecar.dump(2) + "\n");
}

json read_sidecar(const fs::path& artifact, const std::string& kind) {
  const json j = read_json(sidecar_path(artifact));
  if (!j.contains("schema_version") || j["schema_version"] != kSchemaVersion)
    throw IoError(artifact.string() + ": unsupported sidecar schema");
  if (!kind.empty() && j.value("kind", "") != kind)
    throw IoError(artifact.string() + ": sidecar kind '" + j.value("kind", "") + "', expected '" + kind + "'");
  return j;
}

namespace {

template <typename F>
auto guarded(const char* what, F&& f) {
  try {
    return f();
  } catch (const json::exception& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

json vec3(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
Vec3 vec3(const json& j) {
  if (!j.is_array() || j.size() != 3) throw ConfigError("expected a 3-vector");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

}  // namespace

json to_json(const Intrinsics& k) {
  return {{"sid", k.sid}, {"sdd", k.sdd}, {"nu", k.nu}, {"nv", k.nv},
          {"du", k.du},   {"dv", k.dv},   {"cu", k.cu}, {"cv", k.cv}};
}

Intrinsics intrinsics_from_json(const json& j) {
  return guarded("intrinsics", [&] {
    Intrinsics k;
    k.sid = j.at("sid").get<double>();
    k.sdd = j.at("sdd").get<double>();
    k.nu = j.at("nu").get<int>();
    k.nv = j.at("nv").get<int>();
    k.du = j.at("du").get<double>();
    k.dv = j.at("dv").get<double>();
    k.cu = j.at("cu").get<double>();
    k.cv = j.at("cv").get<double>();
    k.validate();
    return k;
  });
}

json to_json(const Trajectory& t) {
  json views = json::array();
  for (const View& v : t.views()) {
    json m = json::array();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) m.push_back(v.p(r, c));
    views.push_back({{"angle_deg", v.angle_deg}, {"matrix", m}});
  }
  return {{"intrinsics", to_json(t.intrinsics())}, {"views", views}};
}

Trajectory trajectory_from_json(const json& j) {
  return guarded("trajectory", [&] {
    const Intrinsics k = intrinsics_from_json(j.at("intrinsics"));
    std::vector<View> views;
    for (const json& v : j.at("views")) {
      const json& m = v.at("matrix");
      if (!m.is_array() || m.size() != 12) throw ConfigError("trajectory: matrices need 12 entries");
      Mat34 p;
      for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 4; ++c) p(r, c) = m[4 * r + c].get<double>();
      views.push_back({ProjectionMatrix(p), v.at("angle_deg").get<double>()});
    }
    return Trajectory(k, std::move(views));
  });
}

json to_json(const Ellipsoid& e) {
  return {{"center", vec3(e.center)},
          {"semi_axes", vec3(e.semi_axes)},
          {"angles_deg", json::array({e.rotation.rx, e.rotation.ry, e.rotation.rz})},
          {"density", e.density},
          {"label", e.label}};
}

Ellipsoid ellipsoid_from_json(const json& j) {
  return guarded("ellipsoid", [&] {
    Ellipsoid e;
    e.center = vec3(j.at("center"));
    e.semi_axes = vec3(j.at("semi_axes"));
    if (j.contains("angles_deg")) {
      const Vec3 a = vec3(j.at("angles_deg"));
      e.rotation.rx = a.x();
      e.rotation.ry = a.y();
      e.rotation.rz = a.z();
    }
    e.density = j.at("density").get<double>();
    e.label = j.value("label", "");
    e.validate();
    return e;
  });
}

json to_json(const Phantom& p) {
  json el = json::array(), metal = json::array();
  for (const auto& e : p.ellipsoids()) el.push_back(to_json(e));
  for (const auto& e : p.metal()) metal.push_back(to_json(e));
  return {{"name", p.name()}, {"ellipsoids", el}, {"metal", metal}};
}

Phantom phantom_from_json(const json& j) {
  return guarded("phantom", [&] {
    std::vector<Ellipsoid> el, metal;
    for (const json& e : j.at("ellipsoids")) el.push_back(ellipsoid_from_json(e));
    if (j.contains("metal"))
      for (const json& e : j.at("metal")) metal.push_back(ellipsoid_from_json(e));
    return Phantom(j.at("name").get<std::string>(), std::move(el), std::move(metal));
  });
}

json to_json(const MotionSplineSet& m) {
  json values = json::object();
  for (Axis a : kAllAxes) {
    json row = json::array();
    for (int j = 0; j < m.node_count(); ++j) row.push_back(m.value(a, j));
    values[std::string(axis_name(a))] = row;
  }
  return {{"positions", m.positions()}, {"values", values}};
}

MotionSplineSet splines_from_json(const json& j) {
  return guarded("spline set", [&] {
    const auto pos = j.at("positions").get<std::vector<double>>();
    Eigen::MatrixXd v = Eigen::MatrixXd::Zero(6, pos.size());
    const json& values = j.at("values");
    for (auto it = values.begin(); it != values.end(); ++it) {
      const Axis a = parse_axis(it.key());
      const auto row = it.value().get<std::vector<double>>();
      if (row.size() != pos.size()) throw ConfigError("spline set: axis " + it.key() + " has the wrong node count");
      for (std::size_t k = 0; k < row.size(); ++k) v(int(a), k) = row[k];
    }
    return MotionSplineSet(pos, v);
  });
}

json to_json(const RigidMotion& m) {
  return {{"tx", m.tx}, {"ty", m.ty}, {"tz", m.tz}, {"rx", m.rx}, {"ry", m.ry}, {"rz", m.rz}};
}

std::string profile_csv(const std::vector<RpeProfile>& profiles) {
  std::string out = csv_line({"view", "rpe", "variant"});
  for (const auto& p : profiles)
    for (std::size_t i = 0; i < p.values.size(); ++i)
      out += csv_line({std::to_string(i), format_number(p.values[i]), std::string(variant_name(p.variant))});
  return out;
}

std::string trace_csv(const std::vector<TraceRow>& trace) {
  std::string out = csv_line({"stage", "axis", "node", "iteration", "value", "score"});
  for (const auto& r : trace)
    out += csv_line({std::to_string(r.stage), std::string(axis_name(r.axis)), std::to_string(r.node),
                     std::to_string(r.iteration), format_number(r.value), format_number(r.score)});
  return out;
}

std::string history_csv(const std::vector<EpochRecord>& history) {
  std::string out = csv_line({"epoch", "train_loss", "val_loss"});
  for (const auto& e : history)
    out += csv_line({std::to_string(e.epoch), format_number(e.train_loss), format_number(e.val_loss)});
  return out;
}

void write_slices(const fs::path& p, const SliceTriplets& s, const SliceSet& set, const std::string& config_hash,
                  json params) {
  std::vector<float> flat;
  flat.reserve(s.pixel_count());
  json planes = json::array();
  for (int i = 0; i < 9; ++i) {
    const SliceImage& img = s.slices[i];
    flat.insert(flat.end(), img.data.begin(), img.data.end());
    const SlicePlane& pl = set.planes[i];
    planes.push_back({{"orientation", std::string(orientation_label(pl.orientation))},
                      {"rows", img.rows},
                      {"cols", img.cols},
                      {"origin", vec3(pl.origin)},
                      {"row_step", vec3(pl.row_step)},
                      {"col_step", vec3(pl.col_step)}});
  }
  params["planes"] = planes;
  params["spacing"] = set.volume.spacing;
  write_f32(p, flat);
  write_sidecar(p, make_sidecar("slices", config_hash, std::move(params)));
}

SliceTriplets read_slices(const fs::path& p) {
  const json j = read_sidecar(p, "slices");
  return guarded("slices sidecar", [&] {
    const json& planes = j.at("params").at("planes");
    if (planes.size() != 9) throw IoError(p.string() + ": expected nine planes");
    SliceTriplets s;
    std::size_t total = 0;
    for (int i = 0; i < 9; ++i) {
      s.slices[i].rows = planes[i].at("rows").get<int>();
      s.slices[i].cols = planes[i].at("cols").get<int>();
      total += std::size_t(s.slices[i].rows) * s.slices[i].cols;
    }
    const auto flat = read_f32(p, total);
    std::size_t off = 0;
    for (auto& img : s.slices) {
      const std::size_t n = std::size_t(img.rows) * img.cols;
      img.data.assign(flat.begin() + off, flat.begin() + off + n);
      off += n;
    }
    return s;
  });
}

void write_volume(const fs::path& p, const Volume& v, const std::string& config_hash, json params) {
  params["dims"] = {v.grid.nx, v.grid.ny, v.grid.nz};
  params["spacing"] = v.grid.spacing;
  params["origin"] = vec3(v.grid.origin);
  params["order"] = "x fastest, then y, then z";
  write_f32(p, v.data);
  write_sidecar(p, make_sidecar("volume", config_hash, std::move(params)));
}

Volume read_volume(const fs::path& p) {
  const json j = read_sidecar(p, "volume");
  return guarded("volume sidecar", [&] {
    const json& q = j.at("params");
    Volume v;
    v.grid.nx = q.at("dims")[0].get<int>();
    v.grid.ny = q.at("dims")[1].get<int>();
    v.grid.nz = q.at("dims")[2].get<int>();
    v.grid.spacing = q.at("spacing").get<double>();
    v.grid.origin = vec3(q.at("origin"));
    v.grid.validate();
    v.data = read_f32(p, v.grid.voxel_count());
    return v;
  });
}

void write_projections(const fs::path& p, const ProjectionStack& s, const Intrinsics& k,
                       const std::string& trajectory_ref, const std::string& config_hash, json params) {
  params["n_views"] = s.n_views;
  params["nv"] = s.nv;
  params["nu"] = s.nu;
  params["du"] = k.du;
  params["dv"] = k.dv;
  params["order"] = "view, row (v), column (u)";
  params["trajectory"] = trajectory_ref;
  write_f32(p, s.data);
  write_sidecar(p, make_sidecar("projections", config_hash, std::move(params)));
}

ProjectionStack read_projections(const fs::path& p) {
  const json j = read_sidecar(p, "projections");
  return guarded("projection sidecar", [&] {
    const json& q = j.at("params");
    ProjectionStack s(q.at("n_views").get<int>(), q.at("nv").get<int>(), q.at("nu").get<int>());
    s.data = read_f32(p, s.data.size());
    return s;
  });
}

namespace {
std::string sample_stem(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "sample_%05zu.f32", i);
  return buf;
}
}  // namespace

void write_dataset(const fs::path& dir, const Dataset& d, const std::string& config_hash) {
  fs::create_directories(dir);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const Sample& s = d.samples[i];
    std::vector<float> flat;
    json shapes = json::array();
    for (int k = 0; k < 9; ++k) {
      flat.insert(flat.end(), s.input.data[k].begin(), s.input.data[k].end());
      shapes.push_back({s.input.rows[k], s.input.cols[k]});
    }
    const fs::path p = dir / sample_stem(i);
    write_f32(p, flat);
    json params = {{"shapes", shapes},
                   {"labels",
                    {{"mrpe", s.labels.mrpe},
                     {"all", s.labels.all},
                     {"in_plane", s.labels.in_plane},
                     {"out_plane", s.labels.out_plane}}},
                   {"phantom", s.meta.phantom},
                   {"phantom_name", s.meta.phantom_name},
                   {"axis", std::string(axis_name(s.meta.axis))},
                   {"amplitude", s.meta.amplitude},
                   {"seed", s.meta.seed},
                   {"window", {s.meta.window.first, s.meta.window.last}},
                   {"splines", to_json(s.meta.splines)}};
    write_sidecar(p, make_sidecar("sample", config_hash, std::move(params)));
  }
  write_text(dir / "index.json", json{{"schema_version", kSchemaVersion}, {"samples", d.size()}}.dump(2) + "\n");
}

Dataset read_dataset(const fs::path& dir) {
  const json idx = read_json(dir / "index.json");
  const std::size_t n = guarded("dataset index", [&] { return idx.at("samples").get<std::size_t>(); });
  Dataset d;
  d.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const fs::path p = dir / sample_stem(i);
    const json j = read_sidecar(p, "sample");
    guarded("sample sidecar", [&] {
      const json& q = j.at("params");
      Sample& s = d.samples[i];
      std::size_t total = 0;
      for (int k = 0; k < 9; ++k) {
        s.input.rows[k] = q.at("shapes")[k][0].get<int>();
        s.input.cols[k] = q.at("shapes")[k][1].get<int>();
        total += std::size_t(s.input.rows[k]) * s.input.cols[k];
      }
      const auto flat = read_f32(p, total);
      std::size_t off = 0;
      for (int k = 0; k < 9; ++k) {
        const std::size_t m = std::size_t(s.input.rows[k]) * s.input.cols[k];
        s.input.data[k].assign(flat.begin() + off, flat.begin() + off + m);
        off += m;
      }
      const json& l = q.at("labels");
      s.labels.mrpe = l.at("mrpe").get<double>();
      s.labels.all = l.at("all").get<std::vector<double>>();
      s.labels.in_plane = l.at("in_plane").get<std::vector<double>>();
      s.labels.out_plane = l.at("out_plane").get<std::vector<double>>();
      s.meta.phantom = q.at("phantom").get<int>();
      s.meta.phantom_name = q.at("phantom_name").get<std::string>();
      s.meta.axis = parse_axis(q.at("axis").get<std::string>());
      s.meta.amplitude = q.at("amplitude").get<double>();
      s.meta.seed = q.at("seed").get<std::uint64_t>();
      s.meta.window = {q.at("window")[0].get<int>(), q.at("window")[1].get<int>()};
      s.meta.splines = splines_from_json(q.at("splines"));
      return 0;
    });
  }
  return d;
}

}  // namespace tomofocus

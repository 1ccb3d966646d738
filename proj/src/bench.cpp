#include "tomofocus/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <sstream>

#include "tomofocus/errors.hpp"
#include "tomofocus/io.hpp"
#include "tomofocus/parallel.hpp"

namespace tomofocus {

void Scenario::validate() const {
  if (motion_nodes < 4 || annihilation_nodes < 2) throw ConfigError("scenario " + name + ": too few spline nodes");
  if (!(amplitude >= 0) || !std::isfinite(amplitude)) throw ConfigError("scenario " + name + ": bad amplitude");
  if (lobes < 1) throw ConfigError("scenario " + name + ": lobes must be >= 1");
}

Scenario Scenario::by_name(const std::string& name) {
  if (name == "A" || name == "a") return a();
  if (name == "B" || name == "b") return b();
  throw ConfigError("unknown scenario '" + name + "'");
}

MotionSplineSet scenario_motion(const Scenario& sc, Axis axis, int n_views, ViewRange safe) {
  sc.validate();
  MotionSplineSet m = MotionSplineSet::uniform(sc.motion_nodes, n_views);
  std::vector<int> inside;
  for (int j = 0; j < m.node_count(); ++j)
    if (safe.contains(int(std::floor(m.positions()[j]))) && safe.contains(int(std::ceil(m.positions()[j]))))
      inside.push_back(j);
  // nodes whose two neighbours are inside the safe range carry motion
  std::vector<int> active;
  for (std::size_t k = 1; k + 1 < inside.size(); ++k)
    if (inside[k - 1] == inside[k] - 1 && inside[k + 1] == inside[k] + 1) active.push_back(inside[k]);
  if (active.empty()) throw ConfigError("scenario " + sc.name + ": no node fits inside the safe view range");
  const int k = int(active.size());
  std::vector<double> v(k);
  double peak = 0;
  for (int i = 0; i < k; ++i) {
    const double tau = double(i + 1) / (k + 1);
    v[i] = sc.lobes == 1 ? std::pow(std::sin(M_PI * tau), 2) : std::sin(sc.lobes * M_PI * tau) * std::sin(M_PI * tau);
    peak = std::max(peak, std::abs(v[i]));
  }
  for (int i = 0; i < k; ++i) m.set_value(axis, active[i], peak > 0 ? sc.amplitude * v[i] / peak : 0.0);
  return m;
}

double misalignment(const MotionCurves& est, const MotionCurves& gt, const std::vector<Axis>& axes) {
  if (est.view_count() != gt.view_count()) throw ShapeError("misalignment: curve lengths differ");
  if (axes.empty() || est.view_count() == 0) return 0.0;
  double s = 0;
  for (Axis a : axes)
    for (int i = 0; i < est.view_count(); ++i) s += std::abs(est(a, i) + gt(a, i));
  return s / (double(axes.size()) * est.view_count());
}

double misalignment(const MotionSplineSet& est, const MotionSplineSet& gt, int n_views) {
  const MotionCurves e = curves_from_splines(est, n_views), g = curves_from_splines(gt, n_views);
  std::vector<Axis> axes;
  for (Axis a : kAllAxes)
    if (!e.values.row(int(a)).isZero(0.0) || !g.values.row(int(a)).isZero(0.0)) axes.push_back(a);
  return misalignment(e, g, axes);
}

std::string method_name(Method m) {
  switch (m) {
    case Method::none: return "None";
    case Method::ent: return "Ent";
    case Method::ent_plus: return "Ent+";
    case Method::tv: return "Tv";
    case Method::tv_plus: return "Tv+";
    case Method::cnn: return "Cnn";
    case Method::cnn_plus: return "Cnn+";
    case Method::gt: return "Gt";
  }
  return "?";
}

Method parse_method(const std::string& s) {
  for (Method m : kAllMethods)
    if (method_name(m) == s) return m;
  throw ConfigError("unknown metric '" + s + "' (expected None, Ent, Ent+, Tv, Tv+, Cnn, Cnn+ or Gt)");
}

bool needs_model(Method m) { return m == Method::cnn || m == Method::cnn_plus; }

void BenchConfig::validate() const {
  if (scenarios.empty() || axes.empty() || methods.empty()) throw ConfigError("benchmark: empty scenario, axis or metric list");
  for (const auto& s : scenarios) s.validate();
  schedule.validate();
  if (bins < 2) throw ConfigError("benchmark: entropy bins must be >= 2");
  if (!(marker_scale > 0)) throw ConfigError("benchmark: marker scale must be positive");
}

namespace {

struct Cell {
  std::size_t phantom;
  std::size_t scenario;
  Axis axis;
};

double voi_ssim(const SliceTriplets& rec, const SliceTriplets& ref, const SliceMasks* voi) {
  if (!voi) return std::nan("");
  try {
    return ssim(rec, ref, voi);
  } catch (const DomainError&) {
    return std::nan("");
  }
}

}  // namespace

BenchTable run_benchmark(const BenchConfig& cfg, const std::vector<Phantom>& phantoms, const Trajectory& base,
                         const SliceSet& set, std::shared_ptr<const RegressorModel> model, const ProgressFn& progress) {
  cfg.validate();
  if (phantoms.empty()) throw ConfigError("benchmark: no phantoms");
  for (Method m : cfg.methods)
    if (needs_model(m) && !model) throw ConfigError("benchmark: metric " + method_name(m) + " needs a trained model");
  const int n = int(base.size());
  const ViewRange safe = parker_safe_range(base);
  const auto markers = std::make_shared<MarkerSet>(default_markers(cfg.marker_scale));
  const SliceMasks cylinder = cylinder_mask(set);

  struct PhantomData {
    std::unique_ptr<FdkReconstructor> fdk;
    SliceTriplets reference;
    std::optional<SliceMasks> voi;
    BoneWindow window;
  };
  std::vector<PhantomData> pd(phantoms.size());
  for (std::size_t p = 0; p < phantoms.size(); ++p) {
    pd[p].fdk = std::make_unique<FdkReconstructor>(base, render_projections(phantoms[p], base));
    pd[p].reference = pd[p].fdk->reconstruct(set, EffectiveTrajectory(base));
    try {
      pd[p].voi = nasal_mask(set, phantoms[p]);
    } catch (const ConfigError&) {
    }
    pd[p].window = BoneWindow::for_phantom(phantoms[p], cfg.bins);
  }

  std::vector<Cell> cells;
  for (std::size_t s = 0; s < cfg.scenarios.size(); ++s)
    for (Axis a : cfg.axes)
      for (std::size_t p = 0; p < phantoms.size(); ++p) cells.push_back({p, s, a});

  const std::size_t nm = cfg.methods.size();
  std::vector<BenchRow> rows(cells.size() * nm);
  std::vector<BenchCurves> curves(cells.size() * nm);
  parallel_for(cells.size(), [&](std::size_t cb, std::size_t ce) {
    for (std::size_t ci = cb; ci < ce; ++ci) {
      const Cell& c = cells[ci];
      const Scenario& sc = cfg.scenarios[c.scenario];
      const PhantomData& d = pd[c.phantom];
      const MotionSplineSet motion = scenario_motion(sc, c.axis, n, safe);
      const MotionCurves gt = curves_from_splines(motion, n);
      AutofocusProblem prob{d.fdk.get(), set, compose(base, annihilating_motion(gt))};
      AutofocusOptions opt;
      opt.axes = {c.axis};
      opt.schedule = cfg.schedule;
      const MotionSplineSet m0 = MotionSplineSet::uniform(sc.annihilation_nodes, n);

      IqmSpec ent;
      ent.kind = IqmKind::entropy;
      ent.window = d.window;
      IqmSpec tv;
      tv.kind = IqmKind::tv;
      IqmSpec cnn;
      cnn.kind = IqmKind::learned;
      cnn.model = model;
      IqmSpec gtm;
      gtm.kind = IqmKind::oracle;
      gtm.markers = markers;
      gtm.rpe_mode = cfg.rpe_mode;

      // the "+" variants continue from the plain result, computed once per cell
      std::map<Method, CompensationResult> plain;
      auto base_run = [&](Method m) -> const CompensationResult& {
        auto it = plain.find(m);
        if (it != plain.end()) return it->second;
        CompensationResult r;
        if (m == Method::ent) r = optimize_trajectory(prob, ent, m0, opt);
        else if (m == Method::tv) r = optimize_trajectory(prob, tv, m0, opt);
        else {
          AutofocusOptions mopt = opt;
          mopt.mask = learned_mask(prob, *model, cfg.threshold);
          r = optimize_trajectory(prob, cnn, m0, mopt);
        }
        return plain.emplace(m, std::move(r)).first->second;
      };

      for (std::size_t mi = 0; mi < nm; ++mi) {
        const Method method = cfg.methods[mi];
        CompensationResult r;
        switch (method) {
          case Method::none: {
            const auto t0 = std::chrono::steady_clock::now();
            r.splines = m0;
            r.curves = MotionCurves::zeros(n);
            r.reconstruction = reconstruct_corrected(prob, r.curves);
            r.score = std::nan("");
            r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
            break;
          }
          case Method::ent:
          case Method::tv:
          case Method::cnn: r = base_run(method); break;
          case Method::gt: r = optimize_trajectory(prob, gtm, m0, opt); break;
          case Method::ent_plus: r = fine_tune(prob, base_run(Method::ent), tv, opt); break;
          case Method::tv_plus: r = fine_tune(prob, base_run(Method::tv), ent, opt); break;
          case Method::cnn_plus: {
            const CompensationResult& first = base_run(Method::cnn);
            AutofocusOptions mopt = opt;
            mopt.mask = learned_mask(prob, *model, cfg.threshold);
            r = fine_tune(prob, first, ent, mopt);
            break;
          }
        }
        BenchRow& row = rows[ci * nm + mi];
        row.scenario = sc.name;
        row.axis = c.axis;
        row.metric = method_name(method);
        row.phantom = phantoms[c.phantom].name();
        row.misalignment = misalignment(r.curves, gt, {c.axis});
        row.ssim = ssim(r.reconstruction, d.reference, &cylinder);
        row.ssim_voi = voi_ssim(r.reconstruction, d.reference, d.voi ? &*d.voi : nullptr);
        row.score = r.score;
        row.runtime_s = r.seconds;
        curves[ci * nm + mi] = {sc.name, c.axis, row.metric, row.phantom, gt, r.curves};
        if (progress)
          progress(sc.name + " " + std::string(axis_name(c.axis)) + " " + row.metric + " " + row.phantom +
                   ": misalignment " + format_number(row.misalignment) + ", SSIM " + format_number(row.ssim));
      }
    }
  });

  BenchTable t;
  t.rows = std::move(rows);
  t.curves = std::move(curves);
  // summary in (scenario, axis, metric) order
  for (std::size_t s = 0; s < cfg.scenarios.size(); ++s)
    for (Axis a : cfg.axes)
      for (Method m : cfg.methods) {
        BenchRow sum;
        sum.scenario = cfg.scenarios[s].name;
        sum.axis = a;
        sum.metric = method_name(m);
        sum.phantom = "mean";
        int count = 0;
        for (const BenchRow& r : t.rows)
          if (r.scenario == sum.scenario && r.axis == a && r.metric == sum.metric) {
            sum.misalignment += r.misalignment;
            sum.ssim += r.ssim;
            sum.ssim_voi += r.ssim_voi;
            sum.score += r.score;
            sum.runtime_s += r.runtime_s;
            ++count;
          }
        sum.misalignment /= count;
        sum.ssim /= count;
        sum.ssim_voi /= count;
        sum.score /= count;
        sum.runtime_s /= count;
        t.summary.push_back(sum);
      }
  return t;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::string out = csv_line({"scenario", "axis", "metric", "phantom", "misalignment", "ssim", "ssim_voi", "score"});
  for (const auto& r : rows)
    out += csv_line({r.scenario, std::string(axis_name(r.axis)), r.metric, r.phantom, format_number(r.misalignment),
                     format_number(r.ssim), format_number(r.ssim_voi), format_number(r.score)});
  return out;
}

std::string bench_timing_csv(const std::vector<BenchRow>& rows) {
  std::string out = csv_line({"scenario", "axis", "metric", "phantom", "runtime_s"});
  for (const auto& r : rows)
    out += csv_line({r.scenario, std::string(axis_name(r.axis)), r.metric, r.phantom, format_number(r.runtime_s)});
  return out;
}

namespace {

std::string f2(double v) {
  std::ostringstream s;
  s.imbue(std::locale::classic());
  s.setf(std::ios::fixed);
  s.precision(2);
  s << v;
  return s.str();
}

struct Box {
  double lo, q1, med, q3, hi;
};

Box box_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double x = p * (v.size() - 1);
    const std::size_t i = std::size_t(x);
    const double f = x - i;
    return i + 1 < v.size() ? v[i] * (1 - f) + v[i + 1] * f : v[i];
  };
  return {v.front(), q(0.25), q(0.5), q(0.75), v.back()};
}

}  // namespace

std::string misalignment_svg(const BenchTable& t, const std::string& scenario) {
  std::vector<std::string> axes, metrics;
  std::map<std::pair<std::string, std::string>, std::vector<double>> groups;
  for (const BenchRow& r : t.rows) {
    if (r.scenario != scenario) continue;
    const std::string a(axis_name(r.axis));
    if (std::find(axes.begin(), axes.end(), a) == axes.end()) axes.push_back(a);
    if (std::find(metrics.begin(), metrics.end(), r.metric) == metrics.end()) metrics.push_back(r.metric);
    groups[{a, r.metric}].push_back(r.misalignment);
  }
  double top = 1e-9;
  for (const auto& [k, v] : groups)
    for (double x : v) top = std::max(top, x);
  const double w = 120.0 * std::max<std::size_t>(1, axes.size()) + 80, h = 320, plot = 240;
  const double bw = 100.0 / std::max<std::size_t>(1, metrics.size());
  auto ypos = [&](double v) { return 20 + plot * (1 - v / top); };
  static const char* colors[] = {"#777777", "#1f77b4", "#aec7e8", "#2ca02c", "#98df8a", "#d62728", "#ff9896", "#9467bd"};
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + f2(w) + "\" height=\"" + f2(h) + "\">\n";
  s += "<text x=\"10\" y=\"14\" font-size=\"12\">scenario " + scenario + ": misalignment, max " + f2(top) + "</text>\n";
  s += "<line x1=\"60\" y1=\"" + f2(ypos(0)) + "\" x2=\"" + f2(w - 10) + "\" y2=\"" + f2(ypos(0)) +
       "\" stroke=\"black\"/>\n";
  for (std::size_t ai = 0; ai < axes.size(); ++ai) {
    const double x0 = 70 + 120.0 * ai;
    s += "<text x=\"" + f2(x0 + 40) + "\" y=\"" + f2(h - 40) + "\" font-size=\"12\">" + axes[ai] + "</text>\n";
    for (std::size_t mi = 0; mi < metrics.size(); ++mi) {
      const auto it = groups.find({axes[ai], metrics[mi]});
      if (it == groups.end()) continue;
      const Box b = box_of(it->second);
      const double x = x0 + bw * mi, cx = x + bw / 2;
      const char* col = colors[mi % 8];
      s += "<line x1=\"" + f2(cx) + "\" y1=\"" + f2(ypos(b.lo)) + "\" x2=\"" + f2(cx) + "\" y2=\"" + f2(ypos(b.hi)) +
           "\" stroke=\"" + col + "\"/>\n";
      s += "<rect x=\"" + f2(x + 1) + "\" y=\"" + f2(ypos(b.q3)) + "\" width=\"" + f2(bw - 2) + "\" height=\"" +
           f2(std::max(0.5, ypos(b.q1) - ypos(b.q3))) + "\" fill=\"" + col + "\"/>\n";
      s += "<line x1=\"" + f2(x + 1) + "\" y1=\"" + f2(ypos(b.med)) + "\" x2=\"" + f2(x + bw - 1) + "\" y2=\"" +
           f2(ypos(b.med)) + "\" stroke=\"black\"/>\n";
    }
  }
  for (std::size_t mi = 0; mi < metrics.size(); ++mi)
    s += "<text x=\"" + f2(70 + 70.0 * mi) + "\" y=\"" + f2(h - 15) + "\" font-size=\"11\" fill=\"" +
         colors[mi % 8] + "\">" + metrics[mi] + "</text>\n";
  s += "</svg>\n";
  return s;
}

std::string curve_svg(const BenchCurves& c) {
  const int n = c.gt.view_count();
  const int a = int(c.axis);
  double top = 1e-9;
  for (int i = 0; i < n; ++i) top = std::max({top, std::abs(c.gt.values(a, i)), std::abs(c.est.values(a, i))});
  const double w = 600, h = 240;
  auto px = [&](int i) { return 40 + (w - 60) * i / std::max(1, n - 1); };
  auto py = [&](double v) { return h / 2 - (h / 2 - 20) * v / top; };
  auto poly = [&](const MotionCurves& m, double sign, const char* col) {
    std::string p = "<polyline fill=\"none\" stroke=\"" + std::string(col) + "\" points=\"";
    for (int i = 0; i < n; ++i) p += f2(px(i)) + "," + f2(py(sign * m.values(a, i))) + " ";
    return p + "\"/>\n";
  };
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"600\" height=\"240\">\n";
  s += "<text x=\"10\" y=\"14\" font-size=\"12\">" + c.scenario + " " + std::string(axis_name(c.axis)) + " " +
       c.metric + " " + c.phantom + ": motion (black), negated annihilating curve (red)</text>\n";
  s += "<line x1=\"40\" y1=\"" + f2(py(0)) + "\" x2=\"" + f2(w - 20) + "\" y2=\"" + f2(py(0)) + "\" stroke=\"#bbbbbb\"/>\n";
  s += poly(c.gt, 1, "black");
  s += poly(c.est, -1, "red");
  s += "</svg>\n";
  return s;
}

}  // namespace tomofocus

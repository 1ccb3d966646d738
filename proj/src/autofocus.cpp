#include "tomofocus/autofocus.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>

#include "tomofocus/errors.hpp"

namespace tomofocus {

void StageSchedule::validate() const {
  if (stages.empty()) throw ConfigError("schedule: at least one stage is required");
  for (const Stage& s : stages) {
    if (!(s.step > 0) || !std::isfinite(s.step)) throw ConfigError("schedule: stage steps must be positive");
    if (s.max_iterations < 0) throw ConfigError("schedule: iteration caps must be >= 0");
  }
  if (!(tol > 0)) throw ConfigError("schedule: tolerance must be positive");
}

SimplexResult nelder_mead_1d(const std::function<double(double)>& f, double x0, double step, int max_iter,
                             double tol, const SimplexObserver& observer, std::optional<double> f0) {
  SimplexResult r;
  auto eval = [&](double x, int it) {
    const double v = f(x);
    ++r.evaluations;
    if (!std::isfinite(v))
      throw DivergenceError("objective is not finite at " + std::to_string(x) + " (iteration " + std::to_string(it) +
                            ")");
    if (observer) observer(it, x, v);
    return v;
  };
  double a = x0;
  double fa = f0 ? *f0 : eval(a, 0);
  if (!std::isfinite(fa)) throw DivergenceError("objective is not finite at the start point");
  r.x = a;
  r.fx = fa;
  if (max_iter <= 0) return r;
  double b = x0 + step;
  double fb = eval(b, 0);
  int it = 0;
  while (it < max_iter && std::abs(b - a) >= tol) {
    ++it;
    if (fb < fa) {
      std::swap(a, b);
      std::swap(fa, fb);
    }
    // a is the best vertex, so it is also the centroid
    const double xr = a + (a - b);
    const double fr = eval(xr, it);
    if (fr < fa) {
      const double xe = a + 2.0 * (a - b);
      const double fe = eval(xe, it);
      if (fe < fr) {
        b = xe;
        fb = fe;
      } else {
        b = xr;
        fb = fr;
      }
    } else if (fr < fb) {
      const double xc = a + 0.5 * (xr - a);
      const double fc = eval(xc, it);
      if (fc <= fr) {
        b = xc;
        fb = fc;
      } else {
        b = a + 0.5 * (b - a);
        fb = eval(b, it);
      }
    } else {
      // inside contraction; in 1-D it coincides with the shrink point
      b = a + 0.5 * (b - a);
      fb = eval(b, it);
    }
  }
  if (fb < fa) {
    a = b;
    fa = fb;
  }
  r.x = a;
  r.fx = fa;
  r.iterations = it;
  return r;
}

std::string IqmSpec::name() const {
  switch (kind) {
    case IqmKind::entropy: return "Ent";
    case IqmKind::tv: return "Tv";
    case IqmKind::learned: return "Cnn";
    case IqmKind::oracle: return "Gt";
  }
  return "?";
}

void IqmSpec::validate() const {
  if (kind == IqmKind::learned && !model) throw ConfigError("learned metric requested without a trained model");
  if (kind == IqmKind::oracle && !markers) throw ConfigError("oracle metric requested without markers");
  if (kind == IqmKind::entropy) window.validate();
}

namespace {

RigidMotion column(const MotionCurves& c, int i) {
  RigidMotion r;
  for (Axis a : kAllAxes) r[a] = c(a, i);
  return r;
}

ProjectionMatrix corrected(const AutofocusProblem& p, const MotionCurves& c, int i) {
  const RigidMotion r = column(c, i);
  return r.is_identity() ? p.observed[i] : p.observed[i] * motion_to_matrix(r);
}

void check_problem(const AutofocusProblem& p) {
  if (!p.fdk) throw StateError("autofocus: no filtered projections");
  if (p.observed.size() != p.fdk->base().size()) throw ShapeError("autofocus: geometry and data view counts differ");
}

void check_mask(const std::optional<std::vector<bool>>& mask, int n) {
  if (mask && int(mask->size()) != n) throw ShapeError("autofocus: mask length differs from the view count");
}

double score_slices(const IqmSpec& iqm, const SliceTriplets& s) {
  switch (iqm.kind) {
    case IqmKind::entropy: return entropy_iqm(s, iqm.window).score;
    case IqmKind::tv: return tv_iqm(s).score;
    case IqmKind::learned: return iqm.model->predict(s).r1;
    case IqmKind::oracle: break;
  }
  throw StateError("oracle metric does not score images");
}

double sum_in_order(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0); }

// Incremental scorer: views outside a node's support keep their
// back-projection and RPE terms while the node is optimized.
class Engine {
 public:
  Engine(const AutofocusProblem& p, const IqmSpec& iqm, const MotionSplineSet& m,
         const std::optional<std::vector<bool>>& mask)
      : p_(p), iqm_(iqm), mask_(mask), n_(int(p.observed.size())), m_(m) {
    curves_ = masked_curves(m_, n_, mask_);
    geom_.resize(n_);
    rpe_.assign(n_, 0.0);
  }

  void refresh() {
    for (int i = 0; i < n_; ++i) geom_[i] = corrected(p_, curves_, i);
    if (iqm_.needs_reconstruction()) {
      acc_ = SliceAccumulator{};
      p_.fdk->accumulate(p_.set, geom_, ViewRange{0, n_ - 1}, acc_);
    } else {
      for (int i = 0; i < n_; ++i) rpe_[i] = term(i);
    }
  }

  double current_score() const {
    if (iqm_.needs_reconstruction()) return score_slices(iqm_, acc_.to_triplets(p_.set));
    return sum_in_order(rpe_) / n_;
  }

  // Prepares the optimization of one node: removes its support.
  void detach(ViewRange support) {
    support_ = support;
    if (iqm_.needs_reconstruction()) {
      minus_ = acc_;
      p_.fdk->accumulate(p_.set, geom_, support_, minus_, -1.0);
    }
  }

  double try_value(Axis a, int node, double v) {
    set(a, node, v);
    if (iqm_.needs_reconstruction()) {
      SliceAccumulator cand = minus_;
      p_.fdk->accumulate(p_.set, geom_, support_, cand, 1.0);
      return score_slices(iqm_, cand.to_triplets(p_.set));
    }
    std::vector<double> r = rpe_;
    for (int i = support_.first; i <= support_.last; ++i) r[i] = term(i);
    return sum_in_order(r) / n_;
  }

  void commit(Axis a, int node, double v) {
    set(a, node, v);
    if (iqm_.needs_reconstruction()) {
      acc_ = minus_;
      p_.fdk->accumulate(p_.set, geom_, support_, acc_, 1.0);
    } else {
      for (int i = support_.first; i <= support_.last; ++i) rpe_[i] = term(i);
    }
  }

  const MotionSplineSet& splines() const { return m_; }
  const MotionCurves& curves() const { return curves_; }

 private:
  void set(Axis a, int node, double v) {
    m_.set_value(a, node, v);
    update_curves(m_, a, support_, curves_);
    if (mask_)
      for (int i = support_.first; i <= support_.last; ++i)
        if (!(*mask_)[i]) curves_.values(int(a), i) = 0.0;
    for (int i = support_.first; i <= support_.last; ++i) geom_[i] = corrected(p_, curves_, i);
  }

  double term(int i) const {
    return view_rpe(p_.observed.intrinsics(), p_.observed.base()[i].p, geom_[i], *iqm_.markers, iqm_.rpe_mode);
  }

  const AutofocusProblem& p_;
  const IqmSpec& iqm_;
  const std::optional<std::vector<bool>>& mask_;
  int n_;
  MotionSplineSet m_;
  MotionCurves curves_;
  std::vector<ProjectionMatrix> geom_;
  SliceAccumulator acc_, minus_;
  std::vector<double> rpe_;
  ViewRange support_;
};

}  // namespace

MotionCurves masked_curves(const MotionSplineSet& m, int n_views, const std::optional<std::vector<bool>>& mask) {
  check_mask(mask, n_views);
  MotionCurves c = curves_from_splines(m, n_views);
  if (mask)
    for (int i = 0; i < n_views; ++i)
      if (!(*mask)[i]) c.values.col(i).setZero();
  return c;
}

SliceTriplets reconstruct_corrected(const AutofocusProblem& p, const MotionCurves& c) {
  check_problem(p);
  if (c.view_count() != int(p.observed.size())) throw ShapeError("curve length differs from the view count");
  std::vector<ProjectionMatrix> g(p.observed.size());
  for (int i = 0; i < c.view_count(); ++i) g[i] = corrected(p, c, i);
  return p.fdk->reconstruct(p.set, g);
}

double evaluate_iqm(const IqmSpec& iqm, const AutofocusProblem& p, const MotionCurves& c, const SliceTriplets* recon) {
  iqm.validate();
  if (iqm.kind == IqmKind::oracle)
    return mean_rpe(compose(p.observed, annihilating_motion(c)), *iqm.markers, iqm.rpe_mode);
  if (recon) return score_slices(iqm, *recon);
  return score_slices(iqm, reconstruct_corrected(p, c));
}

double constrained_objective(const AutofocusProblem& p, const IqmSpec& learned, const std::vector<bool>& mask,
                             const MotionSplineSet& m) {
  if (learned.kind != IqmKind::learned) throw ConfigError("constrained objective needs the learned metric");
  const MotionCurves c = masked_curves(m, int(p.observed.size()), mask);
  return evaluate_iqm(learned, p, c, nullptr);
}

std::vector<bool> learned_mask(const AutofocusProblem& p, const RegressorModel& model, double threshold) {
  const SliceTriplets s = reconstruct_corrected(p, MotionCurves::zeros(int(p.observed.size())));
  const Prediction pr = model.predict(s);
  return soft_classify(pr.r2, pr.r3, pr.r4, threshold);
}

CompensationResult optimize_trajectory(const AutofocusProblem& p, const IqmSpec& iqm, const MotionSplineSet& m0,
                                       const AutofocusOptions& opt) {
  const auto t0 = std::chrono::steady_clock::now();
  check_problem(p);
  iqm.validate();
  opt.schedule.validate();
  if (opt.axes.empty()) throw ConfigError("autofocus: no axes selected");
  const int n = int(p.observed.size());
  check_mask(opt.mask, n);
  if (m0.node_count() < 2) throw ConfigError("autofocus: at least two annihilation nodes are required");

  std::vector<Axis> order;
  for (Axis a : kAxisOrder)
    if (std::find(opt.axes.begin(), opt.axes.end(), a) != opt.axes.end()) order.push_back(a);

  std::vector<bool> movable(m0.node_count(), true);
  if (opt.mask)
    for (int j = 0; j < m0.node_count(); ++j) {
      const ViewRange s = m0.node_support(j, n);
      bool any = false;
      for (int i = s.first; i <= s.last && !any; ++i) any = (*opt.mask)[i];
      movable[j] = any;
    }

  CompensationResult res;
  Engine e(p, iqm, m0, opt.mask);
  for (std::size_t si = 0; si < opt.schedule.stages.size(); ++si) {
    const Stage& st = opt.schedule.stages[si];
    e.refresh();
    double cur = e.current_score();
    double max_change = 0;
    for (Axis a : order)
      for (int j = 0; j < m0.node_count(); ++j) {
        if (!movable[j]) continue;
        e.detach(e.splines().node_support(j, n));
        const double v0 = e.splines().value(a, j);
        auto f = [&](double v) { return e.try_value(a, j, v); };
        auto obs = [&](int it, double x, double fx) { res.trace.push_back({int(si), a, j, it, x, fx}); };
        const SimplexResult r = nelder_mead_1d(f, v0, st.step, st.max_iterations, opt.schedule.tol, obs, cur);
        e.commit(a, j, r.x);
        cur = r.fx;
        max_change = std::max(max_change, std::abs(r.x - v0));
      }
    ++res.stages_run;
    if (max_change < opt.schedule.tol) break;
  }
  res.splines = e.splines();
  res.curves = masked_curves(res.splines, n, opt.mask);
  res.annihilating = annihilating_motion(res.curves);
  res.reconstruction = reconstruct_corrected(p, res.curves);
  res.score = evaluate_iqm(iqm, p, res.curves, &res.reconstruction);
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return res;
}

CompensationResult fine_tune(const AutofocusProblem& p, const CompensationResult& prior, const IqmSpec& second,
                             const AutofocusOptions& opt) {
  AutofocusOptions o = opt;
  o.schedule.stages = StageSchedule::fine_tune().stages;
  CompensationResult r = optimize_trajectory(p, second, prior.splines, o);
  const int offset = prior.stages_run;
  for (auto& row : r.trace) row.stage += offset;
  std::vector<TraceRow> trace = prior.trace;
  trace.insert(trace.end(), r.trace.begin(), r.trace.end());
  r.trace = std::move(trace);
  r.stages_run += prior.stages_run;
  r.seconds += prior.seconds;
  return r;
}

}  // namespace tomofocus

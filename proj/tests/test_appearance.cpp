#include <doctest.h>

#include <cmath>
#include <sstream>

#include "test_util.hpp"
#include "tomofocus/appearance.hpp"
#include "tomofocus/errors.hpp"
#include "tomofocus/iqm.hpp"
#include "tomofocus/parallel.hpp"

using namespace tomofocus;

namespace {

ModelDescriptor tiny(int n_views = 4, double leak = 0.1) {
  ModelDescriptor d;
  d.n_views = n_views;
  d.input_dims = {{{12, 14}, {9, 12}, {9, 14}}};
  d.input_pool = 1;
  d.channels = {3, 4, 4, 4};
  d.fusion = 6;
  d.leak = leak;
  return d;
}

NormalizedSlices random_input(const ModelDescriptor& d, testutil::Gen& g) {
  NormalizedSlices x;
  for (int o = 0; o < 3; ++o)
    for (int k = 0; k < 3; ++k) {
      const int i = 3 * o + k;
      x.rows[i] = d.input_dims[o][0];
      x.cols[i] = d.input_dims[o][1];
      x.data[i].resize(std::size_t(x.rows[i]) * x.cols[i]);
      for (auto& v : x.data[i]) v = float(g.uniform(-1.5, 1.5));
    }
  return x;
}

Labels random_labels(int n, testutil::Gen& g) {
  Labels y;
  y.mrpe = g.uniform(0, 2);
  for (int i = 0; i < n; ++i) {
    y.all.push_back(g.uniform(0, 2));
    y.in_plane.push_back(g.uniform(0, 2));
    y.out_plane.push_back(g.uniform(0, 2));
  }
  return y;
}

Dataset toy_set(const ModelDescriptor& d, int n, int phantom, testutil::Gen& g) {
  Dataset s;
  for (int i = 0; i < n; ++i) {
    Sample smp;
    smp.input = random_input(d, g);
    smp.labels = random_labels(d.n_views, g);
    smp.meta.phantom = phantom;
    smp.meta.phantom_name = "toy" + std::to_string(phantom);
    s.samples.push_back(std::move(smp));
  }
  return s;
}

}  // namespace

TEST_CASE("every parameter group passes a central finite-difference check") {
  testutil::Gen g(11);
  RegressorModel m(tiny(), 5);
  CHECK(m.parameter_count() <= 2000);
  const NormalizedSlices x = random_input(m.descriptor(), g);
  const Labels y = random_labels(m.descriptor().n_views, g);
  std::vector<double> grad(m.parameter_count(), 0.0);
  m.loss_and_gradient(x, y, grad);
  for (const ParamGroup& pg : m.groups()) {
    double num = 0, den = 0;
    for (std::size_t i = pg.offset; i < pg.offset + pg.size; ++i) {
      const double keep = m.parameters()[i];
      const double h = 1e-5;
      m.parameters()[i] = keep + h;
      const double lp = loss(m.forward(x), y);
      m.parameters()[i] = keep - h;
      const double lm = loss(m.forward(x), y);
      m.parameters()[i] = keep;
      const double fd = (lp - lm) / (2 * h);
      num += (fd - grad[i]) * (fd - grad[i]);
      den += fd * fd;
    }
    INFO(pg.name);
    CHECK(den > 0);
    CHECK(std::sqrt(num / den) <= 1e-4);
  }
}

TEST_CASE("linear trunk scales features with the weights") {
  testutil::Gen g(2);
  RegressorModel m(tiny(4, 1.0), 3);
  auto& p = m.parameters();
  for (const auto& pg : m.groups())
    if (pg.name.ends_with(".b") && !pg.name.starts_with("head")) std::fill_n(p.begin() + pg.offset, pg.size, 0.0);
  const NormalizedSlices x = random_input(m.descriptor(), g);
  const auto f1 = m.features(x);
  for (const auto& pg : m.groups())
    if (pg.name.starts_with("conv") && pg.name.ends_with(".w"))
      for (std::size_t i = 0; i < pg.size; ++i) p[pg.offset + i] *= 2;
  const auto f2 = m.features(x);
  for (std::size_t i = 0; i < f1.size(); ++i) CHECK(f2[i] == doctest::Approx(16 * f1[i]).epsilon(1e-10));
  CHECK(m.trunk_weights(Orientation::axial) == m.trunk_weights(Orientation::sagittal));
}

TEST_CASE("branch order matters") {
  testutil::Gen g(8);
  ModelDescriptor d = tiny();
  d.input_dims = {{{10, 10}, {10, 10}, {10, 10}}};
  const RegressorModel m(d, 4);
  const NormalizedSlices x = random_input(d, g);
  NormalizedSlices swapped = x;
  for (int k = 0; k < 3; ++k) std::swap(swapped.data[k], swapped.data[3 + k]);
  CHECK(m.forward(x).r1 != m.forward(swapped).r1);
  NormalizedSlices bad = x;
  bad.rows[4] = 9;
  CHECK_THROWS_AS(m.forward(bad), ShapeError);
}

TEST_CASE("normalization is invariant to offset and positive scale") {
  const SliceSet set = make_slice_set({0.1});
  testutil::Gen g(4);
  SliceTriplets s = SliceTriplets::zeros(set);
  for (auto& img : s.slices)
    for (auto& v : img.data) v = g.uniform(0, 2);
  SliceTriplets t = s;
  for (auto& img : t.slices)
    for (auto& v : img.data) v = 3.5 * v - 7.0;
  const auto a = normalize_slices(s), b = normalize_slices(t);
  for (int i = 0; i < 9; ++i)
    for (std::size_t k = 0; k < a.data[i].size(); ++k) CHECK(std::abs(a.data[i][k] - b.data[i][k]) <= 1e-5);
  double mean = 0, sq = 0, n = 0;
  for (int i = 0; i < 3; ++i)
    for (float v : a.data[i]) {
      mean += v;
      sq += double(v) * v;
      ++n;
    }
  CHECK(std::abs(mean / n) <= 1e-5);
  CHECK(sq / n == doctest::Approx(1.0).epsilon(1e-4));
  // a constant orientation maps to zeros
  SliceTriplets c = s;
  for (int k = 0; k < 3; ++k) std::fill(c.slices[k].data.begin(), c.slices[k].data.end(), 4.0);
  const auto nc = normalize_slices(c);
  for (float v : nc.data[0]) CHECK(v == 0.0f);
}

TEST_CASE("model file round trip") {
  testutil::Gen g(6);
  const RegressorModel m(tiny(), 9);
  std::stringstream ss;
  m.save(ss);
  const std::string bytes = ss.str();
  CHECK(bytes.substr(0, 8) == "TFREGMDL");
  std::stringstream in(bytes);
  const RegressorModel r = RegressorModel::load(in);
  CHECK(r.descriptor() == m.descriptor());
  CHECK(r.parameters() == m.parameters());
  const NormalizedSlices x = random_input(m.descriptor(), g);
  CHECK(r.forward(x).r2 == m.forward(x).r2);

  std::stringstream bad("XXXXXXXX");
  CHECK_THROWS_AS(RegressorModel::load(bad), IoError);
  std::stringstream cut(bytes.substr(0, bytes.size() - 5));
  CHECK_THROWS_AS(RegressorModel::load(cut), IoError);
  CHECK_THROWS_AS(RegressorModel::load(std::string("/nonexistent/model.bin")), IoError);
  CHECK_THROWS_AS(ModelDescriptor::from_json({{"n_views", 3}}), ConfigError);
}

TEST_CASE("loss and ADAM") {
  Prediction p{1.0, {0.5, 0.5}, {0.0, 0.0}, {1.0, 0.0}};
  Labels y{0.0, {0.5, 0.0}, {0.0, 0.0}, {0.0, 0.0}};
  CHECK(loss(p, y) == doctest::Approx(1.0 + 0.25 + 1.0));
  y.all.pop_back();
  CHECK_THROWS_AS(loss(p, y), ShapeError);

  // the first ADAM step moves every coordinate by lr against the gradient sign
  std::vector<double> x{1.0, -2.0, 3.0};
  AdamState s;
  s.lr = 0.01;
  adam_update(x, {4.0, -0.5, 1e-3}, s);
  CHECK(x[0] == doctest::Approx(0.99).epsilon(1e-6));
  CHECK(x[1] == doctest::Approx(-1.99).epsilon(1e-6));
  CHECK(x[2] == doctest::Approx(2.99).epsilon(1e-4));

  // minimizes a quadratic
  std::vector<double> q{5.0, -3.0};
  AdamState a;
  a.lr = 0.05;
  for (int it = 0; it < 3000; ++it) adam_update(q, {2 * q[0], 2 * (q[1] - 1)}, a);
  CHECK(std::abs(q[0]) < 1e-3);
  CHECK(std::abs(q[1] - 1) < 1e-3);

  testutil::Gen g(3);
  RegressorModel m(tiny(), 1);
  const Dataset d = toy_set(m.descriptor(), 3, 0, g);
  const auto before = m.parameters();
  AdamState zero;
  zero.lr = 0;
  backward_and_step(m, {&d.samples[0], &d.samples[1]}, zero);
  CHECK(m.parameters() == before);
}

TEST_CASE("training overfits a tiny set and keeps the best weights") {
  testutil::Gen g(21);
  const ModelDescriptor d = tiny();
  const Dataset tr = toy_set(d, 4, 0, g), va = toy_set(d, 2, 1, g);
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.batch_size = 4;
  cfg.max_epochs = 400;
  cfg.patience = 400;
  const TrainResult r = train(RegressorModel(d, 2), tr, va, cfg);
  CHECK(r.history.back().train_loss < 0.1 * r.initial_train_loss);
  double best = 1e300;
  for (const auto& e : r.history) best = std::min(best, e.val_loss);
  if (r.best_epoch > 0) CHECK(mean_loss(r.model, va) == doctest::Approx(best).epsilon(1e-12));

  CHECK_THROWS_AS(train(RegressorModel(d, 2), tr, tr, cfg), ConfigError);
  TrainConfig badcfg;
  badcfg.batch_size = 0;
  CHECK_THROWS_AS(train(RegressorModel(d, 2), tr, va, badcfg), ConfigError);
}

TEST_CASE("training is reproducible and independent of the thread count") {
  testutil::Gen g(5);
  const ModelDescriptor d = tiny();
  const Dataset tr = toy_set(d, 6, 0, g), va = toy_set(d, 2, 1, g);
  TrainConfig cfg;
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 3;
  cfg.max_epochs = 5;
  set_thread_count(1);
  const auto a = train(RegressorModel(d, 7), tr, va, cfg);
  const auto b = train(RegressorModel(d, 7), tr, va, cfg);
  set_thread_count(3);
  const auto c = train(RegressorModel(d, 7), tr, va, cfg);
  set_thread_count(0);
  CHECK(a.model.parameters() == b.model.parameters());
  CHECK(a.model.parameters() == c.model.parameters());
  CHECK(a.history.size() == c.history.size());
}

TEST_CASE("generated samples carry consistent labels") {
  const Trajectory t = testutil::small_scan(60);
  const SliceSet set = make_slice_set({0.15});
  const MarkerSet markers = default_markers(0.5);
  std::vector<Phantom> ph{default_head_phantom(0.5), head_phantom_variant(0.5, 3, false)};
  DatasetConfig cfg;
  cfg.n_samples = 5;
  cfg.amplitude_max = 4.0;
  cfg.motion_nodes = 10;
  cfg.seed = 42;
  const Dataset d = generate_dataset(ph, t, set, markers, cfg);
  REQUIRE(d.size() == 5);
  for (std::size_t s = 0; s < d.size(); ++s) {
    const Sample& smp = d.samples[s];
    CHECK(smp.meta.phantom == int(s % 2));
    CHECK(smp.meta.amplitude >= 0);
    CHECK(smp.meta.amplitude <= 4.0);
    CHECK(smp.labels.all.size() == 60);
    double mean = 0;
    for (int i = 0; i < 60; ++i) {
      mean += smp.labels.all[i];
      if (!smp.meta.window.contains(i)) CHECK(smp.labels.all[i] == 0.0);
      const double other = is_in_plane(smp.meta.axis) ? smp.labels.out_plane[i] : smp.labels.in_plane[i];
      CHECK(other == 0.0);
    }
    CHECK(smp.labels.mrpe == doctest::Approx(mean / 60).epsilon(1e-12));
    const Labels again = compute_labels(t, smp.meta.splines, markers);
    CHECK(again.all == smp.labels.all);
  }
  const Dataset e = generate_dataset(ph, t, set, markers, cfg);
  CHECK(e.samples[3].input.data[4] == d.samples[3].input.data[4]);
  CHECK(e.samples[3].meta.amplitude == d.samples[3].meta.amplitude);

  const auto [tr, va] = split_by_phantom(d, {1});
  CHECK(tr.size() == 3);
  CHECK(va.size() == 2);

  const RegressorModel m(ModelDescriptor::for_slices(set, 60), 1);
  const EvalReport rep = evaluate(m, d);
  CHECK(rep.rows.size() == 5);
  CHECK(rep.tp + rep.fp + rep.tn + rep.fn == 5 * 60);
  CHECK(rep.err_all.size() == 5 * 60);
  const IqmValue v = learned_iqm(sample_phantom(ph[0], set), m);
  CHECK(v.r2.size() == 60);
}

TEST_CASE("correlations") {
  CHECK(pearson_correlation({1, 2, 3, 4}, {2, 4, 6, 8}) == doctest::Approx(1.0));
  CHECK(pearson_correlation({1, 2, 3}, {3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(spearman_correlation({1, 2, 3, 4}, {1, 8, 27, 64}) == doctest::Approx(1.0));
  CHECK(spearman_correlation({1, 2, 2, 3}, {1, 2, 2, 3}) == doctest::Approx(1.0));
  CHECK_THROWS_AS(pearson_correlation({1, 1}, {1, 2}), DegenerateError);
  CHECK_THROWS_AS(pearson_correlation({1}, {1}), ShapeError);
}

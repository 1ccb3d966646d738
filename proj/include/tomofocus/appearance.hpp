#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "tomofocus/fdk.hpp"
#include "tomofocus/motion_model.hpp"
#include "tomofocus/phantom.hpp"
#include "tomofocus/rpe.hpp"

namespace tomofocus {

// Nine slices standardized per orientation (zero mean, unit variance over the
// three slices of that orientation), stored as float.
struct NormalizedSlices {
  std::array<int, 9> rows{}, cols{};
  std::array<std::vector<float>, 9> data;
};
NormalizedSlices normalize_slices(const SliceTriplets& s);

struct Labels {
  double mrpe = 0;
  std::vector<double> all, in_plane, out_plane;
};

struct Prediction {
  double r1 = 0;
  std::vector<double> r2, r3, r4;
};

// Sum of squared errors over the four tasks.
double loss(const Prediction& out, const Labels& labels);

struct ModelDescriptor {
  int n_views = 200;
  // (rows, cols) of the slices per orientation before input pooling
  std::array<std::array<int, 2>, 3> input_dims{{{108, 128}, {35, 108}, {35, 128}}};
  int input_pool = 2;
  std::array<int, 4> channels{8, 16, 32, 64};
  int pooled = 2;  // adaptive pooling size per branch
  int fusion = 128;
  double leak = 0.01;  // negative slope of the activation; 1 makes it linear

  void validate() const;
  nlohmann::json to_json() const;
  static ModelDescriptor from_json(const nlohmann::json& j);
  static ModelDescriptor for_slices(const SliceSet& set, int n_views);
  bool operator==(const ModelDescriptor&) const = default;
};

struct ParamGroup {
  std::string name;
  std::size_t offset = 0;
  std::size_t size = 0;
};

// Three weight-sharing conv branches (one per orientation, three slices as
// channels), concatenation, 1x1 fusion, global average pooling, four heads.
class RegressorModel {
 public:
  RegressorModel() = default;
  RegressorModel(ModelDescriptor d, std::uint64_t seed);

  const ModelDescriptor& descriptor() const { return desc_; }
  std::vector<double>& parameters() { return params_; }
  const std::vector<double>& parameters() const { return params_; }
  std::size_t parameter_count() const { return params_.size(); }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  const ParamGroup& group(const std::string& name) const;
  // Trunk weights used by a branch; one storage for all three.
  const double* trunk_weights(Orientation o) const;

  Prediction forward(const NormalizedSlices& x) const;
  Prediction predict(const SliceTriplets& s) const { return forward(normalize_slices(s)); }
  // Fused feature vector after global pooling (input of the heads).
  std::vector<double> features(const NormalizedSlices& x) const;
  // Loss of one sample; adds dLoss/dparams to grad (same layout as parameters()).
  double loss_and_gradient(const NormalizedSlices& x, const Labels& y, std::vector<double>& grad) const;

  void save(std::ostream& os) const;
  void save(const std::string& path) const;
  static RegressorModel load(std::istream& is);
  static RegressorModel load(const std::string& path);

 private:
  struct Cache;
  void check_input(const NormalizedSlices& x) const;
  Prediction run(const NormalizedSlices& x, Cache* cache) const;
  void layout();

  ModelDescriptor desc_;
  std::vector<double> params_;
  std::vector<ParamGroup> groups_;
};

struct AdamState {
  double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  std::vector<double> m, v;
  std::int64_t t = 0;
};
void adam_update(std::vector<double>& params, const std::vector<double>& grad, AdamState& s);

struct SampleMeta {
  int phantom = 0;
  std::string phantom_name;
  Axis axis = Axis::tx;
  double amplitude = 0;
  std::uint64_t seed = 0;
  ViewRange window;
  MotionSplineSet splines;
};

struct Sample {
  NormalizedSlices input;
  Labels labels;
  SampleMeta meta;
};

struct Dataset {
  std::vector<Sample> samples;
  std::size_t size() const { return samples.size(); }
};

// Mean loss over a batch; gradients summed in sample order, then averaged.
// Throws DivergenceError on a non-finite loss or gradient.
double backward_and_step(RegressorModel& model, const std::vector<const Sample*>& batch, AdamState& state);
double mean_loss(const RegressorModel& model, const Dataset& d);

Labels compute_labels(const Trajectory& base, const MotionSplineSet& m, const MarkerSet& markers,
                      RpeMode mode = RpeMode::rms);

struct DatasetConfig {
  int n_samples = 100;
  double amplitude_min = 0.0;
  double amplitude_max = 6.0;
  int motion_nodes = 20;
  std::uint64_t seed = 1;
  RpeMode rpe_mode = RpeMode::rms;
};

using ProgressFn = std::function<void(const std::string&)>;

// Samples cycle through the phantoms; each phantom is rendered and filtered once.
Dataset generate_dataset(const std::vector<Phantom>& phantoms, const Trajectory& base, const SliceSet& set,
                         const MarkerSet& markers, const DatasetConfig& cfg, const ProgressFn& progress = {});
// Splits by phantom index: samples of `held_out` phantoms go to the second set.
std::pair<Dataset, Dataset> split_by_phantom(const Dataset& d, const std::vector<int>& held_out);

struct TrainConfig {
  double learning_rate = 1e-4;
  int batch_size = 32;
  int max_epochs = 40;
  int patience = 6;
  std::uint64_t seed = 1;
  void validate() const;
};

struct EpochRecord {
  int epoch = 0;
  double train_loss = 0;
  double val_loss = 0;
};

struct TrainResult {
  RegressorModel model;  // weights of the best validation epoch
  std::vector<EpochRecord> history;
  int best_epoch = 0;
  double initial_train_loss = 0;
};

// Throws ConfigError when the two sets share a phantom.
TrainResult train(const RegressorModel& init, const Dataset& train_set, const Dataset& val_set, const TrainConfig& cfg,
                  const ProgressFn& progress = {});

struct EvalRow {
  int sample = 0;
  int phantom = 0;
  Axis axis = Axis::tx;
  double amplitude = 0;
  double true_mrpe = 0;
  double pred_mrpe = 0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  // predicted minus true, one entry per sample and view
  std::vector<double> err_all, err_in_plane, err_out_plane;
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double fn_rate = 0;  // FN / truly affected views
  double fp_rate = 0;  // FP / truly motion-free views
  double pearson = 0;  // R1 vs true mRPE
  double mean_abs_error = 0;
};

EvalReport evaluate(const RegressorModel& model, const Dataset& d, double threshold = 0.1);

double pearson_correlation(const std::vector<double>& a, const std::vector<double>& b);
double spearman_correlation(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace tomofocus

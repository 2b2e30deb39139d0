#pragma once

// Run configuration, checkpoints, the training loop, model evaluation and
// hyperparameter sweeps.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "iterflow/adam.hpp"
#include "iterflow/dataset.hpp"
#include "iterflow/io.hpp"
#include "iterflow/labeling.hpp"
#include "iterflow/losses.hpp"
#include "iterflow/metrics.hpp"
#include "iterflow/model.hpp"

namespace iterflow::training {

namespace fs = std::filesystem;

struct RunConfig {
  model::IterFlowConfig model;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t epochs = 150;
  std::size_t checkpoint_every = 10;
  std::size_t num_points = 256;  // N
  std::string data_dir;
  std::string output_dir = "runs/iterflow";
  std::uint64_t seed = 0;
  double static_threshold = 0.1;  // m/s
  double motion_threshold = metrics::kDefaultMotionThreshold;
  double resolution_ratio = metrics::kDefaultResolutionRatio;
  labeling::FlowUnit flow_unit = labeling::FlowUnit::kDisplacement;
  std::size_t threads = 1;
  bool resample_points = true;  // fresh N-point subsets of the training frames every epoch

  static RunConfig from_key_values(const io::KeyValues& kv, const std::string& origin = "<config>");
  io::KeyValues to_key_values() const;
  void validate() const;
  dataset::SampleOptions sample_options() const;
  metrics::EvalOptions eval_options() const;
};

struct EpochLog {
  std::size_t epoch = 0;
  losses::LossBreakdown loss;
  double val_epe = 0.0;
};

struct TrainState {
  ad::ParamStore params;
  ad::AdamState adam;
  std::size_t epoch = 0;  // completed epochs
  std::mt19937_64 rng;
  std::vector<EpochLog> history;
};

TrainState initial_state(const RunConfig& cfg);

inline constexpr std::uint32_t kCheckpointVersion = 1;

std::string encode_checkpoint(const RunConfig& cfg, const TrainState& state);
std::pair<RunConfig, TrainState> decode_checkpoint(std::string_view bytes, const std::string& origin = "<memory>");
void save_checkpoint(const fs::path& path, const RunConfig& cfg, const TrainState& state);
std::pair<RunConfig, TrainState> load_checkpoint(const fs::path& path);

class TrainingAborted : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TrainCallbacks {
  std::function<void(const EpochLog&)> on_epoch;
};

// Mean losses and per-parameter gradients of one batch, summed per sample in
// a fixed tree order and divided by the batch size.
inline constexpr double kIntermediateDecay = 0.8;  // weight decay^(K-k) on F^k when enabled

struct BatchResult {
  losses::LossBreakdown loss;
  std::vector<std::vector<double>> gradients;
};
BatchResult batch_gradients(const ad::ParamStore& params, const model::IterFlowConfig& cfg,
                            const std::vector<const dataset::Sample*>& batch, std::size_t threads = 1);

// Trains `cfg.epochs` epochs in total, continuing from `state`. Writes the
// epoch log and checkpoints under `out_dir` when it is non-empty. Throws
// TrainingAborted on a non-finite loss or gradient; checkpoints already on
// disk are left untouched.
void train(const RunConfig& cfg, const dataset::Split& data, TrainState& state, const fs::path& out_dir,
           const TrainCallbacks& callbacks = {});

std::string checkpoint_name(std::size_t epoch);
std::string format_epoch_log(const std::vector<EpochLog>& history);

enum class Predictor { kModel, kGroundTruth, kZero };

struct SceneResult {
  std::string name;
  geom::PointCloud positions;
  geom::PointCloud prediction;
  geom::PointCloud ground_truth;
  double epe = 0.0;
};

struct EvalOutput {
  metrics::EvalReport report;
  std::vector<SceneResult> scenes;
};

// Model predictions (or a baseline) on every sample, scaled into the
// configured flow unit and pooled across scenes.
EvalOutput evaluate_samples(const std::vector<dataset::Sample>& samples, const RunConfig& cfg,
                            const ad::ParamStore* params, Predictor predictor = Predictor::kModel);

enum class SweepAxis { kIterations, kNeighbors, kRadius };
SweepAxis parse_sweep_axis(const std::string& name);
const char* sweep_axis_name(SweepAxis axis);

struct SweepRow {
  double value = 0.0;
  metrics::EvalReport report;
};

// Evaluation-only sweep: the axis is an inference-time setting, so one set of
// weights serves every value.
std::vector<SweepRow> sweep_eval(const std::vector<dataset::Sample>& samples, const RunConfig& cfg,
                                 const ad::ParamStore& params, SweepAxis axis, const std::vector<double>& values);
// Trains a fresh model per value with the axis fixed during training.
std::vector<SweepRow> sweep_train(const dataset::Split& data, const RunConfig& cfg, SweepAxis axis,
                                  const std::vector<double>& values);

model::IterFlowConfig with_axis(model::IterFlowConfig cfg, SweepAxis axis, double value);

}  // namespace iterflow::training

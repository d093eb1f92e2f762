#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvnow/datapipe.hpp"
#include "pvnow/eval.hpp"
#include "pvnow/models.hpp"
#include "pvnow/skysim.hpp"

namespace pvnow {

/// Invalid configuration or arguments (exit code 1).
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Non-finite loss or a failed numeric check (exit code 3).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------- configuration

enum class ExposureSet { all, shortest, longest };
std::string to_string(ExposureSet e);
ExposureSet parse_exposure_set(const std::string& s);
std::size_t exposure_channels(ExposureSet e);

struct RunConfig {
  static constexpr int kSchemaVersion = 1;

  ModelKind model = ModelKind::lstm;
  std::size_t horizon = 1;
  std::size_t resolution = 32;
  std::size_t history = 6;
  double lr_encoder = 1e-3;
  double lr_other = 3e-4;
  std::size_t epochs = 20;
  std::size_t batch_size = 16;
  std::size_t chunk = 4;  ///< consecutive samples per shuffled chunk
  std::size_t bn_batches = 20;  ///< training batches for the per-epoch batch-norm re-estimate (0 = off)
  LossWeights weights;
  std::uint64_t seed = 1;
  DType precision = DType::f32;
  int threads = 0;  ///< 0 = OpenMP default
  ExposureSet exposures = ExposureSet::all;
  std::string dataset = "data";
  std::string out = "out";
  std::string run_name;  ///< default "<model>_h<horizon>"

  // architecture
  std::size_t stem_channels = 64;
  std::vector<std::size_t> fire_channels{64, 128, 256};
  int fire_count = -1;
  std::size_t squeeze = 16;
  std::size_t latent = 256;
  std::size_t lstm_hidden = 256;
  std::size_t lstm_layers = 2;
  std::vector<std::size_t> mlp_hidden{64, 64};
  std::vector<std::size_t> power_encoder{64, 64, 64};
  std::vector<std::size_t> predictor_hidden{1024, 1024, 1024};
  std::size_t head_hidden = 256;
  std::size_t decoder_seed_channels = 256;
  std::size_t decoder_min_channels = 32;

  SimConfig sim;

  std::string name() const;
  ModelConfig model_config() const;
  void validate() const;
};

nlohmann::ordered_json to_json(const RunConfig& c);
/// Overlays the keys present in `j` onto `base`; unknown keys are a usage error.
RunConfig config_from_json(const nlohmann::json& j, RunConfig base = {});
RunConfig load_config(const std::filesystem::path& path);

// ---------------------------------------------------------------- checkpoints

struct Checkpoint {
  RunConfig config;
  double alpha = 0;
  std::size_t epoch = 0;
  double validation_mae = 0;
  NamedTensors tensors;  ///< parameters then buffers, in Model::collect order
};

Checkpoint make_checkpoint(const Model& model, const RunConfig& config, double alpha, std::size_t epoch,
                           double validation_mae);
/// <dir>/manifest.json + <dir>/tensors.bin
void save_checkpoint(const std::filesystem::path& dir, const Checkpoint& c);
Checkpoint load_checkpoint(const std::filesystem::path& dir);
/// Builds the model described by the checkpoint and copies every tensor into it.
Model restore_model(const Checkpoint& c);
/// Copies named tensors into the model; every model tensor must appear exactly once.
void load_tensors(Model& model, const NamedTensors& tensors);

// ---------------------------------------------------------------- data

struct PreparedData {
  Dataset data;
  DaySplit split;
  std::vector<Sample> train, validation, test;
  double alpha = 0;

  const std::vector<Sample>& samples(const std::string& split_name) const;
};

/// Splits days with the config seed, builds samples at the config horizon and fits
/// alpha on training-day minutes.
PreparedData prepare_data(Dataset data, const RunConfig& config);

/// Assembles a mini-batch of samples (images deduplicated by minute).
ModelBatch build_batch(const Dataset& data, const std::vector<Sample>& samples,
                       const std::vector<std::size_t>& indices, const RunConfig& config, double alpha);

/// Training order for one epoch: chunks of consecutive samples (same day, same
/// t0 residue modulo the horizon), shuffled with seed ^ epoch, grouped into batches.
std::vector<std::vector<std::size_t>> epoch_batches(const std::vector<Sample>& samples, const RunConfig& config,
                                                    std::size_t epoch);

/// Watts forecasts for `samples` (eval mode).
std::vector<double> predict_watts(Model& model, const Dataset& data, const std::vector<Sample>& samples,
                                  const RunConfig& config, double alpha);

// ---------------------------------------------------------------- training

/// Replaces every batch-norm running mean/variance with the average of its batch
/// statistics over up to `config.bn_batches` training batches at the current weights.
void recalibrate_batch_norm(Model& model, const PreparedData& d, const RunConfig& config, std::size_t epoch);

struct EpochLog {
  std::size_t epoch = 0;
  LossBreakdown train;  ///< unweighted terms, mean over batches
  double train_total = 0;
  double validation_mae = 0;
  double best_validation_mae = 0;
  double seconds = 0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochLog> log;
  double persistence_validation_mae = 0;
};

/// Adam with per-group learning rates; the lowest validation MAE over epochs 0..E
/// (epoch 0 = initial weights) is kept.
TrainResult train(const PreparedData& d, const RunConfig& config,
                  const std::function<void(const EpochLog&)>& on_epoch = {});

nlohmann::ordered_json train_log_json(const TrainResult& r);

// ---------------------------------------------------------------- commands

/// Evaluates a checkpoint (or persistence when `checkpoint` is empty) on a split.
struct Evaluation {
  MetricsReport report;
  std::vector<PredictionRow> rows;
};
Evaluation evaluate_checkpoint(const PreparedData& d, const std::optional<Checkpoint>& checkpoint,
                               const RunConfig& config, const std::string& split);

struct Forecast {
  Timestamp t0 = 0;
  double prediction_w = 0;
  double persistence_w = 0;
  double truth_w = 0;
  bool has_truth = false;
  double latency_ms = 0;
};
/// Forecast for the window ending at t0; throws DataError listing missing minutes.
Forecast forecast_at(const Dataset& data, const Checkpoint& checkpoint, Timestamp t0);

int cmd_simulate(const RunConfig& c, std::ostream& log);
int cmd_preprocess(const RunConfig& c, std::ostream& log);
int cmd_train(const RunConfig& c, std::ostream& log);
int cmd_evaluate(const RunConfig& c, const std::string& checkpoint, const std::string& split, std::ostream& log);
int cmd_predict(const RunConfig& c, const std::string& checkpoint, const std::string& timestamp, std::ostream& log);
int cmd_gradcheck(const RunConfig& c, const std::vector<std::string>& kinds, std::size_t seeds, std::ostream& log);

}  // namespace pvnow

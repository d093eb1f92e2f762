#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "pvnow/layers.hpp"

namespace pvnow {

enum class ModelKind { mlp, cnn, lstm, lstm_full };

std::string to_string(ModelKind kind);
/// Accepts "mlp", "cnn", "lstm", "lstm_full" (case-insensitive, '-' allowed).
ModelKind parse_model_kind(const std::string& name);
bool uses_images(ModelKind kind);

struct ModelConfig {
  ModelKind kind = ModelKind::lstm;
  std::size_t history = 6;  ///< K: number of history points
  EncoderConfig encoder;    ///< in_channels / resolution describe the image stacks
  std::size_t lstm_hidden = 256;
  std::size_t lstm_layers = 2;
  std::vector<std::size_t> mlp_hidden{64, 64};
  std::vector<std::size_t> power_encoder{64, 64, 64};
  std::vector<std::size_t> predictor_hidden{1024, 1024, 1024};
  std::size_t head_hidden = 256;
  DecoderConfig decoder;  ///< latent / out_channels / resolution are taken from the encoder
  DType dtype = DType::f32;
  std::uint64_t seed = 0;
  /// Zero-initialize the output layer so an untrained model reproduces persistence.
  bool zero_output = true;
};

/// One mini-batch. Image stacks are stored once per distinct capture minute;
/// image_index maps (sample b, step k) at b*K + k to a row of `images`.
struct ModelBatch {
  Tensor history;  ///< [B, K] normalized log power, oldest first
  Tensor images;   ///< [U, C, H, H]
  std::vector<std::size_t> image_index;

  Tensor delta_q;  ///< [B, 1]
  // Auxiliary targets (LSTM_FULL).
  Tensor image_q;    ///< [U, 1] normalized power at each image's minute
  Tensor image_sun;  ///< [U, 2] (elevation/pi, azimuth/2pi)
  Tensor delta_sun;  ///< [B, 2]
  Tensor delta_sky;  ///< [B, 1]

  std::size_t size() const { return history.dim(0); }
};

struct ModelOutputs {
  Tensor delta_q;  ///< [B, 1] in [-1, 1]
  // Auxiliary predictions, defined for LSTM_FULL when requested.
  Tensor image_q;      ///< [U, 1]
  Tensor image_sun;    ///< [U, 2]
  Tensor image_recon;  ///< [U, C, H, H]
  Tensor delta_sun;    ///< [B, 2]
  Tensor delta_sky;    ///< [B, 1]
};

class Model {
 public:
  explicit Model(const ModelConfig& config);

  ModelOutputs forward(const ModelBatch& batch, bool training, bool auxiliary = true);
  void collect(ParamSet& out) const;
  /// Parameters of the image encoder (trained with their own learning rate).
  std::vector<Tensor> encoder_params() const;
  std::vector<Tensor> other_params() const;

  const ModelConfig& config() const { return config_; }
  ModelKind kind() const { return config_.kind; }
  std::size_t predictor_inputs() const { return predictor_.in_features(); }

  ImageEncoder encoder_;
  Mlp power_encoder_;
  LstmStack lstm_;
  Mlp predictor_;  ///< also the whole network for ModelKind::mlp
  // Auxiliary heads.
  Mlp power_head_, sun_head_, sun_delta_head_, sky_delta_head_;
  ImageDecoder decoder_;

 private:
  ModelConfig config_;
};

struct LossWeights {
  double delta_sun = 1e3;
  double delta_sky = 1e-3;
  double power = 0.1;
  double sun = 0.1;
  double image = 0.1;
};

/// Unweighted loss terms, each averaged over the batch.
struct LossBreakdown {
  double main = 0, delta_sun = 0, delta_sky = 0, power = 0, sun = 0, image = 0;
};

struct LossResult {
  Tensor total;
  LossBreakdown terms;
};

/// mean over the batch of |dq_hat - dq|.
Tensor main_loss(const Tensor& predicted, const Tensor& target);

/// L_dp + l_dtheta L_dtheta + l_ds L_ds + l_p L_p + l_theta L_theta + l_I L_I; per-step
/// terms are summed over the K steps of each sample. Terms with zero weight stay out
/// of the total (their values are still reported).
LossResult multitask_loss(const ModelOutputs& out, const ModelBatch& batch, const LossWeights& w);

/// Main-loss-only objective used by MLP, CNN and LSTM.
LossResult single_task_loss(const ModelOutputs& out, const ModelBatch& batch);

}  // namespace pvnow

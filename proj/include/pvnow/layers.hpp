#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "pvnow/ops.hpp"
#include "pvnow/tensor.hpp"

namespace pvnow {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Trainable parameters and non-trainable buffers of a module tree, in a fixed order.
struct ParamSet {
  NamedTensors params;
  NamedTensors buffers;

  std::vector<Tensor> tensors() const;
  std::size_t param_count() const;
};

/// Seeded uniform fan-in initializer: U(-sqrt(1/fan_in), +sqrt(1/fan_in)).
class Initializer {
 public:
  Initializer(std::uint64_t seed, DType dtype) : rng_(seed), dtype_(dtype) {}
  Tensor uniform(Shape shape, std::size_t fan_in);
  Tensor zeros(Shape shape) const { return Tensor::zeros(std::move(shape), dtype_); }
  Tensor ones(Shape shape) const { return Tensor::full(std::move(shape), 1.0, dtype_); }
  DType dtype() const { return dtype_; }

 private:
  std::mt19937_64 rng_;
  DType dtype_;
};

enum class Activation { none, tanh, sigmoid, relu };

Tensor activate(const Tensor& x, Activation act);

/// running = momentum * running + (1 - momentum) * batch statistic
inline constexpr double kBatchNormMomentum = 0.9;

class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(std::size_t channels, Initializer& init, double momentum = kBatchNormMomentum, double eps = 1e-5);

  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, ParamSet& out) const;
  std::size_t channels() const { return gamma_.numel(); }

  Tensor gamma_, beta_;
  BatchNormBuffers buffers_;
  double momentum_ = kBatchNormMomentum;
  double eps_ = 1e-5;
};

/// y = act(bn(x W^T + b)). With batch norm the bias is omitted (bn's beta replaces it).
class Dense {
 public:
  Dense() = default;
  Dense(std::size_t in, std::size_t out, Activation act, bool batch_norm, Initializer& init,
        bool zero_init = false);

  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, ParamSet& out) const;
  std::size_t in_features() const { return weight_.dim(1); }
  std::size_t out_features() const { return weight_.dim(0); }

  Tensor weight_, bias_;
  std::optional<BatchNorm> bn_;
  Activation act_ = Activation::none;
};

/// Fully connected stack. Hidden layers: batch norm + hidden activation; the
/// output layer has a bias, no batch norm, and the output activation.
class Mlp {
 public:
  struct Config {
    std::size_t in = 1;
    std::vector<std::size_t> widths;  ///< hidden widths followed by the output width
    Activation hidden = Activation::tanh;
    Activation output = Activation::sigmoid;
    bool zero_output = false;  ///< zero-initialize the output layer
  };

  Mlp() = default;
  Mlp(const Config& config, Initializer& init);

  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, ParamSet& out) const;
  std::size_t in_features() const { return layers_.front().in_features(); }
  std::size_t out_features() const { return layers_.back().out_features(); }

  std::vector<Dense> layers_;
};

/// conv (no bias) -> batch norm -> ReLU, "same" padding for odd kernels unless told otherwise.
class ConvBnRelu {
 public:
  ConvBnRelu() = default;
  ConvBnRelu(std::size_t in, std::size_t out, std::size_t kernel, std::size_t padding,
             Initializer& init);

  Tensor forward(const Tensor& x, bool training);
  void collect(const std::string& prefix, ParamSet& out) const;

  Tensor weight_;
  BatchNorm bn_;
  std::size_t padding_ = 0;
};

/// Squeeze 1x1 (s channels) feeding parallel 1x1 and 3x3 expands (c/2 each), plus a
/// residual shortcut: identity when channels match, otherwise a 1x1 projection.
class FireModule {
 public:
  FireModule() = default;
  FireModule(std::size_t in, std::size_t out, std::size_t squeeze, Initializer& init,
             bool force_projection = false);

  /// concat(expand1(squeeze(x)), expand3(squeeze(x)))
  Tensor forward(const Tensor& x, bool training);
  /// forward(x) + shortcut(x)
  Tensor forward_residual(const Tensor& x, bool training);
  Tensor shortcut(const Tensor& x) const;
  void collect(const std::string& prefix, ParamSet& out) const;
  std::size_t in_channels() const { return squeeze_.weight_.dim(1); }
  std::size_t out_channels() const { return out_; }

  ConvBnRelu squeeze_, expand1_, expand3_;
  Tensor projection_;  ///< [out, in, 1, 1]; undefined for the identity shortcut
  std::size_t out_ = 0;
};

struct EncoderConfig {
  std::size_t in_channels = 20;
  std::size_t resolution = 32;
  std::size_t stem_channels = 64;
  std::vector<std::size_t> fire_channels{64, 128, 256};
  /// Number of fire modules; negative means min(fire_channels.size(), pools - 1).
  int fire_count = -1;
  std::size_t squeeze = 16;
  std::size_t latent = 256;
};

/// Number of 2x poolings for resolution H = 8 * 2^L; throws ShapeError otherwise.
std::size_t encoder_pool_count(std::size_t resolution);

/// stem 5x5 conv -> pool, fire modules (pooled while pools remain), 8x8 valid head conv.
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(const EncoderConfig& config, Initializer& init);

  /// [N, C, H, H] -> [N, latent]
  Tensor forward(const Tensor& images, bool training);
  void collect(const std::string& prefix, ParamSet& out) const;
  const EncoderConfig& config() const { return config_; }
  std::size_t fire_count() const { return fires_.size(); }
  std::size_t pool_count() const { return pools_; }

  EncoderConfig config_;
  ConvBnRelu stem_;
  std::vector<FireModule> fires_;
  ConvBnRelu head_;
  std::size_t pools_ = 0;
};

/// Stacked LSTM, gate order (input, forget, cell, output), zero initial state.
class LstmStack {
 public:
  LstmStack() = default;
  LstmStack(std::size_t input, std::size_t hidden, std::size_t layers, Initializer& init);

  /// sequence[k] is [N, input]; returns the top layer's final hidden state [N, hidden].
  Tensor forward(const std::vector<Tensor>& sequence) const;
  void collect(const std::string& prefix, ParamSet& out) const;
  std::size_t hidden() const { return hidden_; }

  struct Cell {
    Tensor w_ih, w_hh, bias;  ///< [4H, in], [4H, H], [4H]
  };
  std::vector<Cell> cells_;
  std::size_t hidden_ = 0;
};

struct DecoderConfig {
  std::size_t latent = 256;
  std::size_t out_channels = 20;
  std::size_t resolution = 32;
  std::size_t seed_channels = 256;
  std::size_t min_channels = 32;
};

/// Number of 2x upsampling stages from a 4x4 seed; throws ShapeError unless H = 4 * 2^D, D >= 1.
std::size_t decoder_stage_count(std::size_t resolution);

/// Dense seed projection to [seed_channels, 4, 4], then per stage: 2x nearest upsample,
/// 3x3 conv, batch norm, ReLU; the last stage is a plain conv to out_channels.
class ImageDecoder {
 public:
  ImageDecoder() = default;
  ImageDecoder(const DecoderConfig& config, Initializer& init);

  /// [N, latent] -> [N, C, H, H]
  Tensor forward(const Tensor& z, bool training);
  void collect(const std::string& prefix, ParamSet& out) const;
  const DecoderConfig& config() const { return config_; }

  DecoderConfig config_;
  Tensor seed_weight_;
  BatchNorm seed_bn_;
  std::vector<ConvBnRelu> stages_;
  Tensor out_weight_, out_bias_;
};

}  // namespace pvnow

#include "pvnow/layers.hpp"

#include <cmath>

namespace pvnow {

std::vector<Tensor> ParamSet::tensors() const {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& [name, t] : params) out.push_back(t);
  return out;
}

std::size_t ParamSet::param_count() const {
  std::size_t n = 0;
  for (const auto& [name, t] : params) n += t.numel();
  return n;
}

Tensor Initializer::uniform(Shape shape, std::size_t fan_in) {
  const double bound = std::sqrt(1.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(std::move(shape), dtype_);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, dist(rng_));
  return t;
}

Tensor activate(const Tensor& x, Activation act) {
  switch (act) {
    case Activation::tanh: return tanh(x);
    case Activation::sigmoid: return sigmoid(x);
    case Activation::relu: return relu(x);
    case Activation::none: break;
  }
  return x;
}

namespace {

Tensor param(Tensor t) {
  t.set_requires_grad(true);
  return t;
}

std::string join(const std::string& prefix, const std::string& name) {
  return prefix.empty() ? name : prefix + "." + name;
}

}  // namespace

// ---- BatchNorm ----

BatchNorm::BatchNorm(std::size_t channels, Initializer& init, double momentum, double eps)
    : gamma_(param(init.ones({channels}))),
      beta_(param(init.zeros({channels}))),
      buffers_{init.zeros({channels}), init.ones({channels})},
      momentum_(momentum),
      eps_(eps) {}

Tensor BatchNorm::forward(const Tensor& x, bool training) {
  return batch_norm(x, gamma_, beta_, buffers_, training, momentum_, eps_);
}

void BatchNorm::collect(const std::string& prefix, ParamSet& out) const {
  out.params.emplace_back(join(prefix, "gamma"), gamma_);
  out.params.emplace_back(join(prefix, "beta"), beta_);
  out.buffers.emplace_back(join(prefix, "running_mean"), buffers_.running_mean);
  out.buffers.emplace_back(join(prefix, "running_var"), buffers_.running_var);
}

// ---- Dense / Mlp ----

Dense::Dense(std::size_t in, std::size_t out, Activation act, bool batch_norm, Initializer& init,
             bool zero_init)
    : act_(act) {
  weight_ = param(zero_init ? init.zeros({out, in}) : init.uniform({out, in}, in));
  if (batch_norm) {
    bn_.emplace(out, init);
  } else {
    bias_ = param(zero_init ? init.zeros({out}) : init.uniform({out}, in));
  }
}

Tensor Dense::forward(const Tensor& x, bool training) {
  Tensor y = linear(x, weight_, bias_);
  if (bn_) y = bn_->forward(y, training);
  return activate(y, act_);
}

void Dense::collect(const std::string& prefix, ParamSet& out) const {
  out.params.emplace_back(join(prefix, "weight"), weight_);
  if (bias_.defined()) out.params.emplace_back(join(prefix, "bias"), bias_);
  if (bn_) bn_->collect(join(prefix, "bn"), out);
}

Mlp::Mlp(const Config& config, Initializer& init) {
  if (config.widths.empty()) throw std::invalid_argument("Mlp: at least one layer required");
  std::size_t in = config.in;
  for (std::size_t i = 0; i < config.widths.size(); ++i) {
    const bool last = i + 1 == config.widths.size();
    layers_.emplace_back(in, config.widths[i], last ? config.output : config.hidden, !last, init,
                         last && config.zero_output);
    in = config.widths[i];
  }
}

Tensor Mlp::forward(const Tensor& x, bool training) {
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (h.rank() != 2 || h.dim(1) != layers_[i].in_features()) {
      throw ShapeError("Mlp layer " + std::to_string(i) + ": expected [N," +
                       std::to_string(layers_[i].in_features()) + "] input, got " +
                       to_string(h.shape()));
    }
    h = layers_[i].forward(h, training);
  }
  return h;
}

void Mlp::collect(const std::string& prefix, ParamSet& out) const {
  for (std::size_t i = 0; i < layers_.size(); ++i)
    layers_[i].collect(join(prefix, "layer" + std::to_string(i)), out);
}

// ---- Convolutions ----

ConvBnRelu::ConvBnRelu(std::size_t in, std::size_t out, std::size_t kernel, std::size_t padding,
                       Initializer& init)
    : weight_(param(init.uniform({out, in, kernel, kernel}, in * kernel * kernel))),
      bn_(out, init),
      padding_(padding) {}

Tensor ConvBnRelu::forward(const Tensor& x, bool training) {
  return relu(bn_.forward(conv2d(x, weight_, {}, {1, padding_}), training));
}

void ConvBnRelu::collect(const std::string& prefix, ParamSet& out) const {
  out.params.emplace_back(join(prefix, "weight"), weight_);
  bn_.collect(join(prefix, "bn"), out);
}

FireModule::FireModule(std::size_t in, std::size_t out, std::size_t squeeze, Initializer& init,
                       bool force_projection)
    : out_(out) {
  if (out % 2 != 0) throw std::invalid_argument("FireModule: output channels must be even");
  squeeze_ = ConvBnRelu(in, squeeze, 1, 0, init);
  expand1_ = ConvBnRelu(squeeze, out / 2, 1, 0, init);
  expand3_ = ConvBnRelu(squeeze, out / 2, 3, 1, init);
  if (in != out || force_projection) projection_ = param(init.uniform({out, in, 1, 1}, in));
}

Tensor FireModule::forward(const Tensor& x, bool training) {
  if (x.rank() != 4 || x.dim(1) != in_channels()) {
    throw ShapeError("fire: expected " + std::to_string(in_channels()) + " input channels, got " +
                     to_string(x.shape()));
  }
  const Tensor s = squeeze_.forward(x, training);
  return concat({expand1_.forward(s, training), expand3_.forward(s, training)}, 1);
}

Tensor FireModule::shortcut(const Tensor& x) const {
  return projection_.defined() ? conv2d(x, projection_) : x;
}

Tensor FireModule::forward_residual(const Tensor& x, bool training) {
  return add(forward(x, training), shortcut(x));
}

void FireModule::collect(const std::string& prefix, ParamSet& out) const {
  squeeze_.collect(join(prefix, "squeeze"), out);
  expand1_.collect(join(prefix, "expand1"), out);
  expand3_.collect(join(prefix, "expand3"), out);
  if (projection_.defined()) out.params.emplace_back(join(prefix, "projection"), projection_);
}

std::size_t encoder_pool_count(std::size_t resolution) {
  std::size_t pools = 0, h = resolution;
  while (h > 8 && h % 2 == 0) {
    h /= 2;
    ++pools;
  }
  if (h != 8 || pools == 0) {
    throw ShapeError("image encoder: resolution " + std::to_string(resolution) +
                     " not admissible; expected 8*2^L with L >= 1 (16, 32, 64, 128, ...)");
  }
  return pools;
}

ImageEncoder::ImageEncoder(const EncoderConfig& config, Initializer& init) : config_(config) {
  pools_ = encoder_pool_count(config.resolution);
  std::size_t fires = config.fire_count >= 0
                          ? static_cast<std::size_t>(config.fire_count)
                          : std::min(config.fire_channels.size(), pools_ - 1);
  if (fires > config.fire_channels.size()) {
    throw std::invalid_argument("image encoder: " + std::to_string(fires) +
                                " fire modules requested but only " +
                                std::to_string(config.fire_channels.size()) + " widths given");
  }
  stem_ = ConvBnRelu(config.in_channels, config.stem_channels, 5, 2, init);
  std::size_t c = config.stem_channels;
  for (std::size_t i = 0; i < fires; ++i) {
    fires_.emplace_back(c, config.fire_channels[i], config.squeeze, init);
    c = config.fire_channels[i];
  }
  head_ = ConvBnRelu(c, config.latent, 8, 0, init);
}

Tensor ImageEncoder::forward(const Tensor& images, bool training) {
  const auto& cfg = config_;
  if (images.rank() != 4 || images.dim(1) != cfg.in_channels || images.dim(2) != cfg.resolution ||
      images.dim(3) != cfg.resolution) {
    throw ShapeError("image encoder: expected [N," + std::to_string(cfg.in_channels) + "," +
                     std::to_string(cfg.resolution) + "," + std::to_string(cfg.resolution) +
                     "], got " + to_string(images.shape()));
  }
  std::size_t pooled = 0;
  Tensor h = stem_.forward(images, training);
  h = max_pool2d(h);
  ++pooled;
  for (auto& fire : fires_) {
    h = fire.forward_residual(h, training);
    if (pooled < pools_) {
      h = max_pool2d(h);
      ++pooled;
    }
  }
  while (pooled < pools_) {
    h = max_pool2d(h);
    ++pooled;
  }
  h = head_.forward(h, training);
  return reshape(h, {h.dim(0), cfg.latent});
}

void ImageEncoder::collect(const std::string& prefix, ParamSet& out) const {
  stem_.collect(join(prefix, "stem"), out);
  for (std::size_t i = 0; i < fires_.size(); ++i)
    fires_[i].collect(join(prefix, "fire" + std::to_string(i)), out);
  head_.collect(join(prefix, "head"), out);
}

// ---- LSTM ----

LstmStack::LstmStack(std::size_t input, std::size_t hidden, std::size_t layers, Initializer& init)
    : hidden_(hidden) {
  std::size_t in = input;
  for (std::size_t l = 0; l < layers; ++l) {
    Cell cell;
    cell.w_ih = param(init.uniform({4 * hidden, in}, hidden));
    cell.w_hh = param(init.uniform({4 * hidden, hidden}, hidden));
    cell.bias = init.uniform({4 * hidden}, hidden);
    for (std::size_t j = hidden; j < 2 * hidden; ++j) cell.bias.set(j, 1.0);  // forget gate
    cell.bias.set_requires_grad(true);
    cells_.push_back(cell);
    in = hidden;
  }
}

Tensor LstmStack::forward(const std::vector<Tensor>& sequence) const {
  if (sequence.empty()) throw std::invalid_argument("lstm: empty sequence");
  const std::size_t hsz = hidden_;
  std::vector<Tensor> h(cells_.size()), c(cells_.size());
  for (const Tensor& x_t : sequence) {
    Tensor input = x_t;
    for (std::size_t l = 0; l < cells_.size(); ++l) {
      const Cell& cell = cells_[l];
      if (input.rank() != 2 || input.dim(1) != cell.w_ih.dim(1)) {
        throw ShapeError("lstm layer " + std::to_string(l) + ": expected [N," +
                         std::to_string(cell.w_ih.dim(1)) + "] input, got " +
                         to_string(input.shape()));
      }
      Tensor gates = linear(input, cell.w_ih, cell.bias);
      if (h[l].defined()) gates = add(gates, linear(h[l], cell.w_hh));
      const Tensor i = sigmoid(slice(gates, 1, 0, hsz));
      const Tensor f = sigmoid(slice(gates, 1, hsz, hsz));
      const Tensor g = tanh(slice(gates, 1, 2 * hsz, hsz));
      const Tensor o = sigmoid(slice(gates, 1, 3 * hsz, hsz));
      c[l] = c[l].defined() ? add(mul(f, c[l]), mul(i, g)) : mul(i, g);
      h[l] = mul(o, tanh(c[l]));
      input = h[l];
    }
  }
  return h.back();
}

void LstmStack::collect(const std::string& prefix, ParamSet& out) const {
  for (std::size_t l = 0; l < cells_.size(); ++l) {
    const std::string p = join(prefix, "layer" + std::to_string(l));
    out.params.emplace_back(join(p, "w_ih"), cells_[l].w_ih);
    out.params.emplace_back(join(p, "w_hh"), cells_[l].w_hh);
    out.params.emplace_back(join(p, "bias"), cells_[l].bias);
  }
}

// ---- Decoder ----

std::size_t decoder_stage_count(std::size_t resolution) {
  std::size_t stages = 0, h = resolution;
  while (h > 4 && h % 2 == 0) {
    h /= 2;
    ++stages;
  }
  if (h != 4 || stages == 0) {
    throw ShapeError("image decoder: resolution " + std::to_string(resolution) +
                     " inconsistent with a 4x4 seed doubled per stage (expected 4*2^D, D >= 1)");
  }
  return stages;
}

ImageDecoder::ImageDecoder(const DecoderConfig& config, Initializer& init) : config_(config) {
  const std::size_t stages = decoder_stage_count(config.resolution);
  const std::size_t c0 = config.seed_channels;
  seed_weight_ = param(init.uniform({c0 * 16, config.latent}, config.latent));
  seed_bn_ = BatchNorm(c0, init);
  std::size_t c = c0;
  for (std::size_t i = 0; i + 1 < stages; ++i) {
    const std::size_t next = std::max(c / 2, config.min_channels);
    stages_.emplace_back(c, next, 3, 1, init);
    c = next;
  }
  out_weight_ = param(init.uniform({config.out_channels, c, 3, 3}, c * 9));
  out_bias_ = param(init.zeros({config.out_channels}));
}

Tensor ImageDecoder::forward(const Tensor& z, bool training) {
  if (z.rank() != 2 || z.dim(1) != config_.latent) {
    throw ShapeError("image decoder: expected [N," + std::to_string(config_.latent) + "], got " +
                     to_string(z.shape()));
  }
  Tensor h = linear(z, seed_weight_);
  h = reshape(h, {z.dim(0), config_.seed_channels, 4, 4});
  h = relu(seed_bn_.forward(h, training));
  for (auto& stage : stages_) h = stage.forward(upsample_nearest2d(h), training);
  return conv2d(upsample_nearest2d(h), out_weight_, out_bias_, {1, 1});
}

void ImageDecoder::collect(const std::string& prefix, ParamSet& out) const {
  out.params.emplace_back(join(prefix, "seed.weight"), seed_weight_);
  seed_bn_.collect(join(prefix, "seed.bn"), out);
  for (std::size_t i = 0; i < stages_.size(); ++i)
    stages_[i].collect(join(prefix, "stage" + std::to_string(i)), out);
  out.params.emplace_back(join(prefix, "out.weight"), out_weight_);
  out.params.emplace_back(join(prefix, "out.bias"), out_bias_);
}

}  // namespace pvnow

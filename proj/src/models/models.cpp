#include "pvnow/models.hpp"

#include <algorithm>
#include <cctype>
#include <stdexcept>

namespace pvnow {

std::string to_string(ModelKind kind) {
  switch (kind) {
    case ModelKind::mlp: return "mlp";
    case ModelKind::cnn: return "cnn";
    case ModelKind::lstm: return "lstm";
    case ModelKind::lstm_full: return "lstm_full";
  }
  return "?";
}

ModelKind parse_model_kind(const std::string& name) {
  std::string s;
  for (char c : name) s.push_back(c == '-' ? '_' : static_cast<char>(std::tolower(c)));
  if (s == "mlp") return ModelKind::mlp;
  if (s == "cnn") return ModelKind::cnn;
  if (s == "lstm") return ModelKind::lstm;
  if (s == "lstm_full" || s == "lstmfull") return ModelKind::lstm_full;
  throw std::invalid_argument("unknown model kind '" + name + "' (mlp, cnn, lstm, lstm_full)");
}

bool uses_images(ModelKind kind) { return kind != ModelKind::mlp; }

namespace {

std::vector<std::size_t> widths(std::vector<std::size_t> hidden, std::size_t out) {
  hidden.push_back(out);
  return hidden;
}

}  // namespace

Model::Model(const ModelConfig& config) : config_(config) {
  Initializer init(config.seed, config.dtype);
  const std::size_t k = config.history;
  if (k == 0) throw std::invalid_argument("model: history length must be positive");

  if (config.kind == ModelKind::mlp) {
    predictor_ = Mlp({k, widths(config.mlp_hidden, 1), Activation::tanh, Activation::sigmoid, config.zero_output},
                     init);
    return;
  }

  encoder_ = ImageEncoder(config.encoder, init);
  const std::size_t latent = config.encoder.latent;
  const std::size_t zp = config.power_encoder.back();
  power_encoder_ = Mlp({k,
                        config.power_encoder,
                        Activation::tanh,
                        Activation::tanh},
                       init);
  std::size_t image_features = latent * k;
  if (config.kind != ModelKind::cnn) {
    lstm_ = LstmStack(latent, config.lstm_hidden, config.lstm_layers, init);
    image_features = config.lstm_hidden;
  }
  predictor_ = Mlp({image_features + zp, widths(config.predictor_hidden, 1), Activation::tanh,
                    Activation::sigmoid, config.zero_output},
                   init);

  if (config.kind == ModelKind::lstm_full) {
    const std::vector<std::size_t> hidden{config.head_hidden};
    power_head_ = Mlp({latent, widths(hidden, 1), Activation::tanh, Activation::sigmoid}, init);
    sun_head_ = Mlp({latent, widths(hidden, 2), Activation::tanh, Activation::sigmoid}, init);
    sun_delta_head_ =
        Mlp({config.lstm_hidden, widths(hidden, 2), Activation::tanh, Activation::none}, init);
    sky_delta_head_ =
        Mlp({config.lstm_hidden, widths(hidden, 1), Activation::tanh, Activation::none}, init);
    DecoderConfig dec = config.decoder;
    dec.latent = latent;
    dec.out_channels = config.encoder.in_channels;
    dec.resolution = config.encoder.resolution;
    decoder_ = ImageDecoder(dec, init);
  }
}

ModelOutputs Model::forward(const ModelBatch& batch, bool training, bool auxiliary) {
  const std::size_t k = config_.history;
  if (!batch.history.defined() || batch.history.rank() != 2 || batch.history.dim(1) != k) {
    throw ShapeError("model: expected history [B," + std::to_string(k) + "], got " +
                     (batch.history.defined() ? to_string(batch.history.shape()) : "none"));
  }
  const std::size_t b = batch.history.dim(0);
  ModelOutputs out;
  if (config_.kind == ModelKind::mlp) {
    out.delta_q = add_scalar(scale(predictor_.forward(batch.history, training), 2.0), -1.0);
    return out;
  }

  if (!batch.images.defined() || batch.image_index.size() != b * k) {
    throw std::invalid_argument("model " + to_string(config_.kind) +
                                ": image stacks missing for one or more history steps");
  }
  const Tensor latents = encoder_.forward(batch.images, training);  // [U, latent]
  const Tensor zp = power_encoder_.forward(batch.history, training);

  // Per step k: the latent of each sample's k-th image, as [B, latent].
  std::vector<Tensor> steps;
  steps.reserve(k);
  std::vector<std::size_t> rows(b);
  for (std::size_t step = 0; step < k; ++step) {
    for (std::size_t i = 0; i < b; ++i) rows[i] = batch.image_index[i * k + step];
    steps.push_back(gather_rows(latents, rows));
  }

  Tensor zi;
  if (config_.kind == ModelKind::cnn) {
    zi = concat(steps, 1);
  } else {
    zi = lstm_.forward(steps);
  }
  const Tensor features = concat({zi, zp}, 1);
  out.delta_q = add_scalar(scale(predictor_.forward(features, training), 2.0), -1.0);

  if (config_.kind == ModelKind::lstm_full && auxiliary) {
    out.image_q = power_head_.forward(latents, training);
    out.image_sun = sun_head_.forward(latents, training);
    out.image_recon = decoder_.forward(latents, training);
    out.delta_sun = sun_delta_head_.forward(zi, training);
    out.delta_sky = sky_delta_head_.forward(zi, training);
  }
  return out;
}

void Model::collect(ParamSet& out) const {
  if (config_.kind != ModelKind::mlp) {
    encoder_.collect("encoder", out);
    power_encoder_.collect("power_encoder", out);
    if (config_.kind != ModelKind::cnn) lstm_.collect("lstm", out);
  }
  predictor_.collect("predictor", out);
  if (config_.kind == ModelKind::lstm_full) {
    power_head_.collect("heads.power", out);
    sun_head_.collect("heads.sun", out);
    decoder_.collect("heads.decoder", out);
    sun_delta_head_.collect("heads.sun_delta", out);
    sky_delta_head_.collect("heads.sky_delta", out);
  }
}

std::vector<Tensor> Model::encoder_params() const {
  if (config_.kind == ModelKind::mlp) return {};
  ParamSet set;
  encoder_.collect("encoder", set);
  return set.tensors();
}

std::vector<Tensor> Model::other_params() const {
  ParamSet set;
  collect(set);
  std::vector<Tensor> out;
  for (const auto& [name, t] : set.params)
    if (name.rfind("encoder.", 0) != 0) out.push_back(t);
  return out;
}

// ---- losses ----

Tensor main_loss(const Tensor& predicted, const Tensor& target) {
  if (predicted.shape() != target.shape()) {
    throw ShapeError("main_loss: prediction " + to_string(predicted.shape()) + " vs target " +
                     to_string(target.shape()));
  }
  return mean(abs(sub(predicted, target)));
}

namespace {

void require(const Tensor& t, const char* task) {
  if (!t.defined()) throw std::invalid_argument(std::string("multitask_loss: missing ") + task);
}

/// Sum over (sample, step) of per-image residual norms, divided by the batch size.
Tensor per_step_term(const Tensor& per_image_norm, const ModelBatch& batch) {
  const Tensor per_step = gather_rows(per_image_norm, batch.image_index);
  return scale(sum(per_step), 1.0 / static_cast<double>(batch.size()));
}

Tensor flatten_rows(const Tensor& x) {
  return reshape(x, {x.dim(0), x.numel() / x.dim(0)});
}

}  // namespace

LossResult single_task_loss(const ModelOutputs& out, const ModelBatch& batch) {
  require(out.delta_q, "main prediction");
  require(batch.delta_q, "main target (delta q)");
  LossResult r;
  r.total = main_loss(out.delta_q, batch.delta_q);
  r.terms.main = r.total.item();
  return r;
}

LossResult multitask_loss(const ModelOutputs& out, const ModelBatch& batch, const LossWeights& w) {
  require(out.delta_q, "main prediction");
  require(batch.delta_q, "main target (delta q)");
  require(out.image_q, "power regression output");
  require(batch.image_q, "power regression target (per-step p)");
  require(out.image_sun, "sun regression output");
  require(batch.image_sun, "sun regression target (per-step theta)");
  require(out.image_recon, "image reconstruction output");
  require(batch.images, "image reconstruction target (per-step I)");
  require(out.delta_sun, "sun variation output");
  require(batch.delta_sun, "sun variation target (delta theta)");
  require(out.delta_sky, "sky intensity variation output");
  require(batch.delta_sky, "sky intensity variation target (delta s)");

  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const Tensor l_main = main_loss(out.delta_q, batch.delta_q);
  const Tensor l_dsun = scale(sum(row_l2_norm(sub(out.delta_sun, batch.delta_sun))), inv_b);
  const Tensor l_dsky = scale(sum(abs(sub(out.delta_sky, batch.delta_sky))), inv_b);
  const Tensor l_p = per_step_term(abs(sub(out.image_q, batch.image_q)), batch);
  const Tensor l_sun = per_step_term(row_l2_norm(sub(out.image_sun, batch.image_sun)), batch);
  const Tensor l_img = per_step_term(
      row_l2_norm(flatten_rows(sub(out.image_recon, batch.images))), batch);

  LossResult r;
  r.terms = {l_main.item(), l_dsun.item(), l_dsky.item(), l_p.item(), l_sun.item(), l_img.item()};
  Tensor total = l_main;
  const std::pair<double, const Tensor*> weighted[] = {
      {w.delta_sun, &l_dsun}, {w.delta_sky, &l_dsky}, {w.power, &l_p},
      {w.sun, &l_sun},        {w.image, &l_img},
  };
  for (const auto& [lambda, term] : weighted) {
    if (lambda < 0) throw std::invalid_argument("multitask_loss: negative loss weight");
    if (lambda != 0) total = add(total, scale(*term, lambda));
  }
  r.total = total;
  return r;
}

}  // namespace pvnow

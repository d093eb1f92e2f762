#include "pvnow/gradsuite.hpp"

#include <random>

#include "pvnow/ops.hpp"

namespace pvnow {

namespace {

Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), DType::f64);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, dist(rng));
  return t;
}

/// sum(x * w) with fixed random w: dense O(1) upstream gradient.
Tensor probe(const Tensor& x, std::uint64_t seed) {
  return sum(mul(x, random_tensor(x.shape(), seed ^ 0x9e3779b97f4a7c15ULL)));
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Smooth ops use the default stencil step; ops with kinks start from a small step
// and fall back to others when a kink sits inside the stencil.
constexpr double kSmooth = 1e-4;
constexpr double kKinked = 1e-6;

GradCheckResult check(const std::function<Tensor()>& loss, std::vector<Tensor> tensors,
                      double step, std::size_t coords = 0, std::uint64_t seed = 0,
                      double abs_floor = 1e-12) {
  GradCheckOptions options;
  options.step = step;
  options.coords_per_tensor = coords;
  options.seed = seed;
  options.abs_floor = abs_floor;
  if (step == kKinked) options.fallback_steps = {1e-4, 1e-3, 1e-7};
  return gradient_check(loss, tensors, options);
}

std::vector<Tensor> with(const ParamSet& set, std::initializer_list<Tensor> extra) {
  auto out = set.tensors();
  out.insert(out.end(), extra.begin(), extra.end());
  return out;
}

}  // namespace

void randomize_batch_norm(ParamSet& set, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto draw = [&](Tensor& t, double lo, double hi) {
    std::uniform_real_distribution<double> dist(lo, hi);
    for (std::size_t i = 0; i < t.numel(); ++i) t.set(i, dist(rng));
  };
  for (auto& [name, t] : set.params) {
    if (ends_with(name, "gamma")) draw(t, 0.5, 1.5);
    if (ends_with(name, "beta")) draw(t, -0.3, 0.3);
  }
  for (auto& [name, t] : set.buffers) {
    if (ends_with(name, "running_mean")) draw(t, -0.3, 0.3);
    if (ends_with(name, "running_var")) draw(t, 0.5, 2.0);
  }
}

std::vector<GradSuiteCase> op_cases() {
  std::vector<GradSuiteCase> cases;
  auto unary = [&](std::string name, double threshold, double step,
                   std::function<Tensor(const Tensor&)> op, Shape shape) {
    cases.push_back({std::move(name), threshold, [=](std::uint64_t seed) {
                       Tensor x = random_tensor(shape, seed);
                       return check([&] { return probe(op(x), seed); }, {x}, step);
                     }});
  };
  unary("add/sub/mul", 1e-6, kSmooth,
        [](const Tensor& x) { return sub(mul(add(x, x), x), scale(x, 0.5)); }, {3, 4});
  unary("tanh", 1e-6, kSmooth, [](const Tensor& x) { return tanh(x); }, {3, 4});
  unary("sigmoid", 1e-6, kSmooth, [](const Tensor& x) { return sigmoid(x); }, {3, 4});
  unary("relu", 1e-6, kKinked, [](const Tensor& x) { return relu(x); }, {3, 4});
  unary("abs", 1e-6, kKinked, [](const Tensor& x) { return abs(x); }, {3, 4});
  unary("sum/mean", 1e-6, kSmooth, [](const Tensor& x) { return add(sum(mul(x, x)), mean(x)); },
        {3, 4});
  unary("l2_norm", 1e-6, kSmooth, [](const Tensor& x) { return add(l2_norm(x), sum(row_l2_norm(x))); },
        {3, 4});
  cases.push_back({"matmul", 1e-6, [](std::uint64_t seed) {
                     Tensor a = random_tensor({3, 4}, seed), b = random_tensor({4, 5}, seed + 1);
                     return check([&] { return probe(matmul(a, b), seed); }, {a, b}, kSmooth);
                   }});
  cases.push_back({"batch_norm (train)", 1e-6, [](std::uint64_t seed) {
                     Tensor x = random_tensor({4, 3, 2, 2}, seed);
                     Tensor g = random_tensor({3}, seed + 1, 0.5, 1.5), b = random_tensor({3}, seed + 2);
                     BatchNormBuffers buf{Tensor::zeros({3}, DType::f64), Tensor::full({3}, 1.0, DType::f64)};
                     return check([&] { return probe(batch_norm(x, g, b, buf, true, 0.9, 1e-5), seed); },
                                  {x, g, b}, kSmooth);
                   }});
  cases.push_back({"batch_norm (eval)", 1e-6, [](std::uint64_t seed) {
                     Tensor x = random_tensor({4, 3, 2, 2}, seed);
                     Tensor g = random_tensor({3}, seed + 1, 0.5, 1.5), b = random_tensor({3}, seed + 2);
                     BatchNormBuffers buf{random_tensor({3}, seed + 3), random_tensor({3}, seed + 4, 0.5, 2)};
                     return check([&] { return probe(batch_norm(x, g, b, buf, false, 0.9, 1e-5), seed); },
                                  {x, g, b}, kSmooth);
                   }});
  cases.push_back({"conv2d", 1e-4, [](std::uint64_t seed) {
                     Tensor x = random_tensor({2, 2, 6, 6}, seed), w = random_tensor({3, 2, 3, 3}, seed + 1);
                     Tensor b = random_tensor({3}, seed + 2);
                     return check([&] { return probe(conv2d(x, w, b, {1, 1}), seed); }, {x, w, b}, kSmooth);
                   }});
  cases.push_back({"max_pool2d", 1e-4, [](std::uint64_t seed) {
                     Tensor x = random_tensor({2, 3, 4, 4}, seed);
                     return check([&] { return probe(max_pool2d(x), seed); }, {x}, kKinked);
                   }});
  cases.push_back({"upsample/concat/slice/gather", 1e-4, [](std::uint64_t seed) {
                     Tensor x = random_tensor({3, 2, 2, 2}, seed);
                     const std::vector<std::size_t> rows{2, 0, 2};
                     return check(
                         [&] {
                           const Tensor u = upsample_nearest2d(x);
                           const Tensor c = concat({u, tanh(u)}, 1);
                           return probe(slice(gather_rows(c, rows), 1, 1, 2), seed);
                         },
                         {x}, kSmooth);
                   }});
  return cases;
}

std::vector<GradSuiteCase> layer_cases() {
  std::vector<GradSuiteCase> cases;
  cases.push_back({"dense+bn (train)", 1e-6, [](std::uint64_t seed) {
                     Initializer init(seed, DType::f64);
                     Dense layer(5, 4, Activation::tanh, true, init);
                     ParamSet set;
                     layer.collect("", set);
                     randomize_batch_norm(set, seed);
                     Tensor x = random_tensor({8, 5}, seed + 100);
                     return check([&] { return probe(layer.forward(x, true), seed); }, with(set, {x}), kSmooth);
                   }});
  cases.push_back({"mlp", 1e-6, [](std::uint64_t seed) {
                     Initializer init(seed, DType::f64);
                     Mlp mlp({5, {7, 6, 2}}, init);
                     ParamSet set;
                     mlp.collect("", set);
                     randomize_batch_norm(set, seed);
                     Tensor x = random_tensor({6, 5}, seed + 100);
                     return check([&] { return probe(mlp.forward(x, false), seed); }, with(set, {x}), kSmooth);
                   }});
  cases.push_back({"fire module", 1e-4, [](std::uint64_t seed) {
                     Initializer init(seed, DType::f64);
                     FireModule fire(3, 4, 2, init);
                     ParamSet set;
                     fire.collect("", set);
                     Tensor x = random_tensor({1, 3, 8, 8}, seed + 100);
                     return check([&] { return probe(fire.forward_residual(x, true), seed); }, with(set, {x}),
                                  kKinked);
                   }});
  cases.push_back({"image encoder", 1e-4, [](std::uint64_t seed) {
                     Initializer init(seed, DType::f64);
                     ImageEncoder enc(tiny_model_config(ModelKind::cnn, seed).encoder, init);
                     ParamSet set;
                     enc.collect("", set);
                     randomize_batch_norm(set, seed);
                     Tensor x = random_tensor({2, 2, 16, 16}, seed + 100);
                     return check([&] { return probe(enc.forward(x, false), seed); }, with(set, {x}), kKinked, 6,
                                  seed);
                   }});
  cases.push_back({"lstm stack (K=3)", 1e-4, [](std::uint64_t seed) {
                     Initializer init(seed, DType::f64);
                     LstmStack lstm(3, 4, 2, init);
                     ParamSet set;
                     lstm.collect("", set);
                     std::vector<Tensor> seq;
                     for (std::uint64_t k = 0; k < 3; ++k) seq.push_back(random_tensor({2, 3}, seed * 10 + k));
                     auto tensors = set.tensors();
                     tensors.insert(tensors.end(), seq.begin(), seq.end());
                     return check([&] { return probe(lstm.forward(seq), seed); }, tensors, kSmooth);
                   }});
  cases.push_back({"image decoder", 1e-4, [](std::uint64_t seed) {
                     Initializer init(seed, DType::f64);
                     ImageDecoder dec({5, 2, 16, 6, 3}, init);
                     ParamSet set;
                     dec.collect("", set);
                     randomize_batch_norm(set, seed);
                     Tensor z = random_tensor({2, 5}, seed + 100);
                     return check([&] { return probe(dec.forward(z, false), seed); }, with(set, {z}), kKinked, 6,
                                  seed);
                   }});
  return cases;
}

ModelConfig tiny_model_config(ModelKind kind, std::uint64_t seed) {
  ModelConfig c;
  c.kind = kind;
  c.history = 6;
  c.encoder.in_channels = 2;
  c.encoder.resolution = 16;
  c.encoder.stem_channels = 4;
  c.encoder.fire_channels = {6};
  c.encoder.fire_count = 1;
  c.encoder.squeeze = 3;
  c.encoder.latent = 5;
  c.lstm_hidden = 4;
  c.mlp_hidden = {5, 4};
  c.power_encoder = {4, 3};
  c.predictor_hidden = {6, 5};
  c.head_hidden = 4;
  c.decoder.seed_channels = 4;
  c.decoder.min_channels = 2;
  c.dtype = DType::f64;
  c.seed = seed;
  return c;
}

ModelBatch random_batch(const ModelConfig& config, std::size_t samples, std::uint64_t seed) {
  const std::size_t k = config.history;
  const std::size_t c = config.encoder.in_channels, h = config.encoder.resolution;
  // Sample b covers minutes b .. b+K-1, so neighbouring samples share K-1 images.
  const std::size_t unique = samples + k - 1;
  ModelBatch batch;
  batch.history = random_tensor({samples, k}, seed, 0.2, 0.9);
  batch.delta_q = random_tensor({samples, 1}, seed + 1, -0.3, 0.3);
  if (uses_images(config.kind)) {
    batch.images = random_tensor({unique, c, h, h}, seed + 2, 0.0, 1.0);
    for (std::size_t b = 0; b < samples; ++b)
      for (std::size_t step = 0; step < k; ++step) batch.image_index.push_back(b + step);
    batch.image_q = random_tensor({unique, 1}, seed + 3, 0.2, 0.9);
    batch.image_sun = random_tensor({unique, 2}, seed + 4, 0.1, 0.6);
    batch.delta_sun = random_tensor({samples, 2}, seed + 5, -0.01, 0.01);
    batch.delta_sky = random_tensor({samples, 1}, seed + 6, -0.5, 0.5);
  }
  return batch;
}

std::vector<GradSuiteCase> model_cases(const std::vector<ModelKind>& kinds) {
  std::vector<GradSuiteCase> cases;
  for (ModelKind kind : kinds) {
    cases.push_back({"model " + to_string(kind), 1e-4, [kind](std::uint64_t seed) {
                       ModelConfig cfg = tiny_model_config(kind, seed);
                       cfg.zero_output = false;
                       Model model(cfg);
                       ParamSet set;
                       model.collect(set);
                       randomize_batch_norm(set, seed);
                       const ModelBatch batch = random_batch(cfg, 2, seed + 100);
                       auto loss = [&] {
                         const ModelOutputs out = model.forward(batch, false);
                         return kind == ModelKind::lstm_full ? multitask_loss(out, batch, {}).total
                                                             : single_task_loss(out, batch).total;
                       };
                       auto tensors = set.tensors();
                       if (batch.images.defined()) tensors.push_back(batch.images);
                       tensors.push_back(batch.history);
                       // Gradients below 1e-6 are compared against that floor: whole-model losses
                       // cancel across samples and sit near the rounding level of the stencil.
                       return check(loss, tensors, kKinked, 4, seed, 1e-6);
                     }});
  }
  return cases;
}

std::vector<GradSuiteRow> run_grad_suite(const std::vector<GradSuiteCase>& cases, std::size_t seeds,
                                         std::uint64_t first_seed) {
  std::vector<GradSuiteRow> rows;
  for (const auto& c : cases) {
    GradSuiteRow row{c.name, c.threshold};
    for (std::uint64_t s = first_seed; s < first_seed + seeds; ++s) {
      try {
        const GradCheckResult r = c.run(s);
        row.coords += r.coords_checked;
        if (r.max_relative_error >= row.max_error) {
          row.max_error = r.max_relative_error;
          row.worst = std::to_string(s) + "/" + r.worst;
        }
      } catch (const std::exception& e) {
        row.error = "seed " + std::to_string(s) + ": " + e.what();
        break;
      }
      ++row.seeds;
    }
    rows.push_back(row);
  }
  return rows;
}

}  // namespace pvnow

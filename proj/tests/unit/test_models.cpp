#include <doctest.h>

#include <cstring>
#include <map>

#include "pvnow/autograd.hpp"
#include "pvnow/gradsuite.hpp"
#include "pvnow/models.hpp"
#include "support.hpp"

using namespace pvnow;
using pvnow::testing::random_tensor;

namespace {

ModelOutputs perfect_outputs(const ModelBatch& batch) {
  ModelOutputs out;
  out.delta_q = batch.delta_q.clone();
  out.image_q = batch.image_q.clone();
  out.image_sun = batch.image_sun.clone();
  out.image_recon = batch.images.clone();
  out.delta_sun = batch.delta_sun.clone();
  out.delta_sky = batch.delta_sky.clone();
  return out;
}

std::map<std::string, std::vector<double>> gradients(const Model& model) {
  ParamSet set;
  model.collect(set);
  std::map<std::string, std::vector<double>> out;
  for (const auto& [name, t] : set.params) out[name] = t.has_grad() ? t.grad_values() : std::vector<double>{};
  return out;
}

}  // namespace

TEST_CASE("model kinds parse and print") {
  for (ModelKind k : {ModelKind::mlp, ModelKind::cnn, ModelKind::lstm, ModelKind::lstm_full})
    CHECK(parse_model_kind(to_string(k)) == k);
  CHECK(parse_model_kind("LSTM-Full") == ModelKind::lstm_full);
  CHECK_THROWS_AS(parse_model_kind("transformer"), std::invalid_argument);
}

TEST_CASE("predictor input widths") {
  ModelConfig cfg;
  cfg.kind = ModelKind::cnn;
  CHECK(Model(cfg).predictor_inputs() == 6 * 256 + 64);
  cfg.kind = ModelKind::lstm;
  CHECK(Model(cfg).predictor_inputs() == 256 + 64);
  cfg.history = 3;
  CHECK(Model(cfg).predictor_inputs() == 256 + 64);
}

TEST_CASE("mlp kind is exactly the dense 64x64x1 stack") {
  ModelConfig cfg;
  cfg.kind = ModelKind::mlp;
  Model model(cfg);
  ParamSet set;
  model.collect(set);
  Initializer init(0, DType::f32);
  ParamSet stack;
  Mlp({6, {64, 64, 1}}, init).collect("", stack);
  CHECK(set.param_count() == stack.param_count());
  CHECK(model.encoder_params().empty());
}

TEST_CASE("untrained models predict zero variation") {
  for (ModelKind kind : {ModelKind::mlp, ModelKind::cnn, ModelKind::lstm, ModelKind::lstm_full}) {
    ModelConfig cfg = tiny_model_config(kind, 3);
    cfg.dtype = DType::f32;
    Model model(cfg);
    ModelBatch batch = random_batch(tiny_model_config(kind, 3), 4, 9);
    if (batch.images.defined()) batch.images = batch.images.to(DType::f32);
    batch.history = batch.history.to(DType::f32);
    for (bool training : {true, false}) {
      const auto dq = model.forward(batch, training).delta_q.values();
      for (double v : dq) CHECK(v == 0.0);
    }
  }
}

TEST_CASE("mlp is invariant to permuting a constant history") {
  ModelConfig cfg = tiny_model_config(ModelKind::mlp, 5);
  cfg.zero_output = false;
  Model model(cfg);
  ModelBatch batch;
  batch.history = Tensor::full({1, 6}, 0.4, DType::f64);
  const double a = model.forward(batch, false).delta_q.item();
  batch.history = Tensor::full({1, 6}, 0.4, DType::f64).clone();
  CHECK(model.forward(batch, false).delta_q.item() == a);
}

TEST_CASE("image models require image stacks") {
  Model model(tiny_model_config(ModelKind::lstm, 1));
  ModelBatch batch = random_batch(tiny_model_config(ModelKind::mlp, 1), 2, 3);
  CHECK_THROWS_WITH(model.forward(batch, false), doctest::Contains("image stacks missing"));
}

TEST_CASE("main loss") {
  auto l = [](std::initializer_list<double> p, std::initializer_list<double> t) {
    return main_loss(Tensor::from_values({p.size(), 1}, p, DType::f64),
                     Tensor::from_values({t.size(), 1}, t, DType::f64))
        .item();
  };
  CHECK(l({0.3}, {0.3}) == 0.0);
  CHECK(l({0.5}, {-0.5}) == doctest::Approx(1.0));
  CHECK(l({0.0, 0.4}, {0.3, 0.0}) == doctest::Approx(0.35));
}

TEST_CASE("multitask loss terms and weights") {
  const ModelConfig cfg = tiny_model_config(ModelKind::lstm_full, 2);
  const ModelBatch batch = random_batch(cfg, 3, 4);

  const LossResult zero = multitask_loss(perfect_outputs(batch), batch, {});
  CHECK(zero.total.item() == 0.0);
  CHECK(zero.terms.main == 0.0);
  CHECK(zero.terms.delta_sun == 0.0);
  CHECK(zero.terms.delta_sky == 0.0);
  CHECK(zero.terms.power == 0.0);
  CHECK(zero.terms.sun == 0.0);
  CHECK(zero.terms.image == 0.0);

  // Only the sun-variation term is off: |residual| = 0.01 for every sample.
  ModelOutputs out = perfect_outputs(batch);
  for (std::size_t b = 0; b < 3; ++b) out.delta_sun.set(b * 2, out.delta_sun.at(b * 2) + 0.01);
  const LossResult r = multitask_loss(out, batch, {});
  CHECK(r.terms.delta_sun == doctest::Approx(0.01));
  CHECK(r.total.item() == doctest::Approx(10.0));

  // Zero weights leave the main loss.
  out = perfect_outputs(batch);
  out.delta_q = random_tensor({3, 1}, 7);
  out.image_sun = random_tensor({8, 2}, 8);
  const LossResult only_main = multitask_loss(out, batch, {0, 0, 0, 0, 0});
  CHECK(only_main.total.item() == main_loss(out.delta_q, batch.delta_q).item());

  // Linear in each weight.
  out = perfect_outputs(batch);
  out.image_sun = random_tensor({8, 2}, 8);
  const double one = multitask_loss(out, batch, {0, 0, 0, 0.1, 0}).total.item();
  const double two = multitask_loss(out, batch, {0, 0, 0, 0.2, 0}).total.item();
  CHECK(two == 2 * one);
  CHECK(one > 0);

  ModelBatch missing = batch;
  missing.delta_sky = Tensor();
  CHECK_THROWS_WITH(multitask_loss(perfect_outputs(batch), missing, {}),
                    doctest::Contains("sky intensity variation target"));
}

TEST_CASE("per-step terms sum over steps") {
  const ModelConfig cfg = tiny_model_config(ModelKind::lstm_full, 2);
  const ModelBatch batch = random_batch(cfg, 2, 4);  // 7 unique images, 12 (sample, step) pairs
  ModelOutputs out = perfect_outputs(batch);
  for (std::size_t u = 0; u < 7; ++u) out.image_q.set(u, out.image_q.at(u) + 0.1);
  const LossResult r = multitask_loss(out, batch, {});
  CHECK(r.terms.power == doctest::Approx(6 * 0.1));
}

TEST_CASE("lstm_full with zero weights reproduces lstm main-path gradients") {
  ModelConfig base = tiny_model_config(ModelKind::lstm, 17);
  base.zero_output = false;
  ModelConfig full = base;
  full.kind = ModelKind::lstm_full;
  Model lstm(base), lstm_full(full);
  const ModelBatch batch = random_batch(base, 3, 5);

  backward(single_task_loss(lstm.forward(batch, true), batch).total);
  backward(multitask_loss(lstm_full.forward(batch, true), batch, {0, 0, 0, 0, 0}).total);
  const auto ga = gradients(lstm);
  const auto gb = gradients(lstm_full);
  for (const auto& [name, g] : ga) {
    REQUIRE(gb.count(name));
    REQUIRE(!g.empty());
    const auto& h = gb.at(name);
    REQUIRE(g.size() == h.size());
    CHECK(std::memcmp(g.data(), h.data(), g.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("gradient suite passes for ops, layers and every model kind") {
  auto cases = op_cases();
  for (auto& c : layer_cases()) cases.push_back(c);
  for (auto& c : model_cases({ModelKind::mlp, ModelKind::cnn, ModelKind::lstm, ModelKind::lstm_full}))
    cases.push_back(c);
  for (const auto& row : run_grad_suite(cases, 20)) {
    INFO(row.name << " err " << row.max_error << " at " << row.worst << " " << row.error);
    CHECK(row.seeds == 20);
    CHECK(row.passed());
  }
}

TEST_CASE("gradient suite flags a corrupted backward rule") {
  // y = 3x whose recorded backward claims dy/dx = 2.
  auto corrupted = [](const Tensor& x) {
    Tensor y = scale(x, 3.0).detach();
    if (any_requires_grad({&x})) {
      Tape::current().record({x}, y, [x, y]() mutable {
        auto gx = x.grad_mut<double>();
        auto gy = y.grad<double>();
        for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += 2.0 * gy[i];
      });
    }
    return y;
  };
  GradSuiteCase bad{"corrupted", 1e-4, [&](std::uint64_t seed) {
                      Tensor x = random_tensor({4}, seed);
                      GradCheckOptions o;
                      std::vector<Tensor> xs{x};
                      return gradient_check([&] { return sum(corrupted(x)); }, xs, o);
                    }};
  const auto rows = run_grad_suite({bad}, 3);
  CHECK_FALSE(rows[0].passed());
  CHECK(rows[0].max_error == doctest::Approx(1.0 / 3.0));
}

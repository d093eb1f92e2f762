#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include <unistd.h>

#include "pvnow/app.hpp"

using namespace pvnow;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  fs::path p = fs::temp_directory_path() / ("pvnow_app_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

RunConfig tiny(ModelKind kind) {
  RunConfig c;
  c.model = kind;
  c.resolution = 16;
  c.epochs = 2;
  c.batch_size = 8;
  c.precision = DType::f64;
  c.threads = 1;
  c.stem_channels = 4;
  c.fire_channels = {6};
  c.fire_count = 1;
  c.squeeze = 3;
  c.latent = 5;
  c.lstm_hidden = 4;
  c.mlp_hidden = {5, 4};
  c.power_encoder = {4};
  c.predictor_hidden = {6};
  c.head_hidden = 4;
  c.decoder_seed_channels = 6;
  c.decoder_min_channels = 3;
  c.sim.days = 5;
  c.sim.resolution = 16;
  c.sim.window_start_min = -12;
  c.sim.window_end_min = 12;
  c.sim.regimes = {Weather::partly, Weather::partly, Weather::clear, Weather::partly, Weather::overcast};
  return c;
}

// One simulated dataset shared by the cases below.
const fs::path& tiny_dataset() {
  static const fs::path dir = [] {
    const fs::path p = scratch("data");
    emit_dataset(tiny(ModelKind::mlp).sim, p);
    return p;
  }();
  return dir;
}

PreparedData tiny_data(const RunConfig& c) { return prepare_data(load_dataset(tiny_dataset()), c); }

}  // namespace

TEST_CASE("config json round trip") {
  RunConfig c = tiny(ModelKind::lstm_full);
  c.horizon = 10;
  c.exposures = ExposureSet::longest;
  c.weights.image = 0.25;
  c.run_name = "x";
  const auto j = to_json(c);
  const RunConfig back = config_from_json(nlohmann::json::parse(j.dump()));
  CHECK(to_json(back).dump() == j.dump());
  CHECK(back.name() == "x");
  CHECK(RunConfig{}.name() == "lstm_h1");
}

TEST_CASE("config files overlay defaults and reject unknown keys") {
  const RunConfig c = config_from_json(nlohmann::json::parse(R"({"schema_version": 1, "epochs": 3})"));
  CHECK(c.epochs == 3);
  CHECK(c.batch_size == RunConfig{}.batch_size);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"epoch": 3})")), UsageError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"architecture": {"latnet": 3}})")), UsageError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"schema_version": 7})")), UsageError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json::parse(R"({"precision": "f16"})")), UsageError);
  RunConfig bad;
  bad.horizon = 0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("default loss weights and learning rates") {
  const auto j = to_json(RunConfig{});
  CHECK(j["lambda"]["delta_sun"] == 1000.0);
  CHECK(j["lambda"]["delta_sky"] == 0.001);
  CHECK(j["lambda"]["power"] == 0.1);
  CHECK(j["lambda"]["sun"] == 0.1);
  CHECK(j["lambda"]["image"] == 0.1);
  CHECK(j["lr_encoder"] == 1e-3);
  CHECK(j["lr_other"] == 3e-4);
}

TEST_CASE("checkpoint save, load, save is byte-identical") {
  for (ModelKind kind : {ModelKind::mlp, ModelKind::lstm_full}) {
    const RunConfig c = tiny(kind);
    Model m(c.model_config());
    const Checkpoint ck = make_checkpoint(m, c, 0.125, 3, 42.5);
    const fs::path a = scratch("ck_a"), b = scratch("ck_b");
    save_checkpoint(a, ck);
    const Checkpoint back = load_checkpoint(a);
    CHECK(back.alpha == 0.125);
    CHECK(back.epoch == 3);
    CHECK(back.validation_mae == 42.5);
    CHECK(to_json(back.config).dump() == to_json(c).dump());
    save_checkpoint(b, back);
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    CHECK(slurp(a / "tensors.bin") == slurp(b / "tensors.bin"));

    Model restored = restore_model(back);
    ParamSet x, y;
    m.collect(x);
    restored.collect(y);
    const auto tx = x.tensors(), ty = y.tensors();
    REQUIRE(tx.size() == ty.size());
    for (std::size_t i = 0; i < tx.size(); ++i) CHECK(tx[i].values() == ty[i].values());
    fs::remove_all(a);
    fs::remove_all(b);
  }
}

TEST_CASE("checkpoints without alpha are refused") {
  const RunConfig c = tiny(ModelKind::mlp);
  Model m(c.model_config());
  const fs::path dir = scratch("noalpha");
  save_checkpoint(dir, make_checkpoint(m, c, 0.125, 0, 1));
  auto j = nlohmann::ordered_json::parse(slurp(dir / "manifest.json"));
  j.erase("alpha");
  std::ofstream(dir / "manifest.json") << j.dump(2);
  CHECK_THROWS_AS(load_checkpoint(dir), DataError);
  CHECK_THROWS_AS(load_checkpoint(scratch("missing")), DataError);
  fs::remove_all(dir);
}

TEST_CASE("tensor loading requires every name exactly once") {
  const RunConfig c = tiny(ModelKind::mlp);
  Model m(c.model_config());
  Checkpoint ck = make_checkpoint(m, c, 0.1, 0, 0);
  NamedTensors missing(ck.tensors.begin() + 1, ck.tensors.end());
  CHECK_THROWS(load_tensors(m, missing));
  NamedTensors extra = ck.tensors;
  extra.push_back(ck.tensors.front());
  CHECK_THROWS(load_tensors(m, extra));
  CHECK_NOTHROW(load_tensors(m, ck.tensors));
}

TEST_CASE("batches deduplicate images and carry normalized targets") {
  RunConfig c = tiny(ModelKind::lstm_full);
  const PreparedData d = tiny_data(c);
  REQUIRE(d.train.size() > 2);
  const ModelBatch b = build_batch(d.data, d.train, {0, 1}, c, d.alpha);
  CHECK(b.history.shape() == Shape{2, 6});
  CHECK(b.images.shape() == Shape{7, 20, 16, 16});  // two windows one minute apart share 5 stacks
  CHECK(b.image_index == std::vector<std::size_t>{0, 1, 2, 3, 4, 5, 1, 2, 3, 4, 5, 6});
  const Sample& s = d.train[0];
  CHECK(b.delta_q.at(0) == normalize_power(s.target_w, d.alpha) - normalize_power(s.p_t0(), d.alpha));
  CHECK(b.history.at(5) == normalize_power(s.p_t0(), d.alpha));
  CHECK(b.image_q.shape() == Shape{7, 1});
  CHECK(b.delta_sun.shape() == Shape{2, 2});
  CHECK(b.delta_sky.at(0) == s.delta_sky);

  std::vector<float> full(kStackChannels * 16 * 16);
  d.data.days[s.day].stack(s.steps[0], 16, full.data());
  c.exposures = ExposureSet::longest;
  const ModelBatch l = build_batch(d.data, d.train, {0}, c, d.alpha);
  CHECK(l.images.shape() == Shape{6, 5, 16, 16});
  for (std::size_t inst = 0; inst < 5; ++inst)
    CHECK(l.images.at(inst * 256 + 17) == doctest::Approx(full[(inst * 4 + 3) * 256 + 17]));

  c.model = ModelKind::mlp;
  CHECK_FALSE(build_batch(d.data, d.train, {0}, c, d.alpha).images.defined());
}

TEST_CASE("epoch batches are seeded chunk shuffles") {
  RunConfig c = tiny(ModelKind::mlp);
  const PreparedData d = tiny_data(c);
  const auto a = epoch_batches(d.train, c, 1), again = epoch_batches(d.train, c, 1), other = epoch_batches(d.train, c, 2);
  CHECK(a == again);
  CHECK(a != other);
  std::set<std::size_t> seen;
  for (const auto& batch : a) {
    CHECK(batch.size() >= 2);
    for (std::size_t i : batch) CHECK(seen.insert(i).second);
  }
  CHECK(seen.size() + c.batch_size > d.train.size());
  // consecutive runs of `chunk` samples stay together
  const auto& first = a.front();
  CHECK(d.train[first[1]].t0 - d.train[first[0]].t0 == 60);
}

TEST_CASE("zero epochs keep the initial weights, which equal persistence") {
  RunConfig c = tiny(ModelKind::lstm);
  c.epochs = 0;
  const PreparedData d = tiny_data(c);
  const TrainResult r = train(d, c);
  CHECK(r.best.epoch == 0);
  CHECK(r.best.validation_mae == r.persistence_validation_mae);
  const Evaluation e = evaluate_checkpoint(d, r.best, c, "test");
  const ClassMetrics* all = e.report.find("all");
  REQUIRE(all != nullptr);
  CHECK(all->ss_mae.value() == 0.0);
  CHECK(all->ss_rmse.value() == 0.0);
  for (const auto& row : e.rows) CHECK(row.prediction == row.p_t0);

  const Sample& s = d.test[3];
  const Forecast f = forecast_at(d.data, r.best, s.t0);
  CHECK(f.prediction_w == f.persistence_w);
  CHECK(f.persistence_w == s.p_t0());
  CHECK(f.has_truth);
  CHECK(f.truth_w == s.target_w);
}

TEST_CASE("forecasts without history list the missing minutes") {
  RunConfig c = tiny(ModelKind::mlp);
  const PreparedData d = tiny_data(c);
  Model m(c.model_config());
  const Checkpoint ck = make_checkpoint(m, c, d.alpha, 0, 0);
  const Timestamp first = d.data.days[0].minutes.front().t;
  CHECK_THROWS_WITH_AS(forecast_at(d.data, ck, first + 120),
                       doctest::Contains(format_iso(first - 60).c_str()), DataError);
  CHECK_THROWS_AS(forecast_at(d.data, ck, parse_iso("2030-01-01T00:00:00Z")), DataError);
}

TEST_CASE("training is deterministic and keeps the best epoch") {
  RunConfig c = tiny(ModelKind::lstm_full);
  c.epochs = 3;
  const PreparedData d = tiny_data(c);
  const TrainResult a = train(d, c), b = train(d, c);
  CHECK(train_log_json(a).dump() == train_log_json(b).dump());
  const fs::path pa = scratch("det_a"), pb = scratch("det_b");
  save_checkpoint(pa, a.best);
  save_checkpoint(pb, b.best);
  CHECK(slurp(pa / "tensors.bin") == slurp(pb / "tensors.bin"));
  REQUIRE(a.log.size() == 4);
  double best = a.log[0].validation_mae;
  for (const auto& e : a.log) {
    best = std::min(best, e.validation_mae);
    CHECK(e.best_validation_mae == best);
    if (e.epoch > 0) {
      CHECK(std::isfinite(e.train.image));
      CHECK(e.train.delta_sun > 0);
    }
  }
  CHECK(a.best.validation_mae == best);
  fs::remove_all(pa);
  fs::remove_all(pb);
}

TEST_CASE("commands report usage and data errors") {
  RunConfig c = tiny(ModelKind::mlp);
  std::ostringstream log;
  c.precision = DType::f32;
  CHECK_THROWS_AS(cmd_gradcheck(c, {}, 1, log), UsageError);
  c.precision = DType::f64;
  CHECK_THROWS_AS(cmd_gradcheck(c, {"rnn"}, 1, log), UsageError);
  c.dataset = scratch("nothing").string();
  CHECK_THROWS_AS(cmd_preprocess(c, log), DataError);
  c.dataset = tiny_dataset().string();
  c.resolution = 32;
  CHECK_THROWS_AS(cmd_preprocess(c, log), DataError);
}

TEST_CASE("train, evaluate and predict write their outputs") {
  RunConfig c = tiny(ModelKind::mlp);
  c.dataset = tiny_dataset().string();
  c.out = scratch("out").string();
  std::ostringstream log;
  CHECK(cmd_preprocess(c, log) == 0);
  CHECK(cmd_train(c, log) == 0);
  const fs::path out(c.out);
  CHECK(fs::exists(out / "checkpoints" / "mlp_h1" / "best" / "manifest.json"));
  CHECK(fs::exists(out / "reports" / "train_mlp_h1.json"));
  CHECK(cmd_evaluate(c, (out / "checkpoints" / "mlp_h1" / "best").string(), "test", log) == 0);
  CHECK(cmd_evaluate(c, "persistence", "validation", log) == 0);
  CHECK(fs::exists(out / "reports" / "eval_mlp_h1_test.json"));
  CHECK(fs::exists(out / "predictions" / "mlp_h1_test.csv"));
  CHECK(fs::exists(out / "reports" / "eval_persistence_validation.json"));
  const PreparedData d = tiny_data(c);
  CHECK(cmd_predict(c, (out / "checkpoints" / "mlp_h1" / "best").string(), format_iso(d.test[0].t0), log) == 0);
  CHECK(log.str().find("prediction") != std::string::npos);
  fs::remove_all(out);
}

// pvnow: simulate, preprocess, train, evaluate, predict, gradcheck.
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "pvnow/app.hpp"

using namespace pvnow;

namespace {

struct Overrides {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> precision;
  std::optional<int> threads;
  std::optional<std::string> out, dataset;
  // train / shared
  std::optional<std::string> model, exposures, name;
  std::optional<std::size_t> horizon, epochs, batch_size, days;
  std::optional<double> lr_encoder, lr_other;
};

DType parse_precision(const std::string& s) {
  if (s == "f32") return DType::f32;
  if (s == "f64") return DType::f64;
  throw UsageError("precision must be f32 or f64");
}

RunConfig resolve(const Overrides& o) {
  RunConfig c = o.config.empty() ? RunConfig{} : load_config(o.config);
  if (o.seed) c.seed = c.sim.seed = *o.seed;
  if (o.precision) c.precision = parse_precision(*o.precision);
  if (o.threads) c.threads = *o.threads;
  if (o.out) c.out = *o.out;
  if (o.dataset) c.dataset = *o.dataset;
  if (o.model) {
    try {
      c.model = parse_model_kind(*o.model);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (o.exposures) c.exposures = parse_exposure_set(*o.exposures);
  if (o.name) c.run_name = *o.name;
  if (o.horizon) c.horizon = *o.horizon;
  if (o.epochs) c.epochs = *o.epochs;
  if (o.batch_size) c.batch_size = *o.batch_size;
  if (o.days) c.sim.days = *o.days;
  if (o.lr_encoder) c.lr_encoder = *o.lr_encoder;
  if (o.lr_other) c.lr_other = *o.lr_other;
  c.validate();
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Sky-image PV power nowcasting"};
  app.require_subcommand(1);
  Overrides o;
  app.add_option("--config", o.config, "JSON run configuration")->check(CLI::ExistingFile);
  app.add_option("--seed", o.seed, "random seed");
  app.add_option("--precision", o.precision, "f32 or f64")->check(CLI::IsMember({"f32", "f64"}));
  app.add_option("--threads", o.threads, "OpenMP threads (0 = default)");
  app.add_option("--out", o.out, "output directory");
  app.add_option("--dataset", o.dataset, "dataset directory");

  auto* sim = app.add_subcommand("simulate", "generate a synthetic dataset");
  sim->add_option("--days", o.days, "number of days");

  app.add_subcommand("preprocess", "ingest, filter and summarize a dataset");

  auto* tr = app.add_subcommand("train", "train a model and keep the best validation checkpoint");
  tr->add_option("--model", o.model, "mlp, cnn, lstm or lstm_full");
  tr->add_option("--horizon", o.horizon, "forecast horizon, minutes");
  tr->add_option("--epochs", o.epochs, "training epochs");
  tr->add_option("--batch-size", o.batch_size, "minimum samples per batch");
  tr->add_option("--lr-encoder", o.lr_encoder, "Adam learning rate of the image encoder");
  tr->add_option("--lr-other", o.lr_other, "Adam learning rate of all other layers");
  tr->add_option("--exposures", o.exposures, "all, shortest or longest");
  tr->add_option("--name", o.name, "run name (default <model>_h<horizon>)");

  std::string checkpoint, split = "test", at;
  auto* ev = app.add_subcommand("evaluate", "score a checkpoint against persistence");
  ev->add_option("--checkpoint", checkpoint, "checkpoint directory or 'persistence'")->required();
  ev->add_option("--split", split, "train, validation or test")
      ->check(CLI::IsMember({"train", "validation", "test"}));

  auto* pr = app.add_subcommand("predict", "forecast the power after a given minute");
  pr->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  pr->add_option("--at", at, "t0, e.g. 2024-05-01T03:00:00Z")->required();

  std::vector<std::string> kinds;
  std::size_t seeds = 20;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks in f64");
  gc->add_option("--kinds", kinds, "model kinds (default all)");
  gc->add_option("--seeds", seeds, "random seeds per case");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (gc->parsed() && !o.precision) o.precision = "f64";
    const RunConfig c = resolve(o);
    if (sim->parsed()) return cmd_simulate(c, std::cout);
    if (app.got_subcommand("preprocess")) return cmd_preprocess(c, std::cout);
    if (tr->parsed()) return cmd_train(c, std::cout);
    if (ev->parsed()) return cmd_evaluate(c, checkpoint, split, std::cout);
    if (pr->parsed()) return cmd_predict(c, checkpoint, at, std::cout);
    if (gc->parsed()) return cmd_gradcheck(c, kinds, seeds, std::cout);
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}

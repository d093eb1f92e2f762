#include <chrono>
#include <cstdio>
#include <fstream>
#include <ostream>

#include <omp.h>

#include "pvnow/app.hpp"
#include "pvnow/gradsuite.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace pvnow {

Evaluation evaluate_checkpoint(const PreparedData& d, const std::optional<Checkpoint>& ckpt, const RunConfig& config,
                               const std::string& split) {
  const auto& samples = d.samples(split);
  if (samples.empty()) throw DataError("split '" + split + "' has no samples");
  std::vector<double> pred;
  std::string name = "persistence";
  if (ckpt) {
    Model model = restore_model(*ckpt);
    RunConfig rc = ckpt->config;
    rc.precision = ckpt->config.precision;
    pred = predict_watts(model, d.data, samples, rc, ckpt->alpha);
    name = ckpt->config.name();
  } else {
    for (const auto& s : samples) pred.push_back(persistence_predict(s));
  }
  (void)config;
  Evaluation e;
  for (std::size_t i = 0; i < samples.size(); ++i) e.rows.push_back(make_row(samples[i], pred[i]));
  e.report = evaluate_rows(name, e.rows);
  return e;
}

Forecast forecast_at(const Dataset& data, const Checkpoint& ckpt, Timestamp t0) {
  const RunConfig& c = ckpt.config;
  const std::string date = format_date(t0);
  std::size_t day = data.days.size();
  for (std::size_t i = 0; i < data.days.size(); ++i)
    if (data.days[i].date == date) day = i;
  if (day == data.days.size()) throw DataError("no data for day " + date);
  const DayRecord& d = data.days[day];
  const auto avg = trailing_average(d, c.horizon);
  auto index_of = [&](Timestamp t) -> std::optional<std::size_t> {
    for (std::size_t i = 0; i < d.minutes.size(); ++i)
      if (d.minutes[i].t == t && avg[i]) return i;
    return std::nullopt;
  };

  Sample s;
  s.day = day;
  s.t0 = t0;
  s.horizon = c.horizon;
  s.weather = d.weather;
  std::string missing;
  const Timestamp step = static_cast<Timestamp>(c.horizon) * 60;
  for (std::size_t j = 0; j < c.history; ++j) {
    const Timestamp t = t0 - static_cast<Timestamp>(c.history - 1 - j) * step;
    const auto idx = index_of(t);
    if (!idx) {
      // report every raw minute the x-minute mean at t needs
      for (std::size_t m = 0; m < c.horizon; ++m) {
        const Timestamp tm = t - static_cast<Timestamp>(m) * 60;
        bool present = false;
        for (const auto& r : d.minutes) present |= r.t == tm;
        if (!present) missing += (missing.empty() ? "" : ", ") + format_iso(tm);
      }
      continue;
    }
    s.steps.push_back(*idx);
    s.history_w.push_back(*avg[*idx]);
  }
  if (s.steps.size() != c.history)
    throw DataError("insufficient history for " + format_iso(t0) + "; missing minutes: " + missing);
  s.target = s.steps.back();
  s.target_w = s.p_t0();

  Forecast f;
  f.t0 = t0;
  f.persistence_w = s.p_t0();
  if (const auto target = index_of(t0 + step)) {
    f.has_truth = true;
    f.truth_w = *avg[*target];
  }
  const auto start = std::chrono::steady_clock::now();
  Model model = restore_model(ckpt);
  const auto loaded = std::chrono::steady_clock::now();
  f.prediction_w = predict_watts(model, data, {s}, c, ckpt.alpha)[0];
  f.latency_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - loaded).count();
  (void)start;
  return f;
}

// ---------------------------------------------------------------- commands

namespace {

void set_threads(const RunConfig& c) {
  if (c.threads > 0) omp_set_num_threads(c.threads);
}

void write_json(const fs::path& path, const ordered_json& j) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << j.dump(2) << '\n';
}

}  // namespace

int cmd_simulate(const RunConfig& c, std::ostream& log) {
  set_threads(c);
  SimConfig sim = c.sim;
  sim.seed = c.seed;
  sim.resolution = c.resolution;
  try {
    sim.validate();
  } catch (const std::invalid_argument& e) {
    throw UsageError(e.what());
  }
  emit_dataset(sim, c.dataset);
  const Metadata meta = read_metadata(fs::path(c.dataset) / "metadata.json");
  log << "simulated " << sim.days << " days at " << sim.resolution << "x" << sim.resolution << " into " << c.dataset
      << '\n';
  for (const auto& [date, w] : meta.weather) log << "  " << date << "  " << to_string(w) << '\n';
  return 0;
}

int cmd_preprocess(const RunConfig& c, std::ostream& log) {
  set_threads(c);
  const PreparedData d = prepare_data(load_dataset(c.dataset), c);
  const fs::path out(c.out);
  fs::create_directories(out / "preprocessed");
  std::ofstream csv(out / "preprocessed" / "minutes.csv");
  if (!csv) throw DataError("cannot write " + (out / "preprocessed" / "minutes.csv").string());
  csv << "timestamp,weather,power_w,elevation,azimuth,sky_intensity\n";
  ordered_json days = ordered_json::array();
  char buf[128];
  for (const auto& day : d.data.days) {
    for (const auto& m : day.minutes) {
      std::snprintf(buf, sizeof buf, ",%.6f,%.9f,%.9f,%.9f\n", m.watts, m.sun.elevation, m.sun.azimuth, m.sky);
      csv << format_iso(m.t) << ',' << to_string(day.weather) << buf;
    }
    days.push_back({{"date", day.date},
                    {"weather", to_string(day.weather)},
                    {"kept", day.minutes.size()},
                    {"dropped_zero_power", day.dropped_zero},
                    {"dropped_dark", day.dropped_dark},
                    {"dropped_no_images", day.dropped_no_images}});
  }
  auto dates = [&](const std::vector<std::size_t>& idx) {
    std::vector<std::string> v;
    for (auto i : idx) v.push_back(d.data.days[i].date);
    return v;
  };
  ordered_json j;
  j["schema_version"] = 1;
  j["dataset"] = c.dataset;
  j["horizon_minutes"] = c.horizon;
  j["alpha"] = d.alpha;
  j["days"] = days;
  j["split"] = {{"train", dates(d.split.train)}, {"validation", dates(d.split.validation)}, {"test", dates(d.split.test)}};
  j["samples"] = {{"train", d.train.size()}, {"validation", d.validation.size()}, {"test", d.test.size()}};
  write_json(out / "reports" / "preprocess.json", j);
  log << "days " << d.data.days.size() << ", samples train/validation/test " << d.train.size() << "/"
      << d.validation.size() << "/" << d.test.size() << ", alpha " << d.alpha << '\n';
  for (const auto& day : d.data.days)
    if (day.minutes.empty()) log << "notice: day " << day.date << " has no valid minutes\n";
  return 0;
}

int cmd_train(const RunConfig& c, std::ostream& log) {
  c.validate();
  set_threads(c);
  const PreparedData d = prepare_data(load_dataset(c.dataset), c);
  log << "training " << c.name() << ": " << d.train.size() << " train / " << d.validation.size()
      << " validation samples, alpha " << d.alpha << '\n';
  const TrainResult r = train(d, c, [&](const EpochLog& e) {
    char buf[200];
    std::snprintf(buf, sizeof buf, "epoch %3zu  loss %.5f  main %.5f  val MAE %.2f W  best %.2f W  (%.1f s)\n", e.epoch,
                  e.train_total, e.train.main, e.validation_mae, e.best_validation_mae, e.seconds);
    log << buf << std::flush;
  });
  const fs::path out(c.out);
  save_checkpoint(out / "checkpoints" / c.name() / "best", r.best);
  ordered_json j = train_log_json(r);
  write_json(out / "reports" / ("train_" + c.name() + ".json"), j);
  log << "best epoch " << r.best.epoch << ", validation MAE " << r.best.validation_mae << " W (persistence "
      << r.persistence_validation_mae << " W)\n";
  log << "checkpoint " << (out / "checkpoints" / c.name() / "best").string() << '\n';
  return 0;
}

int cmd_evaluate(const RunConfig& c, const std::string& checkpoint, const std::string& split, std::ostream& log) {
  set_threads(c);
  std::optional<Checkpoint> ckpt;
  RunConfig rc = c;
  if (checkpoint != "persistence") {
    ckpt = load_checkpoint(checkpoint);
    rc = ckpt->config;
    rc.dataset = c.dataset;
    rc.out = c.out;
    rc.threads = c.threads;
  }
  const PreparedData d = prepare_data(load_dataset(rc.dataset), rc);
  const Evaluation e = evaluate_checkpoint(d, ckpt, rc, split);
  const std::string tag = e.report.model + "_" + split;
  const fs::path out(c.out);
  write_report(out / "reports" / ("eval_" + tag + ".json"), e.report);
  write_predictions_csv(out / "predictions" / (tag + ".csv"), e.rows);
  log << format_report(e.report);
  return 0;
}

int cmd_predict(const RunConfig& c, const std::string& checkpoint, const std::string& timestamp, std::ostream& log) {
  set_threads(c);
  const Checkpoint ckpt = load_checkpoint(checkpoint);
  const Timestamp t0 = parse_iso(timestamp);
  const Dataset data = load_dataset(c.dataset);
  const Forecast f = forecast_at(data, ckpt, t0);
  char buf[256];
  std::snprintf(buf, sizeof buf, "t0 %s  horizon %zu min\nprediction %.3f W\npersistence %.3f W\n",
                format_iso(t0).c_str(), ckpt.config.horizon, f.prediction_w, f.persistence_w);
  log << buf;
  if (f.has_truth) {
    std::snprintf(buf, sizeof buf, "observed %.3f W\n", f.truth_w);
    log << buf;
  }
  std::snprintf(buf, sizeof buf, "latency %.2f ms\n", f.latency_ms);
  log << buf;
  return 0;
}

int cmd_gradcheck(const RunConfig& c, const std::vector<std::string>& kinds, std::size_t seeds, std::ostream& log) {
  if (c.precision != DType::f64) throw UsageError("gradient checks require --precision f64");
  set_threads(c);
  std::vector<ModelKind> mk;
  for (const auto& k : kinds) {
    try {
      mk.push_back(parse_model_kind(k));
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
  }
  if (mk.empty()) mk = {ModelKind::mlp, ModelKind::cnn, ModelKind::lstm, ModelKind::lstm_full};
  auto cases = op_cases();
  for (auto& x : layer_cases()) cases.push_back(x);
  for (auto& x : model_cases(mk)) cases.push_back(x);
  const auto rows = run_grad_suite(cases, seeds, c.seed);
  bool ok = true;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-28s %10s %12s %6s %8s  %s\n", "case", "threshold", "max rel err", "seeds", "coords",
                "result");
  log << buf;
  for (const auto& r : rows) {
    ok &= r.passed();
    std::snprintf(buf, sizeof buf, "%-28s %10.0e %12.3e %6zu %8zu  %s\n", r.name.c_str(), r.threshold, r.max_error,
                  r.seeds, r.coords, r.passed() ? "PASS" : ("FAIL " + r.worst + " " + r.error).c_str());
    log << buf;
  }
  log << (ok ? "all gradient checks passed\n" : "gradient check FAILED\n");
  return ok ? 0 : 3;
}

}  // namespace pvnow

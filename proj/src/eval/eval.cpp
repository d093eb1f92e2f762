#include "pvnow/eval.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace pvnow {

double persistence_predict(const Sample& s) { return s.p_t0(); }

namespace {

void check_pair(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.empty()) throw std::invalid_argument("metric of an empty sample set");
  if (a.size() != b.size())
    throw std::invalid_argument("prediction/truth length mismatch: " + std::to_string(a.size()) + " vs " +
                                std::to_string(b.size()));
}

}  // namespace

double mae(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_pair(pred, truth);
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += std::abs(truth[i] - pred[i]);
  return s / static_cast<double>(pred.size());
}

double rmse(const std::vector<double>& pred, const std::vector<double>& truth) {
  check_pair(pred, truth);
  double s = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) s += (truth[i] - pred[i]) * (truth[i] - pred[i]);
  return std::sqrt(s / static_cast<double>(pred.size()));
}

double skill_score(double e_pred, double e_base) {
  if (!(e_base > 0)) throw std::invalid_argument("skill score undefined for a zero baseline error");
  return (1 - e_pred / e_base) * 100;
}

double variation_to_watts(double p_t0, double dq, double alpha) {
  if (dq == 0) return p_t0;
  const double q = normalize_power(p_t0, alpha);
  return p_t0 + (denormalize_power(q + dq, alpha) - denormalize_power(q, alpha));
}

PredictionRow make_row(const Sample& s, double prediction_w) {
  PredictionRow r;
  r.t0 = s.t0;
  r.horizon = s.horizon;
  r.weather = s.weather;
  r.p_t0 = s.p_t0();
  r.truth = s.target_w;
  r.prediction = prediction_w;
  return r;
}

const ClassMetrics* MetricsReport::find(const std::string& name) const {
  for (const auto& c : classes)
    if (c.name == name) return &c;
  return nullptr;
}

std::string sample_set_hash(const std::vector<PredictionRow>& rows) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&](const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= b[i];
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& r : rows) {
    const std::int64_t t = r.t0;
    const std::uint64_t x = r.horizon;
    mix(&t, sizeof t);
    mix(&x, sizeof x);
    mix(&r.p_t0, sizeof r.p_t0);
    mix(&r.truth, sizeof r.truth);
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

MetricsReport evaluate_rows(const std::string& model, const std::vector<PredictionRow>& rows) {
  if (rows.empty()) throw DataError("evaluation sample set is empty");
  MetricsReport rep;
  rep.model = model;
  rep.horizon = rows.front().horizon;
  rep.sample_set_hash = sample_set_hash(rows);

  auto metrics = [&](const std::string& name, auto&& keep) {
    std::vector<double> pred, base, truth;
    for (const auto& r : rows) {
      if (!keep(r)) continue;
      pred.push_back(r.prediction);
      base.push_back(r.p_t0);  // persistence
      truth.push_back(r.truth);
    }
    if (pred.empty()) {
      rep.notices.push_back("no " + name + " samples; class omitted");
      return;
    }
    ClassMetrics c;
    c.name = name;
    c.count = pred.size();
    c.mae = mae(pred, truth);
    c.rmse = rmse(pred, truth);
    c.persistence_mae = mae(base, truth);
    c.persistence_rmse = rmse(base, truth);
    if (c.persistence_mae > 0) c.ss_mae = skill_score(c.mae, c.persistence_mae);
    if (c.persistence_rmse > 0) c.ss_rmse = skill_score(c.rmse, c.persistence_rmse);
    if (!c.ss_mae) rep.notices.push_back("persistence is exact on " + name + "; skill score undefined");
    rep.classes.push_back(c);
  };
  for (Weather w : {Weather::clear, Weather::partly, Weather::overcast})
    metrics(to_string(w), [w](const PredictionRow& r) { return r.weather == w; });
  metrics("all", [](const PredictionRow&) { return true; });
  return rep;
}

nlohmann::ordered_json report_json(const MetricsReport& r) {
  nlohmann::ordered_json j;
  j["schema_version"] = 1;
  j["model"] = r.model;
  j["horizon_minutes"] = r.horizon;
  j["sample_set_hash"] = r.sample_set_hash;
  j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : r.classes) {
    nlohmann::ordered_json e;
    e["class"] = c.name;
    e["count"] = c.count;
    e["mae_w"] = c.mae;
    e["rmse_w"] = c.rmse;
    e["persistence_mae_w"] = c.persistence_mae;
    e["persistence_rmse_w"] = c.persistence_rmse;
    e["ss_mae_pct"] = c.ss_mae ? nlohmann::ordered_json(*c.ss_mae) : nlohmann::ordered_json();
    e["ss_rmse_pct"] = c.ss_rmse ? nlohmann::ordered_json(*c.ss_rmse) : nlohmann::ordered_json();
    j["classes"].push_back(e);
  }
  j["notices"] = r.notices;
  return j;
}

void write_report(const fs::path& path, const MetricsReport& r) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << report_json(r).dump(2) << '\n';
}

std::string format_report(const MetricsReport& r) {
  std::ostringstream os;
  char buf[160];
  std::snprintf(buf, sizeof buf, "model %s, %zu-min horizon, %s\n", r.model.c_str(), r.horizon,
                r.sample_set_hash.c_str());
  os << buf;
  std::snprintf(buf, sizeof buf, "%-16s", "");
  os << buf;
  for (const auto& c : r.classes) {
    std::snprintf(buf, sizeof buf, "%12s", c.name.c_str());
    os << buf;
  }
  os << '\n';
  auto row = [&](const char* label, auto&& get) {
    std::snprintf(buf, sizeof buf, "%-16s", label);
    os << buf;
    for (const auto& c : r.classes) {
      const std::optional<double> v = get(c);
      if (v) std::snprintf(buf, sizeof buf, "%12.2f", *v);
      else std::snprintf(buf, sizeof buf, "%12s", "-");
      os << buf;
    }
    os << '\n';
  };
  row("samples", [](const ClassMetrics& c) { return std::optional<double>(double(c.count)); });
  row("MAE [W]", [](const ClassMetrics& c) { return std::optional<double>(c.mae); });
  row("RMSE [W]", [](const ClassMetrics& c) { return std::optional<double>(c.rmse); });
  row("persist MAE", [](const ClassMetrics& c) { return std::optional<double>(c.persistence_mae); });
  row("persist RMSE", [](const ClassMetrics& c) { return std::optional<double>(c.persistence_rmse); });
  row("SS-MAE [%]", [](const ClassMetrics& c) { return c.ss_mae; });
  row("SS-RMSE [%]", [](const ClassMetrics& c) { return c.ss_rmse; });
  for (const auto& n : r.notices) os << "note: " << n << '\n';
  return os.str();
}

void write_predictions_csv(const fs::path& path, const std::vector<PredictionRow>& rows) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream f(path);
  if (!f) throw DataError("cannot write " + path.string());
  f << "timestamp,t0,weather,truth_w,persistence_w,prediction_w\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, ",%.6f,%.6f,%.6f\n", r.truth, r.p_t0, r.prediction);
    f << format_iso(r.t0 + static_cast<Timestamp>(r.horizon) * 60) << ',' << format_iso(r.t0) << ','
      << to_string(r.weather) << buf;
  }
}

}  // namespace pvnow

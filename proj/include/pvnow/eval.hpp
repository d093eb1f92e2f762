#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "pvnow/datapipe.hpp"

namespace pvnow {

/// p_hat(t0 + x) = p(t0).
double persistence_predict(const Sample& s);

double mae(const std::vector<double>& pred, const std::vector<double>& truth);
double rmse(const std::vector<double>& pred, const std::vector<double>& truth);
/// (1 - e_pred / e_base) * 100.
double skill_score(double e_pred, double e_base);

/// Watts forecast from a normalized variation: p_t0 + (g^-1(q_t0 + dq) - g^-1(q_t0)).
/// Equals inverse-normalize(q_t0 + dq) on the unclipped domain and returns p_t0
/// bit-exactly when dq == 0.
double variation_to_watts(double p_t0, double dq, double alpha);

/// One evaluated sample, in watts.
struct PredictionRow {
  Timestamp t0 = 0;
  std::size_t horizon = 1;
  Weather weather = Weather::partly;
  double p_t0 = 0;
  double truth = 0;
  double prediction = 0;
};

PredictionRow make_row(const Sample& s, double prediction_w);

struct ClassMetrics {
  std::string name;  ///< clear | partly | overcast | all
  std::size_t count = 0;
  double mae = 0, rmse = 0;
  double persistence_mae = 0, persistence_rmse = 0;
  std::optional<double> ss_mae, ss_rmse;  ///< absent when persistence is exact
};

struct MetricsReport {
  std::string model;
  std::size_t horizon = 1;
  std::string sample_set_hash;
  std::vector<ClassMetrics> classes;  ///< clear, partly, overcast (non-empty only), then all
  std::vector<std::string> notices;

  const ClassMetrics* find(const std::string& name) const;
};

/// Order-sensitive FNV-1a over (t0, horizon, p_t0, truth) of every row.
std::string sample_set_hash(const std::vector<PredictionRow>& rows);

/// Persistence is recomputed from each row's p_t0.
MetricsReport evaluate_rows(const std::string& model, const std::vector<PredictionRow>& rows);

nlohmann::ordered_json report_json(const MetricsReport& r);
void write_report(const std::filesystem::path& path, const MetricsReport& r);
/// Columns clear, partly, overcast, all.
std::string format_report(const MetricsReport& r);
void write_predictions_csv(const std::filesystem::path& path, const std::vector<PredictionRow>& rows);

}  // namespace pvnow

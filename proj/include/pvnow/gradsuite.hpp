#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "pvnow/gradcheck.hpp"
#include "pvnow/models.hpp"

namespace pvnow {

/// One finite-difference check, parameterized by seed.
struct GradSuiteCase {
  std::string name;
  double threshold = 1e-4;
  std::function<GradCheckResult(std::uint64_t seed)> run;
};

struct GradSuiteRow {
  std::string name;
  double threshold = 0;
  double max_error = 0;
  std::size_t seeds = 0;
  std::size_t coords = 0;
  std::string worst;  ///< "seed/tensor#index" of the worst coordinate
  std::string error;  ///< set when a run threw
  bool passed() const { return error.empty() && max_error < threshold; }
};

/// Elementwise ops, matmul, batch norm, conv, pooling and the other tensor ops.
std::vector<GradSuiteCase> op_cases();
/// Dense, MLP, batch norm, fire module, encoder, LSTM stack, decoder.
std::vector<GradSuiteCase> layer_cases();
/// Full loss of each model kind on a 2-sample batch at tiny shapes.
std::vector<GradSuiteCase> model_cases(const std::vector<ModelKind>& kinds);

std::vector<GradSuiteRow> run_grad_suite(const std::vector<GradSuiteCase>& cases,
                                         std::size_t seeds, std::uint64_t first_seed = 1);

/// Tiny f64 configuration of a model kind (encoder at 16x16, narrow widths).
ModelConfig tiny_model_config(ModelKind kind, std::uint64_t seed);
/// Random batch matching `config`: B samples of consecutive minutes sharing images.
ModelBatch random_batch(const ModelConfig& config, std::size_t samples, std::uint64_t seed);

/// Draws batch-norm gamma, beta and running statistics away from their identity
/// initialization (used before eval-mode gradient checks).
void randomize_batch_norm(ParamSet& set, std::uint64_t seed);

}  // namespace pvnow

// SPDX-License-Identifier: Apache-2.0
//
// Estimator fusion: epsilon-SVR with an RBF kernel over the 4-dimensional
// vector of per-utterance temporal-average estimates from four BLSTMs.
// The dual is solved with SMO-style maximal-violating-pair updates and
// verified against the KKT conditions.

#ifndef NIRA_SVR_HPP
#define NIRA_SVR_HPP

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nira/types.hpp"

namespace nira::svr {

constexpr int kDims = 4;

struct EstimateVector {
  std::string utterance_id;
  std::array<double, kDims> v{};
  double target = 0.0;
};

struct SvrParams {
  double C = 10.0;
  double gamma = 0.1;    // RBF width, after min-max scaling to [0,1]^4
  double epsilon = 0.1;  // tube width in target units
};

struct SvrModel {
  std::vector<std::array<double, kDims>> support_vectors;  // scaled inputs
  std::vector<double> dual_coeffs;  // beta = alpha - alpha*, |beta| <= C
  double bias = 0.0;
  SvrParams params;
  std::array<double, kDims> input_min{};
  std::array<double, kDims> input_range{};  // 0 marks a degenerate dim
  uint64_t seed = 0;
};

struct SvrSolution {
  SvrModel model;
  double kkt_max_violation = 0.0;  // over the training set, at convergence
  int iterations = 0;
};

// Solves the epsilon-SVR dual for fixed hyperparameters. Requires at
// least 2 points.
SvrSolution solve_svr(std::span<const EstimateVector> data,
                      const SvrParams& params);

// f(v) = sum_i beta_i K(x_i, v) + b with the stored input scaling applied.
double svr_predict(const SvrModel& model, const std::array<double, kDims>& v);

// Largest KKT violation of the solution over `data` (same scaling).
double kkt_max_violation(const SvrModel& model,
                         std::span<const EstimateVector> data);

struct GridSearchResult {
  SvrSolution best;
  SvrParams best_params;
  double best_validation_rmsd = 0.0;
};

// Grid search over C x gamma x epsilon (epsilon scaled by the target
// standard deviation), selecting the minimum validation RMSD.
// target_kind: "drr" (dB errors) or "t60" (percent errors). Throws
// DegenerateTargets when the training targets have zero variance and
// requires >= 20 training vectors.
GridSearchResult svr_train(std::span<const EstimateVector> train,
                           std::span<const EstimateVector> validation,
                           const std::string& target_kind);

void save_model(const std::string& path, const SvrModel& model,
                uint64_t config_hash);
SvrModel load_model(const std::string& path);

}  // namespace nira::svr

#endif  // NIRA_SVR_HPP

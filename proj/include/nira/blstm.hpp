// SPDX-License-Identifier: Apache-2.0
//
// Bidirectional LSTM sequence regressor: per-frame DRR/T60 estimates,
// exact BPTT gradients, SGD-with-momentum training with early stopping on
// the development split, and the architecture sweep grid.

#ifndef NIRA_BLSTM_HPP
#define NIRA_BLSTM_HPP

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nira/features.hpp"
#include "nira/types.hpp"

namespace nira::blstm {

enum class TargetKind { Drr, T60 };
std::string target_kind_name(TargetKind kind);
TargetKind target_kind_from_name(const std::string& name);

// One direction of one layer. Gate rows stacked (i, f, g, o), each block
// `hidden` rows.
struct LstmWeights {
  Eigen::MatrixXd w_x;   // 4H x D
  Eigen::MatrixXd w_h;   // 4H x H
  Eigen::VectorXd bias;  // 4H
};

struct BlstmModel {
  TargetKind target = TargetKind::Drr;
  int input_dim = features::kNumFeatures;
  std::vector<int> hidden_sizes;        // one entry per layer, 1..4 layers
  std::vector<LstmWeights> forward_w;   // per layer
  std::vector<LstmWeights> backward_w;  // per layer
  Eigen::VectorXd out_w;                // 2 * hidden_sizes.back()
  double out_b = 0.0;
  Eigen::VectorXd input_mean;  // input_dim
  Eigen::VectorXd input_std;   // input_dim
  double target_mean = 0.0;
  double target_std = 1.0;
  uint64_t seed = 0;

  int n_layers() const { return static_cast<int>(hidden_sizes.size()); }
};

// Uniform(-0.1, 0.1) weights from the seeded stream, forget-gate bias +1,
// identity normalization until train() fills the statistics.
BlstmModel init_model(TargetKind target, int n_layers, int hidden,
                      uint64_t seed, int input_dim = features::kNumFeatures);

// One estimate per row of `feats`, in target units (de-normalized).
// Throws ModelShapeMismatch when the column count differs from the model.
std::vector<double> blstm_forward(const BlstmModel& model,
                                  const features::FeatureMatrix& feats);

double temporal_average(std::span<const double> per_frame);

struct TrainingExample {
  const features::FeatureMatrix* feats = nullptr;
  double target = 0.0;
  std::string utterance_id;
};

struct Gradients {
  std::vector<LstmWeights> forward_w;
  std::vector<LstmWeights> backward_w;
  Eigen::VectorXd out_w;
  double out_b = 0.0;

  static Gradients zeros_like(const BlstmModel& model);
  double squared_norm() const;
  void scale(double s);
};

// Exact gradients of the summed squared per-frame error (on normalized
// targets) over the batch. Returns the loss. Throws NonFiniteLoss.
double bptt_gradients(const BlstmModel& model,
                      std::span<const TrainingExample> batch,
                      Gradients& grads);

struct TrainConfig {
  int n_layers = 1;
  int hidden = 64;
  int minibatch = 25;  // utterances per batch, from {25, 50, 100, 200}
  int max_epochs = 50;
  int patience = 5;
  double learning_rate = 1e-4;
  double momentum = 0.9;
  double gradient_clip = 10.0;  // global L2 norm
  uint64_t seed = 0;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double dev_rmsd = 0.0;
  bool is_best = false;
};

struct TrainResult {
  BlstmModel model;  // snapshot with the minimum dev error
  std::vector<EpochLog> log;
  double best_dev_rmsd = 0.0;
  int best_epoch = 0;
};

// Trains until max_epochs or `patience` epochs without dev improvement;
// returns the best-dev snapshot. Dev error is the utterance-level RMSD of
// the temporal-average estimates (dB for DRR, percent for T60).
// Deterministic for fixed inputs and seed.
TrainResult train(std::span<const TrainingExample> train_set,
                  std::span<const TrainingExample> dev_set, TargetKind target,
                  const TrainConfig& cfg);

// Serialized one-line-per-epoch log (stable bytes for fixed seed).
std::string format_training_log(const TrainResult& result);

struct SweepPoint {
  int n_layers;
  int hidden;
  int minibatch;
};
// The full architecture sweep: {1..4} layers x {64,128,256} units x
// {25,50,100,200} minibatch.
std::vector<SweepPoint> full_sweep_grid();

void save_model(const std::string& path, const BlstmModel& model,
                uint64_t config_hash);
BlstmModel load_model(const std::string& path);

}  // namespace nira::blstm

#endif  // NIRA_BLSTM_HPP

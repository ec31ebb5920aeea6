// SPDX-License-Identifier: Apache-2.0

#include "nira/blstm.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <sstream>

#include "nira/eval.hpp"

namespace nira::blstm {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// Per-direction forward cache for BPTT.
struct DirectionCache {
  // T columns each: post-activation gates, cell states and tanh(c).
  Eigen::MatrixXd i, f, g, o, c, tc, h;
};

// Runs one direction over `input` (T columns). The caller feeds the
// reversed sequence for the backward direction.
void run_direction(const LstmWeights& w, const Eigen::MatrixXd& input,
                   DirectionCache& cache) {
  const int T = static_cast<int>(input.cols());
  const int H = static_cast<int>(w.w_h.cols());
  cache.i.resize(H, T);
  cache.f.resize(H, T);
  cache.g.resize(H, T);
  cache.o.resize(H, T);
  cache.c.resize(H, T);
  cache.tc.resize(H, T);
  cache.h.resize(H, T);
  Eigen::VectorXd h_prev = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd c_prev = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd z(4 * H);
  for (int t = 0; t < T; ++t) {
    z.noalias() = w.w_x * input.col(t);
    z.noalias() += w.w_h * h_prev;
    z += w.bias;
    for (int u = 0; u < H; ++u) {
      const double iv = sigmoid(z[u]);
      const double fv = sigmoid(z[H + u]);
      const double gv = std::tanh(z[2 * H + u]);
      const double ov = sigmoid(z[3 * H + u]);
      const double cv = fv * c_prev[u] + iv * gv;
      const double tcv = std::tanh(cv);
      cache.i(u, t) = iv;
      cache.f(u, t) = fv;
      cache.g(u, t) = gv;
      cache.o(u, t) = ov;
      cache.c(u, t) = cv;
      cache.tc(u, t) = tcv;
      cache.h(u, t) = ov * tcv;
    }
    h_prev = cache.h.col(t);
    c_prev = cache.c.col(t);
  }
}

// BPTT through one direction. `dh_ext` holds dL/dh per step; on return
// `dx` holds dL/dinput. Weight gradients are accumulated into `grad`.
void backprop_direction(const LstmWeights& w, const Eigen::MatrixXd& input,
                        const DirectionCache& cache,
                        const Eigen::MatrixXd& dh_ext, LstmWeights& grad,
                        Eigen::MatrixXd& dx) {
  const int T = static_cast<int>(input.cols());
  const int H = static_cast<int>(w.w_h.cols());
  dx.setZero(input.rows(), T);
  Eigen::VectorXd dh_rec = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd dc_rec = Eigen::VectorXd::Zero(H);
  Eigen::VectorXd dz(4 * H);
  for (int t = T - 1; t >= 0; --t) {
    for (int u = 0; u < H; ++u) {
      const double dh = dh_ext(u, t) + dh_rec[u];
      const double iv = cache.i(u, t);
      const double fv = cache.f(u, t);
      const double gv = cache.g(u, t);
      const double ov = cache.o(u, t);
      const double tcv = cache.tc(u, t);
      const double dc = dh * ov * (1.0 - tcv * tcv) + dc_rec[u];
      const double c_prev = t > 0 ? cache.c(u, t - 1) : 0.0;
      dz[u] = dc * gv * iv * (1.0 - iv);                  // input gate
      dz[H + u] = dc * c_prev * fv * (1.0 - fv);          // forget gate
      dz[2 * H + u] = dc * iv * (1.0 - gv * gv);          // candidate
      dz[3 * H + u] = dh * tcv * ov * (1.0 - ov);         // output gate
      dc_rec[u] = dc * fv;
    }
    grad.w_x.noalias() += dz * input.col(t).transpose();
    if (t > 0) grad.w_h.noalias() += dz * cache.h.col(t - 1).transpose();
    grad.bias += dz;
    dx.col(t).noalias() += w.w_x.transpose() * dz;
    dh_rec.noalias() = w.w_h.transpose() * dz;
  }
}

// Normalized input matrix (input_dim x T) from a feature matrix.
Eigen::MatrixXd normalized_input(const BlstmModel& model,
                                 const features::FeatureMatrix& feats) {
  if (feats.n_cols != model.input_dim)
    throw ModelShapeMismatch("feature matrix has " +
                             std::to_string(feats.n_cols) + " columns, model " +
                             std::to_string(model.input_dim));
  const int T = feats.n_rows;
  Eigen::MatrixXd x(model.input_dim, T);
  for (int t = 0; t < T; ++t) {
    for (int d = 0; d < model.input_dim; ++d) {
      x(d, t) = (feats.at(t, d) - model.input_mean[d]) / model.input_std[d];
    }
  }
  return x;
}

struct ForwardTrace {
  std::vector<Eigen::MatrixXd> layer_inputs;          // per layer, D_l x T
  std::vector<DirectionCache> fwd_cache, bwd_cache;   // per layer
  Eigen::VectorXd y_norm;                              // T
};

// Full stacked bidirectional pass on normalized input. The backward
// direction consumes the reversed sequence and is reversed back when the
// two directions are concatenated.
void forward_trace(const BlstmModel& model, const Eigen::MatrixXd& x,
                   ForwardTrace& trace) {
  const int T = static_cast<int>(x.cols());
  const int L = model.n_layers();
  trace.layer_inputs.assign(L, Eigen::MatrixXd());
  trace.fwd_cache.assign(L, DirectionCache());
  trace.bwd_cache.assign(L, DirectionCache());
  Eigen::MatrixXd cur = x;
  for (int l = 0; l < L; ++l) {
    trace.layer_inputs[l] = cur;
    run_direction(model.forward_w[l], cur, trace.fwd_cache[l]);
    const Eigen::MatrixXd rev = cur.rowwise().reverse();
    run_direction(model.backward_w[l], rev, trace.bwd_cache[l]);
    const int H = model.hidden_sizes[l];
    Eigen::MatrixXd next(2 * H, T);
    next.topRows(H) = trace.fwd_cache[l].h;
    next.bottomRows(H) = trace.bwd_cache[l].h.rowwise().reverse();
    cur = std::move(next);
  }
  trace.y_norm.resize(T);
  for (int t = 0; t < T; ++t)
    trace.y_norm[t] = model.out_w.dot(cur.col(t)) + model.out_b;
}

// Top-layer activations are recomputed cheaply from the caches.
Eigen::MatrixXd top_activations(const BlstmModel& model,
                                const ForwardTrace& trace) {
  const int L = model.n_layers();
  const int H = model.hidden_sizes[L - 1];
  const int T = static_cast<int>(trace.fwd_cache[L - 1].h.cols());
  Eigen::MatrixXd top(2 * H, T);
  top.topRows(H) = trace.fwd_cache[L - 1].h;
  top.bottomRows(H) = trace.bwd_cache[L - 1].h.rowwise().reverse();
  return top;
}

}  // namespace

std::string target_kind_name(TargetKind kind) {
  return kind == TargetKind::Drr ? "drr" : "t60";
}

TargetKind target_kind_from_name(const std::string& name) {
  if (name == "drr") return TargetKind::Drr;
  if (name == "t60") return TargetKind::T60;
  throw ConfigError("unknown target kind: " + name);
}

BlstmModel init_model(TargetKind target, int n_layers, int hidden,
                      uint64_t seed, int input_dim) {
  if (n_layers < 1 || n_layers > 4)
    throw ConfigError("layer count must be 1..4, got " +
                      std::to_string(n_layers));
  if (hidden < 1) throw ConfigError("hidden size must be positive");
  BlstmModel m;
  m.target = target;
  m.input_dim = input_dim;
  m.hidden_sizes.assign(n_layers, hidden);
  m.seed = seed;
  m.input_mean = Eigen::VectorXd::Zero(input_dim);
  m.input_std = Eigen::VectorXd::Ones(input_dim);

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(-0.1, 0.1);
  auto fill = [&](Eigen::MatrixXd& mat) {
    for (Eigen::Index i = 0; i < mat.rows(); ++i)
      for (Eigen::Index j = 0; j < mat.cols(); ++j) mat(i, j) = unif(rng);
  };
  auto make_weights = [&](int in_dim, int h) {
    LstmWeights w;
    w.w_x.resize(4 * h, in_dim);
    w.w_h.resize(4 * h, h);
    w.bias = Eigen::VectorXd::Zero(4 * h);
    fill(w.w_x);
    fill(w.w_h);
    w.bias.segment(h, h).setConstant(1.0);  // forget-gate bias
    return w;
  };
  int in_dim = input_dim;
  for (int l = 0; l < n_layers; ++l) {
    m.forward_w.push_back(make_weights(in_dim, hidden));
    m.backward_w.push_back(make_weights(in_dim, hidden));
    in_dim = 2 * hidden;
  }
  m.out_w.resize(in_dim);
  for (Eigen::Index i = 0; i < m.out_w.size(); ++i) m.out_w[i] = unif(rng);
  m.out_b = 0.0;
  return m;
}

std::vector<double> blstm_forward(const BlstmModel& model,
                                  const features::FeatureMatrix& feats) {
  const Eigen::MatrixXd x = normalized_input(model, feats);
  ForwardTrace trace;
  forward_trace(model, x, trace);
  std::vector<double> out(trace.y_norm.size());
  for (Eigen::Index t = 0; t < trace.y_norm.size(); ++t)
    out[t] = trace.y_norm[t] * model.target_std + model.target_mean;
  return out;
}

double temporal_average(std::span<const double> per_frame) {
  if (per_frame.empty()) throw EmptyDataset("no per-frame estimates");
  return std::accumulate(per_frame.begin(), per_frame.end(), 0.0) /
         per_frame.size();
}

Gradients Gradients::zeros_like(const BlstmModel& model) {
  Gradients g;
  auto zero_of = [](const LstmWeights& w) {
    LstmWeights z;
    z.w_x = Eigen::MatrixXd::Zero(w.w_x.rows(), w.w_x.cols());
    z.w_h = Eigen::MatrixXd::Zero(w.w_h.rows(), w.w_h.cols());
    z.bias = Eigen::VectorXd::Zero(w.bias.size());
    return z;
  };
  for (const auto& w : model.forward_w) g.forward_w.push_back(zero_of(w));
  for (const auto& w : model.backward_w) g.backward_w.push_back(zero_of(w));
  g.out_w = Eigen::VectorXd::Zero(model.out_w.size());
  g.out_b = 0.0;
  return g;
}

double Gradients::squared_norm() const {
  double acc = out_b * out_b + out_w.squaredNorm();
  for (const auto& w : forward_w)
    acc += w.w_x.squaredNorm() + w.w_h.squaredNorm() + w.bias.squaredNorm();
  for (const auto& w : backward_w)
    acc += w.w_x.squaredNorm() + w.w_h.squaredNorm() + w.bias.squaredNorm();
  return acc;
}

void Gradients::scale(double s) {
  for (auto& w : forward_w) {
    w.w_x *= s;
    w.w_h *= s;
    w.bias *= s;
  }
  for (auto& w : backward_w) {
    w.w_x *= s;
    w.w_h *= s;
    w.bias *= s;
  }
  out_w *= s;
  out_b *= s;
}

double bptt_gradients(const BlstmModel& model,
                      std::span<const TrainingExample> batch,
                      Gradients& grads) {
  if (batch.empty()) throw EmptyDataset("empty gradient batch");
  const int L = model.n_layers();
  double loss = 0.0;
  ForwardTrace trace;
  for (const TrainingExample& ex : batch) {
    const Eigen::MatrixXd x = normalized_input(model, *ex.feats);
    const int T = static_cast<int>(x.cols());
    forward_trace(model, x, trace);
    const double tgt_norm =
        (ex.target - model.target_mean) / model.target_std;

    Eigen::VectorXd dy(T);
    for (int t = 0; t < T; ++t) {
      const double e = trace.y_norm[t] - tgt_norm;
      loss += e * e;
      dy[t] = 2.0 * e;
    }

    const Eigen::MatrixXd top = top_activations(model, trace);
    grads.out_w.noalias() += top * dy;
    grads.out_b += dy.sum();

    // dL/d(top activations), then walk the stack down.
    Eigen::MatrixXd d_cur = model.out_w * dy.transpose();
    for (int l = L - 1; l >= 0; --l) {
      const int H = model.hidden_sizes[l];
      const Eigen::MatrixXd dh_fwd = d_cur.topRows(H);
      const Eigen::MatrixXd dh_bwd_rev =
          d_cur.bottomRows(H).rowwise().reverse();

      Eigen::MatrixXd dx_fwd, dx_bwd;
      backprop_direction(model.forward_w[l], trace.layer_inputs[l],
                         trace.fwd_cache[l], dh_fwd, grads.forward_w[l],
                         dx_fwd);
      const Eigen::MatrixXd rev_input =
          trace.layer_inputs[l].rowwise().reverse();
      backprop_direction(model.backward_w[l], rev_input, trace.bwd_cache[l],
                         dh_bwd_rev, grads.backward_w[l], dx_bwd);
      if (l > 0) d_cur = dx_fwd + dx_bwd.rowwise().reverse();
    }
  }
  if (!std::isfinite(loss)) throw NonFiniteLoss("loss is not finite");
  return loss;
}

std::vector<SweepPoint> full_sweep_grid() {
  std::vector<SweepPoint> grid;
  for (int layers = 1; layers <= 4; ++layers)
    for (int hidden : {64, 128, 256})
      for (int minibatch : {25, 50, 100, 200})
        grid.push_back({layers, hidden, minibatch});
  return grid;
}

namespace {

double dev_rmsd_of(const BlstmModel& model,
                   std::span<const TrainingExample> dev, TargetKind target) {
  std::vector<double> truth, est;
  truth.reserve(dev.size());
  est.reserve(dev.size());
  for (const auto& ex : dev) {
    const std::vector<double> frames = blstm_forward(model, *ex.feats);
    truth.push_back(ex.target);
    est.push_back(temporal_average(frames));
  }
  return target == TargetKind::Drr ? eval::rmsd_drr(truth, est)
                                   : eval::rmsd_t60(truth, est);
}

void apply_update(BlstmModel& model, Gradients& velocity,
                  const Gradients& grads, double lr, double momentum) {
  auto step = [&](LstmWeights& w, LstmWeights& v, const LstmWeights& g) {
    v.w_x = momentum * v.w_x - lr * g.w_x;
    v.w_h = momentum * v.w_h - lr * g.w_h;
    v.bias = momentum * v.bias - lr * g.bias;
    w.w_x += v.w_x;
    w.w_h += v.w_h;
    w.bias += v.bias;
  };
  for (int l = 0; l < model.n_layers(); ++l) {
    step(model.forward_w[l], velocity.forward_w[l], grads.forward_w[l]);
    step(model.backward_w[l], velocity.backward_w[l], grads.backward_w[l]);
  }
  velocity.out_w = momentum * velocity.out_w - lr * grads.out_w;
  velocity.out_b = momentum * velocity.out_b - lr * grads.out_b;
  model.out_w += velocity.out_w;
  model.out_b += velocity.out_b;
}

}  // namespace

TrainResult train(std::span<const TrainingExample> train_set,
                  std::span<const TrainingExample> dev_set, TargetKind target,
                  const TrainConfig& cfg) {
  if (train_set.empty() || dev_set.empty())
    throw EmptyDataset("train and dev sets must be non-empty");

  BlstmModel model = init_model(target, cfg.n_layers, cfg.hidden, cfg.seed);

  // Input normalization from the training split only.
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(model.input_dim);
  Eigen::VectorXd sq = Eigen::VectorXd::Zero(model.input_dim);
  std::size_t n_rows = 0;
  for (const auto& ex : train_set) {
    for (int t = 0; t < ex.feats->n_rows; ++t) {
      for (int d = 0; d < model.input_dim; ++d) {
        const double v = ex.feats->at(t, d);
        mean[d] += v;
        sq[d] += v * v;
      }
    }
    n_rows += ex.feats->n_rows;
  }
  if (n_rows == 0) throw EmptyDataset("training features carry no rows");
  mean /= static_cast<double>(n_rows);
  for (int d = 0; d < model.input_dim; ++d) {
    const double var = sq[d] / n_rows - mean[d] * mean[d];
    model.input_std[d] = std::sqrt(std::max(var, 0.0));
    if (model.input_std[d] < 1e-8) model.input_std[d] = 1.0;
  }
  model.input_mean = mean;

  // Target normalization from the training split.
  double t_mean = 0.0, t_sq = 0.0;
  for (const auto& ex : train_set) {
    t_mean += ex.target;
    t_sq += ex.target * ex.target;
  }
  t_mean /= train_set.size();
  const double t_var = t_sq / train_set.size() - t_mean * t_mean;
  model.target_mean = t_mean;
  model.target_std = std::sqrt(std::max(t_var, 0.0));
  if (model.target_std < 1e-12) model.target_std = 1.0;

  std::mt19937_64 shuffle_rng(cfg.seed ^ 0x5eedf00dull);
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  BlstmModel best = model;
  double best_rmsd = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  int since_best = 0;
  Gradients velocity = Gradients::zeros_like(model);

  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size();
         start += cfg.minibatch) {
      const std::size_t stop =
          std::min(order.size(), start + cfg.minibatch);
      std::vector<TrainingExample> batch;
      batch.reserve(stop - start);
      for (std::size_t i = start; i < stop; ++i)
        batch.push_back(train_set[order[i]]);
      Gradients grads = Gradients::zeros_like(model);
      const double loss = bptt_gradients(model, batch, grads);
      if (!std::isfinite(loss)) throw Diverged("training loss diverged");
      epoch_loss += loss;
      const double norm = std::sqrt(grads.squared_norm());
      if (norm > cfg.gradient_clip && norm > 0.0)
        grads.scale(cfg.gradient_clip / norm);
      apply_update(model, velocity, grads, cfg.learning_rate, cfg.momentum);
    }
    const double dev_rmsd = dev_rmsd_of(model, dev_set, target);
    if (!std::isfinite(dev_rmsd)) throw Diverged("dev error diverged");

    EpochLog log;
    log.epoch = epoch;
    log.train_loss = epoch_loss;
    log.dev_rmsd = dev_rmsd;
    log.is_best = dev_rmsd < best_rmsd;
    result.log.push_back(log);
    if (log.is_best) {
      best_rmsd = dev_rmsd;
      best = model;
      best_epoch = epoch;
      since_best = 0;
    } else {
      ++since_best;
    }
    if (since_best >= cfg.patience) break;
  }
  result.model = std::move(best);
  result.best_dev_rmsd = best_rmsd;
  result.best_epoch = best_epoch;
  return result;
}

std::string format_training_log(const TrainResult& result) {
  std::ostringstream out;
  out.precision(12);
  for (const auto& e : result.log) {
    out << "epoch=" << e.epoch << " train_loss=" << e.train_loss
        << " dev_rmsd=" << e.dev_rmsd << (e.is_best ? " *" : "") << '\n';
  }
  out << "best_epoch=" << result.best_epoch
      << " best_dev_rmsd=" << result.best_dev_rmsd << '\n';
  return out.str();
}

// ---- model file -------------------------------------------------------------

namespace {

constexpr char kModelMagic[4] = {'N', 'I', 'R', 'M'};
constexpr uint32_t kModelVersion = 1;

template <typename T>
void put(std::ostream& out, T v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}
template <typename T>
T get(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  return v;
}

void put_matrix(std::ostream& out, const Eigen::MatrixXd& m) {
  put<uint64_t>(out, m.rows());
  put<uint64_t>(out, m.cols());
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) put<double>(out, m(i, j));
}

Eigen::MatrixXd get_matrix(std::istream& in) {
  const uint64_t rows = get<uint64_t>(in);
  const uint64_t cols = get<uint64_t>(in);
  Eigen::MatrixXd m(rows, cols);
  for (uint64_t i = 0; i < rows; ++i)
    for (uint64_t j = 0; j < cols; ++j) m(i, j) = get<double>(in);
  return m;
}

void put_vector(std::ostream& out, const Eigen::VectorXd& v) {
  put<uint64_t>(out, v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i) put<double>(out, v[i]);
}

Eigen::VectorXd get_vector(std::istream& in) {
  const uint64_t n = get<uint64_t>(in);
  Eigen::VectorXd v(n);
  for (uint64_t i = 0; i < n; ++i) v[i] = get<double>(in);
  return v;
}

}  // namespace

void save_model(const std::string& path, const BlstmModel& model,
                uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write model file: " + path);
  out.write(kModelMagic, 4);
  put<uint32_t>(out, kModelVersion);
  put<uint8_t>(out, model.target == TargetKind::Drr ? 0 : 1);
  put<uint32_t>(out, static_cast<uint32_t>(model.n_layers()));
  for (int h : model.hidden_sizes) put<uint32_t>(out, h);
  put<uint32_t>(out, model.input_dim);
  put<uint64_t>(out, model.seed);
  put<uint64_t>(out, config_hash);
  put_vector(out, model.input_mean);
  put_vector(out, model.input_std);
  put<double>(out, model.target_mean);
  put<double>(out, model.target_std);
  for (int l = 0; l < model.n_layers(); ++l) {
    for (const LstmWeights* w :
         {&model.forward_w[l], &model.backward_w[l]}) {
      put_matrix(out, w->w_x);
      put_matrix(out, w->w_h);
      put_vector(out, w->bias);
    }
  }
  put_vector(out, model.out_w);
  put<double>(out, model.out_b);
  if (!out) throw DataError("write failed: " + path);
}

BlstmModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open model file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kModelMagic, 4) != 0)
    throw DataError("bad model file magic: " + path);
  if (get<uint32_t>(in) != kModelVersion)
    throw DataError("unsupported model version: " + path);
  BlstmModel m;
  m.target = get<uint8_t>(in) == 0 ? TargetKind::Drr : TargetKind::T60;
  const uint32_t n_layers = get<uint32_t>(in);
  m.hidden_sizes.resize(n_layers);
  for (uint32_t l = 0; l < n_layers; ++l)
    m.hidden_sizes[l] = static_cast<int>(get<uint32_t>(in));
  m.input_dim = static_cast<int>(get<uint32_t>(in));
  m.seed = get<uint64_t>(in);
  get<uint64_t>(in);  // config hash, informational
  m.input_mean = get_vector(in);
  m.input_std = get_vector(in);
  m.target_mean = get<double>(in);
  m.target_std = get<double>(in);
  for (uint32_t l = 0; l < n_layers; ++l) {
    for (auto* dst : {&m.forward_w, &m.backward_w}) {
      LstmWeights w;
      w.w_x = get_matrix(in);
      w.w_h = get_matrix(in);
      w.bias = get_vector(in);
      dst->push_back(std::move(w));
    }
  }
  m.out_w = get_vector(in);
  m.out_b = get<double>(in);
  if (!in) throw DataError("truncated model file: " + path);
  return m;
}

}  // namespace nira::blstm

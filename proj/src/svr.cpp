// SPDX-License-Identifier: Apache-2.0

#include "nira/svr.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

#include "nira/eval.hpp"

namespace nira::svr {

namespace {

using Point = std::array<double, kDims>;

double rbf(const Point& a, const Point& b, double gamma) {
  double d2 = 0.0;
  for (int i = 0; i < kDims; ++i) {
    const double d = a[i] - b[i];
    d2 += d * d;
  }
  return std::exp(-gamma * d2);
}

struct Scaling {
  Point min{};
  Point range{};
};

Scaling fit_scaling(std::span<const EstimateVector> data) {
  Scaling s;
  for (int d = 0; d < kDims; ++d) {
    double lo = std::numeric_limits<double>::infinity();
    double hi = -std::numeric_limits<double>::infinity();
    for (const auto& e : data) {
      lo = std::min(lo, e.v[d]);
      hi = std::max(hi, e.v[d]);
    }
    s.min[d] = lo;
    s.range[d] = hi > lo ? hi - lo : 0.0;
  }
  return s;
}

Point apply_scaling(const Scaling& s, const Point& v) {
  Point out;
  for (int d = 0; d < kDims; ++d)
    out[d] = s.range[d] > 0.0 ? (v[d] - s.min[d]) / s.range[d] : 0.0;
  return out;
}

}  // namespace

SvrSolution solve_svr(std::span<const EstimateVector> data,
                      const SvrParams& params) {
  const int n = static_cast<int>(data.size());
  if (n < 2) throw EmptyDataset("epsilon-SVR needs at least 2 points");
  for (const auto& e : data) {
    for (double x : e.v)
      if (!std::isfinite(x)) throw NonFiniteLoss("non-finite SVR input");
  }
  const double C = params.C;
  const double eps = params.epsilon;

  const Scaling scaling = fit_scaling(data);
  std::vector<Point> x(n);
  std::vector<double> y(n);
  for (int i = 0; i < n; ++i) {
    x[i] = apply_scaling(scaling, data[i].v);
    y[i] = data[i].target;
  }
  std::vector<std::vector<double>> K(n, std::vector<double>(n));
  for (int i = 0; i < n; ++i)
    for (int j = i; j < n; ++j) K[i][j] = K[j][i] = rbf(x[i], x[j], params.gamma);

  // 2n dual variables a = [alpha; alpha*]; sign +1 for alpha, -1 for
  // alpha*; constraint sum(sign * a) = 0, bounds [0, C].
  const int m = 2 * n;
  auto idx = [n](int k) { return k < n ? k : k - n; };
  auto sgn = [n](int k) { return k < n ? 1.0 : -1.0; };

  std::vector<double> a(m, 0.0);
  std::vector<double> grad(m);
  for (int k = 0; k < m; ++k) grad[k] = eps - sgn(k) * y[idx(k)];

  const double tol = std::max(1e-10, 1e-8 * C);
  const int max_iter = 200000 + 200 * m;
  int it = 0;
  for (; it < max_iter; ++it) {
    // maximal violating pair
    double up_best = -std::numeric_limits<double>::infinity();
    double dn_best = std::numeric_limits<double>::infinity();
    int i = -1, j = -1;
    for (int k = 0; k < m; ++k) {
      const double s = sgn(k);
      const double v = -s * grad[k];
      const bool in_up = (s > 0 && a[k] < C) || (s < 0 && a[k] > 0);
      const bool in_dn = (s > 0 && a[k] > 0) || (s < 0 && a[k] < C);
      if (in_up && v > up_best) {
        up_best = v;
        i = k;
      }
      if (in_dn && v < dn_best) {
        dn_best = v;
        j = k;
      }
    }
    if (i < 0 || j < 0 || up_best - dn_best < tol) break;

    const double si = sgn(i), sj = sgn(j);
    const int pi = idx(i), pj = idx(j);
    const double q =
        std::max(K[pi][pi] + K[pj][pj] - 2.0 * si * sj * K[pi][pj], 1e-12);
    const double g = si * grad[i] - sj * grad[j];
    double t = -g / q;
    // clip to the box along the direction a_i += si*t, a_j -= sj*t
    double t_lo = -std::numeric_limits<double>::infinity();
    double t_hi = std::numeric_limits<double>::infinity();
    if (si > 0) {
      t_lo = std::max(t_lo, -a[i]);
      t_hi = std::min(t_hi, C - a[i]);
    } else {
      t_lo = std::max(t_lo, a[i] - C);
      t_hi = std::min(t_hi, a[i]);
    }
    if (sj > 0) {
      t_lo = std::max(t_lo, a[j] - C);
      t_hi = std::min(t_hi, a[j]);
    } else {
      t_lo = std::max(t_lo, -a[j]);
      t_hi = std::min(t_hi, C - a[j]);
    }
    t = std::clamp(t, t_lo, t_hi);
    if (t == 0.0) break;
    a[i] += si * t;
    a[j] -= sj * t;
    for (int k = 0; k < m; ++k)
      grad[k] += sgn(k) * t * (K[idx(k)][pi] - K[idx(k)][pj]);
  }

  // Bias from free variables, or the midpoint of the KKT interval.
  double b;
  {
    const double bound_eps = 1e-9 * std::max(1.0, C);
    double acc = 0.0;
    int n_free = 0;
    for (int k = 0; k < m; ++k) {
      if (a[k] > bound_eps && a[k] < C - bound_eps) {
        acc += -sgn(k) * grad[k];
        ++n_free;
      }
    }
    if (n_free > 0) {
      b = acc / n_free;
    } else {
      double up_best = -std::numeric_limits<double>::infinity();
      double dn_best = std::numeric_limits<double>::infinity();
      for (int k = 0; k < m; ++k) {
        const double s = sgn(k);
        const double v = -s * grad[k];
        const bool in_up = (s > 0 && a[k] < C) || (s < 0 && a[k] > 0);
        const bool in_dn = (s > 0 && a[k] > 0) || (s < 0 && a[k] < C);
        if (in_up) up_best = std::max(up_best, v);
        if (in_dn) dn_best = std::min(dn_best, v);
      }
      b = 0.5 * (up_best + dn_best);
    }
  }

  SvrSolution sol;
  sol.iterations = it;
  sol.model.params = params;
  sol.model.bias = b;
  sol.model.input_min = scaling.min;
  sol.model.input_range = scaling.range;
  for (int i = 0; i < n; ++i) {
    const double beta = a[i] - a[i + n];
    if (beta != 0.0) {
      sol.model.support_vectors.push_back(x[i]);
      sol.model.dual_coeffs.push_back(beta);
    }
  }
  sol.kkt_max_violation = kkt_max_violation(sol.model, data);
  return sol;
}

double svr_predict(const SvrModel& model, const std::array<double, kDims>& v) {
  Scaling s{model.input_min, model.input_range};
  const Point q = apply_scaling(s, v);
  double acc = model.bias;
  for (std::size_t i = 0; i < model.support_vectors.size(); ++i)
    acc += model.dual_coeffs[i] *
           rbf(model.support_vectors[i], q, model.params.gamma);
  return acc;
}

double kkt_max_violation(const SvrModel& model,
                         std::span<const EstimateVector> data) {
  const double C = model.params.C;
  const double eps = model.params.epsilon;
  const double bound_eps = 1e-7 * std::max(1.0, C);

  // Recover beta per training point: zero unless it matches a stored
  // support vector (exact scaled-input match).
  Scaling s{model.input_min, model.input_range};
  double worst = 0.0;
  std::vector<bool> used(model.support_vectors.size(), false);
  for (const auto& e : data) {
    const Point q = apply_scaling(s, e.v);
    double beta = 0.0;
    for (std::size_t i = 0; i < model.support_vectors.size(); ++i) {
      if (!used[i] && model.support_vectors[i] == q) {
        beta = model.dual_coeffs[i];
        used[i] = true;
        break;
      }
    }
    const double err = svr_predict(model, e.v) - e.target;  // f - y
    double viol = 0.0;
    if (std::abs(beta) <= bound_eps) {
      viol = std::max(0.0, std::abs(err) - eps);
    } else if (beta >= C - bound_eps) {
      viol = std::max(0.0, err + eps);  // requires f - y <= -eps
    } else if (beta <= -C + bound_eps) {
      viol = std::max(0.0, eps - err);  // requires f - y >= eps
    } else if (beta > 0.0) {
      viol = std::abs(err + eps);  // free alpha: f - y = -eps
    } else {
      viol = std::abs(err - eps);  // free alpha*: f - y = eps
    }
    worst = std::max(worst, viol);
  }
  return worst;
}

GridSearchResult svr_train(std::span<const EstimateVector> train,
                           std::span<const EstimateVector> validation,
                           const std::string& target_kind) {
  if (train.size() < 20)
    throw EmptyDataset("SVR training needs at least 20 vectors, got " +
                       std::to_string(train.size()));
  if (validation.empty()) throw EmptyDataset("SVR validation set is empty");
  if (target_kind != "drr" && target_kind != "t60")
    throw ConfigError("target kind must be drr or t60");

  double mu = 0.0;
  for (const auto& e : train) mu += e.target;
  mu /= train.size();
  double var = 0.0;
  for (const auto& e : train) var += (e.target - mu) * (e.target - mu);
  var /= train.size();
  const double std_dev = std::sqrt(var);
  if (std_dev <= 0.0)
    throw DegenerateTargets("training targets have zero variance");

  std::vector<double> truth(validation.size());
  for (std::size_t i = 0; i < validation.size(); ++i)
    truth[i] = validation[i].target;

  GridSearchResult result;
  result.best_validation_rmsd = std::numeric_limits<double>::infinity();
  for (double C : {1.0, 10.0, 100.0}) {
    for (double gamma : {0.01, 0.1, 1.0}) {
      for (double eps_scale : {0.01, 0.1}) {
        SvrParams params{C, gamma, eps_scale * std_dev};
        SvrSolution sol = solve_svr(train, params);
        std::vector<double> est(validation.size());
        for (std::size_t i = 0; i < validation.size(); ++i)
          est[i] = svr_predict(sol.model, validation[i].v);
        const double rmsd = target_kind == "drr"
                                ? eval::rmsd_drr(truth, est)
                                : eval::rmsd_t60(truth, est);
        if (rmsd < result.best_validation_rmsd) {
          result.best_validation_rmsd = rmsd;
          result.best = std::move(sol);
          result.best_params = params;
        }
      }
    }
  }
  return result;
}

// ---- model file -------------------------------------------------------------

namespace {

constexpr char kSvrMagic[4] = {'N', 'I', 'S', 'V'};
constexpr uint32_t kSvrVersion = 1;

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

}  // namespace

void save_model(const std::string& path, const SvrModel& model,
                uint64_t config_hash) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write svr model: " + path);
  out.write(kSvrMagic, 4);
  put<uint32_t>(out, kSvrVersion);
  put<uint64_t>(out, config_hash);
  put<uint64_t>(out, model.seed);
  put<double>(out, model.params.C);
  put<double>(out, model.params.gamma);
  put<double>(out, model.params.epsilon);
  put<double>(out, model.bias);
  for (int d = 0; d < kDims; ++d) put<double>(out, model.input_min[d]);
  for (int d = 0; d < kDims; ++d) put<double>(out, model.input_range[d]);
  put<uint64_t>(out, model.support_vectors.size());
  for (std::size_t i = 0; i < model.support_vectors.size(); ++i) {
    for (int d = 0; d < kDims; ++d) put<double>(out, model.support_vectors[i][d]);
    put<double>(out, model.dual_coeffs[i]);
  }
  if (!out) throw DataError("write failed: " + path);
}

SvrModel load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open svr model: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kSvrMagic, 4) != 0)
    throw DataError("bad svr model magic: " + path);
  if (get<uint32_t>(in) != kSvrVersion)
    throw DataError("unsupported svr model version: " + path);
  SvrModel m;
  get<uint64_t>(in);  // config hash
  m.seed = get<uint64_t>(in);
  m.params.C = get<double>(in);
  m.params.gamma = get<double>(in);
  m.params.epsilon = get<double>(in);
  m.bias = get<double>(in);
  for (int d = 0; d < kDims; ++d) m.input_min[d] = get<double>(in);
  for (int d = 0; d < kDims; ++d) m.input_range[d] = get<double>(in);
  const uint64_t n = get<uint64_t>(in);
  m.support_vectors.resize(n);
  m.dual_coeffs.resize(n);
  for (uint64_t i = 0; i < n; ++i) {
    for (int d = 0; d < kDims; ++d) m.support_vectors[i][d] = get<double>(in);
    m.dual_coeffs[i] = get<double>(in);
  }
  if (!in) throw DataError("truncated svr model: " + path);
  return m;
}

}  // namespace nira::svr

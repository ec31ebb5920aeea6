// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "nira/svr.hpp"

using namespace nira;

namespace {

std::vector<svr::EstimateVector> linear_data(int n, uint64_t seed,
                                             double noise_sigma = 0.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<svr::EstimateVector> data(n);
  for (int i = 0; i < n; ++i) {
    data[i].utterance_id = "u" + std::to_string(i);
    for (int d = 0; d < svr::kDims; ++d) data[i].v[d] = unif(rng);
    // target linear in component 0, other dims carry no information
    data[i].target = 2.0 * data[i].v[0] - 0.5 + noise_sigma * gauss(rng);
  }
  return data;
}

}  // namespace

TEST_CASE("constant targets collapse to a bias-only solution") {
  std::vector<svr::EstimateVector> data = linear_data(30, 1);
  for (auto& e : data) e.target = 3.25;
  svr::SvrParams params{10.0, 0.5, 0.1};
  const svr::SvrSolution sol = svr::solve_svr(data, params);
  CHECK(sol.model.support_vectors.empty());
  CHECK(sol.model.bias == doctest::Approx(3.25).epsilon(1e-9));
  for (const auto& e : data)
    CHECK(svr::svr_predict(sol.model, e.v) == doctest::Approx(3.25));
}

TEST_CASE("linear teacher recovered within the tube") {
  const std::vector<svr::EstimateVector> data = linear_data(60, 2);
  double mu = 0.0, sq = 0.0;
  for (const auto& e : data) {
    mu += e.target;
    sq += e.target * e.target;
  }
  mu /= data.size();
  const double t_std = std::sqrt(sq / data.size() - mu * mu);

  svr::SvrParams params{100.0, 1.0, 0.01 * t_std};
  const svr::SvrSolution sol = svr::solve_svr(data, params);
  std::vector<double> truth, est;
  for (const auto& e : data) {
    truth.push_back(e.target);
    est.push_back(svr::svr_predict(sol.model, e.v));
  }
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = est[i] - truth[i];
    acc += d * d;
  }
  const double rmsd = std::sqrt(acc / truth.size());
  CHECK(rmsd < params.epsilon + 0.05 * t_std);
}

TEST_CASE("KKT conditions hold at convergence") {
  for (uint64_t seed : {3ull, 4ull, 5ull}) {
    const std::vector<svr::EstimateVector> data = linear_data(40, seed, 0.3);
    for (double C : {1.0, 10.0, 100.0}) {
      svr::SvrParams params{C, 0.5, 0.1};
      const svr::SvrSolution sol = svr::solve_svr(data, params);
      CHECK(sol.kkt_max_violation < 1e-3 * C);
      CHECK(svr::kkt_max_violation(sol.model, data) < 1e-3 * C);
      // dual feasibility: |beta| <= C
      for (double b : sol.model.dual_coeffs) CHECK(std::abs(b) <= C + 1e-9);
    }
  }
}

TEST_CASE("non-bound support vectors sit on the tube boundary") {
  const std::vector<svr::EstimateVector> data = linear_data(50, 7, 0.2);
  svr::SvrParams params{10.0, 0.5, 0.15};
  const svr::SvrSolution sol = svr::solve_svr(data, params);
  const double tol = 1e-3;
  int n_free = 0;
  for (std::size_t i = 0; i < sol.model.support_vectors.size(); ++i) {
    const double beta = sol.model.dual_coeffs[i];
    if (std::abs(beta) >= params.C - 1e-7) continue;  // bound SVs
    // locate the original sample to read its target
    for (const auto& e : data) {
      svr::SvrModel scaled = sol.model;
      // compare in scaled space
      std::array<double, 4> q;
      for (int d = 0; d < 4; ++d)
        q[d] = scaled.input_range[d] > 0
                   ? (e.v[d] - scaled.input_min[d]) / scaled.input_range[d]
                   : 0.0;
      if (q == sol.model.support_vectors[i]) {
        const double f = svr::svr_predict(sol.model, e.v);
        CHECK(std::abs(std::abs(f - e.target) - params.epsilon) < tol);
        ++n_free;
        break;
      }
    }
  }
  CHECK(n_free > 0);
}

TEST_CASE("gamma to zero flattens the prediction") {
  const std::vector<svr::EstimateVector> data = linear_data(30, 8);
  svr::SvrParams params{10.0, 1e-9, 0.05};
  const svr::SvrSolution sol = svr::solve_svr(data, params);
  std::array<double, 4> lo{0.0, 0.0, 0.0, 0.0};
  std::array<double, 4> hi{1.0, 1.0, 1.0, 1.0};
  CHECK(svr::svr_predict(sol.model, lo) ==
        doctest::Approx(svr::svr_predict(sol.model, hi)).epsilon(1e-4));
}

TEST_CASE("prediction is Lipschitz with the coefficient-derived bound") {
  const std::vector<svr::EstimateVector> data = linear_data(40, 9, 0.1);
  svr::SvrParams params{10.0, 0.7, 0.05};
  const svr::SvrSolution sol = svr::solve_svr(data, params);
  // |f(a)-f(b)| <= sum|beta| * max|grad K| * |a-b| (scaled space);
  // max over x of |grad_x exp(-g|x|^2)| = sqrt(2g/e)
  double coeff_sum = 0.0;
  for (double b : sol.model.dual_coeffs) coeff_sum += std::abs(b);
  const double lipschitz =
      coeff_sum * std::sqrt(2.0 * params.gamma / std::exp(1.0));

  std::mt19937_64 rng(10);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::array<double, 4> a, b;
    for (int d = 0; d < 4; ++d) {
      a[d] = unif(rng);
      b[d] = unif(rng);
    }
    // map back to raw space before predicting
    std::array<double, 4> ra, rb;
    double dist_scaled = 0.0;
    for (int d = 0; d < 4; ++d) {
      ra[d] = sol.model.input_min[d] + a[d] * sol.model.input_range[d];
      rb[d] = sol.model.input_min[d] + b[d] * sol.model.input_range[d];
      dist_scaled += (a[d] - b[d]) * (a[d] - b[d]);
    }
    dist_scaled = std::sqrt(dist_scaled);
    const double df =
        std::abs(svr::svr_predict(sol.model, ra) - svr::svr_predict(sol.model, rb));
    CHECK(df <= lipschitz * dist_scaled + 1e-9);
  }
}

TEST_CASE("training order does not change predictions") {
  std::vector<svr::EstimateVector> data = linear_data(40, 11, 0.2);
  svr::SvrParams params{10.0, 0.5, 0.1};
  const svr::SvrSolution a = svr::solve_svr(data, params);
  std::mt19937_64 rng(12);
  std::shuffle(data.begin(), data.end(), rng);
  const svr::SvrSolution b = svr::solve_svr(data, params);
  std::mt19937_64 probe_rng(13);
  std::uniform_real_distribution<double> unif(-0.2, 1.2);
  for (int trial = 0; trial < 100; ++trial) {
    std::array<double, 4> v;
    for (int d = 0; d < 4; ++d) v[d] = unif(probe_rng);
    CHECK(svr::svr_predict(a.model, v) ==
          doctest::Approx(svr::svr_predict(b.model, v)).epsilon(1e-6));
  }
}

TEST_CASE("grid search selects by validation RMSD") {
  const std::vector<svr::EstimateVector> train = linear_data(60, 14, 0.05);
  const std::vector<svr::EstimateVector> validation = linear_data(30, 15, 0.05);
  const svr::GridSearchResult result =
      svr::svr_train(train, validation, "drr");
  CHECK(result.best_validation_rmsd < 0.5);
  CHECK(result.best.kkt_max_violation < 1e-3 * result.best_params.C);

  // every grid point evaluated: best is no worse than a probe point
  svr::SvrParams probe{1.0, 0.01, 0.1 * 1.0};
  const svr::SvrSolution probe_sol = svr::solve_svr(train, probe);
  std::vector<double> est(validation.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < validation.size(); ++i) {
    const double d =
        svr::svr_predict(probe_sol.model, validation[i].v) -
        validation[i].target;
    acc += d * d;
  }
  CHECK(result.best_validation_rmsd <= std::sqrt(acc / validation.size()) + 1e-12);
}

TEST_CASE("degenerate targets are rejected by the grid search") {
  std::vector<svr::EstimateVector> train = linear_data(30, 16);
  for (auto& e : train) e.target = 1.0;
  const std::vector<svr::EstimateVector> validation = linear_data(10, 17);
  CHECK_THROWS_AS(svr::svr_train(train, validation, "drr"), DegenerateTargets);
}

TEST_CASE("too few vectors are rejected") {
  const std::vector<svr::EstimateVector> train = linear_data(10, 18);
  const std::vector<svr::EstimateVector> validation = linear_data(10, 19);
  CHECK_THROWS_AS(svr::svr_train(train, validation, "drr"), EmptyDataset);
}

TEST_CASE("svr model file roundtrip") {
  const std::vector<svr::EstimateVector> data = linear_data(30, 20, 0.1);
  svr::SvrParams params{10.0, 0.5, 0.1};
  const svr::SvrSolution sol = svr::solve_svr(data, params);
  const std::string path = "/tmp/nira_test_svr.nisv";
  svr::save_model(path, sol.model, 0x77);
  const svr::SvrModel back = svr::load_model(path);
  CHECK(back.params.C == sol.model.params.C);
  CHECK(back.support_vectors.size() == sol.model.support_vectors.size());
  for (int trial = 0; trial < 20; ++trial) {
    std::array<double, 4> v{0.05 * trial, 0.3, 0.9 - 0.04 * trial, 0.5};
    CHECK(svr::svr_predict(back, v) == svr::svr_predict(sol.model, v));
  }
  std::filesystem::remove(path);
}

// SPDX-License-Identifier: Apache-2.0
//
// Central-finite-difference gradient verification for the BLSTM, shared
// by the unit and acceptance suites. The loss is recomputed through the
// public forward path only.

#ifndef NIRA_TEST_GRADCHECK_HPP
#define NIRA_TEST_GRADCHECK_HPP

#include <algorithm>
#include <cmath>

#include "nira/blstm.hpp"

namespace testutil {

inline double max_relative_gradient_error(
    const nira::blstm::BlstmModel& model,
    std::span<const nira::blstm::TrainingExample> batch, double fd_eps) {
  using namespace nira;
  blstm::Gradients grads = blstm::Gradients::zeros_like(model);
  blstm::bptt_gradients(model, batch, grads);

  blstm::BlstmModel probe = model;
  auto loss_at = [&]() {
    double loss = 0.0;
    for (const auto& ex : batch) {
      const auto y = blstm::blstm_forward(probe, *ex.feats);
      const double tgt = (ex.target - probe.target_mean) / probe.target_std;
      for (double v : y) {
        const double yn = (v - probe.target_mean) / probe.target_std;
        const double e = yn - tgt;
        loss += e * e;
      }
    }
    return loss;
  };

  double worst = 0.0;
  auto check_param = [&](double* w, double g) {
    const double keep = *w;
    *w = keep + fd_eps;
    const double up = loss_at();
    *w = keep - fd_eps;
    const double dn = loss_at();
    *w = keep;
    const double fd = (up - dn) / (2.0 * fd_eps);
    const double denom = std::max({std::abs(fd), std::abs(g), 1e-6});
    worst = std::max(worst, std::abs(fd - g) / denom);
  };

  for (int l = 0; l < model.n_layers(); ++l) {
    for (auto [mw, gw] :
         {std::pair{&probe.forward_w[l], &grads.forward_w[l]},
          std::pair{&probe.backward_w[l], &grads.backward_w[l]}}) {
      for (Eigen::Index i = 0; i < mw->w_x.rows(); ++i)
        for (Eigen::Index j = 0; j < mw->w_x.cols(); ++j)
          check_param(&mw->w_x(i, j), gw->w_x(i, j));
      for (Eigen::Index i = 0; i < mw->w_h.rows(); ++i)
        for (Eigen::Index j = 0; j < mw->w_h.cols(); ++j)
          check_param(&mw->w_h(i, j), gw->w_h(i, j));
      for (Eigen::Index i = 0; i < mw->bias.size(); ++i)
        check_param(&mw->bias[i], gw->bias[i]);
    }
  }
  for (Eigen::Index i = 0; i < probe.out_w.size(); ++i)
    check_param(&probe.out_w[i], grads.out_w[i]);
  check_param(&probe.out_b, grads.out_b);
  return worst;
}

}  // namespace testutil

#endif  // NIRA_TEST_GRADCHECK_HPP

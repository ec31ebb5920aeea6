// SPDX-License-Identifier: Apache-2.0
//
// Evaluation metrics: RMSD of DRR estimates (dB), RMSD of T60 estimates
// (percent of truth), box-plot statistics, and per-condition report
// slices.

#ifndef NIRA_EVAL_HPP
#define NIRA_EVAL_HPP

#include <map>
#include <span>
#include <string>
#include <vector>

#include "nira/types.hpp"

namespace nira::eval {

// sqrt(mean((est - truth)^2)), both in dB.
double rmsd_drr(std::span<const double> truth, std::span<const double> est);

// sqrt(mean((100*(est - truth)/truth)^2)); truths must be positive.
double rmsd_t60(std::span<const double> truth, std::span<const double> est);

struct BoxStats {
  double median = 0.0;
  double q1 = 0.0;
  double q3 = 0.0;
  double iqr = 0.0;
  double whisker_low = 0.0;
  double whisker_high = 0.0;
};

// Quartiles via linear interpolation between order statistics; whiskers
// are the most extreme points within 1.5*IQR of the quartiles.
BoxStats box_stats(std::span<const double> errors);

struct UtteranceRow {
  std::string utterance_id;
  std::string noise;
  double snr_db = 0.0;
  std::string room_id;
  double truth = 0.0;
  double estimate = 0.0;
  double error = 0.0;  // dB difference (DRR) or percent of truth (T60)
};

struct SliceStats {
  int n = 0;
  double rmsd = 0.0;
  double mean_error = 0.0;
  BoxStats box;
};

struct EvalReport {
  std::string target_kind;  // "drr" | "t60"
  std::vector<UtteranceRow> rows;
  SliceStats global;
  std::map<std::string, SliceStats> slices;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
};

struct LabeledUtterance {
  std::string utterance_id;
  std::string noise;
  double snr_db = 0.0;
  std::string room_id;
  double truth = 0.0;
};

// Joins estimates with labels (JoinFailure on unmatched ids), computes
// global and per-slice statistics. Slices are keyed "noise=<n>" and
// "snr=<v>" plus the combined "noise=<n>|snr=<v>".
EvalReport evaluate_report(
    const std::vector<std::pair<std::string, double>>& estimates,
    const std::vector<LabeledUtterance>& labels, const std::string& target_kind);

// Structured report (JSON) plus the per-utterance CSV.
void write_report_json(const std::string& path, const EvalReport& report);
void write_report_csv(const std::string& path, const EvalReport& report);

}  // namespace nira::eval

#endif  // NIRA_EVAL_HPP

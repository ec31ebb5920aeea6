// SPDX-License-Identifier: Apache-2.0

#include "nira/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <unordered_map>

#include "json.hpp"

namespace nira::eval {

namespace {

double quantile_linear(const std::vector<double>& sorted, double p) {
  const int n = static_cast<int>(sorted.size());
  if (n == 1) return sorted[0];
  const double h = (n - 1) * p;
  const int lo = static_cast<int>(h);
  if (lo >= n - 1) return sorted[n - 1];
  const double frac = h - lo;
  return sorted[lo] + frac * (sorted[lo + 1] - sorted[lo]);
}

double rmsd_of(const std::vector<double>& errors) {
  double acc = 0.0;
  for (double e : errors) acc += e * e;
  return std::sqrt(acc / errors.size());
}

SliceStats stats_of(const std::vector<double>& errors) {
  SliceStats s;
  s.n = static_cast<int>(errors.size());
  s.rmsd = rmsd_of(errors);
  double mu = 0.0;
  for (double e : errors) mu += e;
  s.mean_error = mu / errors.size();
  s.box = box_stats(errors);
  return s;
}

}  // namespace

double rmsd_drr(std::span<const double> truth, std::span<const double> est) {
  if (truth.size() != est.size() || truth.empty())
    throw DataError("rmsd_drr needs equal non-empty lists");
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    const double d = est[i] - truth[i];
    acc += d * d;
  }
  return std::sqrt(acc / truth.size());
}

double rmsd_t60(std::span<const double> truth, std::span<const double> est) {
  if (truth.size() != est.size() || truth.empty())
    throw DataError("rmsd_t60 needs equal non-empty lists");
  double acc = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] <= 0.0)
      throw NonPositiveTruth("T60 truth must be positive, got " +
                             std::to_string(truth[i]));
    const double d = 100.0 * (est[i] - truth[i]) / truth[i];
    acc += d * d;
  }
  return std::sqrt(acc / truth.size());
}

BoxStats box_stats(std::span<const double> errors) {
  if (errors.empty()) throw DataError("box_stats needs at least one value");
  std::vector<double> sorted(errors.begin(), errors.end());
  std::sort(sorted.begin(), sorted.end());
  BoxStats b;
  b.median = quantile_linear(sorted, 0.5);
  b.q1 = quantile_linear(sorted, 0.25);
  b.q3 = quantile_linear(sorted, 0.75);
  b.iqr = b.q3 - b.q1;
  const double lo_fence = b.q1 - 1.5 * b.iqr;
  const double hi_fence = b.q3 + 1.5 * b.iqr;
  b.whisker_low = b.q3;
  b.whisker_high = b.q1;
  bool any = false;
  for (double v : sorted) {
    if (v >= lo_fence && v <= hi_fence) {
      if (!any) {
        b.whisker_low = v;
        any = true;
      }
      b.whisker_high = v;
    }
  }
  if (!any) {
    // No point inside the fences can only happen for degenerate inputs;
    // fall back to the quartiles themselves.
    b.whisker_low = b.q1;
    b.whisker_high = b.q3;
  }
  return b;
}

EvalReport evaluate_report(
    const std::vector<std::pair<std::string, double>>& estimates,
    const std::vector<LabeledUtterance>& labels,
    const std::string& target_kind) {
  if (target_kind != "drr" && target_kind != "t60")
    throw ConfigError("target kind must be drr or t60: " + target_kind);
  std::unordered_map<std::string, const LabeledUtterance*> by_id;
  for (const auto& l : labels) by_id[l.utterance_id] = &l;

  EvalReport report;
  report.target_kind = target_kind;
  const bool is_t60 = target_kind == "t60";
  for (const auto& [id, est] : estimates) {
    auto it = by_id.find(id);
    if (it == by_id.end())
      throw JoinFailure("estimate for unknown utterance id: " + id);
    const LabeledUtterance& l = *it->second;
    UtteranceRow row;
    row.utterance_id = id;
    row.noise = l.noise;
    row.snr_db = l.snr_db;
    row.room_id = l.room_id;
    row.truth = l.truth;
    row.estimate = est;
    if (is_t60) {
      if (l.truth <= 0.0)
        throw NonPositiveTruth("T60 label for " + id + " not positive");
      row.error = 100.0 * (est - l.truth) / l.truth;
    } else {
      row.error = est - l.truth;
    }
    report.rows.push_back(std::move(row));
  }
  if (report.rows.empty()) throw DataError("no estimates to evaluate");

  std::vector<double> global_errors;
  std::map<std::string, std::vector<double>> slice_errors;
  for (const auto& r : report.rows) {
    global_errors.push_back(r.error);
    char snr[32];
    std::snprintf(snr, sizeof(snr), "%g", r.snr_db);
    slice_errors["noise=" + r.noise].push_back(r.error);
    slice_errors[std::string("snr=") + snr].push_back(r.error);
    slice_errors["noise=" + r.noise + "|snr=" + snr].push_back(r.error);
  }
  report.global = stats_of(global_errors);
  for (const auto& [key, errs] : slice_errors)
    report.slices[key] = stats_of(errs);
  return report;
}

namespace {

nlohmann::json box_to_json(const BoxStats& b) {
  return {{"median", b.median},   {"q1", b.q1},
          {"q3", b.q3},           {"iqr", b.iqr},
          {"whisker_low", b.whisker_low}, {"whisker_high", b.whisker_high}};
}

nlohmann::json slice_to_json(const SliceStats& s) {
  return {{"n", s.n},
          {"rmsd", s.rmsd},
          {"mean_error", s.mean_error},
          {"box", box_to_json(s.box)}};
}

}  // namespace

void write_report_json(const std::string& path, const EvalReport& report) {
  nlohmann::json j;
  j["format"] = "nira-eval-report";
  j["version"] = 1;
  j["target_kind"] = report.target_kind;
  j["config_hash"] = report.config_hash;
  j["seed"] = report.seed;
  j["n_utterances"] = report.rows.size();
  j["global"] = slice_to_json(report.global);
  nlohmann::json slices = nlohmann::json::object();
  for (const auto& [key, s] : report.slices) slices[key] = slice_to_json(s);
  j["slices"] = slices;
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report: " + path);
  out << j.dump(2) << '\n';
}

void write_report_csv(const std::string& path, const EvalReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write report csv: " + path);
  out << "# config_hash=" << report.config_hash << " seed=" << report.seed
      << '\n';
  out << "utterance_id,noise,snr_db,room_id,truth,estimate,error\n";
  out.precision(17);
  for (const auto& r : report.rows) {
    out << r.utterance_id << ',' << r.noise << ',' << r.snr_db << ','
        << r.room_id << ',' << r.truth << ',' << r.estimate << ',' << r.error
        << '\n';
  }
}

}  // namespace nira::eval

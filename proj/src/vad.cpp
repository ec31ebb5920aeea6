// SPDX-License-Identifier: Apache-2.0

#include "nira/vad.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace nira::vad {

namespace {

// Twice-smoothed rectified envelope, P.56 method B.
std::vector<double> smoothed_envelope(const Waveform& w) {
  const double g = std::exp(-1.0 / (w.sample_rate * kSmoothingTimeS));
  std::vector<double> q(w.samples.size());
  double p = 0.0, qq = 0.0;
  for (std::size_t i = 0; i < w.samples.size(); ++i) {
    p = g * p + (1.0 - g) * std::abs(w.samples[i]);
    qq = g * qq + (1.0 - g) * p;
    q[i] = qq;
  }
  return q;
}

// Number of samples whose envelope exceeds `threshold`, extended by the
// hangover interval.
std::size_t activity_count(const std::vector<double>& env, double threshold,
                           long hangover) {
  std::size_t count = 0;
  long since_above = hangover + 1;
  for (double e : env) {
    if (e >= threshold)
      since_above = 0;
    else
      ++since_above;
    if (since_above <= hangover) ++count;
  }
  return count;
}

}  // namespace

ActiveLevel active_level_p56(const Waveform& w) {
  if (w.samples.empty()) throw NoActivity("empty waveform");
  double sq = 0.0;
  for (double x : w.samples) sq += x * x;
  if (sq == 0.0) throw NoActivity("digital silence");

  const std::vector<double> env = smoothed_envelope(w);
  const long hangover = std::lround(kHangoverS * w.sample_rate);
  const double env_max = *std::max_element(env.begin(), env.end());
  if (env_max <= 0.0) throw NoActivity("zero envelope");

  // Level above a threshold c: L(c) = 10*log10(sq / A(c)) dB re full scale.
  // Delta(c) = L(c) - 20*log10(c) grows as the threshold drops; the active
  // level is L at the threshold where Delta crosses the 15.9 dB margin.
  auto level_at = [&](double c) -> double {
    const std::size_t a = activity_count(env, c, hangover);
    if (a == 0) return std::numeric_limits<double>::quiet_NaN();
    return 10.0 * std::log10(sq / static_cast<double>(a));
  };
  auto delta_at = [&](double c) {
    return level_at(c) - 20.0 * std::log10(c);
  };

  // Thresholds anchored at half the envelope peak and halved per step
  // (thresholds near the peak itself degenerate to near-zero activity).
  // Anchoring on the envelope makes the measurement exactly
  // gain-equivariant.
  const double c_start = 0.5 * env_max;
  if (delta_at(c_start) >= kMarginDb) {
    const std::size_t a = activity_count(env, c_start, hangover);
    return {level_at(c_start),
            static_cast<double>(a) / static_cast<double>(env.size())};
  }
  double c_hi = c_start;
  double c_lo = c_start;
  bool bracketed = false;
  for (int j = 1; j <= 60; ++j) {
    c_lo = c_start * std::pow(0.5, j);
    if (delta_at(c_lo) >= kMarginDb) {
      bracketed = true;
      c_hi = c_lo * 2.0;
      break;
    }
  }
  if (!bracketed) throw NoActivity("no threshold yields the margin");

  // Bisect in log-threshold; Delta is a nondecreasing step function of the
  // falling threshold, so this converges to the crossing.
  for (int it = 0; it < 60; ++it) {
    const double c_mid = std::sqrt(c_lo * c_hi);
    if (delta_at(c_mid) >= kMarginDb)
      c_lo = c_mid;
    else
      c_hi = c_mid;
  }
  const std::size_t a = activity_count(env, c_lo, hangover);
  return {level_at(c_lo),
          static_cast<double>(a) / static_cast<double>(env.size())};
}

SpeechMask speech_frame_mask(const Waveform& w, const dsp::FrameGrid& g) {
  const ActiveLevel level = active_level_p56(w);
  SpeechMask mask;
  mask.active_level_db = level.active_level_db;
  mask.active.resize(g.n_frames, false);
  const double threshold = level.active_level_db - kMarginDb;
  std::vector<double> frame(g.frame_length);
  int n_active = 0;
  for (int k = 0; k < g.n_frames; ++k) {
    dsp::extract_frame(w, g, k, frame);
    const bool on = dsp::rms_db(frame) >= threshold;
    mask.active[k] = on;
    n_active += on;
  }
  mask.activity_factor = static_cast<double>(n_active) / g.n_frames;
  return mask;
}

}  // namespace nira::vad

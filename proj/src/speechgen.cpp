// SPDX-License-Identifier: Apache-2.0

#include "nira/speechgen.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "nira/dsp.hpp"

namespace nira::speechgen {

namespace {

// Second-order resonator (two-pole) at center frequency fc with bandwidth
// bw, applied in place.
void resonate(std::vector<double>& x, double fc, double bw, int fs) {
  const double r = std::exp(-M_PI * bw / fs);
  const double theta = 2.0 * M_PI * fc / fs;
  const double a1 = -2.0 * r * std::cos(theta);
  const double a2 = r * r;
  // unit peak gain at resonance regardless of fc and bandwidth
  const double gain = (1.0 - r) * 2.0 * std::sin(theta);
  double y1 = 0.0, y2 = 0.0;
  for (double& v : x) {
    const double y = gain * v - a1 * y1 - a2 * y2;
    y2 = y1;
    y1 = y;
    v = y;
  }
}

void apply_fade(std::vector<double>& x, int fade) {
  const int n = static_cast<int>(x.size());
  fade = std::min(fade, n / 2);
  for (int i = 0; i < fade; ++i) {
    const double g = static_cast<double>(i) / fade;
    x[i] *= g;
    x[n - 1 - i] *= g;
  }
}

}  // namespace

Waveform synthetic_speech(double duration_s, uint64_t seed, int sample_rate) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const int total = static_cast<int>(duration_s * sample_rate);

  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(total, 0.0);

  int pos = static_cast<int>(0.02 * sample_rate);
  double f0 = 90.0 + 120.0 * unif(rng);
  while (pos < total) {
    const double what = unif(rng);
    if (what < 0.55) {
      // voiced segment: glottal pulse train through 3 formants
      const int len = static_cast<int>((0.10 + 0.22 * unif(rng)) * sample_rate);
      std::vector<double> seg(len, 0.0);
      double phase = unif(rng);
      const double f0_slope = (unif(rng) - 0.5) * 60.0;  // Hz per second
      for (int i = 0; i < len; ++i) {
        const double f = std::clamp(f0 + f0_slope * i / sample_rate, 70.0, 300.0);
        phase += f / sample_rate;
        if (phase >= 1.0) {
          phase -= 1.0;
          seg[i] = 1.0;
        }
      }
      f0 = std::clamp(f0 + f0_slope * len / sample_rate, 70.0, 300.0);
      // glottal source: impulse train through two leaky integrators
      // (-12 dB/oct), radiation adds +6 dB/oct at the end
      std::vector<double> voiced(len);
      double s1 = 0.0, s2 = 0.0;
      const double leak = 0.94;
      for (int i = 0; i < len; ++i) {
        s1 = leak * s1 + seg[i];
        s2 = leak * s2 + s1;
        voiced[i] = s2 * (1.0 - leak) * (1.0 - leak);
      }
      std::vector<double> sum(len, 0.0);
      const double formants[4] = {300.0 + 500.0 * unif(rng),
                                  900.0 + 1100.0 * unif(rng),
                                  2200.0 + 1300.0 * unif(rng),
                                  3600.0 + 900.0 * unif(rng)};
      const double weights[4] = {1.0, 0.9, 0.7, 0.5};
      for (int fi = 0; fi < 4; ++fi) {
        std::vector<double> band = voiced;
        resonate(band, formants[fi], 80.0 + 150.0 * unif(rng), sample_rate);
        for (int i = 0; i < len; ++i) sum[i] += weights[fi] * band[i];
      }
      for (int i = len - 1; i > 0; --i) sum[i] -= sum[i - 1];
      // common segment level
      double rms = 0.0;
      for (double v : sum) rms += v * v;
      rms = std::sqrt(rms / len) + 1e-12;
      for (double& v : sum) v *= 0.1 / rms;
      // syllabic amplitude modulation
      const double mod_hz = 2.5 + 3.0 * unif(rng);
      const double mod_phase = 2.0 * M_PI * unif(rng);
      for (int i = 0; i < len; ++i) {
        sum[i] *= 0.7 + 0.3 * std::sin(2.0 * M_PI * mod_hz * i / sample_rate +
                                       mod_phase);
      }
      apply_fade(sum, sample_rate / 100);
      for (int i = 0; i < len && pos + i < total; ++i)
        w.samples[pos + i] += sum[i];
      pos += len;
    } else if (what < 0.75) {
      // unvoiced burst: high-passed noise
      const int len = static_cast<int>((0.05 + 0.10 * unif(rng)) * sample_rate);
      std::vector<double> seg(len);
      std::normal_distribution<double> gauss(0.0, 1.0);
      double prev = 0.0;
      for (int i = 0; i < len; ++i) {
        const double x = gauss(rng);
        seg[i] = 0.25 * (x - prev);  // first difference emphasizes highs
        prev = x;
      }
      resonate(seg, 3000.0 + 2500.0 * unif(rng), 900.0, sample_rate);
      double rms = 0.0;
      for (double v : seg) rms += v * v;
      rms = std::sqrt(rms / len) + 1e-12;
      for (double& v : seg) v *= 0.04 / rms;
      apply_fade(seg, sample_rate / 200);
      for (int i = 0; i < len && pos + i < total; ++i)
        w.samples[pos + i] += seg[i];
      pos += len;
    } else {
      // pause
      pos += static_cast<int>((0.08 + 0.17 * unif(rng)) * sample_rate);
    }
  }
  return dsp::normalize_peak(w);
}

Waveform babble_noise(double duration_s, uint64_t seed, int sample_rate) {
  Waveform w;
  w.sample_rate = sample_rate;
  const int total = static_cast<int>(duration_s * sample_rate);
  w.samples.assign(total, 0.0);
  constexpr int kTalkers = 6;
  for (int t = 0; t < kTalkers; ++t) {
    const Waveform v =
        synthetic_speech(duration_s, seed * 1315423911ull + 7919 * (t + 1),
                         sample_rate);
    for (int i = 0; i < total && i < static_cast<int>(v.samples.size()); ++i)
      w.samples[i] += v.samples[i];
  }
  return dsp::normalize_peak(w);
}

Waveform fan_noise(double duration_s, uint64_t seed, int sample_rate) {
  std::mt19937_64 rng(seed ^ 0xfa9ull);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const int total = static_cast<int>(duration_s * sample_rate);
  Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(total);
  // low-passed noise plus a weak broadband floor
  const double fc = 300.0;
  const double a = std::exp(-2.0 * M_PI * fc / sample_rate);
  double state = 0.0;
  for (int i = 0; i < total; ++i) {
    const double x = gauss(rng);
    state = a * state + (1.0 - a) * x;
    w.samples[i] = 8.0 * state + 0.05 * x;
  }
  return dsp::normalize_peak(w);
}

Waveform noise_by_name(const std::string& name, double duration_s,
                       uint64_t seed, int sample_rate) {
  if (name == "babble") return babble_noise(duration_s, seed, sample_rate);
  if (name == "fan") return fan_noise(duration_s, seed, sample_rate);
  throw ConfigError("unknown noise type: " + name);
}

}  // namespace nira::speechgen

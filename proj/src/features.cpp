// SPDX-License-Identifier: Apache-2.0

#include "nira/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <numeric>
#include <sstream>

namespace nira::features {

namespace {

constexpr double kTiny = 1e-30;

double hz_to_mel(double f) { return 2595.0 * std::log10(1.0 + f / 700.0); }
double mel_to_hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

// Triangular filterbank on FFT power bins, rows normalized to unit area
// on the mel axis is not required here; plain triangles as in HTK.
std::vector<std::vector<double>> mel_filterbank(int n_filters, int n_bins,
                                                double bin_hz, double f_lo,
                                                double f_hi) {
  const double m_lo = hz_to_mel(f_lo);
  const double m_hi = hz_to_mel(f_hi);
  std::vector<double> edges(n_filters + 2);
  for (int i = 0; i < n_filters + 2; ++i)
    edges[i] = mel_to_hz(m_lo + (m_hi - m_lo) * i / (n_filters + 1));
  std::vector<std::vector<double>> fb(n_filters,
                                      std::vector<double>(n_bins, 0.0));
  for (int i = 0; i < n_filters; ++i) {
    const double f0 = edges[i], f1 = edges[i + 1], f2 = edges[i + 2];
    for (int b = 0; b < n_bins; ++b) {
      const double f = b * bin_hz;
      if (f <= f0 || f >= f2) continue;
      fb[i][b] = f < f1 ? (f - f0) / (f1 - f0) : (f2 - f) / (f2 - f1);
    }
  }
  return fb;
}

// ---- LTASS template -------------------------------------------------------

struct LtassTable {
  std::vector<double> freq_hz;
  std::vector<double> level_db;
};

std::string data_dir() {
  if (const char* env = std::getenv("NIRA_DATA_DIR")) return env;
#ifdef NIRA_DATA_DIR_DEFAULT
  return NIRA_DATA_DIR_DEFAULT;
#else
  return "data";
#endif
}

const LtassTable& ltass_table() {
  static LtassTable table = [] {
    const std::string path = data_dir() + "/ltass.txt";
    std::ifstream in(path);
    if (!in) throw DataError("cannot open LTASS table: " + path);
    LtassTable t;
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ss(line);
      double f, l;
      if (ss >> f >> l) {
        t.freq_hz.push_back(f);
        t.level_db.push_back(l);
      }
    }
    if (t.freq_hz.size() < 2) throw DataError("LTASS table too short: " + path);
    return t;
  }();
  return table;
}

}  // namespace

std::vector<double> ltass_at(std::span<const double> bin_hz) {
  const LtassTable& t = ltass_table();
  std::vector<double> out(bin_hz.size());
  double max_pow = 0.0;
  for (std::size_t i = 0; i < bin_hz.size(); ++i) {
    const double f = std::max(bin_hz[i], t.freq_hz.front());
    // log-frequency linear interpolation of the dB levels, clamped ends
    double level;
    if (f <= t.freq_hz.front()) {
      level = t.level_db.front();
    } else if (f >= t.freq_hz.back()) {
      level = t.level_db.back();
    } else {
      std::size_t j = 1;
      while (t.freq_hz[j] < f) ++j;
      const double x0 = std::log(t.freq_hz[j - 1]), x1 = std::log(t.freq_hz[j]);
      const double a = (std::log(f) - x0) / (x1 - x0);
      level = t.level_db[j - 1] + a * (t.level_db[j] - t.level_db[j - 1]);
    }
    out[i] = std::pow(10.0, level / 10.0);
    max_pow = std::max(max_pow, out[i]);
  }
  for (double& v : out) v /= max_pow;
  return out;
}

// ---- column names ---------------------------------------------------------

const std::vector<std::string>& column_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> n;
    n.reserve(kNumFeatures);
    auto add = [&](const std::string& base, int count) {
      if (count == 1) {
        n.push_back(base);
        return;
      }
      for (int i = 1; i <= count; ++i) {
        char buf[64];
        std::snprintf(buf, sizeof(buf), "%s%02d", base.c_str(), i);
        n.push_back(buf);
      }
    };
    add("lsf", 20);
    add("d_lsf", 20);
    add("zcr", 1);
    add("d_zcr", 1);
    add("variance", 1);
    add("d_variance", 1);
    add("pitch_period_ms", 1);
    add("d_pitch_period_ms", 1);
    add("isnr_db", 1);
    add("d_isnr_db", 1);
    add("hilbert_var", 1);
    add("hilbert_dr_db", 1);
    add("d_hilbert_var", 1);
    add("d_hilbert_dr_db", 1);
    add("pld_centroid", 1);
    add("pld_dynamics", 1);
    add("pld_flatness", 1);
    add("d_pld_centroid", 1);
    add("d_pld_dynamics", 1);
    add("d_pld_flatness", 1);
    add("mfcc", 12);
    add("d_mfcc", 12);
    add("dd_mfcc", 12);
    for (int b = 0; b < 3; ++b) {
      const char* tag = b == 0 ? "hi" : (b == 1 ? "adj1" : "adj2");
      for (const char* m : {"mean_hz", "m2", "m3", "m4"}) {
        n.push_back(std::string("mod_") + tag + "_" + m);
      }
    }
    add("scat1_", 20);
    add("scat2_", 8);
    return n;
  }();
  return names;
}

uint64_t FeatureConfig::hash() const {
  // FNV-1a over the packed config fields.
  uint64_t h = 1469598103934665603ull;
  auto mix = [&h](uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 1099511628211ull;
    }
  };
  mix(1);  // schema version
  mix(lpc_order);
  mix(n_fft);
  mix(n_mel_mfcc);
  mix(n_mfcc);
  mix(delta_span);
  mix(n_mel_modulation);
  mix(modulation_context_frames);
  mix(n_scattering_bands);
  mix(n_scattering_paths);
  return h;
}

// ---- LSF ------------------------------------------------------------------

namespace {

// Evaluates the symmetric half-polynomial g_0..g_{m} (coefficients of a
// symmetric polynomial of even degree 2m) on the unit circle at angle w:
//   G(w) = g_m + 2 * sum_{k=1..m} g_{m-k} cos(k w).
double sym_poly_eval(const std::vector<double>& g, double w) {
  const int m = static_cast<int>(g.size()) - 1;
  double acc = g[m];
  for (int k = 1; k <= m; ++k) acc += 2.0 * g[m - k] * std::cos(k * w);
  return acc;
}

// Divides the palindromic polynomial p (degree n) by (1 + sign*z^-1);
// returns quotient coefficients (degree n-1).
std::vector<double> deflate(const std::vector<double>& p, double sign) {
  std::vector<double> q(p.size() - 1, 0.0);
  double carry = 0.0;
  for (std::size_t i = 0; i + 1 < p.size(); ++i) {
    q[i] = p[i] - sign * carry;
    carry = q[i];
  }
  return q;
}

}  // namespace

std::vector<double> lsf_from_lpc(std::span<const double> lpc) {
  const int p = static_cast<int>(lpc.size());
  if (p < 1 || p % 2 != 0)
    throw DegenerateFrame("LSF conversion expects a positive even order");
  // Full predictor a_0..a_p with a_0 = 1.
  std::vector<double> a(p + 1);
  a[0] = 1.0;
  for (int i = 0; i < p; ++i) a[i + 1] = lpc[i];

  // P(z) = A(z) + z^-(p+1) A(1/z), Q(z) = A(z) - z^-(p+1) A(1/z).
  std::vector<double> P(p + 2), Q(p + 2);
  for (int i = 0; i <= p + 1; ++i) {
    const double fwd = i <= p ? a[i] : 0.0;
    const double rev = i >= 1 ? a[p + 1 - i] : 0.0;
    P[i] = fwd + rev;
    Q[i] = fwd - rev;
  }
  // P has a root at z = -1, Q at z = +1; deflate to symmetric degree-p
  // polynomials and fold to cos(k w) form.
  const std::vector<double> Pd = deflate(P, 1.0);
  const std::vector<double> Qd = deflate(Q, -1.0);
  const int m = p / 2;
  std::vector<double> gp(Pd.begin(), Pd.begin() + m + 1);
  std::vector<double> gq(Qd.begin(), Qd.begin() + m + 1);

  auto roots_of = [m](const std::vector<double>& g) {
    // Bracket sign changes of G on a fine grid over (0, pi), then bisect.
    constexpr int kGrid = 4096;
    std::vector<double> roots;
    roots.reserve(m);
    double w_prev = 0.0;
    double v_prev = sym_poly_eval(g, w_prev);
    for (int i = 1; i <= kGrid; ++i) {
      const double w = M_PI * i / kGrid;
      const double v = sym_poly_eval(g, w);
      if (v_prev == 0.0) {
        roots.push_back(w_prev);
      } else if (v_prev * v < 0.0) {
        double lo = w_prev, hi = w;
        for (int it = 0; it < 60; ++it) {
          const double mid = 0.5 * (lo + hi);
          if (sym_poly_eval(g, lo) * sym_poly_eval(g, mid) <= 0.0)
            hi = mid;
          else
            lo = mid;
        }
        roots.push_back(0.5 * (lo + hi));
      }
      w_prev = w;
      v_prev = v;
    }
    return roots;
  };

  const std::vector<double> rp = roots_of(gp);
  const std::vector<double> rq = roots_of(gq);
  if (static_cast<int>(rp.size()) != m || static_cast<int>(rq.size()) != m)
    throw DegenerateFrame("LSF root isolation failed");

  std::vector<double> lsf;
  lsf.reserve(p);
  lsf.insert(lsf.end(), rq.begin(), rq.end());
  lsf.insert(lsf.end(), rp.begin(), rp.end());
  std::sort(lsf.begin(), lsf.end());
  for (int i = 1; i < p; ++i) {
    if (lsf[i] <= lsf[i - 1])
      throw DegenerateFrame("LSF ordering violated");
  }
  if (lsf.front() <= 0.0 || lsf.back() >= M_PI)
    throw DegenerateFrame("LSF out of (0, pi)");
  return lsf;
}

// ---- simple frame statistics ----------------------------------------------

double zero_crossing_rate(std::span<const double> frame) {
  if (frame.size() < 2) return 0.0;
  int crossings = 0;
  for (std::size_t i = 1; i < frame.size(); ++i) {
    const bool a = frame[i - 1] >= 0.0;
    const bool b = frame[i] >= 0.0;
    crossings += (a != b);
  }
  return static_cast<double>(crossings) / (frame.size() - 1);
}

double frame_variance(std::span<const double> frame) {
  return dsp::variance(frame);
}

// ---- pitch (PEFAC-style harmonic summation) -------------------------------

namespace {

constexpr double kPitchMinHz = 50.0;
constexpr double kPitchMaxHz = 400.0;
constexpr int kPitchCandidates = 240;
constexpr int kPitchSegment = 2048;  // 128 ms context around each frame
constexpr int kPitchFft = 4096;
constexpr int kPitchMaxHarmonics = 32;
constexpr double kPitchHarmonicLimitHz = 3200.0;
constexpr double kVoicingThreshold = 1.5;

// Whitens the power spectrum by its local moving average so harmonic
// peaks stand out at unit-scale regardless of level or tilt.
std::vector<double> whiten(const std::vector<double>& p) {
  const int n = static_cast<int>(p.size());
  const int half = 32;
  double max_p = 0.0;
  for (double v : p) max_p = std::max(max_p, v);
  const double eps = max_p * 1e-12 + kTiny;
  std::vector<double> out(n);
  // prefix sums for the moving average
  std::vector<double> cum(n + 1, 0.0);
  for (int i = 0; i < n; ++i) cum[i + 1] = cum[i] + p[i];
  for (int i = 0; i < n; ++i) {
    const int lo = std::max(0, i - half);
    const int hi = std::min(n - 1, i + half);
    const double avg = (cum[hi + 1] - cum[lo]) / (hi - lo + 1);
    out[i] = p[i] / (avg + eps);
  }
  return out;
}

double interp_bin(const std::vector<double>& v, double x) {
  if (x <= 0.0) return v.front();
  const int n = static_cast<int>(v.size());
  if (x >= n - 1) return v.back();
  const int i = static_cast<int>(x);
  const double a = x - i;
  return v[i] + a * (v[i + 1] - v[i]);
}

}  // namespace

PitchTrack pitch_track(const Waveform& w, const dsp::FrameGrid& g) {
  PitchTrack track;
  track.period_ms.assign(g.n_frames, 0.0);
  track.voiced.assign(g.n_frames, 0);

  dsp::RealFft fft(kPitchFft);
  const std::vector<double> win =
      dsp::window_coefficients(dsp::WindowKind::Hann, kPitchSegment);
  const double bin_hz = static_cast<double>(w.sample_rate) / kPitchFft;

  // Log-spaced fundamental candidates.
  std::vector<double> candidates(kPitchCandidates);
  for (int i = 0; i < kPitchCandidates; ++i) {
    candidates[i] = kPitchMinHz * std::pow(kPitchMaxHz / kPitchMinHz,
                                           static_cast<double>(i) /
                                               (kPitchCandidates - 1));
  }

  std::vector<double> seg(kPitchSegment);
  const int n = static_cast<int>(w.samples.size());
  for (int k = 0; k < g.n_frames; ++k) {
    const int center = g.frame_start(k) + g.frame_length / 2;
    for (int i = 0; i < kPitchSegment; ++i) {
      const int idx = center - kPitchSegment / 2 + i;
      seg[i] = (idx >= 0 && idx < n) ? w.samples[idx] * win[i] : 0.0;
    }
    std::vector<double> psd = dsp::power_spectrum(seg, kPitchFft, fft);
    const std::vector<double> white = whiten(psd);

    // Harmonic summation with 1/h weights up to a fixed frequency limit:
    // the true fundamental accumulates every harmonic, integer multiples
    // lose the low-order weights, and the half-harmonic inhibition
    // penalizes octave-up candidates.
    double best_score = -std::numeric_limits<double>::infinity();
    double best_f0 = kPitchMinHz;
    double best_weight = 1.0;
    for (double f0 : candidates) {
      double score = 0.0, weight_sum = 0.0;
      for (int h = 1; h <= kPitchMaxHarmonics; ++h) {
        const double fh = h * f0;
        if (fh >= kPitchHarmonicLimitHz) break;
        const double w_h = 1.0 / h;
        score += w_h * (interp_bin(white, fh / bin_hz) -
                        0.5 * (interp_bin(white, (fh - 0.5 * f0) / bin_hz) +
                               interp_bin(white, (fh + 0.5 * f0) / bin_hz)));
        weight_sum += w_h;
      }
      if (weight_sum == 0.0) continue;
      if (score > best_score) {
        best_score = score;
        best_f0 = f0;
        best_weight = weight_sum;
      }
    }
    track.voiced[k] = best_score / best_weight > kVoicingThreshold ? 1 : 0;
    track.period_ms[k] = 1000.0 / best_f0;
  }

  // Hold the last voiced period across unvoiced frames; backfill the
  // leading unvoiced run with the first voiced value. All-unvoiced
  // utterances carry a fixed 10 ms placeholder.
  int first_voiced = -1;
  for (int k = 0; k < g.n_frames; ++k) {
    if (track.voiced[k]) {
      first_voiced = k;
      break;
    }
  }
  if (first_voiced < 0) {
    std::fill(track.period_ms.begin(), track.period_ms.end(), 10.0);
    return track;
  }
  for (int k = 0; k < first_voiced; ++k)
    track.period_ms[k] = track.period_ms[first_voiced];
  double held = track.period_ms[first_voiced];
  for (int k = first_voiced; k < g.n_frames; ++k) {
    if (track.voiced[k])
      held = track.period_ms[k];
    else
      track.period_ms[k] = held;
  }
  return track;
}

// ---- iSNR -----------------------------------------------------------------

namespace {

// SII one-third-octave band importance (ANSI S3.5), 18 bands; weights sum
// to 1.
constexpr int kSiiBands = 18;
constexpr std::array<double, kSiiBands> kSiiCenterHz = {
    160,  200,  250,  315,  400,  500,  630,  800,  1000,
    1250, 1600, 2000, 2500, 3150, 4000, 5000, 6300, 8000};
constexpr std::array<double, kSiiBands> kSiiImportance = {
    0.0083, 0.0095, 0.0150, 0.0289, 0.0440, 0.0578, 0.0653, 0.0711, 0.0818,
    0.0844, 0.0882, 0.0898, 0.0868, 0.0844, 0.0771, 0.0527, 0.0364, 0.0185};

constexpr double kIsnrSmoothing = 0.85;
constexpr int kIsnrMinWindowFrames = 150;  // 1.5 s of noise-floor memory
constexpr double kIsnrBiasComp = 1.5;
constexpr double kIsnrFloorDb = -20.0;
constexpr double kIsnrCeilDb = 40.0;

}  // namespace

std::vector<double> isnr_track(const Waveform& w, const dsp::FrameGrid& g) {
  FeatureConfig cfg;
  dsp::RealFft fft(cfg.n_fft);
  const std::vector<double> win =
      dsp::window_coefficients(g.window, g.frame_length);
  const double bin_hz = static_cast<double>(w.sample_rate) / cfg.n_fft;
  const int n_bins = cfg.n_fft / 2 + 1;

  // Bin ranges of the one-third-octave bands.
  std::vector<std::pair<int, int>> bands(kSiiBands);
  for (int b = 0; b < kSiiBands; ++b) {
    const double lo = kSiiCenterHz[b] / std::pow(2.0, 1.0 / 6.0);
    const double hi = kSiiCenterHz[b] * std::pow(2.0, 1.0 / 6.0);
    bands[b] = {std::max(1, static_cast<int>(std::ceil(lo / bin_hz))),
                std::min(n_bins - 1, static_cast<int>(hi / bin_hz))};
  }

  std::vector<double> frame(g.frame_length);
  std::vector<std::vector<double>> band_power(
      g.n_frames, std::vector<double>(kSiiBands, 0.0));
  for (int k = 0; k < g.n_frames; ++k) {
    dsp::extract_frame(w, g, k, frame);
    for (int i = 0; i < g.frame_length; ++i) frame[i] *= win[i];
    const std::vector<double> psd = dsp::power_spectrum(frame, cfg.n_fft, fft);
    for (int b = 0; b < kSiiBands; ++b) {
      double acc = 0.0;
      for (int bin = bands[b].first; bin <= bands[b].second; ++bin)
        acc += psd[bin];
      band_power[k][b] = acc;
    }
  }

  // Minimum-statistics floor: windowed minimum of the smoothed band power
  // with a fixed bias compensation. Early frames use the running minimum.
  std::vector<double> out(g.n_frames, 0.0);
  std::vector<std::vector<double>> smoothed(
      g.n_frames, std::vector<double>(kSiiBands, 0.0));
  for (int b = 0; b < kSiiBands; ++b) {
    double s = band_power[0][b];
    for (int k = 0; k < g.n_frames; ++k) {
      s = kIsnrSmoothing * s + (1.0 - kIsnrSmoothing) * band_power[k][b];
      smoothed[k][b] = s;
    }
  }
  // One dB value per frame: the ratio of importance-weighted band excess
  // power over importance-weighted floor power.
  for (int k = 0; k < g.n_frames; ++k) {
    const int lo = std::max(0, k - kIsnrMinWindowFrames + 1);
    double num = 0.0, den = 0.0;
    for (int b = 0; b < kSiiBands; ++b) {
      double mn = std::numeric_limits<double>::infinity();
      for (int j = lo; j <= k; ++j) mn = std::min(mn, smoothed[j][b]);
      const double floor_b = std::max(mn * kIsnrBiasComp, kTiny);
      num += kSiiImportance[b] * std::max(band_power[k][b] - floor_b, 0.0);
      den += kSiiImportance[b] * floor_b;
    }
    out[k] = std::clamp(10.0 * std::log10(std::max(num, kTiny) / den),
                        kIsnrFloorDb, kIsnrCeilDb);
  }
  return out;
}

// ---- Hilbert-envelope statistics -------------------------------------------

HilbertStats hilbert_stats(const Waveform& w, const dsp::FrameGrid& g) {
  const std::vector<double> env = dsp::hilbert_envelope(w.samples);
  HilbertStats stats;
  stats.env_variance.resize(g.n_frames);
  stats.dyn_range_db.resize(g.n_frames);
  for (int k = 0; k < g.n_frames; ++k) {
    const int start = g.frame_start(k);
    std::span<const double> seg(env.data() + start,
                                static_cast<std::size_t>(g.frame_length));
    stats.env_variance[k] = dsp::variance(seg);
    const double mx = *std::max_element(seg.begin(), seg.end());
    const double mn = *std::min_element(seg.begin(), seg.end());
    if (mx <= 0.0) {
      stats.dyn_range_db[k] = 0.0;
    } else {
      const double floor_v =
          std::max(mn, mx * std::numeric_limits<double>::epsilon());
      stats.dyn_range_db[k] = 20.0 * std::log10(mx / floor_v);
    }
  }
  return stats;
}

// ---- PLD ------------------------------------------------------------------

PldStats pld_from_power(std::span<const double> power_bins,
                        std::span<const double> ltass_bins,
                        std::span<const double> norm_freqs) {
  const std::size_t n = power_bins.size();
  std::vector<double> pld(n);
  for (std::size_t b = 0; b < n; ++b)
    pld[b] = std::log(power_bins[b] + kTiny) - std::log(ltass_bins[b]);
  const double mn = *std::min_element(pld.begin(), pld.end());
  constexpr double kShift = 1e-9;
  double sum_w = 0.0, sum_fw = 0.0, sum_log = 0.0;
  for (std::size_t b = 0; b < n; ++b) {
    const double s = pld[b] - mn + kShift;
    sum_w += s;
    sum_fw += norm_freqs[b] * s;
    sum_log += std::log(s);
  }
  PldStats st;
  st.centroid = sum_fw / sum_w;
  st.flatness = std::exp(sum_log / n) / (sum_w / n);
  return st;
}

PldTrack pld_track(const Waveform& w, const dsp::FrameGrid& g,
                   const FeatureConfig& cfg) {
  dsp::RealFft fft(cfg.n_fft);
  const std::vector<double> win =
      dsp::window_coefficients(g.window, g.frame_length);
  const double bin_hz = static_cast<double>(w.sample_rate) / cfg.n_fft;
  // Valid band 62.5 Hz .. 8 kHz.
  const int bin_lo = std::max(1, static_cast<int>(std::ceil(50.0 / bin_hz)));
  const int bin_hi = cfg.n_fft / 2;
  const int n_band = bin_hi - bin_lo + 1;
  std::vector<double> freqs(n_band), norm_freqs(n_band);
  for (int i = 0; i < n_band; ++i) {
    freqs[i] = (bin_lo + i) * bin_hz;
    norm_freqs[i] = freqs[i] / (0.5 * w.sample_rate);
  }
  const std::vector<double> ltass = ltass_at(freqs);

  PldTrack track;
  track.centroid.resize(g.n_frames);
  track.dynamics.resize(g.n_frames);
  track.flatness.resize(g.n_frames);

  std::vector<double> frame(g.frame_length);
  std::vector<double> prev_pld, cur_pld(n_band);
  for (int k = 0; k < g.n_frames; ++k) {
    dsp::extract_frame(w, g, k, frame);
    for (int i = 0; i < g.frame_length; ++i) frame[i] *= win[i];
    const std::vector<double> psd = dsp::power_spectrum(frame, cfg.n_fft, fft);
    for (int i = 0; i < n_band; ++i)
      cur_pld[i] = std::log(psd[bin_lo + i] + kTiny) - std::log(ltass[i]);

    const PldStats st = pld_from_power(
        std::span<const double>(psd.data() + bin_lo,
                                static_cast<std::size_t>(n_band)),
        ltass, norm_freqs);
    track.centroid[k] = st.centroid;
    track.flatness[k] = st.flatness;
    if (k == 0) {
      track.dynamics[k] = 0.0;
    } else {
      double acc = 0.0;
      for (int i = 0; i < n_band; ++i) {
        const double d = cur_pld[i] - prev_pld[i];
        acc += d * d;
      }
      track.dynamics[k] = acc / n_band;
    }
    prev_pld = cur_pld;
  }
  return track;
}

// ---- MFCC -----------------------------------------------------------------

std::vector<std::vector<double>> mfcc_track(const Waveform& w,
                                            const dsp::FrameGrid& g,
                                            const FeatureConfig& cfg) {
  dsp::RealFft fft(cfg.n_fft);
  const std::vector<double> win =
      dsp::window_coefficients(g.window, g.frame_length);
  const double bin_hz = static_cast<double>(w.sample_rate) / cfg.n_fft;
  const auto fb = mel_filterbank(cfg.n_mel_mfcc, cfg.n_fft / 2 + 1, bin_hz,
                                 0.0, 0.5 * w.sample_rate);
  const int M = cfg.n_mel_mfcc;
  // DCT-II basis for coefficients 1..n_mfcc (c0 excluded).
  std::vector<std::vector<double>> dct(cfg.n_mfcc, std::vector<double>(M));
  const double scale = std::sqrt(2.0 / M);
  for (int n = 1; n <= cfg.n_mfcc; ++n) {
    for (int m = 0; m < M; ++m)
      dct[n - 1][m] = scale * std::cos(M_PI * n * (m + 0.5) / M);
  }

  std::vector<std::vector<double>> out(g.n_frames,
                                       std::vector<double>(cfg.n_mfcc, 0.0));
  std::vector<double> frame(g.frame_length), log_e(M);
  for (int k = 0; k < g.n_frames; ++k) {
    dsp::extract_frame(w, g, k, frame);
    for (int i = 0; i < g.frame_length; ++i) frame[i] *= win[i];
    const std::vector<double> psd = dsp::power_spectrum(frame, cfg.n_fft, fft);
    for (int m = 0; m < M; ++m) {
      double acc = 0.0;
      const auto& row = fb[m];
      for (std::size_t b = 0; b < psd.size(); ++b) acc += row[b] * psd[b];
      log_e[m] = std::log(std::max(acc, kTiny));
    }
    for (int n = 0; n < cfg.n_mfcc; ++n) {
      double acc = 0.0;
      for (int m = 0; m < M; ++m) acc += dct[n][m] * log_e[m];
      out[k][n] = acc;
    }
  }
  return out;
}

// ---- modulation features ---------------------------------------------------

std::vector<std::vector<double>> modulation_track(const Waveform& w,
                                                  const dsp::FrameGrid& g,
                                                  const FeatureConfig& cfg) {
  dsp::RealFft fft(cfg.n_fft);
  const std::vector<double> win =
      dsp::window_coefficients(g.window, g.frame_length);
  const double bin_hz = static_cast<double>(w.sample_rate) / cfg.n_fft;
  const int B = cfg.n_mel_modulation;
  const auto fb = mel_filterbank(B, cfg.n_fft / 2 + 1, bin_hz, 50.0,
                                 0.5 * w.sample_rate);

  // Band amplitude envelopes sampled at the frame rate (100 Hz).
  std::vector<std::vector<double>> env(B,
                                       std::vector<double>(g.n_frames, 0.0));
  std::vector<double> frame(g.frame_length);
  for (int k = 0; k < g.n_frames; ++k) {
    dsp::extract_frame(w, g, k, frame);
    for (int i = 0; i < g.frame_length; ++i) frame[i] *= win[i];
    const std::vector<double> psd = dsp::power_spectrum(frame, cfg.n_fft, fft);
    for (int b = 0; b < B; ++b) {
      double acc = 0.0;
      const auto& row = fb[b];
      for (std::size_t bin = 0; bin < psd.size(); ++bin)
        acc += row[bin] * psd[bin];
      env[b][k] = std::sqrt(std::max(acc, 0.0));
    }
  }

  const int ctx = cfg.modulation_context_frames;  // odd
  const int half = ctx / 2;
  const std::vector<double> ham =
      dsp::window_coefficients(dsp::WindowKind::Hamming, ctx);
  const double frame_rate =
      static_cast<double>(w.sample_rate) / g.hop;  // 100 Hz
  constexpr int kModFft = 64;
  dsp::RealFft mod_fft(kModFft);
  const double mod_bin_hz = frame_rate / kModFft;
  // Moments over modulation bins in (0, 20] Hz; low modulation rates are
  // where reverberation shows.
  const int mod_lo = 1;
  const int mod_hi = std::min(kModFft / 2,
                              static_cast<int>(20.0 / mod_bin_hz));

  auto env_at = [&](int b, int t) {
    return env[b][std::clamp(t, 0, g.n_frames - 1)];
  };

  std::vector<std::vector<double>> out(g.n_frames, std::vector<double>(12, 0.0));
  std::vector<double> seg(ctx);
  for (int k = 0; k < g.n_frames; ++k) {
    // highest-energy acoustic band over the context window
    int b_star = 0;
    double best = -1.0;
    for (int b = 0; b < B; ++b) {
      double acc = 0.0;
      for (int j = -half; j <= half; ++j) {
        const double e = env_at(b, k + j);
        acc += e * e;
      }
      if (acc > best) {
        best = acc;
        b_star = b;
      }
    }
    // two nearest neighbors, from the available side at the edges
    std::array<int, 3> chosen;
    if (b_star == 0)
      chosen = {0, 1, 2};
    else if (b_star == B - 1)
      chosen = {B - 1, B - 3, B - 2};
    else
      chosen = {b_star, b_star - 1, b_star + 1};

    for (int c = 0; c < 3; ++c) {
      const int b = chosen[c];
      double m = 0.0;
      for (int j = -half; j <= half; ++j) m += env_at(b, k + j);
      m /= ctx;
      for (int j = -half; j <= half; ++j)
        seg[j + half] = (env_at(b, k + j) - m) * ham[j + half];
      std::vector<std::complex<double>> spec;
      mod_fft.forward(seg, spec);
      double total = 0.0, mean_f = 0.0;
      for (int bin = mod_lo; bin <= mod_hi; ++bin) total += std::norm(spec[bin]);
      double* dst = out[k].data() + 4 * c;
      if (total < 1e-16) {
        dst[0] = dst[1] = dst[2] = dst[3] = 0.0;
        continue;
      }
      for (int bin = mod_lo; bin <= mod_hi; ++bin)
        mean_f += std::norm(spec[bin]) / total * (bin * mod_bin_hz);
      double m2 = 0.0, m3 = 0.0, m4 = 0.0;
      for (int bin = mod_lo; bin <= mod_hi; ++bin) {
        const double p = std::norm(spec[bin]) / total;
        const double d = bin * mod_bin_hz - mean_f;
        m2 += p * d * d;
        m3 += p * d * d * d;
        m4 += p * d * d * d * d;
      }
      dst[0] = mean_f;
      dst[1] = m2;
      dst[2] = m3;
      dst[3] = m4;
    }
  }
  return out;
}

// ---- scattering -----------------------------------------------------------

std::vector<double> scattering_band_centers(int n_bands) {
  std::vector<double> centers(n_bands);
  const double f_lo = 150.0, f_hi = 7200.0;
  for (int i = 0; i < n_bands; ++i)
    centers[i] = f_lo * std::pow(f_hi / f_lo,
                                 static_cast<double>(i) / (n_bands - 1));
  return centers;
}

namespace {

// Analytic band envelope via a Gaussian frequency window: zero negative
// frequencies, weight positive ones, inverse transform, modulus.
std::vector<double> analytic_band_envelope(
    const std::vector<std::complex<double>>& spectrum, dsp::ComplexFft& fft,
    int fft_len, double bin_hz, double fc, double sigma_f, int out_len) {
  std::vector<std::complex<double>> shaped(fft_len,
                                           std::complex<double>(0.0, 0.0));
  const int half = fft_len / 2;
  for (int k = 0; k <= half; ++k) {
    const double f = k * bin_hz;
    const double d = (f - fc) / sigma_f;
    const double gain = std::exp(-0.5 * d * d) * (k == 0 || k == half ? 1.0 : 2.0);
    shaped[k] = spectrum[k] * gain;
  }
  std::vector<std::complex<double>> band;
  fft.inverse(shaped, band);
  std::vector<double> env(out_len);
  for (int i = 0; i < out_len; ++i) env[i] = std::abs(band[i]);
  return env;
}

}  // namespace

std::vector<std::vector<double>> scattering_track(const Waveform& w,
                                                  const dsp::FrameGrid& g,
                                                  const FeatureConfig& cfg) {
  const int n = static_cast<int>(w.samples.size());
  const int fft_len = dsp::next_pow2(n);
  const double bin_hz = static_cast<double>(w.sample_rate) / fft_len;
  const int n1 = cfg.n_scattering_bands;
  const int n2 = cfg.n_scattering_paths;
  constexpr double kLogFloor = 1e-12;

  dsp::RealFft rfft(fft_len);
  std::vector<std::complex<double>> spectrum_half;
  rfft.forward(w.samples, spectrum_half);
  std::vector<std::complex<double>> spectrum(fft_len,
                                             std::complex<double>(0.0, 0.0));
  for (int k = 0; k <= fft_len / 2; ++k) spectrum[k] = spectrum_half[k];
  dsp::ComplexFft cfft(fft_len);

  const std::vector<double> centers = scattering_band_centers(n1);
  const double ratio = centers[1] / centers[0];
  const double rel_bw = 0.5 * (ratio - 1.0);

  // Decimated envelope rate for the second order.
  constexpr int kDecim = 80;  // 200 Hz
  const int nd = std::max(1, n / kDecim);
  const double dec_rate = static_cast<double>(w.sample_rate) / kDecim;
  const int fft2_len = dsp::next_pow2(std::max(64, nd));
  const double bin2_hz = dec_rate / fft2_len;
  dsp::ComplexFft cfft2(fft2_len);

  std::vector<double> mod_centers(n2);
  for (int j = 0; j < n2; ++j)
    mod_centers[j] = 2.0 * std::pow(32.0, static_cast<double>(j) / (n2 - 1));

  std::vector<std::vector<double>> out(
      g.n_frames, std::vector<double>(n1 + n2, 0.0));
  std::vector<std::vector<double>> pooled(
      n2, std::vector<double>(g.n_frames, 0.0));

  std::vector<std::complex<double>> dec_spec(fft2_len);
  for (int i = 0; i < n1; ++i) {
    const double fc = centers[i];
    const std::vector<double> env = analytic_band_envelope(
        spectrum, cfft, fft_len, bin_hz, fc, rel_bw * fc, n);

    // first order: frame-averaged log envelope
    for (int k = 0; k < g.n_frames; ++k) {
      const int start = g.frame_start(k);
      double acc = 0.0;
      for (int s = 0; s < g.frame_length; ++s) acc += env[start + s];
      out[k][i] = std::log(acc / g.frame_length + kLogFloor);
    }

    // decimate by block means, then second-order band envelopes
    std::vector<std::complex<double>> dec(nd);
    for (int d = 0; d < nd; ++d) {
      double acc = 0.0;
      for (int s = 0; s < kDecim; ++s) acc += env[d * kDecim + s];
      dec[d] = acc / kDecim;
    }
    std::vector<std::complex<double>> dspec;
    cfft2.forward(dec, dspec);
    for (int j = 0; j < n2; ++j) {
      const double mc = mod_centers[j];
      const double sigma = 0.3 * mc;
      std::vector<std::complex<double>> shaped(
          fft2_len, std::complex<double>(0.0, 0.0));
      const int half2 = fft2_len / 2;
      for (int k = 0; k <= half2; ++k) {
        const double f = k * bin2_hz;
        const double d = (f - mc) / sigma;
        shaped[k] = dspec[k] * (std::exp(-0.5 * d * d) *
                                (k == 0 || k == half2 ? 1.0 : 2.0));
      }
      std::vector<std::complex<double>> band;
      cfft2.inverse(shaped, band);
      for (int k = 0; k < g.n_frames; ++k) {
        // decimated indices covered by frame k
        const int d0 = std::min(nd - 1, g.frame_start(k) / kDecim);
        const int d1 = std::min(nd - 1, (g.frame_start(k) + g.frame_length - 1) /
                                            kDecim);
        double acc = 0.0;
        for (int d = d0; d <= d1; ++d) acc += std::abs(band[d]);
        pooled[j][k] += acc / (d1 - d0 + 1);
      }
    }
  }
  for (int k = 0; k < g.n_frames; ++k) {
    for (int j = 0; j < n2; ++j)
      out[k][n1 + j] = std::log(pooled[j][k] / n1 + kLogFloor);
  }
  return out;
}

// ---- assembly ---------------------------------------------------------------

FeatureMatrix assemble_feature_matrix(const Waveform& w,
                                      const std::string& utterance_id,
                                      const FeatureConfig& cfg) {
  Waveform norm;
  try {
    norm = dsp::normalize_peak(w);
  } catch (const AllZeroSignal&) {
    throw TooFewSpeechFrames("silent utterance: " + utterance_id);
  }
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(norm);

  vad::SpeechMask mask;
  try {
    mask = vad::speech_frame_mask(norm, g);
  } catch (const NoActivity&) {
    throw TooFewSpeechFrames("no speech activity: " + utterance_id);
  }
  if (mask.n_active() < vad::kMinActiveFrames)
    throw TooFewSpeechFrames("only " + std::to_string(mask.n_active()) +
                             " active frames: " + utterance_id);

  const int T = g.n_frames;
  const std::vector<double> win =
      dsp::window_coefficients(g.window, g.frame_length);

  // Per-frame tracks over the full sequence (deltas need temporal context;
  // masking happens afterwards).
  std::vector<std::vector<double>> lsf(T);
  std::vector<bool> row_ok(T, true);
  std::vector<double> zcr_t(T), var_t(T);
  {
    std::vector<double> frame(g.frame_length), wframe(g.frame_length);
    for (int k = 0; k < T; ++k) {
      dsp::extract_frame(norm, g, k, frame);
      zcr_t[k] = zero_crossing_rate(frame);
      var_t[k] = frame_variance(frame);
      for (int i = 0; i < g.frame_length; ++i) wframe[i] = frame[i] * win[i];
      try {
        const dsp::LpcResult lpc = dsp::lpc_autocorrelation(wframe, cfg.lpc_order);
        lsf[k] = lsf_from_lpc(lpc.coeffs);
      } catch (const DegenerateFrame&) {
        lsf[k].assign(cfg.lpc_order, 0.0);
        row_ok[k] = false;
      }
    }
  }

  const PitchTrack pitch = pitch_track(norm, g);
  const std::vector<double> isnr = isnr_track(norm, g);
  const HilbertStats hilb = hilbert_stats(norm, g);
  const PldTrack pld = pld_track(norm, g, cfg);
  const auto mfcc = mfcc_track(norm, g, cfg);
  const auto mod = modulation_track(norm, g, cfg);
  const auto scat = scattering_track(norm, g, cfg);

  // Deltas on the full tracks.
  auto delta_of = [&](const std::vector<double>& v) {
    return dsp::delta(v, cfg.delta_span);
  };
  std::vector<std::vector<double>> lsf_cols(cfg.lpc_order,
                                            std::vector<double>(T));
  for (int c = 0; c < cfg.lpc_order; ++c)
    for (int k = 0; k < T; ++k) lsf_cols[c][k] = lsf[k][c];
  std::vector<std::vector<double>> d_lsf_cols(cfg.lpc_order);
  for (int c = 0; c < cfg.lpc_order; ++c) d_lsf_cols[c] = delta_of(lsf_cols[c]);

  const std::vector<double> d_zcr = delta_of(zcr_t);
  const std::vector<double> d_var = delta_of(var_t);
  const std::vector<double> d_pitch = delta_of(pitch.period_ms);
  const std::vector<double> d_isnr = delta_of(isnr);
  const std::vector<double> d_hvar = delta_of(hilb.env_variance);
  const std::vector<double> d_hdr = delta_of(hilb.dyn_range_db);
  const std::vector<double> d_cent = delta_of(pld.centroid);
  const std::vector<double> d_dyn = delta_of(pld.dynamics);
  const std::vector<double> d_flat = delta_of(pld.flatness);

  std::vector<std::vector<double>> mfcc_cols(cfg.n_mfcc, std::vector<double>(T));
  for (int c = 0; c < cfg.n_mfcc; ++c)
    for (int k = 0; k < T; ++k) mfcc_cols[c][k] = mfcc[k][c];
  std::vector<std::vector<double>> d_mfcc(cfg.n_mfcc), dd_mfcc(cfg.n_mfcc);
  for (int c = 0; c < cfg.n_mfcc; ++c) {
    d_mfcc[c] = delta_of(mfcc_cols[c]);
    dd_mfcc[c] = delta_of(d_mfcc[c]);
  }

  // Row selection: active frames whose extractors all succeeded.
  std::vector<int> rows;
  rows.reserve(T);
  for (int k = 0; k < T; ++k)
    if (mask.active[k] && row_ok[k]) rows.push_back(k);

  FeatureMatrix m;
  m.utterance_id = utterance_id;
  m.n_cols = kNumFeatures;
  auto build = [&](const std::vector<int>& selected) {
    m.n_rows = static_cast<int>(selected.size());
    m.values.assign(static_cast<std::size_t>(m.n_rows) * kNumFeatures, 0.0);
    m.frame_times.resize(m.n_rows);
    for (int r = 0; r < m.n_rows; ++r) {
      const int k = selected[r];
      m.frame_times[r] = g.frame_center_s(k, norm.sample_rate);
      double* row = m.values.data() + static_cast<std::size_t>(r) * kNumFeatures;
      int c = 0;
      for (int i = 0; i < 20; ++i) row[c++] = lsf_cols[i][k];
      for (int i = 0; i < 20; ++i) row[c++] = d_lsf_cols[i][k];
      row[c++] = zcr_t[k];
      row[c++] = d_zcr[k];
      row[c++] = var_t[k];
      row[c++] = d_var[k];
      row[c++] = pitch.period_ms[k];
      row[c++] = d_pitch[k];
      row[c++] = isnr[k];
      row[c++] = d_isnr[k];
      row[c++] = hilb.env_variance[k];
      row[c++] = hilb.dyn_range_db[k];
      row[c++] = d_hvar[k];
      row[c++] = d_hdr[k];
      row[c++] = pld.centroid[k];
      row[c++] = pld.dynamics[k];
      row[c++] = pld.flatness[k];
      row[c++] = d_cent[k];
      row[c++] = d_dyn[k];
      row[c++] = d_flat[k];
      for (int i = 0; i < 12; ++i) row[c++] = mfcc_cols[i][k];
      for (int i = 0; i < 12; ++i) row[c++] = d_mfcc[i][k];
      for (int i = 0; i < 12; ++i) row[c++] = dd_mfcc[i][k];
      for (int i = 0; i < 12; ++i) row[c++] = mod[k][i];
      for (int i = 0; i < 28; ++i) row[c++] = scat[k][i];
    }
  };
  build(rows);

  // Drop any row that still carries a non-finite value, then rebuild.
  std::vector<int> clean;
  clean.reserve(rows.size());
  for (int r = 0; r < m.n_rows; ++r) {
    bool ok = true;
    for (int c = 0; c < kNumFeatures; ++c) {
      if (!std::isfinite(m.at(r, c))) {
        ok = false;
        break;
      }
    }
    if (ok) clean.push_back(rows[r]);
  }
  if (static_cast<int>(clean.size()) < vad::kMinActiveFrames)
    throw TooFewSpeechFrames("fewer than " +
                             std::to_string(vad::kMinActiveFrames) +
                             " usable rows: " + utterance_id);
  if (clean.size() != rows.size()) build(clean);

  // Per-utterance mean/variance normalization of the 36 MFCC columns over
  // the retained rows.
  const int mfcc_first = 58;  // after 40 LSF + 2+2+2+2 + 4 + 6
  for (int c = mfcc_first; c < mfcc_first + 36; ++c) {
    double mu = 0.0;
    for (int r = 0; r < m.n_rows; ++r) mu += m.at(r, c);
    mu /= m.n_rows;
    double var = 0.0;
    for (int r = 0; r < m.n_rows; ++r) {
      const double d = m.at(r, c) - mu;
      var += d * d;
    }
    var /= m.n_rows;
    const double sd = std::sqrt(var);
    if (sd < 1e-12) {
      for (int r = 0; r < m.n_rows; ++r) m.at(r, c) = 0.0;
    } else {
      for (int r = 0; r < m.n_rows; ++r) m.at(r, c) = (m.at(r, c) - mu) / sd;
    }
  }
  return m;
}

// ---- cache files ------------------------------------------------------------

namespace {

constexpr char kFeatureMagic[4] = {'N', 'I', 'R', 'F'};
constexpr uint32_t kFeatureVersion = 1;

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
void put_string(std::ostream& out, const std::string& s) {
  put<uint32_t>(out, static_cast<uint32_t>(s.size()));
  out.write(s.data(), s.size());
}
std::string get_string(std::istream& in) {
  const uint32_t n = get<uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  return s;
}

}  // namespace

void write_feature_file(const std::string& path, const FeatureMatrix& m,
                        uint64_t config_hash, uint64_t seed) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature file: " + path);
  out.write(kFeatureMagic, 4);
  put<uint32_t>(out, kFeatureVersion);
  put_string(out, m.utterance_id);
  put<uint64_t>(out, static_cast<uint64_t>(m.n_rows));
  put<uint64_t>(out, static_cast<uint64_t>(m.n_cols));
  const auto& names = column_names();
  put<uint32_t>(out, static_cast<uint32_t>(names.size()));
  for (const auto& n : names) put_string(out, n);
  put<uint64_t>(out, config_hash);
  put<uint64_t>(out, seed);
  out.write(reinterpret_cast<const char*>(m.frame_times.data()),
            m.frame_times.size() * sizeof(double));
  out.write(reinterpret_cast<const char*>(m.values.data()),
            m.values.size() * sizeof(double));
  if (!out) throw DataError("write failed: " + path);
}

FeatureFile read_feature_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file: " + path);
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0)
    throw DataError("bad feature file magic: " + path);
  if (get<uint32_t>(in) != kFeatureVersion)
    throw DataError("unsupported feature file version: " + path);
  FeatureFile f;
  f.matrix.utterance_id = get_string(in);
  f.matrix.n_rows = static_cast<int>(get<uint64_t>(in));
  f.matrix.n_cols = static_cast<int>(get<uint64_t>(in));
  const uint32_t n_names = get<uint32_t>(in);
  for (uint32_t i = 0; i < n_names; ++i) get_string(in);
  f.config_hash = get<uint64_t>(in);
  f.seed = get<uint64_t>(in);
  f.matrix.frame_times.resize(f.matrix.n_rows);
  in.read(reinterpret_cast<char*>(f.matrix.frame_times.data()),
          f.matrix.frame_times.size() * sizeof(double));
  f.matrix.values.resize(static_cast<std::size_t>(f.matrix.n_rows) *
                         f.matrix.n_cols);
  in.read(reinterpret_cast<char*>(f.matrix.values.data()),
          f.matrix.values.size() * sizeof(double));
  if (!in) throw DataError("truncated feature file: " + path);
  return f;
}

void write_feature_csv(const std::string& path, const FeatureMatrix& m) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write feature csv: " + path);
  out << "utterance_id,frame_time_s";
  for (const auto& n : column_names()) out << ',' << n;
  out << '\n';
  out.precision(17);
  for (int r = 0; r < m.n_rows; ++r) {
    out << m.utterance_id << ',' << m.frame_times[r];
    for (int c = 0; c < m.n_cols; ++c) out << ',' << m.at(r, c);
    out << '\n';
  }
}

}  // namespace nira::features

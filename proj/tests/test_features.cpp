// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <numeric>
#include <random>

#include "nira/features.hpp"
#include "nira/speechgen.hpp"
#include "test_helpers.hpp"

using namespace nira;
using testutil::sine;

TEST_CASE("feature budget closes at 134") {
  CHECK(features::FeatureBudget::total() == 134);
  CHECK(features::column_names().size() == 134);
}

// ---- LSF -------------------------------------------------------------------

TEST_CASE("zero predictor gives uniformly spaced LSFs") {
  std::vector<double> lpc(20, 0.0);
  const std::vector<double> lsf = features::lsf_from_lpc(lpc);
  REQUIRE(lsf.size() == 20);
  for (int k = 1; k <= 20; ++k)
    CHECK(lsf[k - 1] == doctest::Approx(k * M_PI / 21.0).epsilon(1e-6));
}

TEST_CASE("LSFs of stable predictors are strictly ascending in (0, pi)") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> frame(320);
    for (auto& v : frame) v = gauss(rng);
    const dsp::LpcResult lpc = dsp::lpc_autocorrelation(frame, 20);
    const std::vector<double> lsf = features::lsf_from_lpc(lpc.coeffs);
    REQUIRE(lsf.size() == 20);
    CHECK(lsf.front() > 0.0);
    CHECK(lsf.back() < M_PI);
    for (int i = 1; i < 20; ++i) CHECK(lsf[i] > lsf[i - 1]);
  }
}

TEST_CASE("order-2 resonance angle is bracketed by its two LSFs") {
  // poles at 0.9 e^{+-i theta}, theta = acos(1.2 / 1.8)
  const std::vector<double> lpc = {-1.2, 0.81};
  const std::vector<double> lsf = features::lsf_from_lpc(lpc);
  REQUIRE(lsf.size() == 2);
  const double theta = std::acos(1.2 / 1.8);
  CHECK(theta == doctest::Approx(0.8411).epsilon(1e-3));
  CHECK(lsf[0] < theta);
  CHECK(lsf[1] > theta);
}

// ---- ZCR / variance ----------------------------------------------------------

TEST_CASE("zcr of an alternating frame is 1") {
  std::vector<double> frame(320);
  for (int i = 0; i < 320; ++i) frame[i] = i % 2 ? 1.0 : -1.0;
  CHECK(features::zero_crossing_rate(frame) == doctest::Approx(1.0));
}

TEST_CASE("zcr of a constant frame is 0") {
  std::vector<double> frame(320, 0.7);
  CHECK(features::zero_crossing_rate(frame) == doctest::Approx(0.0));
}

TEST_CASE("zcr of a sinusoid matches the crossing count") {
  const double f = 1000.0;
  const Waveform w = sine(f, 1.0, 0.02);  // one frame
  // crossing-count oracle
  int crossings = 0;
  for (std::size_t i = 1; i < w.samples.size(); ++i)
    crossings += (w.samples[i - 1] >= 0.0) != (w.samples[i] >= 0.0);
  const double rate = features::zero_crossing_rate(w.samples);
  CHECK(rate ==
        doctest::Approx(static_cast<double>(crossings) / 319.0).epsilon(1e-12));
  CHECK(std::abs(rate - 2.0 * f / 16000.0) <= 1.0 / 319.0 + 1e-12);
}

TEST_CASE("variance of a constant frame is zero") {
  std::vector<double> frame(320, 0.4);
  CHECK(features::frame_variance(frame) == doctest::Approx(0.0));
}

TEST_CASE("variance of an alternating frame is n/(n-1)") {
  const int n = 320;
  std::vector<double> frame(n);
  for (int i = 0; i < n; ++i) frame[i] = i % 2 ? 1.0 : -1.0;
  CHECK(features::frame_variance(frame) ==
        doctest::Approx(static_cast<double>(n) / (n - 1)).epsilon(1e-12));
}

TEST_CASE("variance of unit white noise lands in the chi-square band") {
  const Waveform w = testutil::white_noise(0.02, 8);  // 320 samples
  const double v = features::frame_variance(w.samples);
  CHECK(v > 0.7);
  CHECK(v < 1.3);
}

// ---- pitch --------------------------------------------------------------------

namespace {

Waveform pulse_train(double f0, double duration_s, double noise_sigma,
                     uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, noise_sigma);
  Waveform w;
  w.sample_rate = 16000;
  const int n = static_cast<int>(duration_s * 16000);
  w.samples.assign(n, 0.0);
  double phase = 0.0;
  for (int i = 0; i < n; ++i) {
    phase += f0 / 16000.0;
    if (phase >= 1.0) {
      phase -= 1.0;
      w.samples[i] = 1.0;
    }
    w.samples[i] += gauss(rng);
  }
  return w;
}

}  // namespace

TEST_CASE("pitch of a 100 Hz pulse train") {
  const Waveform w = pulse_train(100.0, 1.0, 0.02, 5);
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const features::PitchTrack track = features::pitch_track(w, g);
  int voiced = 0;
  double err_ok = 0;
  for (int k = 0; k < g.n_frames; ++k) {
    if (!track.voiced[k]) continue;
    ++voiced;
    if (std::abs(track.period_ms[k] - 10.0) / 10.0 < 0.05) ++err_ok;
  }
  CHECK(voiced > g.n_frames / 2);
  CHECK(err_ok >= 0.9 * voiced);
}

TEST_CASE("white noise is mostly unvoiced") {
  const Waveform w = testutil::white_noise(1.0, 21, 0.5);
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const features::PitchTrack track = features::pitch_track(w, g);
  int voiced = 0;
  for (auto v : track.voiced) voiced += v;
  CHECK(voiced < g.n_frames / 4);
}

TEST_CASE("pitch of a 200 Hz sawtooth") {
  Waveform w;
  w.sample_rate = 16000;
  const int n = 16000;
  w.samples.resize(n);
  for (int i = 0; i < n; ++i) {
    const double t = 200.0 * i / 16000.0;
    w.samples[i] = 2.0 * (t - std::floor(t)) - 1.0;
  }
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const features::PitchTrack track = features::pitch_track(w, g);
  int voiced = 0, close = 0;
  for (int k = 0; k < g.n_frames; ++k) {
    if (!track.voiced[k]) continue;
    ++voiced;
    if (std::abs(track.period_ms[k] - 5.0) / 5.0 < 0.05) ++close;
  }
  CHECK(voiced > g.n_frames / 2);
  CHECK(close >= 0.9 * voiced);
}

// ---- iSNR ----------------------------------------------------------------------

TEST_CASE("clean speech has large median iSNR") {
  const Waveform w = speechgen::synthetic_speech(3.0, 13);
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const vad::SpeechMask mask = vad::speech_frame_mask(w, g);
  const std::vector<double> isnr = features::isnr_track(w, g);
  std::vector<double> active;
  for (int k = 0; k < g.n_frames; ++k)
    if (mask.active[k]) active.push_back(isnr[k]);
  REQUIRE(!active.empty());
  std::sort(active.begin(), active.end());
  CHECK(active[active.size() / 2] >= 30.0);
}

TEST_CASE("0 dB mixture has median iSNR near zero") {
  const Waveform clean = speechgen::synthetic_speech(3.0, 14);
  Waveform noise = testutil::white_noise(3.0, 15);
  // mix at exactly 0 dB over the active speech region (the toolkit's SNR
  // convention)
  const dsp::FrameGrid cg = dsp::FrameGrid::for_waveform(clean);
  const vad::SpeechMask cmask = vad::speech_frame_mask(clean, cg);
  double ps = 0.0, pn = 0.0;
  const std::size_t n = std::min(clean.samples.size(), noise.samples.size());
  for (int k = 0; k < cg.n_frames; ++k) {
    if (!cmask.active[k]) continue;
    for (int i = 0; i < cg.frame_length; ++i) {
      const std::size_t idx = cg.frame_start(k) + i;
      if (idx >= n) break;
      ps += clean.samples[idx] * clean.samples[idx];
      pn += noise.samples[idx] * noise.samples[idx];
    }
  }
  const double scale = std::sqrt(ps / pn);
  Waveform mix;
  mix.sample_rate = 16000;
  mix.samples.resize(n);
  for (std::size_t i = 0; i < n; ++i)
    mix.samples[i] = clean.samples[i] + scale * noise.samples[i];

  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(mix);
  const vad::SpeechMask mask = vad::speech_frame_mask(mix, g);
  const std::vector<double> isnr = features::isnr_track(mix, g);
  std::vector<double> active;
  for (int k = 0; k < g.n_frames; ++k)
    if (mask.active[k]) active.push_back(isnr[k]);
  REQUIRE(!active.empty());
  std::sort(active.begin(), active.end());
  CHECK(std::abs(active[active.size() / 2]) <= 6.0);
}

TEST_CASE("stationary noise stays at low iSNR") {
  const Waveform w = testutil::white_noise(3.0, 16, 0.3);
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const std::vector<double> isnr = features::isnr_track(w, g);
  for (double v : isnr) CHECK(v <= 3.0);
}

// ---- Hilbert stats ---------------------------------------------------------------

TEST_CASE("constant tone has flat envelope statistics") {
  const Waveform w = sine(2000.0, 0.8, 1.0);
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const features::HilbertStats st = features::hilbert_stats(w, g);
  for (int k = 5; k < g.n_frames - 5; ++k) {
    CHECK(st.env_variance[k] < 1e-4);
    CHECK(st.dyn_range_db[k] < 0.5);
  }
}

TEST_CASE("AM tone dynamic range matches the modulation depth") {
  const int fs = 16000, n = fs;
  Waveform w;
  w.sample_rate = fs;
  w.samples.resize(n);
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    w.samples[i] = (1.0 + 0.5 * std::cos(2.0 * M_PI * 100.0 * t)) *
                   std::cos(2.0 * M_PI * 2000.0 * t);
  }
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const features::HilbertStats st = features::hilbert_stats(w, g);
  const double expected = 20.0 * std::log10(1.5 / 0.5);
  for (int k = 5; k < g.n_frames - 5; ++k)
    CHECK(st.dyn_range_db[k] == doctest::Approx(expected).epsilon(1.0 / expected));
}

// ---- PLD -------------------------------------------------------------------------

TEST_CASE("spectrum equal to the LTASS gives zero deviation statistics") {
  const int n_band = 200;
  std::vector<double> freqs(n_band), norm_freqs(n_band);
  for (int i = 0; i < n_band; ++i) {
    freqs[i] = 62.5 + i * (8000.0 - 62.5) / (n_band - 1);
    norm_freqs[i] = freqs[i] / 8000.0;
  }
  const std::vector<double> ltass = features::ltass_at(freqs);
  const features::PldStats st =
      features::pld_from_power(ltass, ltass, norm_freqs);
  CHECK(st.flatness == doctest::Approx(1.0).epsilon(1e-5));
  const double midpoint =
      std::accumulate(norm_freqs.begin(), norm_freqs.end(), 0.0) / n_band;
  CHECK(st.centroid == doctest::Approx(midpoint).epsilon(1e-5));
}

TEST_CASE("narrowband tone drives the PLD centroid and flatness") {
  const double tone_hz = 3000.0;
  const Waveform w = sine(tone_hz, 0.9, 1.0);
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const features::PldTrack track = features::pld_track(w, g);

  // exhaustive comparison across tones: centroid tracks the band
  const Waveform w_low = sine(500.0, 0.9, 1.0);
  const features::PldTrack track_low = features::pld_track(w_low, g);
  CHECK(track.centroid[10] > track_low.centroid[10]);
  CHECK(track.centroid[10] ==
        doctest::Approx(tone_hz / 8000.0).epsilon(0.25));

  // flatness of a tone is below the flatness of broadband noise
  const Waveform noise = testutil::white_noise(1.0, 44);
  const features::PldTrack track_noise = features::pld_track(noise, g);
  CHECK(track.flatness[10] < track_noise.flatness[10]);
}

TEST_CASE("identical consecutive frames contribute zero dynamics") {
  // 100 Hz sinusoid: the 160-sample hop spans one full period, so every
  // frame sees the same waveform
  const Waveform w = sine(100.0, 0.9, 1.0);
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const features::PldTrack track = features::pld_track(w, g);
  CHECK(track.dynamics[0] == 0.0);
  for (int k = 1; k < 10; ++k)
    CHECK(track.dynamics[k] == doctest::Approx(0.0).epsilon(1e-9));
}

// ---- MFCC -------------------------------------------------------------------------

TEST_CASE("spectral tilt shows in c1") {
  // low-passed noise (strong tilt) vs white noise (flat)
  Waveform lowpass = testutil::white_noise(1.0, 6);
  double state = 0.0;
  for (auto& x : lowpass.samples) {
    state = 0.95 * state + 0.05 * x;
    x = state * 20.0;
  }
  const Waveform white = testutil::white_noise(1.0, 7);
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(white);
  const auto mf_low = features::mfcc_track(lowpass, g);
  const auto mf_white = features::mfcc_track(white, g);
  double c1_low = 0.0, c1_white = 0.0;
  for (int k = 0; k < g.n_frames; ++k) {
    c1_low += mf_low[k][0];
    c1_white += mf_white[k][0];
  }
  CHECK(c1_low / g.n_frames > c1_white / g.n_frames);
}

TEST_CASE("gain moves only c0: c1..c12 are gain invariant") {
  const Waveform w = speechgen::synthetic_speech(1.0, 9);
  Waveform scaled = w;
  for (auto& x : scaled.samples) x *= 0.25;
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const auto a = features::mfcc_track(w, g);
  const auto b = features::mfcc_track(scaled, g);
  for (int k = 0; k < g.n_frames; ++k)
    for (int c = 0; c < 12; ++c)
      CHECK(a[k][c] == doctest::Approx(b[k][c]).epsilon(1e-9));
}

// ---- modulation ---------------------------------------------------------------------

TEST_CASE("AM tone concentrates the modulation spectrum at the mod rate") {
  const int fs = 16000, n = 3 * fs;
  Waveform w;
  w.sample_rate = fs;
  w.samples.resize(n);
  const double fm = 8.0, fc = 1000.0;
  for (int i = 0; i < n; ++i) {
    const double t = static_cast<double>(i) / fs;
    w.samples[i] = (1.0 + 0.8 * std::cos(2.0 * M_PI * fm * t)) *
                   std::cos(2.0 * M_PI * fc * t);
  }
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const auto mod = features::modulation_track(w, g);
  // interior frames: modulation mean of the highest-energy band near 8 Hz
  const double bin_hz = 100.0 / 64.0;
  int hits = 0, interior = 0;
  for (int k = 20; k < g.n_frames - 20; ++k) {
    ++interior;
    if (std::abs(mod[k][0] - fm) <= bin_hz) ++hits;
  }
  CHECK(hits >= interior * 9 / 10);
}

TEST_CASE("stationary tone has near-zero modulation moments") {
  const Waveform w = sine(1000.0, 0.9, 3.0);
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const auto mod = features::modulation_track(w, g);
  for (int k = 20; k < g.n_frames - 20; ++k) {
    CHECK(std::abs(mod[k][1]) < 10.0);  // m2 bounded by the low-mod band
    CHECK(mod[k][1] >= 0.0);
    CHECK(mod[k][3] >= 0.0);
  }
}

TEST_CASE("lowest acoustic band still yields 12 finite modulation values") {
  // carrier inside the first mel band: adjacency falls back to the two
  // next bands up
  const Waveform w = sine(80.0, 0.9, 2.0);
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const auto mod = features::modulation_track(w, g);
  for (int k = 0; k < g.n_frames; ++k) {
    REQUIRE(mod[k].size() == 12);
    for (double v : mod[k]) CHECK(std::isfinite(v));
  }
}

// ---- scattering ----------------------------------------------------------------------

TEST_CASE("zero signal sits at the scattering log floor") {
  Waveform w;
  w.sample_rate = 16000;
  w.samples.assign(16000, 0.0);
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const auto scat = features::scattering_track(w, g);
  const double floor_log = std::log(1e-12);
  for (int k = 0; k < g.n_frames; ++k)
    for (double v : scat[k])
      CHECK(v == doctest::Approx(floor_log).epsilon(1e-9));
}

TEST_CASE("gain shifts first-order log coefficients uniformly") {
  const Waveform w = speechgen::synthetic_speech(1.5, 31);
  Waveform scaled = w;
  for (auto& x : scaled.samples) x *= 2.0;
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const auto a = features::scattering_track(w, g);
  const auto b = features::scattering_track(scaled, g);
  const double expected = std::log(2.0);
  for (int k = 10; k < g.n_frames - 10; ++k) {
    for (int c = 0; c < 20; ++c) {
      // skip bands near the log floor where the additive guard bends the
      // homogeneity
      if (a[k][c] < std::log(1e-6)) continue;
      CHECK(b[k][c] - a[k][c] == doctest::Approx(expected).epsilon(1e-4));
    }
  }
}

TEST_CASE("a tone dominates exactly the band containing it") {
  const std::vector<double> centers = features::scattering_band_centers(20);
  for (int band : {2, 7, 13, 18}) {
    const Waveform w = sine(centers[band], 0.9, 1.0);
    const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
    const auto scat = features::scattering_track(w, g);
    const int k = g.n_frames / 2;
    int argmax = 0;
    for (int c = 1; c < 20; ++c)
      if (scat[k][c] > scat[k][argmax]) argmax = c;
    CHECK(argmax == band);
  }
}

// ---- assembly ---------------------------------------------------------------------------

TEST_CASE("assembled matrix has 134 finite columns on synthetic speech") {
  const Waveform w = speechgen::synthetic_speech(3.0, 71);
  const features::FeatureMatrix m =
      features::assemble_feature_matrix(w, "utt_a");
  CHECK(m.n_cols == 134);
  CHECK(m.n_rows >= vad::kMinActiveFrames);
  CHECK(m.n_rows <= 300);
  for (int r = 0; r < m.n_rows; ++r)
    for (int c = 0; c < m.n_cols; ++c) CHECK(std::isfinite(m.at(r, c)));

  // LSF ascending invariant on every row
  for (int r = 0; r < m.n_rows; ++r) {
    for (int c = 1; c < 20; ++c) CHECK(m.at(r, c) > m.at(r, c - 1));
    CHECK(m.at(r, 0) > 0.0);
    CHECK(m.at(r, 19) < M_PI);
  }

  // normalized MFCC columns: mean 0, population variance 1
  for (int c = 58; c < 94; ++c) {
    double mu = 0.0, var = 0.0;
    for (int r = 0; r < m.n_rows; ++r) mu += m.at(r, c);
    mu /= m.n_rows;
    for (int r = 0; r < m.n_rows; ++r) {
      const double d = m.at(r, c) - mu;
      var += d * d;
    }
    var /= m.n_rows;
    CHECK(std::abs(mu) < 1e-9);
    CHECK(std::abs(var - 1.0) < 1e-9);
  }
}

TEST_CASE("silence cannot be assembled") {
  Waveform w;
  w.samples.assign(16000, 0.0);
  CHECK_THROWS_AS(features::assemble_feature_matrix(w, "silent"),
                  TooFewSpeechFrames);
}

TEST_CASE("assembly is bit-identical on identical input") {
  const Waveform w = speechgen::synthetic_speech(2.0, 5);
  const features::FeatureMatrix a = features::assemble_feature_matrix(w, "u");
  const features::FeatureMatrix b = features::assemble_feature_matrix(w, "u");
  REQUIRE(a.values.size() == b.values.size());
  CHECK(a.values == b.values);
  CHECK(a.frame_times == b.frame_times);
}

TEST_CASE("gain robustness of the extractor groups") {
  // extractor-level contract (the assembly pipeline peak-normalizes
  // first, which cancels gain entirely): LSF and variance respond as
  // predicted, iSNR is a ratio and barely moves
  const Waveform w = speechgen::synthetic_speech(2.0, 55);
  Waveform loud = w;
  for (auto& x : loud.samples) x *= 2.0;  // +6 dB
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);

  std::vector<double> frame(g.frame_length), frame_loud(g.frame_length);
  const std::vector<double> win =
      dsp::window_coefficients(g.window, g.frame_length);
  for (int k = 10; k < 20; ++k) {
    dsp::extract_frame(w, g, k, frame);
    dsp::extract_frame(loud, g, k, frame_loud);
    CHECK(features::frame_variance(frame_loud) ==
          doctest::Approx(4.0 * features::frame_variance(frame)).epsilon(1e-12));
    std::vector<double> wf = frame, wfl = frame_loud;
    for (int i = 0; i < g.frame_length; ++i) {
      wf[i] *= win[i];
      wfl[i] *= win[i];
    }
    double e = 0.0;
    for (double v : wf) e += v * v;
    if (e <= 0.0) continue;
    const auto lpc_a = dsp::lpc_autocorrelation(wf, 20);
    const auto lpc_b = dsp::lpc_autocorrelation(wfl, 20);
    const auto lsf_a = features::lsf_from_lpc(lpc_a.coeffs);
    const auto lsf_b = features::lsf_from_lpc(lpc_b.coeffs);
    for (int i = 0; i < 20; ++i)
      CHECK(lsf_a[i] == doctest::Approx(lsf_b[i]).epsilon(1e-6));
  }

  const std::vector<double> isnr_a = features::isnr_track(w, g);
  const std::vector<double> isnr_b = features::isnr_track(loud, g);
  for (int k = 0; k < g.n_frames; ++k)
    CHECK(isnr_a[k] == doctest::Approx(isnr_b[k]).epsilon(1e-6));
}

TEST_CASE("feature file roundtrip preserves the matrix") {
  const Waveform w = speechgen::synthetic_speech(1.5, 90);
  const features::FeatureMatrix m =
      features::assemble_feature_matrix(w, "rt_utt");
  const std::string path = "/tmp/nira_test_features.feat";
  features::write_feature_file(path, m, 0xabcdef, 42);
  const features::FeatureFile f = features::read_feature_file(path);
  CHECK(f.config_hash == 0xabcdef);
  CHECK(f.seed == 42);
  CHECK(f.matrix.utterance_id == "rt_utt");
  CHECK(f.matrix.n_rows == m.n_rows);
  CHECK(f.matrix.values == m.values);
  CHECK(f.matrix.frame_times == m.frame_times);
  std::filesystem::remove(path);

  features::write_feature_csv("/tmp/nira_test_features.csv", m);
  CHECK(std::filesystem::file_size("/tmp/nira_test_features.csv") > 0);
  std::filesystem::remove("/tmp/nira_test_features.csv");
}

// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "nira/vad.hpp"
#include "test_helpers.hpp"

using namespace nira;
using testutil::sine;

TEST_CASE("active level of a full-scale sinusoid is the RMS level") {
  const Waveform w = sine(1000.0, 1.0, 1.0);
  const vad::ActiveLevel level = vad::active_level_p56(w);
  // RMS oracle on a stationary signal: 10*log10(1/2) = -3.01 dB.
  CHECK(level.active_level_db == doctest::Approx(-3.0103).epsilon(0.2 / 3.0));
  CHECK(level.activity_factor == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("digital silence yields no activity") {
  Waveform w;
  w.samples.assign(16000, 0.0);
  CHECK_THROWS_AS(vad::active_level_p56(w), NoActivity);
}

TEST_CASE("gated noise level and activity") {
  // 3 s bursts / 3 s gaps; hangover adds ~0.2 s per gap.
  const int fs = 16000;
  std::mt19937_64 rng(42);
  std::normal_distribution<double> gauss(0.0, 0.1);
  Waveform w;
  w.sample_rate = fs;
  w.samples.assign(12 * fs, 0.0);
  for (int burst = 0; burst < 2; ++burst) {
    const int start = burst * 6 * fs;
    for (int i = 0; i < 3 * fs; ++i) w.samples[start + i] = gauss(rng);
  }
  const double burst_level_db = 10.0 * std::log10(0.1 * 0.1);
  const vad::ActiveLevel level = vad::active_level_p56(w);
  CHECK(std::abs(level.active_level_db - burst_level_db) < 0.5);
  CHECK(level.activity_factor == doctest::Approx(0.5).epsilon(0.11));
}

TEST_CASE("active level is at least the long-term RMS level") {
  for (uint64_t seed : {1ull, 2ull, 3ull}) {
    Waveform w = testutil::white_noise(2.0, seed, 0.2);
    // punch some silence gaps
    for (int i = 8000; i < 12000; ++i) w.samples[i] = 0.0;
    for (int i = 20000; i < 26000; ++i) w.samples[i] = 0.0;
    const vad::ActiveLevel level = vad::active_level_p56(w);
    double sq = 0.0;
    for (double x : w.samples) sq += x * x;
    const double rms_db = 10.0 * std::log10(sq / w.samples.size());
    CHECK(level.active_level_db >= rms_db - 1e-9);
  }
}

TEST_CASE("stationary sinusoid keeps every frame active") {
  const Waveform w = sine(440.0, 0.7, 1.0);
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const vad::SpeechMask mask = vad::speech_frame_mask(w, g);
  CHECK(static_cast<int>(mask.active.size()) == g.n_frames);
  CHECK(mask.n_active() == g.n_frames);
  CHECK(mask.activity_factor == doctest::Approx(1.0));
}

TEST_CASE("mask follows a burst-then-silence signal") {
  const int fs = 16000;
  Waveform w;
  w.sample_rate = fs;
  w.samples.assign(2 * fs, 0.0);
  const Waveform burst = sine(300.0, 0.9, 1.0);
  std::copy(burst.samples.begin(), burst.samples.end(), w.samples.begin());
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const vad::SpeechMask mask = vad::speech_frame_mask(w, g);
  const int boundary_frame = (fs - g.frame_length) / g.hop + 1;
  for (int k = 0; k < g.n_frames; ++k) {
    if (k < boundary_frame - 1)
      CHECK(mask.active[k]);
    else if (k > boundary_frame + 1)
      CHECK_FALSE(mask.active[k]);
  }
}

TEST_CASE("silence propagates NoActivity through the mask") {
  Waveform w;
  w.samples.assign(16000, 0.0);
  const dsp::FrameGrid g{320, 160, 99, dsp::WindowKind::Hamming};
  CHECK_THROWS_AS(vad::speech_frame_mask(w, g), NoActivity);
}

TEST_CASE("gain shifts the level by 20 log10 g and keeps the mask") {
  // g = 2 makes the scaling exact in floating point.
  Waveform w = testutil::white_noise(1.5, 77, 0.05);
  for (int i = 6000; i < 11000; ++i) w.samples[i] = 0.0;
  Waveform scaled = w;
  for (auto& x : scaled.samples) x *= 2.0;

  const vad::ActiveLevel a = vad::active_level_p56(w);
  const vad::ActiveLevel b = vad::active_level_p56(scaled);
  CHECK(b.active_level_db - a.active_level_db ==
        doctest::Approx(20.0 * std::log10(2.0)).epsilon(1e-9));
  CHECK(a.activity_factor == doctest::Approx(b.activity_factor).epsilon(1e-12));

  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const vad::SpeechMask ma = vad::speech_frame_mask(w, g);
  const vad::SpeechMask mb = vad::speech_frame_mask(scaled, g);
  REQUIRE(ma.active.size() == mb.active.size());
  for (std::size_t k = 0; k < ma.active.size(); ++k)
    CHECK(ma.active[k] == mb.active[k]);
}

TEST_CASE("mask is deterministic") {
  const Waveform w = testutil::white_noise(1.0, 5, 0.3);
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(w);
  const vad::SpeechMask m1 = vad::speech_frame_mask(w, g);
  const vad::SpeechMask m2 = vad::speech_frame_mask(w, g);
  CHECK(m1.active == m2.active);
  CHECK(m1.active_level_db == m2.active_level_db);
}

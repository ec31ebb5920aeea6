// SPDX-License-Identifier: Apache-2.0

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <random>

#include "nira/dsp.hpp"
#include "nira/rir.hpp"
#include "nira/speechgen.hpp"
#include "nira/vad.hpp"
#include "test_helpers.hpp"

using namespace nira;

namespace {

// Noise-modulated exponential decay: amplitude rate alpha gives
// T60 = ln(1000)/alpha.
std::vector<double> exponential_rir(double t60, uint64_t seed,
                                    double duration_s = 0.0, int fs = 16000) {
  const double alpha = std::log(1000.0) / t60;
  if (duration_s <= 0.0) duration_s = 1.3 * t60;
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> h(static_cast<int>(duration_s * fs));
  for (std::size_t i = 0; i < h.size(); ++i) {
    const double t = static_cast<double>(i) / fs;
    h[i] = std::exp(-alpha * t) * gauss(rng);
  }
  return h;
}

rir::RoomSpec default_room() {
  rir::RoomSpec room;
  room.dimensions = {6.0, 4.5, 3.0};
  room.absorption.fill(0.3);
  room.source_pos = {1.5, 2.2, 1.5};
  room.mic_pos = {4.0, 2.8, 1.4};
  room.seed = 99;
  room.max_length_s = 1.0;
  return room;
}

}  // namespace

TEST_CASE("anechoic limit: full absorption leaves the direct impulse") {
  rir::RoomSpec room = default_room();
  room.absorption.fill(1.0);
  const rir::RirRecord rec = rir::simulate_rir(room);
  // all energy inside the direct fractional-delay spread
  double direct = 0.0, total = 0.0;
  const int half = rir::kSincTaps / 2 + 1;
  for (int i = 0; i < static_cast<int>(rec.rir.size()); ++i) {
    total += rec.rir[i] * rec.rir[i];
    if (std::abs(i - rec.direct_index) <= half) direct += rec.rir[i] * rec.rir[i];
  }
  CHECK(direct / total == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(rir::compute_drr_from_rir(rec.rir, rec.direct_index) ==
        std::numeric_limits<double>::infinity());
}

TEST_CASE("doubling the distance halves the direct amplitude") {
  rir::RoomSpec room = default_room();
  room.dimensions = {12.0, 9.0, 6.0};
  room.absorption.fill(1.0);  // isolate the direct path
  room.source_pos = {2.0, 4.0, 3.0};
  room.mic_pos = {3.0, 4.0, 3.0};  // 1 m
  const rir::RirRecord near = rir::simulate_rir(room);
  room.mic_pos = {4.0, 4.0, 3.0};  // 2 m
  const rir::RirRecord far = rir::simulate_rir(room);
  // amplitude via impulse energy: robust against the fractional-delay
  // placement of the peak sample
  auto energy = [](const std::vector<double>& h) {
    double acc = 0.0;
    for (double v : h) acc += v * v;
    return acc;
  };
  const double ratio = std::sqrt(energy(near.rir) / energy(far.rir));
  CHECK(ratio == doctest::Approx(2.0).epsilon(0.02));
}

TEST_CASE("fixed seed reproduces the RIR bit for bit") {
  const rir::RoomSpec room = default_room();
  const rir::RirRecord a = rir::simulate_rir(room);
  const rir::RirRecord b = rir::simulate_rir(room);
  REQUIRE(a.rir.size() == b.rir.size());
  for (std::size_t i = 0; i < a.rir.size(); ++i) CHECK(a.rir[i] == b.rir[i]);
}

TEST_CASE("invalid geometry is rejected") {
  rir::RoomSpec room = default_room();
  room.mic_pos[0] = 99.0;
  CHECK_THROWS_AS(rir::simulate_rir(room), InvalidGeometry);
  room = default_room();
  room.absorption[2] = 0.0;
  CHECK_THROWS_AS(rir::simulate_rir(room), InvalidGeometry);
  room = default_room();
  room.absorption[0] = 1.2;
  CHECK_THROWS_AS(rir::simulate_rir(room), InvalidGeometry);
}

TEST_CASE("EDC of a single impulse drops to the floor") {
  std::vector<double> h(100, 0.0);
  h[10] = 1.0;
  const std::vector<double> edc = rir::schroeder_edc(h);
  CHECK(edc[0] == doctest::Approx(0.0));
  CHECK(edc[10] == doctest::Approx(0.0));
  CHECK(edc[11] == doctest::Approx(-150.0));
}

TEST_CASE("EDC slope of an exponential decay matches the closed form") {
  const double t60 = 0.5;
  const double alpha = std::log(1000.0) / t60;
  const std::vector<double> h = exponential_rir(t60, 5);
  const std::vector<double> edc = rir::schroeder_edc(h);
  // expected slope: -20*alpha*log10(e) dB/s
  const double expected_slope = -20.0 * alpha * std::log10(std::exp(1.0));
  const int i0 = 1600, i1 = 4800;  // 0.1 .. 0.3 s
  const double slope = (edc[i1] - edc[i0]) / ((i1 - i0) / 16000.0);
  CHECK(slope == doctest::Approx(expected_slope).epsilon(0.05));
}

TEST_CASE("EDC is nonincreasing on random RIRs") {
  std::mt19937_64 rng(31);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> t60_dist(0.2, 1.0);
  for (int trial = 0; trial < 100; ++trial) {
    const std::vector<double> h = exponential_rir(t60_dist(rng), rng());
    const std::vector<double> edc = rir::schroeder_edc(h);
    for (std::size_t i = 1; i < edc.size(); ++i)
      CHECK(edc[i] <= edc[i - 1] + 1e-12);
  }
}

TEST_CASE("T30 estimate recovers the constructed decay rate") {
  for (double t60 : {0.2, 0.5, 0.9, 1.4}) {
    const std::vector<double> h = exponential_rir(t60, 17);
    const double est = rir::estimate_t60_from_rir(h);
    CHECK(est == doctest::Approx(t60).epsilon(0.05));
  }
}

TEST_CASE("truncated decay range is reported") {
  // only ~20 dB of decay available
  const double t60 = 1.0;
  const std::vector<double> h = exponential_rir(t60, 3, 0.3);
  CHECK_THROWS_AS(rir::estimate_t60_from_rir(h), DecayRangeUnreachable);
}

TEST_CASE("time-stretching doubles the T60 estimate") {
  const double t60 = 0.4;
  const std::vector<double> h = exponential_rir(t60, 8);
  std::vector<double> stretched(h.size() * 2);
  for (std::size_t i = 0; i < h.size(); ++i) {
    stretched[2 * i] = h[i];
    stretched[2 * i + 1] =
        i + 1 < h.size() ? 0.5 * (h[i] + h[i + 1]) : h[i];
  }
  const double a = rir::estimate_t60_from_rir(h);
  const double b = rir::estimate_t60_from_rir(stretched);
  CHECK(b / a == doctest::Approx(2.0).epsilon(0.05));
}

TEST_CASE("DRR worked examples") {
  const int fs = 16000;
  std::vector<double> h(fs / 4, 0.0);
  const int direct = 100;
  h[direct] = 1.0;
  // tail of total energy 0.1 outside the 2.5 ms window
  const int tail_start = direct + static_cast<int>(0.0025 * fs) + 10;
  const int tail_len = 1000;
  for (int i = 0; i < tail_len; ++i)
    h[tail_start + i] = std::sqrt(0.1 / tail_len);
  CHECK(rir::compute_drr_from_rir(h, direct) ==
        doctest::Approx(10.0).epsilon(1e-9));

  // equal direct and tail energy -> 0 dB
  for (int i = 0; i < tail_len; ++i)
    h[tail_start + i] = std::sqrt(1.0 / tail_len);
  CHECK(rir::compute_drr_from_rir(h, direct) ==
        doctest::Approx(0.0).epsilon(1e-9));

  // zero tail -> +inf sentinel
  std::fill(h.begin(), h.end(), 0.0);
  h[direct] = 0.5;
  CHECK(rir::compute_drr_from_rir(h, direct) ==
        std::numeric_limits<double>::infinity());
}

TEST_CASE("absorption sweep strictly decreases T60") {
  double prev = std::numeric_limits<double>::infinity();
  for (double a : {0.1, 0.2, 0.35, 0.55, 0.8}) {
    rir::RoomSpec room = default_room();
    room.absorption.fill(a);
    room.max_length_s = 2.0;
    rir::RirRecord rec = rir::simulate_rir(room);
    const double t60 = rir::estimate_t60_from_rir(rec.rir);
    CHECK(t60 < prev);
    prev = t60;
  }
}

TEST_CASE("distance sweep strictly decreases DRR") {
  double prev = std::numeric_limits<double>::infinity();
  for (double d : {0.4, 0.8, 1.6, 3.2}) {
    rir::RoomSpec room = default_room();
    room.dimensions = {8.0, 6.0, 3.2};
    room.source_pos = {2.0, 3.0, 1.6};
    room.mic_pos = {2.0 + d, 3.0, 1.6};
    rir::RirRecord rec = rir::simulate_rir(room);
    const double drr = rir::compute_drr_from_rir(rec.rir, rec.direct_index);
    CHECK(drr < prev);
    prev = drr;
  }
}

TEST_CASE("T60 is distance independent within 15 percent") {
  std::vector<double> estimates;
  for (double d : {0.5, 1.0, 1.5, 2.5, 3.5}) {
    rir::RoomSpec room = default_room();
    room.dimensions = {8.0, 6.0, 3.2};
    room.source_pos = {1.5, 3.0, 1.6};
    room.mic_pos = {1.5 + d, 3.0, 1.6};
    room.max_length_s = 1.5;
    rir::RirRecord rec = rir::simulate_rir(room);
    estimates.push_back(rir::estimate_t60_from_rir(rec.rir));
  }
  const double mean =
      std::accumulate(estimates.begin(), estimates.end(), 0.0) /
      estimates.size();
  for (double e : estimates)
    CHECK(std::abs(e - mean) / mean < 0.15);
}

TEST_CASE("synth_utterance without noise is the normalized convolution") {
  const Waveform clean = speechgen::synthetic_speech(1.0, 7);
  const std::vector<double> h = exponential_rir(0.3, 2);
  Waveform silence;
  silence.samples.assign(1, 0.0);
  const Waveform out = rir::synth_utterance(
      clean, h, silence, std::numeric_limits<double>::infinity());
  const std::vector<double> conv = dsp::convolve(clean.samples, h);
  const double peak = testutil::max_abs(conv);
  REQUIRE(out.samples.size() == conv.size());
  for (std::size_t i = 0; i < conv.size(); i += 37)
    CHECK(out.samples[i] == doctest::Approx(conv[i] / peak).epsilon(1e-9));
}

TEST_CASE("snr 0 dB gives unit reverb-to-noise power ratio") {
  const Waveform clean = speechgen::synthetic_speech(1.5, 21);
  const std::vector<double> h = exponential_rir(0.4, 5);
  const Waveform noise = speechgen::fan_noise(2.2, 9);
  const Waveform out = rir::synth_utterance(clean, h, noise, 0.0);

  // Oracle: the output is a * reverb + b * noise for some (a, b); solve
  // the 2x2 least-squares system, then measure the component power ratio
  // over the active speech region of the reverberant part.
  const std::vector<double> reverb = dsp::convolve(clean.samples, h);
  REQUIRE(out.samples.size() == reverb.size());
  double rr = 0.0, nn = 0.0, rn = 0.0, ro = 0.0, no = 0.0;
  for (std::size_t i = 0; i < reverb.size(); ++i) {
    rr += reverb[i] * reverb[i];
    nn += noise.samples[i] * noise.samples[i];
    rn += reverb[i] * noise.samples[i];
    ro += reverb[i] * out.samples[i];
    no += noise.samples[i] * out.samples[i];
  }
  const double det = rr * nn - rn * rn;
  REQUIRE(std::abs(det) > 1e-12);
  const double a = (ro * nn - no * rn) / det;
  const double b = (rr * no - rn * ro) / det;

  Waveform rw;
  rw.samples = reverb;
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(rw);
  const vad::SpeechMask mask = vad::speech_frame_mask(rw, g);
  double p_sig = 0.0, p_noise = 0.0;
  for (int k = 0; k < g.n_frames; ++k) {
    if (!mask.active[k]) continue;
    for (int i = 0; i < g.frame_length; ++i) {
      const int idx = g.frame_start(k) + i;
      const double rs = a * reverb[idx];
      const double ns = b * noise.samples[idx];
      p_sig += rs * rs;
      p_noise += ns * ns;
    }
  }
  CHECK(10.0 * std::log10(p_sig / p_noise) ==
        doctest::Approx(0.0).epsilon(0.1));
}

TEST_CASE("identity RIR mixes clean plus noise") {
  const Waveform clean = speechgen::synthetic_speech(1.0, 33);
  std::vector<double> delta_rir = {1.0};
  const Waveform noise = speechgen::fan_noise(1.2, 4);
  const Waveform out = rir::synth_utterance(clean, delta_rir, noise, 10.0);
  CHECK(out.samples.size() == clean.samples.size());
  double peak = testutil::max_abs(out.samples);
  CHECK(peak == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("noise shorter than the utterance is rejected") {
  const Waveform clean = speechgen::synthetic_speech(1.0, 3);
  const std::vector<double> h = exponential_rir(0.3, 2);
  Waveform noise;
  noise.samples.assign(1000, 0.01);
  CHECK_THROWS_AS(rir::synth_utterance(clean, h, noise, 10.0), NoiseTooShort);
}

TEST_CASE("rir metadata roundtrip") {
  rir::RoomSpec room = default_room();
  rir::RirRecord rec = rir::simulate_rir(room);
  rir::label_record(rec);
  const std::string path = "/tmp/nira_test_rir.meta";
  rir::write_rir_metadata(path, rec);
  const rir::RirRecord back = rir::read_rir_metadata(path);
  CHECK(back.t60_s == doctest::Approx(rec.t60_s).epsilon(1e-12));
  CHECK(back.drr_db == doctest::Approx(rec.drr_db).epsilon(1e-12));
  CHECK(back.direct_index == rec.direct_index);
  CHECK(back.room.seed == rec.room.seed);
  std::filesystem::remove(path);
}

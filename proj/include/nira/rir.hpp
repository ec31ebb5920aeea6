// SPDX-License-Identifier: Apache-2.0
//
// Room impulse response simulation with the randomized image method,
// ground-truth T60/DRR extraction, and reverberant utterance synthesis.

#ifndef NIRA_RIR_HPP
#define NIRA_RIR_HPP

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nira/types.hpp"

namespace nira::rir {

constexpr double kSpeedOfSound = 343.0;  // m/s
constexpr double kDirectWindowS = 0.0025;  // DRR direct window half-width
constexpr int kSincTaps = 81;              // fractional-delay interpolation

struct RoomSpec {
  std::array<double, 3> dimensions{5.0, 4.0, 3.0};  // meters
  // Energy absorption per surface: x=0, x=L, y=0, y=L, z=0, z=L.
  std::array<double, 6> absorption{0.3, 0.3, 0.3, 0.3, 0.3, 0.3};
  std::array<double, 3> source_pos{1.0, 1.0, 1.5};
  std::array<double, 3> mic_pos{3.0, 2.0, 1.5};
  int max_order = -1;       // -1: derived from the RIR length
  double jitter_m = 0.1;    // randomized-image displacement scale
  uint64_t seed = 0;
  double max_length_s = 2.0;
  int sample_rate = kCanonicalRate;
};

struct RirRecord {
  std::vector<double> rir;
  int sample_rate = kCanonicalRate;
  double t60_s = 0.0;
  double drr_db = 0.0;
  int direct_index = 0;
  RoomSpec room;
};

// Image-source simulation; image positions other than the direct path are
// perturbed by seeded uniform jitter to suppress sweeping echoes.
// Deterministic for a fixed RoomSpec. Labels are left unset; fill them
// with the two oracles below. Throws InvalidGeometry for positions on or
// outside the walls or absorption outside (0, 1].
RirRecord simulate_rir(const RoomSpec& room);

// Backward-integrated energy decay curve in dB: EDC(t) =
// 10*log10(sum_{tau>=t} h^2 / sum h^2), clamped at -150 dB.
std::vector<double> schroeder_edc(std::span<const double> rir);

// T30 method: linear fit of the EDC over [-5, -35] dB extrapolated to
// -60 dB. Throws DecayRangeUnreachable when the EDC never reaches -35 dB.
double estimate_t60_from_rir(std::span<const double> rir,
                             int sample_rate = kCanonicalRate);

// 10*log10 of direct-window energy (direct_index +- 2.5 ms) over the
// remaining energy. Returns +inf when the tail is empty.
double compute_drr_from_rir(std::span<const double> rir, int direct_index,
                            int sample_rate = kCanonicalRate);

// Fills t60_s / drr_db on a simulated record.
void label_record(RirRecord& rec);

// reverberant = clean (*) rir; noise scaled for the requested SNR measured
// over the active speech region of the reverberant signal; sum is peak
// normalized. snr_db = +inf mixes no noise. Throws NoiseTooShort when the
// noise does not cover the convolved length (no looping).
Waveform synth_utterance(const Waveform& clean, std::span<const double> rir,
                         const Waveform& noise, double snr_db);

// Sidecar metadata (text, key=value) next to a float32 RIR wav.
void write_rir_metadata(const std::string& path, const RirRecord& rec);
RirRecord read_rir_metadata(const std::string& path);

}  // namespace nira::rir

#endif  // NIRA_RIR_HPP

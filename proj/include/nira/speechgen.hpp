// SPDX-License-Identifier: Apache-2.0
//
// Seeded synthetic speech-like signals and noise beds for desk-scale
// corpora: voiced pulse trains through drifting formant resonators,
// unvoiced fricative bursts, pauses, and babble/fan noise proxies.

#ifndef NIRA_SPEECHGEN_HPP
#define NIRA_SPEECHGEN_HPP

#include <cstdint>
#include <string>

#include "nira/types.hpp"

namespace nira::speechgen {

// Speech-like utterance with voiced/unvoiced segments and pauses,
// peak-normalized. Deterministic per seed.
Waveform synthetic_speech(double duration_s, uint64_t seed,
                          int sample_rate = kCanonicalRate);

// Babble proxy: superposition of several synthetic talkers.
Waveform babble_noise(double duration_s, uint64_t seed,
                      int sample_rate = kCanonicalRate);

// Fan proxy: stationary low-frequency-weighted noise.
Waveform fan_noise(double duration_s, uint64_t seed,
                   int sample_rate = kCanonicalRate);

// "babble" or "fan".
Waveform noise_by_name(const std::string& name, double duration_s,
                       uint64_t seed, int sample_rate = kCanonicalRate);

}  // namespace nira::speechgen

#endif  // NIRA_SPEECHGEN_HPP

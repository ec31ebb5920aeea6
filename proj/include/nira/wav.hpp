// SPDX-License-Identifier: Apache-2.0
//
// Minimal RIFF/WAVE I/O. Speech ingestion is 16-bit PCM mono at 16 kHz;
// impulse responses are stored as 32-bit float mono WAV.

#ifndef NIRA_WAV_HPP
#define NIRA_WAV_HPP

#include <string>

#include "nira/types.hpp"

namespace nira::wav {

// Reads a mono WAV file. PCM16 samples are scaled to [-1, 1); float32 data
// is passed through. Throws DataError on malformed files or unsupported
// layouts, and rejects sample rates other than 16 kHz when
// require_canonical_rate is set (no resampler in this toolkit).
Waveform read(const std::string& path, bool require_canonical_rate = true);

void write_pcm16(const std::string& path, const Waveform& w);
void write_float32(const std::string& path, const Waveform& w);

}  // namespace nira::wav

#endif  // NIRA_WAV_HPP

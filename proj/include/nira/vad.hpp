// SPDX-License-Identifier: Apache-2.0
//
// Active-speech-level measurement per ITU-T P.56 (method B style: cascaded
// envelope smoothing, threshold activity counts with hangover, 15.9 dB
// margin) and the per-frame speech mask used to drop non-speech frames.

#ifndef NIRA_VAD_HPP
#define NIRA_VAD_HPP

#include <vector>

#include "nira/dsp.hpp"
#include "nira/types.hpp"

namespace nira::vad {

// Margin between active level and the decision threshold, both for the
// P.56 level search and for the per-frame decision.
constexpr double kMarginDb = 15.9;
// Envelope smoothing time constant and hangover, P.56 method B.
constexpr double kSmoothingTimeS = 0.03;
constexpr double kHangoverS = 0.2;
// Utterances with fewer active frames than this are skipped.
constexpr int kMinActiveFrames = 10;

struct ActiveLevel {
  double active_level_db = 0.0;  // dB relative to full scale (|x| = 1)
  double activity_factor = 0.0;  // fraction of samples classified active
};

// Throws NoActivity on digital silence or when no threshold yields
// activity. For a stationary full-activity signal the result matches the
// long-term RMS level within a fraction of a dB.
ActiveLevel active_level_p56(const Waveform& w);

struct SpeechMask {
  std::vector<bool> active;       // one flag per frame
  double active_level_db = 0.0;   // P.56 level of the utterance
  double activity_factor = 0.0;   // active frames / n_frames

  int n_active() const {
    int n = 0;
    for (bool b : active) n += b;
    return n;
  }
};

// Frame is active iff its RMS level is within kMarginDb of the P.56
// active level. Propagates NoActivity.
SpeechMask speech_frame_mask(const Waveform& w, const dsp::FrameGrid& g);

}  // namespace nira::vad

#endif  // NIRA_VAD_HPP

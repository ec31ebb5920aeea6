// SPDX-License-Identifier: Apache-2.0
//
// Per-frame feature extraction: the 134-dimensional vector assembled from
// LSF, ZCR, variance, pitch, iSNR, Hilbert-envelope statistics, PLD,
// MFCC, modulation-domain and scattering features, restricted to active
// speech frames.

#ifndef NIRA_FEATURES_HPP
#define NIRA_FEATURES_HPP

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "nira/dsp.hpp"
#include "nira/types.hpp"
#include "nira/vad.hpp"

namespace nira::features {

constexpr int kNumFeatures = 134;

// Per-group column counts. The groups and the 134 total are fixed; the
// split below is the documented reconstruction that closes the budget:
// 40 + 2 + 2 + 2 + 2 + 4 + 6 + 36 + 12 + 28 = 134.
struct FeatureBudget {
  static constexpr int kLsf = 20;
  static constexpr int kLsfDelta = 20;
  static constexpr int kZcr = 2;        // value + delta
  static constexpr int kVariance = 2;   // value + delta
  static constexpr int kPitch = 2;      // period + delta
  static constexpr int kIsnr = 2;       // value + delta
  static constexpr int kHilbert = 4;    // variance, dyn range + deltas
  static constexpr int kPld = 6;        // centroid, dynamics, flatness + deltas
  static constexpr int kMfcc = 36;      // 12 + 12 delta + 12 delta-delta
  static constexpr int kModulation = 12;  // 3 bands x 4 moments
  static constexpr int kScattering = 28;  // 20 first-order + 8 pooled paths

  static constexpr int total() {
    return kLsf + kLsfDelta + kZcr + kVariance + kPitch + kIsnr + kHilbert +
           kPld + kMfcc + kModulation + kScattering;
  }
};
static_assert(FeatureBudget::total() == kNumFeatures);

const std::vector<std::string>& column_names();

struct FeatureConfig {
  int lpc_order = 20;
  int n_fft = 512;           // frame spectra (320-sample frames)
  int n_mel_mfcc = 26;
  int n_mfcc = 12;
  int delta_span = 2;
  int n_mel_modulation = 23;
  int modulation_context_frames = 25;  // ~256 ms of signal at the 10 ms hop
  int n_scattering_bands = 20;
  int n_scattering_paths = 8;

  // Stable key for the feature cache.
  uint64_t hash() const;
};

struct FeatureMatrix {
  std::string utterance_id;
  int n_rows = 0;
  int n_cols = kNumFeatures;
  std::vector<double> values;       // row-major n_rows x n_cols
  std::vector<double> frame_times;  // frame-center seconds, per row

  double at(int r, int c) const { return values[r * n_cols + c]; }
  double& at(int r, int c) { return values[r * n_cols + c]; }
};

// Full pipeline for one utterance: peak normalization, P.56 mask, all
// extractors on the complete frame sequence, deltas, row selection, MFCC
// per-utterance normalization. Throws TooFewSpeechFrames when fewer than
// vad::kMinActiveFrames usable rows remain (silence included).
FeatureMatrix assemble_feature_matrix(const Waveform& w,
                                      const std::string& utterance_id,
                                      const FeatureConfig& cfg = {});

// --- individual extractors (public so tests can probe them directly) ----

// Maps prediction coefficients (A(z) = 1 + sum a_k z^-k) to line spectral
// frequencies in (0, pi), strictly ascending. Throws DegenerateFrame if
// the expected root count cannot be isolated.
std::vector<double> lsf_from_lpc(std::span<const double> lpc);

double zero_crossing_rate(std::span<const double> frame);
double frame_variance(std::span<const double> frame);

struct PitchTrack {
  std::vector<double> period_ms;  // held over unvoiced frames
  std::vector<uint8_t> voiced;
};
PitchTrack pitch_track(const Waveform& w, const dsp::FrameGrid& g);

std::vector<double> isnr_track(const Waveform& w, const dsp::FrameGrid& g);

struct HilbertStats {
  std::vector<double> env_variance;
  std::vector<double> dyn_range_db;
};
HilbertStats hilbert_stats(const Waveform& w, const dsp::FrameGrid& g);

struct PldStats {
  double centroid = 0.0;
  double flatness = 0.0;
};
// Deviation statistics of one frame's power spectrum against the LTASS
// template resampled to the same bins (valid band only).
PldStats pld_from_power(std::span<const double> power_bins,
                        std::span<const double> ltass_bins,
                        std::span<const double> norm_freqs);

struct PldTrack {
  std::vector<double> centroid;
  std::vector<double> dynamics;
  std::vector<double> flatness;
};
PldTrack pld_track(const Waveform& w, const dsp::FrameGrid& g,
                   const FeatureConfig& cfg = {});

// Raw (un-normalized) cepstra, n_frames x n_mfcc.
std::vector<std::vector<double>> mfcc_track(const Waveform& w,
                                            const dsp::FrameGrid& g,
                                            const FeatureConfig& cfg = {});

// 3 bands x 4 moments of the modulation spectrum around the
// highest-energy acoustic band, n_frames x 12.
std::vector<std::vector<double>> modulation_track(const Waveform& w,
                                                  const dsp::FrameGrid& g,
                                                  const FeatureConfig& cfg = {});

// Log first-order scattering (20 bands) and pooled second-order paths (8),
// n_frames x 28.
std::vector<std::vector<double>> scattering_track(const Waveform& w,
                                                  const dsp::FrameGrid& g,
                                                  const FeatureConfig& cfg = {});

// Center frequencies of the first-order scattering bands (for tests).
std::vector<double> scattering_band_centers(int n_bands);

// LTASS template interpolated to FFT bin powers (linear power, max 1).
// `bin_hz` lists the bin center frequencies.
std::vector<double> ltass_at(std::span<const double> bin_hz);

// --- cache files ---------------------------------------------------------

// Binary layout: magic "NIRF", version, utterance id, row/col counts,
// column-name table, config hash + seed, frame times, row-major doubles.
void write_feature_file(const std::string& path, const FeatureMatrix& m,
                        uint64_t config_hash, uint64_t seed);
struct FeatureFile {
  FeatureMatrix matrix;
  uint64_t config_hash = 0;
  uint64_t seed = 0;
};
FeatureFile read_feature_file(const std::string& path);
void write_feature_csv(const std::string& path, const FeatureMatrix& m);

}  // namespace nira::features

#endif  // NIRA_FEATURES_HPP

// SPDX-License-Identifier: Apache-2.0
//
// Shared DSP kernels: framing, windowing, spectra, linear prediction,
// Hilbert envelope and regression deltas. Everything operates on 64-bit
// floats and is free of shared mutable state, so utterances can be
// processed concurrently.

#ifndef NIRA_DSP_HPP
#define NIRA_DSP_HPP

#include <complex>
#include <span>
#include <vector>

#include "nira/types.hpp"

namespace nira::dsp {

enum class WindowKind { Rectangular, Hamming, Hann };

// 20 ms frames with 10 ms hop (50% overlap) on the canonical rate.
struct FrameGrid {
  int frame_length = 0;
  int hop = 0;
  int n_frames = 0;
  WindowKind window = WindowKind::Hamming;

  // Throws SignalTooShort when the signal does not cover one frame.
  static FrameGrid for_waveform(const Waveform& w,
                                double frame_ms = 20.0,
                                WindowKind window = WindowKind::Hamming);

  int frame_start(int k) const { return k * hop; }
  double frame_center_s(int k, int sample_rate) const {
    return (frame_start(k) + 0.5 * frame_length) / sample_rate;
  }
};

std::vector<double> window_coefficients(WindowKind kind, int length);

// Scales so that max |sample| == 1. Throws AllZeroSignal on silence.
Waveform normalize_peak(const Waveform& w);

// Copies raw frame k into `out` (size frame_length).
void extract_frame(const Waveform& w, const FrameGrid& g, int k,
                   std::span<double> out);

// Raw frame matrix, row per frame. The windowed view is obtained by
// multiplying rows with window_coefficients(); both views are used by the
// feature extractors (spectral ops windowed, time-domain stats raw).
std::vector<std::vector<double>> frame_signal(const Waveform& w,
                                              const FrameGrid& g);

// -------------------------------------------------------------------------
// FFT (FFTW-backed). One instance per thread of use; plan creation is
// internally serialized, execution is lock-free.

class RealFft {
 public:
  explicit RealFft(int n);
  ~RealFft();
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  int size() const { return n_; }
  // in: n real samples (zero-padded if shorter); out: n/2+1 bins.
  void forward(std::span<const double> in,
               std::vector<std::complex<double>>& out);
  // Inverse of forward, scaled by 1/n.
  void inverse(std::span<const std::complex<double>> in,
               std::vector<double>& out);

 private:
  struct Impl;
  Impl* impl_;
  int n_;
};

class ComplexFft {
 public:
  explicit ComplexFft(int n);
  ~ComplexFft();
  ComplexFft(const ComplexFft&) = delete;
  ComplexFft& operator=(const ComplexFft&) = delete;

  int size() const { return n_; }
  void forward(std::span<const std::complex<double>> in,
               std::vector<std::complex<double>>& out);
  // Scaled by 1/n.
  void inverse(std::span<const std::complex<double>> in,
               std::vector<std::complex<double>>& out);

 private:
  struct Impl;
  Impl* impl_;
  int n_;
};

int next_pow2(int n);

// |X[k]|^2 of the zero-padded input, n_fft/2+1 bins.
std::vector<double> power_spectrum(std::span<const double> frame, int n_fft,
                                   RealFft& fft);

// -------------------------------------------------------------------------
// Linear prediction.

struct LpcResult {
  std::vector<double> coeffs;      // a_1..a_p for A(z) = 1 + sum a_k z^-k
  std::vector<double> reflection;  // k_1..k_p
  double error_power = 0.0;        // final prediction error power
};

// Levinson-Durbin on the biased autocorrelation of `frame`. Throws
// DegenerateFrame when r[0] == 0; callers treat such frames as non-speech.
LpcResult lpc_autocorrelation(std::span<const double> frame, int order);

std::vector<double> autocorrelation(std::span<const double> frame,
                                    int max_lag);

// -------------------------------------------------------------------------
// Envelope and deltas.

// Magnitude of the analytic signal, frequency-domain construction at the
// exact signal length. Requires length >= 2.
std::vector<double> hilbert_envelope(std::span<const double> x);

// Regression delta with replicated edges:
//   d[t] = sum_k k*(x[t+k]-x[t-k]) / (2*sum_k k^2), k = 1..span.
std::vector<double> delta(std::span<const double> seq, int span);

// Full linear convolution via FFT, length a+b-1.
std::vector<double> convolve(std::span<const double> a,
                             std::span<const double> b);

double mean(std::span<const double> x);
// Unbiased sample variance; zero for length < 2.
double variance(std::span<const double> x);
double rms_db(std::span<const double> x);  // 10*log10(mean square)

}  // namespace nira::dsp

#endif  // NIRA_DSP_HPP

// SPDX-License-Identifier: Apache-2.0

#include "nira/dsp.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <mutex>
#include <numeric>

namespace nira::dsp {

namespace {

// FFTW plan creation/destruction is not thread-safe; execution is.
std::mutex& plan_mutex() {
  static std::mutex m;
  return m;
}

}  // namespace

FrameGrid FrameGrid::for_waveform(const Waveform& w, double frame_ms,
                                  WindowKind window) {
  FrameGrid g;
  g.frame_length = static_cast<int>(std::lround(frame_ms * 1e-3 * w.sample_rate));
  g.hop = g.frame_length / 2;
  g.window = window;
  if (static_cast<int>(w.samples.size()) < g.frame_length)
    throw SignalTooShort("signal of " + std::to_string(w.samples.size()) +
                         " samples shorter than one frame (" +
                         std::to_string(g.frame_length) + ")");
  g.n_frames = static_cast<int>(
      (w.samples.size() - g.frame_length) / g.hop + 1);
  return g;
}

std::vector<double> window_coefficients(WindowKind kind, int length) {
  std::vector<double> w(length, 1.0);
  if (length <= 1) return w;
  const double d = 2.0 * M_PI / (length - 1);
  switch (kind) {
    case WindowKind::Rectangular:
      break;
    case WindowKind::Hamming:
      for (int i = 0; i < length; ++i) w[i] = 0.54 - 0.46 * std::cos(d * i);
      break;
    case WindowKind::Hann:
      for (int i = 0; i < length; ++i) w[i] = 0.5 - 0.5 * std::cos(d * i);
      break;
  }
  return w;
}

Waveform normalize_peak(const Waveform& w) {
  if (w.samples.empty()) throw SignalTooShort("empty waveform");
  double peak = 0.0;
  for (double x : w.samples) peak = std::max(peak, std::abs(x));
  if (peak == 0.0) throw AllZeroSignal("peak is zero, cannot normalize");
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.resize(w.samples.size());
  const double scale = 1.0 / peak;
  for (std::size_t i = 0; i < w.samples.size(); ++i)
    out.samples[i] = w.samples[i] * scale;
  return out;
}

void extract_frame(const Waveform& w, const FrameGrid& g, int k,
                   std::span<double> out) {
  const int start = g.frame_start(k);
  std::copy_n(w.samples.begin() + start, g.frame_length, out.begin());
}

std::vector<std::vector<double>> frame_signal(const Waveform& w,
                                              const FrameGrid& g) {
  std::vector<std::vector<double>> frames(g.n_frames);
  for (int k = 0; k < g.n_frames; ++k) {
    frames[k].resize(g.frame_length);
    extract_frame(w, g, k, frames[k]);
  }
  return frames;
}

// ---------------------------------------------------------------------------

struct RealFft::Impl {
  double* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan bwd = nullptr;
};

RealFft::RealFft(int n) : n_(n) {
  impl_ = new Impl;
  std::lock_guard<std::mutex> lock(plan_mutex());
  impl_->in = fftw_alloc_real(n);
  impl_->out = fftw_alloc_complex(n / 2 + 1);
  impl_->fwd = fftw_plan_dft_r2c_1d(n, impl_->in, impl_->out, FFTW_ESTIMATE);
  impl_->bwd = fftw_plan_dft_c2r_1d(n, impl_->out, impl_->in, FFTW_ESTIMATE);
}

RealFft::~RealFft() {
  std::lock_guard<std::mutex> lock(plan_mutex());
  fftw_destroy_plan(impl_->fwd);
  fftw_destroy_plan(impl_->bwd);
  fftw_free(impl_->in);
  fftw_free(impl_->out);
  delete impl_;
}

void RealFft::forward(std::span<const double> in,
                      std::vector<std::complex<double>>& out) {
  const std::size_t n_copy = std::min<std::size_t>(in.size(), n_);
  std::memcpy(impl_->in, in.data(), n_copy * sizeof(double));
  std::memset(impl_->in + n_copy, 0, (n_ - n_copy) * sizeof(double));
  fftw_execute(impl_->fwd);
  out.resize(n_ / 2 + 1);
  std::memcpy(reinterpret_cast<double*>(out.data()), impl_->out,
              out.size() * sizeof(fftw_complex));
}

void RealFft::inverse(std::span<const std::complex<double>> in,
                      std::vector<double>& out) {
  std::memcpy(impl_->out, reinterpret_cast<const double*>(in.data()),
              std::min<std::size_t>(in.size(), n_ / 2 + 1) *
                  sizeof(fftw_complex));
  fftw_execute(impl_->bwd);
  out.resize(n_);
  const double scale = 1.0 / n_;
  for (int i = 0; i < n_; ++i) out[i] = impl_->in[i] * scale;
}

struct ComplexFft::Impl {
  fftw_complex* in = nullptr;
  fftw_complex* out = nullptr;
  fftw_plan fwd = nullptr;
  fftw_plan bwd = nullptr;
};

ComplexFft::ComplexFft(int n) : n_(n) {
  impl_ = new Impl;
  std::lock_guard<std::mutex> lock(plan_mutex());
  impl_->in = fftw_alloc_complex(n);
  impl_->out = fftw_alloc_complex(n);
  impl_->fwd = fftw_plan_dft_1d(n, impl_->in, impl_->out, FFTW_FORWARD,
                                FFTW_ESTIMATE);
  impl_->bwd = fftw_plan_dft_1d(n, impl_->in, impl_->out, FFTW_BACKWARD,
                                FFTW_ESTIMATE);
}

ComplexFft::~ComplexFft() {
  std::lock_guard<std::mutex> lock(plan_mutex());
  fftw_destroy_plan(impl_->fwd);
  fftw_destroy_plan(impl_->bwd);
  fftw_free(impl_->in);
  fftw_free(impl_->out);
  delete impl_;
}

void ComplexFft::forward(std::span<const std::complex<double>> in,
                         std::vector<std::complex<double>>& out) {
  const std::size_t n_copy = std::min<std::size_t>(in.size(), n_);
  std::memcpy(impl_->in, reinterpret_cast<const double*>(in.data()),
              n_copy * sizeof(fftw_complex));
  std::memset(impl_->in + n_copy, 0, (n_ - n_copy) * sizeof(fftw_complex));
  fftw_execute(impl_->fwd);
  out.resize(n_);
  std::memcpy(reinterpret_cast<double*>(out.data()), impl_->out,
              n_ * sizeof(fftw_complex));
}

void ComplexFft::inverse(std::span<const std::complex<double>> in,
                         std::vector<std::complex<double>>& out) {
  const std::size_t n_copy = std::min<std::size_t>(in.size(), n_);
  std::memcpy(impl_->in, reinterpret_cast<const double*>(in.data()),
              n_copy * sizeof(fftw_complex));
  std::memset(impl_->in + n_copy, 0, (n_ - n_copy) * sizeof(fftw_complex));
  fftw_execute(impl_->bwd);
  out.resize(n_);
  const double scale = 1.0 / n_;
  for (int i = 0; i < n_; ++i) {
    out[i] = std::complex<double>(impl_->out[i][0] * scale,
                                  impl_->out[i][1] * scale);
  }
}

int next_pow2(int n) {
  int p = 1;
  while (p < n) p <<= 1;
  return p;
}

std::vector<double> power_spectrum(std::span<const double> frame, int n_fft,
                                   RealFft& fft) {
  if (fft.size() != n_fft)
    throw ConfigError("power_spectrum FFT size mismatch");
  std::vector<std::complex<double>> spec;
  fft.forward(frame, spec);
  std::vector<double> p(spec.size());
  for (std::size_t i = 0; i < spec.size(); ++i) p[i] = std::norm(spec[i]);
  return p;
}

// ---------------------------------------------------------------------------

std::vector<double> autocorrelation(std::span<const double> frame,
                                    int max_lag) {
  std::vector<double> r(max_lag + 1, 0.0);
  const int n = static_cast<int>(frame.size());
  for (int lag = 0; lag <= max_lag; ++lag) {
    double acc = 0.0;
    for (int i = lag; i < n; ++i) acc += frame[i] * frame[i - lag];
    r[lag] = acc;
  }
  return r;
}

LpcResult lpc_autocorrelation(std::span<const double> frame, int order) {
  if (order >= static_cast<int>(frame.size()))
    throw DegenerateFrame("LPC order >= frame length");
  const std::vector<double> r = autocorrelation(frame, order);
  if (r[0] == 0.0) throw DegenerateFrame("zero-energy frame");

  LpcResult res;
  res.coeffs.assign(order, 0.0);
  res.reflection.assign(order, 0.0);
  double err = r[0];
  std::vector<double> prev(order, 0.0);
  for (int i = 1; i <= order; ++i) {
    double acc = r[i];
    for (int j = 1; j < i; ++j) acc += res.coeffs[j - 1] * r[i - j];
    if (err <= 0.0) throw DegenerateFrame("Levinson recursion broke down");
    const double k = -acc / err;
    res.reflection[i - 1] = k;
    std::copy_n(res.coeffs.begin(), i - 1, prev.begin());
    res.coeffs[i - 1] = k;
    for (int j = 1; j < i; ++j)
      res.coeffs[j - 1] = prev[j - 1] + k * prev[i - j - 1];
    err *= (1.0 - k * k);
  }
  res.error_power = err;
  return res;
}

std::vector<double> hilbert_envelope(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  if (n < 2) throw SignalTooShort("hilbert envelope needs length >= 2");
  std::vector<std::complex<double>> cx(n);
  for (int i = 0; i < n; ++i) cx[i] = x[i];
  ComplexFft fft(n);
  std::vector<std::complex<double>> spec;
  fft.forward(cx, spec);
  // Analytic-signal weights: DC and Nyquist kept, positive bins doubled,
  // negative bins zeroed.
  const int half = n / 2;
  for (int k = 1; k < (n + 1) / 2; ++k) spec[k] *= 2.0;
  for (int k = half + 1; k < n; ++k) spec[k] = 0.0;
  std::vector<std::complex<double>> analytic;
  fft.inverse(spec, analytic);
  std::vector<double> env(n);
  for (int i = 0; i < n; ++i) env[i] = std::abs(analytic[i]);
  return env;
}

std::vector<double> delta(std::span<const double> seq, int span) {
  const int n = static_cast<int>(seq.size());
  std::vector<double> d(n, 0.0);
  if (n == 0) return d;
  double denom = 0.0;
  for (int k = 1; k <= span; ++k) denom += k * k;
  denom *= 2.0;
  auto at = [&](int i) {
    return seq[std::clamp(i, 0, n - 1)];
  };
  for (int t = 0; t < n; ++t) {
    double acc = 0.0;
    for (int k = 1; k <= span; ++k) acc += k * (at(t + k) - at(t - k));
    d[t] = acc / denom;
  }
  return d;
}

std::vector<double> convolve(std::span<const double> a,
                             std::span<const double> b) {
  if (a.empty() || b.empty()) return {};
  const int out_len = static_cast<int>(a.size() + b.size()) - 1;
  const int n = next_pow2(out_len);
  RealFft fft(n);
  std::vector<std::complex<double>> fa, fb;
  fft.forward(a, fa);
  fft.forward(b, fb);
  for (std::size_t i = 0; i < fa.size(); ++i) fa[i] *= fb[i];
  std::vector<double> full;
  fft.inverse(fa, full);
  full.resize(out_len);
  return full;
}

double mean(std::span<const double> x) {
  if (x.empty()) return 0.0;
  return std::accumulate(x.begin(), x.end(), 0.0) / x.size();
}

double variance(std::span<const double> x) {
  const int n = static_cast<int>(x.size());
  if (n < 2) return 0.0;
  const double m = mean(x);
  double acc = 0.0;
  for (double v : x) acc += (v - m) * (v - m);
  return acc / (n - 1);
}

double rms_db(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += v * v;
  if (x.empty() || acc == 0.0) return -std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(acc / x.size());
}

}  // namespace nira::dsp

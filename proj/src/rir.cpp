// SPDX-License-Identifier: Apache-2.0

#include "nira/rir.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <random>
#include <sstream>

#include "nira/dsp.hpp"
#include "nira/vad.hpp"

namespace nira::rir {

namespace {

// Splitmix-style hash so every image source draws an independent,
// seed-stable jitter regardless of loop order.
uint64_t mix_hash(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

double unit_from_hash(uint64_t h) {
  return (h >> 11) * (1.0 / 9007199254740992.0);  // [0, 1)
}

// Sabine estimate used only to size the simulated response.
double sabine_t60(const RoomSpec& r) {
  const double lx = r.dimensions[0], ly = r.dimensions[1], lz = r.dimensions[2];
  const double volume = lx * ly * lz;
  const double area_absorption =
      (r.absorption[0] + r.absorption[1]) * ly * lz +
      (r.absorption[2] + r.absorption[3]) * lx * lz +
      (r.absorption[4] + r.absorption[5]) * lx * ly;
  if (area_absorption <= 0.0) return r.max_length_s;
  return 0.161 * volume / area_absorption;
}

void validate(const RoomSpec& r) {
  for (double d : r.dimensions)
    if (!(d > 0.0)) throw InvalidGeometry("non-positive room dimension");
  for (double a : r.absorption)
    if (!(a > 0.0 && a <= 1.0))
      throw InvalidGeometry("absorption must lie in (0, 1]");
  for (int i = 0; i < 3; ++i) {
    if (!(r.source_pos[i] > 0.0 && r.source_pos[i] < r.dimensions[i]))
      throw InvalidGeometry("source outside the room");
    if (!(r.mic_pos[i] > 0.0 && r.mic_pos[i] < r.dimensions[i]))
      throw InvalidGeometry("microphone outside the room");
  }
  if (r.jitter_m < 0.0) throw InvalidGeometry("negative jitter");
  if (r.max_length_s <= 0.0) throw InvalidGeometry("non-positive RIR length");
}

}  // namespace

RirRecord simulate_rir(const RoomSpec& room) {
  validate(room);
  const double fs = room.sample_rate;
  const double lx = room.dimensions[0];
  const double ly = room.dimensions[1];
  const double lz = room.dimensions[2];

  // Amplitude reflection coefficients from energy absorption.
  std::array<double, 6> beta;
  for (int i = 0; i < 6; ++i) beta[i] = std::sqrt(1.0 - room.absorption[i]);

  // Length: Sabine estimate with margin, capped by the configured maximum.
  const double t_est = sabine_t60(room);
  const double len_s =
      std::min(room.max_length_s, std::max(0.25, 1.25 * t_est + 0.05));
  const int n_samples = static_cast<int>(std::lround(len_s * fs));

  // Image orders needed to cover the response length.
  const double max_dist = len_s * kSpeedOfSound;
  auto order_for = [&](double l) {
    return static_cast<int>(std::ceil(max_dist / (2.0 * l))) + 1;
  };
  int nx = order_for(lx), ny = order_for(ly), nz = order_for(lz);
  if (room.max_order >= 0) {
    nx = std::min(nx, room.max_order);
    ny = std::min(ny, room.max_order);
    nz = std::min(nz, room.max_order);
  }

  std::vector<double> h(n_samples, 0.0);
  std::vector<double> sinc_kernel(kSincTaps);
  const int half_taps = kSincTaps / 2;

  for (int mx = -nx; mx <= nx; ++mx) {
    for (int my = -ny; my <= ny; ++my) {
      for (int mz = -nz; mz <= nz; ++mz) {
        for (int q = 0; q <= 1; ++q) {
          for (int j = 0; j <= 1; ++j) {
            for (int k = 0; k <= 1; ++k) {
              if (room.max_order >= 0 &&
                  std::abs(2 * mx - q) + std::abs(2 * my - j) +
                          std::abs(2 * mz - k) >
                      room.max_order)
                continue;
              // Image position of the source.
              double ix = (1 - 2 * q) * room.source_pos[0] + 2 * mx * lx;
              double iy = (1 - 2 * j) * room.source_pos[1] + 2 * my * ly;
              double iz = (1 - 2 * k) * room.source_pos[2] + 2 * mz * lz;
              const bool is_direct =
                  mx == 0 && my == 0 && mz == 0 && q == 0 && j == 0 && k == 0;
              if (!is_direct && room.jitter_m > 0.0) {
                // Seeded displacement, stable per image index.
                uint64_t key = room.seed;
                key = mix_hash(key ^ static_cast<uint64_t>(
                                         (mx + 512) * 1048576 + (my + 512) * 1024 +
                                         (mz + 512)));
                key = mix_hash(key ^ static_cast<uint64_t>(q * 4 + j * 2 + k));
                ix += (unit_from_hash(mix_hash(key ^ 1)) - 0.5) * 2.0 *
                      room.jitter_m;
                iy += (unit_from_hash(mix_hash(key ^ 2)) - 0.5) * 2.0 *
                      room.jitter_m;
                iz += (unit_from_hash(mix_hash(key ^ 3)) - 0.5) * 2.0 *
                      room.jitter_m;
              }
              const double dx = ix - room.mic_pos[0];
              const double dy = iy - room.mic_pos[1];
              const double dz = iz - room.mic_pos[2];
              const double dist = std::sqrt(dx * dx + dy * dy + dz * dz);
              const double delay = dist / kSpeedOfSound * fs;
              if (delay >= n_samples) continue;
              const double refl = std::pow(beta[0], std::abs(mx - q)) *
                                  std::pow(beta[1], std::abs(mx)) *
                                  std::pow(beta[2], std::abs(my - j)) *
                                  std::pow(beta[3], std::abs(my)) *
                                  std::pow(beta[4], std::abs(mz - k)) *
                                  std::pow(beta[5], std::abs(mz));
              const double gain = refl / (4.0 * M_PI * std::max(dist, 1e-2));
              // Windowed-sinc fractional delay.
              const int base = static_cast<int>(std::floor(delay));
              const double frac = delay - base;
              for (int t = 0; t < kSincTaps; ++t) {
                const int idx = base + t - half_taps;
                if (idx < 0 || idx >= n_samples) continue;
                const double x = t - half_taps - frac;
                const double sinc =
                    x == 0.0 ? 1.0 : std::sin(M_PI * x) / (M_PI * x);
                const double win =
                    0.5 * (1.0 + std::cos(2.0 * M_PI * (t - half_taps - frac) /
                                          kSincTaps));
                h[idx] += gain * sinc * win;
              }
            }
          }
        }
      }
    }
  }

  RirRecord rec;
  rec.rir = std::move(h);
  rec.sample_rate = room.sample_rate;
  rec.room = room;
  const double d0 = std::sqrt(
      std::pow(room.source_pos[0] - room.mic_pos[0], 2) +
      std::pow(room.source_pos[1] - room.mic_pos[1], 2) +
      std::pow(room.source_pos[2] - room.mic_pos[2], 2));
  rec.direct_index =
      static_cast<int>(std::lround(d0 / kSpeedOfSound * fs));
  return rec;
}

std::vector<double> schroeder_edc(std::span<const double> rir) {
  constexpr double kFloorDb = -150.0;
  std::vector<double> edc(rir.size(), kFloorDb);
  double total = 0.0;
  for (double v : rir) total += v * v;
  if (total <= 0.0) throw EmptyTail("RIR carries no energy");
  double tail = 0.0;
  for (int i = static_cast<int>(rir.size()) - 1; i >= 0; --i) {
    tail += rir[i] * rir[i];
    edc[i] = std::max(kFloorDb, 10.0 * std::log10(tail / total));
  }
  return edc;
}

double estimate_t60_from_rir(std::span<const double> rir, int sample_rate) {
  const std::vector<double> edc = schroeder_edc(rir);
  const int n = static_cast<int>(edc.size());
  // The backward integral of a truncated response dives over its last
  // samples no matter how slow the true decay is; the decay range must
  // fully arrive before that region.
  const int usable = n - std::max(1, n / 10);
  int i_start = -1, i_end = -1;
  for (int i = 0; i < usable; ++i) {
    if (i_start < 0 && edc[i] <= -5.0) i_start = i;
    if (edc[i] <= -35.0) {
      i_end = i;
      break;
    }
  }
  if (i_start < 0 || i_end < 0 || i_end <= i_start)
    throw DecayRangeUnreachable("EDC never spans [-5, -35] dB");

  // Least-squares line through the decay range, extrapolated to -60 dB.
  double sx = 0.0, sy = 0.0, sxx = 0.0, sxy = 0.0;
  const int m = i_end - i_start + 1;
  for (int i = i_start; i <= i_end; ++i) {
    const double x = static_cast<double>(i) / sample_rate;
    sx += x;
    sy += edc[i];
    sxx += x * x;
    sxy += x * edc[i];
  }
  const double denom = m * sxx - sx * sx;
  if (denom <= 0.0) throw DecayRangeUnreachable("degenerate decay range");
  const double slope = (m * sxy - sx * sy) / denom;  // dB per second
  if (slope >= 0.0) throw DecayRangeUnreachable("non-decaying EDC fit");
  return -60.0 / slope;
}

double compute_drr_from_rir(std::span<const double> rir, int direct_index,
                            int sample_rate) {
  const int n = static_cast<int>(rir.size());
  if (direct_index < 0 || direct_index >= n)
    throw InvalidGeometry("direct index outside the RIR");
  const int half = static_cast<int>(std::lround(kDirectWindowS * sample_rate));
  const int lo = std::max(0, direct_index - half);
  const int hi = std::min(n - 1, direct_index + half);
  double direct = 0.0, tail = 0.0;
  for (int i = 0; i < n; ++i) {
    const double e = rir[i] * rir[i];
    if (i >= lo && i <= hi)
      direct += e;
    else
      tail += e;
  }
  if (direct <= 0.0) throw EmptyTail("no energy in the direct window");
  if (tail <= 0.0) return std::numeric_limits<double>::infinity();
  return 10.0 * std::log10(direct / tail);
}

void label_record(RirRecord& rec) {
  rec.t60_s = estimate_t60_from_rir(rec.rir, rec.sample_rate);
  rec.drr_db = compute_drr_from_rir(rec.rir, rec.direct_index, rec.sample_rate);
}

Waveform synth_utterance(const Waveform& clean, std::span<const double> rir,
                         const Waveform& noise, double snr_db) {
  std::vector<double> reverb = dsp::convolve(clean.samples, rir);
  Waveform out;
  out.sample_rate = clean.sample_rate;

  if (std::isinf(snr_db) && snr_db > 0.0) {
    out.samples = std::move(reverb);
    return dsp::normalize_peak(out);
  }
  if (noise.samples.size() < reverb.size())
    throw NoiseTooShort("noise shorter than the convolved utterance (" +
                        std::to_string(noise.samples.size()) + " < " +
                        std::to_string(reverb.size()) + ")");

  // SNR measured over the active speech region of the reverberant signal.
  Waveform rw;
  rw.sample_rate = clean.sample_rate;
  rw.samples = reverb;
  const dsp::FrameGrid g = dsp::FrameGrid::for_waveform(rw);
  const vad::SpeechMask mask = vad::speech_frame_mask(rw, g);
  double p_sig = 0.0, p_noise = 0.0;
  std::size_t n_active = 0;
  for (int k = 0; k < g.n_frames; ++k) {
    if (!mask.active[k]) continue;
    const int start = g.frame_start(k);
    for (int i = 0; i < g.frame_length; ++i) {
      p_sig += reverb[start + i] * reverb[start + i];
      p_noise += noise.samples[start + i] * noise.samples[start + i];
    }
    n_active += g.frame_length;
  }
  if (n_active == 0 || p_sig <= 0.0)
    throw AllZeroSignal("reverberant signal has no active energy");
  if (p_noise <= 0.0) throw AllZeroSignal("noise has no energy");

  // Scale noise so 10*log10(p_sig / p_noise') = snr_db over that region.
  const double scale =
      std::sqrt(p_sig / (p_noise * std::pow(10.0, snr_db / 10.0)));
  out.samples.resize(reverb.size());
  for (std::size_t i = 0; i < reverb.size(); ++i)
    out.samples[i] = reverb[i] + scale * noise.samples[i];
  return dsp::normalize_peak(out);
}

void write_rir_metadata(const std::string& path, const RirRecord& rec) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write rir metadata: " + path);
  out.precision(17);
  out << "t60_s=" << rec.t60_s << '\n';
  out << "drr_db=" << rec.drr_db << '\n';
  out << "direct_index=" << rec.direct_index << '\n';
  out << "sample_rate=" << rec.sample_rate << '\n';
  out << "dimensions=" << rec.room.dimensions[0] << ' '
      << rec.room.dimensions[1] << ' ' << rec.room.dimensions[2] << '\n';
  out << "absorption=";
  for (int i = 0; i < 6; ++i)
    out << rec.room.absorption[i] << (i < 5 ? ' ' : '\n');
  out << "source_pos=" << rec.room.source_pos[0] << ' '
      << rec.room.source_pos[1] << ' ' << rec.room.source_pos[2] << '\n';
  out << "mic_pos=" << rec.room.mic_pos[0] << ' ' << rec.room.mic_pos[1] << ' '
      << rec.room.mic_pos[2] << '\n';
  out << "jitter_m=" << rec.room.jitter_m << '\n';
  out << "seed=" << rec.room.seed << '\n';
  out << "max_length_s=" << rec.room.max_length_s << '\n';
}

RirRecord read_rir_metadata(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open rir metadata: " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto need = [&](const std::string& key) -> std::istringstream {
    auto it = kv.find(key);
    if (it == kv.end())
      throw DataError("rir metadata missing key " + key + ": " + path);
    return std::istringstream(it->second);
  };
  RirRecord rec;
  need("t60_s") >> rec.t60_s;
  {
    std::string v = kv["drr_db"];
    if (v == "inf" || v == "+inf")
      rec.drr_db = std::numeric_limits<double>::infinity();
    else
      need("drr_db") >> rec.drr_db;
  }
  need("direct_index") >> rec.direct_index;
  need("sample_rate") >> rec.sample_rate;
  {
    auto ss = need("dimensions");
    ss >> rec.room.dimensions[0] >> rec.room.dimensions[1] >>
        rec.room.dimensions[2];
  }
  {
    auto ss = need("absorption");
    for (int i = 0; i < 6; ++i) ss >> rec.room.absorption[i];
  }
  {
    auto ss = need("source_pos");
    ss >> rec.room.source_pos[0] >> rec.room.source_pos[1] >>
        rec.room.source_pos[2];
  }
  {
    auto ss = need("mic_pos");
    ss >> rec.room.mic_pos[0] >> rec.room.mic_pos[1] >> rec.room.mic_pos[2];
  }
  need("jitter_m") >> rec.room.jitter_m;
  need("seed") >> rec.room.seed;
  need("max_length_s") >> rec.room.max_length_s;
  return rec;
}

}  // namespace nira::rir

// SPDX-License-Identifier: Apache-2.0

#include "nira/wav.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <limits>
#include <vector>

namespace nira::wav {

namespace {

constexpr uint16_t kFormatPcm = 1;
constexpr uint16_t kFormatFloat = 3;

template <typename T>
T read_le(std::istream& in) {
  unsigned char buf[sizeof(T)];
  in.read(reinterpret_cast<char*>(buf), sizeof(T));
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(buf[i]) << (8 * i);
  }
  return v;
}

template <typename T>
void write_le(std::ostream& out, T v) {
  unsigned char buf[sizeof(T)];
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
  }
  out.write(reinterpret_cast<const char*>(buf), sizeof(T));
}

struct FmtChunk {
  uint16_t format = 0;
  uint16_t channels = 0;
  uint32_t sample_rate = 0;
  uint16_t bits_per_sample = 0;
};

void write_header(std::ostream& out, uint16_t format, uint32_t sample_rate,
                  uint16_t bits, uint32_t n_samples) {
  const uint16_t block_align = bits / 8;
  const uint32_t data_bytes = n_samples * block_align;
  out.write("RIFF", 4);
  write_le<uint32_t>(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_le<uint32_t>(out, 16);
  write_le<uint16_t>(out, format);
  write_le<uint16_t>(out, 1);  // mono
  write_le<uint32_t>(out, sample_rate);
  write_le<uint32_t>(out, sample_rate * block_align);
  write_le<uint16_t>(out, block_align);
  write_le<uint16_t>(out, bits);
  out.write("data", 4);
  write_le<uint32_t>(out, data_bytes);
}

}  // namespace

Waveform read(const std::string& path, bool require_canonical_rate) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open wav file: " + path);

  char tag[4];
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "RIFF", 4) != 0)
    throw DataError("not a RIFF file: " + path);
  read_le<uint32_t>(in);
  in.read(tag, 4);
  if (!in || std::memcmp(tag, "WAVE", 4) != 0)
    throw DataError("not a WAVE file: " + path);

  FmtChunk fmt;
  bool have_fmt = false;
  std::vector<char> data;

  while (in) {
    in.read(tag, 4);
    if (!in) break;
    const uint32_t size = read_le<uint32_t>(in);
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      fmt.format = read_le<uint16_t>(in);
      fmt.channels = read_le<uint16_t>(in);
      fmt.sample_rate = read_le<uint32_t>(in);
      read_le<uint32_t>(in);  // byte rate
      read_le<uint16_t>(in);  // block align
      fmt.bits_per_sample = read_le<uint16_t>(in);
      if (size > 16) in.seekg(size - 16, std::ios::cur);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data.resize(size);
      in.read(data.data(), size);
      if (static_cast<uint32_t>(in.gcount()) != size)
        throw DataError("truncated wav data: " + path);
      break;
    } else {
      in.seekg(size + (size & 1), std::ios::cur);
    }
  }
  if (!have_fmt || data.empty())
    throw DataError("missing fmt/data chunk: " + path);
  if (fmt.channels != 1)
    throw DataError("only mono wav supported: " + path);
  if (require_canonical_rate &&
      fmt.sample_rate != static_cast<uint32_t>(kCanonicalRate))
    throw DataError("sample rate must be 16000 Hz, got " +
                    std::to_string(fmt.sample_rate) + ": " + path);

  Waveform w;
  w.sample_rate = static_cast<int>(fmt.sample_rate);
  if (fmt.format == kFormatPcm && fmt.bits_per_sample == 16) {
    const std::size_t n = data.size() / 2;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int16_t s = static_cast<int16_t>(
          static_cast<uint16_t>(static_cast<unsigned char>(data[2 * i])) |
          (static_cast<uint16_t>(static_cast<unsigned char>(data[2 * i + 1]))
           << 8));
      w.samples[i] = static_cast<double>(s) / 32768.0;
    }
  } else if (fmt.format == kFormatFloat && fmt.bits_per_sample == 32) {
    const std::size_t n = data.size() / 4;
    w.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      uint32_t bits = 0;
      for (int b = 0; b < 4; ++b) {
        bits |= static_cast<uint32_t>(
                    static_cast<unsigned char>(data[4 * i + b]))
                << (8 * b);
      }
      float f;
      std::memcpy(&f, &bits, 4);
      w.samples[i] = static_cast<double>(f);
    }
  } else {
    throw DataError("unsupported wav encoding (format " +
                    std::to_string(fmt.format) + ", " +
                    std::to_string(fmt.bits_per_sample) + " bit): " + path);
  }
  return w;
}

void write_pcm16(const std::string& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write wav file: " + path);
  write_header(out, kFormatPcm, w.sample_rate, 16,
               static_cast<uint32_t>(w.samples.size()));
  for (double x : w.samples) {
    double v = std::lround(std::max(-1.0, std::min(1.0, x)) * 32767.0);
    write_le<int16_t>(out, static_cast<int16_t>(v));
  }
  if (!out) throw DataError("write failed: " + path);
}

void write_float32(const std::string& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write wav file: " + path);
  write_header(out, kFormatFloat, w.sample_rate, 32,
               static_cast<uint32_t>(w.samples.size()));
  for (double x : w.samples) {
    const float f = static_cast<float>(x);
    uint32_t bits;
    std::memcpy(&bits, &f, 4);
    write_le<uint32_t>(out, bits);
  }
  if (!out) throw DataError("write failed: " + path);
}

}  // namespace nira::wav

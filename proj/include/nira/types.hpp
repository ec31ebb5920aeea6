// SPDX-License-Identifier: Apache-2.0
//
// Core domain types and the error hierarchy shared by all modules.

#ifndef NIRA_TYPES_HPP
#define NIRA_TYPES_HPP

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace nira {

// Exit-code categories for the CLI: 2 config, 3 data, 4 numerical.
enum class ErrorKind { Config = 2, Data = 3, Numeric = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& msg)
      : std::runtime_error(msg), kind_(kind) {}
  ErrorKind kind() const { return kind_; }

 private:
  ErrorKind kind_;
};

#define NIRA_DEFINE_ERROR(Name, Kind)                       \
  class Name : public Error {                               \
   public:                                                  \
    explicit Name(const std::string& msg)                   \
        : Error(ErrorKind::Kind, std::string(#Name ": ") + msg) {} \
  }

NIRA_DEFINE_ERROR(ConfigError, Config);
NIRA_DEFINE_ERROR(DataError, Data);
NIRA_DEFINE_ERROR(AllZeroSignal, Numeric);
NIRA_DEFINE_ERROR(SignalTooShort, Data);
NIRA_DEFINE_ERROR(DegenerateFrame, Numeric);
NIRA_DEFINE_ERROR(NoActivity, Data);
NIRA_DEFINE_ERROR(TooFewSpeechFrames, Data);
NIRA_DEFINE_ERROR(InvalidGeometry, Config);
NIRA_DEFINE_ERROR(DecayRangeUnreachable, Numeric);
NIRA_DEFINE_ERROR(EmptyTail, Numeric);
NIRA_DEFINE_ERROR(NoiseTooShort, Data);
NIRA_DEFINE_ERROR(ModelShapeMismatch, Data);
NIRA_DEFINE_ERROR(NonFiniteLoss, Numeric);
NIRA_DEFINE_ERROR(Diverged, Numeric);
NIRA_DEFINE_ERROR(EmptyDataset, Data);
NIRA_DEFINE_ERROR(DegenerateTargets, Numeric);
NIRA_DEFINE_ERROR(NonPositiveTruth, Data);
NIRA_DEFINE_ERROR(JoinFailure, Data);

#undef NIRA_DEFINE_ERROR

// Mono waveform, normalized amplitude. 16 kHz is the canonical rate for
// the whole toolkit; ingestion rejects anything else.
struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  std::size_t size() const { return samples.size(); }
  double duration_s() const {
    return static_cast<double>(samples.size()) / sample_rate;
  }
};

constexpr int kCanonicalRate = 16000;

}  // namespace nira

#endif  // NIRA_TYPES_HPP

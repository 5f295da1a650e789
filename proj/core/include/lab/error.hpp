#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace lab {

enum class Errc {
  UnknownToken,
  TooLong,
  TemplateMismatch,
  BadT,
  ShapeMismatch,
  EmptyDataset,
  BadStepOrder,
  NonFiniteLoss,
  EmptySet,
  MissingClass,
  EmptyList,
  ZeroTotal,
  TooFewSamples,
  LengthMismatch,
  UnparseablePrompt,
  BadMagic,
  UnsupportedVersion,
  CrcMismatch,
  TruncatedFile,
  ConfigError,
  UnknownKey,
  MissingPrerequisite,
  IoError,
  InvalidArgument,
};

std::string_view errc_name(Errc code) noexcept;

/// Every failure raised by the library carries one of the codes above so the
/// CLI can map it onto an exit status and a machine-readable payload.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  Errc code() const noexcept { return code_; }

 private:
  Errc code_;
};

[[noreturn]] inline void fail(Errc code, const std::string& message) {
  throw Error(code, std::string(errc_name(code)) + ": " + message);
}

inline void require(bool condition, Errc code, const std::string& message) {
  if (!condition) fail(code, message);
}

}  // namespace lab

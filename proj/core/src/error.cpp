#include "lab/error.hpp"

namespace lab {

std::string_view errc_name(Errc code) noexcept {
  switch (code) {
    case Errc::UnknownToken: return "UnknownToken";
    case Errc::TooLong: return "TooLong";
    case Errc::TemplateMismatch: return "TemplateMismatch";
    case Errc::BadT: return "BadT";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::BadStepOrder: return "BadStepOrder";
    case Errc::NonFiniteLoss: return "NonFiniteLoss";
    case Errc::EmptySet: return "EmptySet";
    case Errc::MissingClass: return "MissingClass";
    case Errc::EmptyList: return "EmptyList";
    case Errc::ZeroTotal: return "ZeroTotal";
    case Errc::TooFewSamples: return "TooFewSamples";
    case Errc::LengthMismatch: return "LengthMismatch";
    case Errc::UnparseablePrompt: return "UnparseablePrompt";
    case Errc::BadMagic: return "BadMagic";
    case Errc::UnsupportedVersion: return "UnsupportedVersion";
    case Errc::CrcMismatch: return "CrcMismatch";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::ConfigError: return "ConfigError";
    case Errc::UnknownKey: return "UnknownKey";
    case Errc::MissingPrerequisite: return "MissingPrerequisite";
    case Errc::IoError: return "IoError";
    case Errc::InvalidArgument: return "InvalidArgument";
  }
  return "Unknown";
}

}  // namespace lab

#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace tada {

enum class ErrorKind {
  InvalidDimension,
  InvalidAlpha,
  InvalidFactor,
  InvalidArgument,
  AlreadyAugmented,
  ShapeError,
  EmptyDataset,
  IndexError,
  ZeroGradient,
  InvalidStrata,
  EmptySet,
  OutOfRegime,
  DegenerateClustering,
  NoiseCapacity,
  IoError,
  ConfigError,
};

inline std::string_view to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::InvalidDimension: return "InvalidDimension";
    case ErrorKind::InvalidAlpha: return "InvalidAlpha";
    case ErrorKind::InvalidFactor: return "InvalidFactor";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::AlreadyAugmented: return "AlreadyAugmented";
    case ErrorKind::ShapeError: return "ShapeError";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::IndexError: return "IndexError";
    case ErrorKind::ZeroGradient: return "ZeroGradient";
    case ErrorKind::InvalidStrata: return "InvalidStrata";
    case ErrorKind::EmptySet: return "EmptySet";
    case ErrorKind::OutOfRegime: return "OutOfRegime";
    case ErrorKind::DegenerateClustering: return "DegenerateClustering";
    case ErrorKind::NoiseCapacity: return "NoiseCapacity";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::ConfigError: return "ConfigError";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what)
      : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

}  // namespace tada

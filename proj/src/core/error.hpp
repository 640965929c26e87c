#pragma once

#include <stdexcept>
#include <string>

namespace backlink {

enum class ErrorKind { Dimension, Config, Io, Verification, Scheduling };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct DimensionError : Error {
  explicit DimensionError(const std::string& what) : Error(ErrorKind::Dimension, what) {}
};
struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};
struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};
struct VerificationError : Error {
  explicit VerificationError(const std::string& what) : Error(ErrorKind::Verification, what) {}
};
struct SchedulingError : Error {
  explicit SchedulingError(const std::string& what) : Error(ErrorKind::Scheduling, what) {}
};

}  // namespace backlink

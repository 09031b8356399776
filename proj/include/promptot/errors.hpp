// Error taxonomy shared across modules. The CLI maps these onto exit codes.
#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace promptot {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDataError = 3;
inline constexpr int kExitDivergence = 4;

/// Bad values handed to an operation (shape mismatch, empty bag, zero row, ...).
class InvalidInputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Bad configuration: unknown key, unparsable or out-of-range value.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Dataset-level problems: missing files, incompatible dimensions, empty splits.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed binary container; carries the byte offset where parsing failed.
class FormatError : public DataError {
 public:
  FormatError(const std::string& what, std::size_t byte_offset)
      : DataError(what + " (byte offset " + std::to_string(byte_offset) + ")"),
        byte_offset_(byte_offset) {}
  std::size_t byte_offset() const { return byte_offset_; }

 private:
  std::size_t byte_offset_;
};

/// Numerical divergence: non-finite values, Sinkhorn scaling underflow.
class DivergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace promptot

#pragma once

#include <stdexcept>
#include <string>

namespace poredet {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or parameter dimensions do not agree.
class SizeMismatch : public Error {
 public:
  using Error::Error;
};

/// File could not be opened, read or written.
class IoError : public Error {
 public:
  using Error::Error;
};

/// Raster file is not a supported 8-bit grayscale image.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Malformed text input. Carries the 1-based line number.
class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(what + " (line " + std::to_string(line) + ")"), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Well-formed input whose values break a domain invariant.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Image without annotation file (or the reverse), or wrong pair count.
class PairingError : public Error {
 public:
  using Error::Error;
};

/// Checkpoint could not be loaded.
class CheckpointError : public Error {
 public:
  enum class Kind { Truncated, BadMagic, Version, Corrupt };
  CheckpointError(Kind kind, const std::string& what) : Error(what), kind_(kind) {}
  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

/// Loss became NaN or infinite during training.
class TrainingDiverged : public Error {
 public:
  using Error::Error;
};

}  // namespace poredet

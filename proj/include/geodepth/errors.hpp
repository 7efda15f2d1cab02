#ifndef GEODEPTH_ERRORS_HPP
#define GEODEPTH_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace geodepth {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad user input: malformed files, out-of-range values, missing inputs.
/// The CLI maps these to exit code 1.
class ValidationError : public Error {
 public:
  using Error::Error;
};

/// Malformed row in a text input, carrying the 1-based line number.
class ParseError : public ValidationError {
 public:
  ParseError(const std::string& what, std::size_t line)
      : ValidationError("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// A file that should exist could not be read or decoded.
class LoadError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

/// Stored data fails a structural invariant (e.g. a corrupted geotag plane).
class IntegrityError : public Error {
 public:
  using Error::Error;
};

/// Shape or dimension mismatch between tensors.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// Training diverged or otherwise failed at runtime.
class TrainingError : public Error {
 public:
  using Error::Error;
};

}  // namespace geodepth

#endif  // GEODEPTH_ERRORS_HPP

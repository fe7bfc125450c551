#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace cae {

/// Broad failure classes; the CLI maps these onto exit codes.
enum class ErrorKind { Validation, Numerical };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& what) : Error(ErrorKind::Validation, "shape error: " + what) {}
};

class ArgumentError : public Error {
 public:
  explicit ArgumentError(const std::string& what) : Error(ErrorKind::Validation, "argument error: " + what) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Validation, "configuration error: " + what) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error(ErrorKind::Validation, "parse error at line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

/// Zero-variance neighbourhoods, constant features, rank-deficient tangent estimates.
class DegenerateError : public Error {
 public:
  explicit DegenerateError(const std::string& what, std::ptrdiff_t index = -1)
      : Error(ErrorKind::Validation, "degenerate input: " + what), index_(index) {}
  std::ptrdiff_t index() const noexcept { return index_; }

 private:
  std::ptrdiff_t index_;
};

class RankError : public Error {
 public:
  RankError(const std::string& what, std::size_t index)
      : Error(ErrorKind::Validation, "rank error at vector " + std::to_string(index) + ": " + what), index_(index) {}
  std::size_t index() const noexcept { return index_; }

 private:
  std::size_t index_;
};

class NumericalError : public Error {
 public:
  NumericalError(const std::string& what, std::ptrdiff_t point = -1, long epoch = -1)
      : Error(ErrorKind::Numerical, "numerical error: " + what + describe(point, epoch)), point_(point), epoch_(epoch) {}
  std::ptrdiff_t point() const noexcept { return point_; }
  long epoch() const noexcept { return epoch_; }

 private:
  static std::string describe(std::ptrdiff_t point, long epoch) {
    std::string s;
    if (epoch >= 0) s += " (epoch " + std::to_string(epoch) + ")";
    if (point >= 0) s += " (point " + std::to_string(point) + ")";
    return s;
  }
  std::ptrdiff_t point_;
  long epoch_;
};

}  // namespace cae

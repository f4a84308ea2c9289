#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace parauni {

// Base for every error raised by the library. Subclasses map onto the CLI
// exit-code classes in cli.cpp.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class AxisError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class DomainError : public Error {
 public:
  using Error::Error;
};

class EmptyError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public Error {
 public:
  using Error::Error;
};

// A Gaussian transition with zero standard deviation has no density.
class DegenerateDensityError : public Error {
 public:
  using Error::Error;
};

// No gradient buffers exist where one was required.
class AbsenceError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class FormatError : public IoError {
 public:
  FormatError(const std::string& what, std::uint64_t offset)
      : IoError(what + " (at byte offset " + std::to_string(offset) + ")"),
        offset_(offset) {}
  std::uint64_t offset() const { return offset_; }

 private:
  std::uint64_t offset_;
};

// A training-time contract was broken (e.g. a frozen group received a gradient).
class InvariantError : public Error {
 public:
  using Error::Error;
};

}  // namespace parauni

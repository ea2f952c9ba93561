#pragma once

#include <stdexcept>
#include <string>

namespace featgen {

// Every error raised by the library derives from Error. The CLI maps each
// subclass to a documented exit code (see tools/featgen_main.cc).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class RangeError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

class EmptySourceError : public Error {
 public:
  using Error::Error;
};

class NoConfidentPixelError : public Error {
 public:
  using Error::Error;
};

class NonFiniteLossError : public Error {
 public:
  NonFiniteLossError(std::string term, double value)
      : Error("non-finite loss in term '" + term + "' (" + std::to_string(value) + ")"),
        term_(std::move(term)) {}
  const std::string& term() const { return term_; }

 private:
  std::string term_;
};

}  // namespace featgen

#pragma once

#include <stdexcept>
#include <string>

namespace nlab {

// Base for every error raised by the library. Subclasses map one-to-one to
// the failure categories the CLI reports.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(const std::string& what, std::size_t line)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}
  std::size_t line() const noexcept { return line_; }

 private:
  std::size_t line_;
};

class DomainError : public Error {
  using Error::Error;
};
class ShapeError : public Error {
  using Error::Error;
};
class ConfigError : public Error {
  using Error::Error;
};
class SizeError : public Error {
  using Error::Error;
};
class ArtifactError : public Error {
  using Error::Error;
};
class UsageError : public Error {
  using Error::Error;
};

// Positive and negative classes are both required (ROC, AUC).
class DegenerateClassError : public Error {
  using Error::Error;
};

class NumericError : public Error {
 public:
  NumericError(const std::string& what, std::string block)
      : Error(what + " [" + block + "]"), block_(std::move(block)) {}
  const std::string& block() const noexcept { return block_; }

 private:
  std::string block_;
};

}  // namespace nlab

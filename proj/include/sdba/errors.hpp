#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace sdba {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Invalid dimensions, unknown layer names, bad trigger geometry.
class ConfigError : public Error {
 public:
  using Error::Error;
};

/// Token ids outside the vocabulary and similar malformed inputs.
class DataError : public Error {
 public:
  using Error::Error;
};

/// Schema mismatch between updates and the global model.
class ProtocolError : public Error {
 public:
  using Error::Error;
};

class QueryError : public Error {
 public:
  using Error::Error;
};

class EvaluationError : public Error {
 public:
  using Error::Error;
};

class TrainingDivergence : public Error {
 public:
  explicit TrainingDivergence(std::size_t step)
      : Error("training diverged: non-finite loss at step " + std::to_string(step)), step_(step) {}

  std::size_t step() const noexcept { return step_; }

 private:
  std::size_t step_;
};

/// Invalid configuration value attributable to one config key.
class FieldError : public ConfigError {
 public:
  FieldError(std::string key, const std::string& what) : ConfigError(key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class ParseError : public Error {
 public:
  ParseError(std::string key, std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + (key.empty() ? "" : key + ": ") + what),
        key_(std::move(key)),
        line_(line) {}

  const std::string& key() const noexcept { return key_; }
  std::size_t line() const noexcept { return line_; }

 private:
  std::string key_;
  std::size_t line_;
};

class ComparisonError : public Error {
 public:
  using Error::Error;
};

}  // namespace sdba

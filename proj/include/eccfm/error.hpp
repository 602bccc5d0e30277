#pragma once

#include <stdexcept>
#include <string>

namespace eccfm {

// Base class for everything this library throws on contract violations
// (bad parse, rank deficiency, invalid config, non-finite numerics).
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ParseError : public Error {
 public:
  ParseError(const std::string& msg, int line)
      : Error(msg + " (line " + std::to_string(line) + ")"), line_(line) {}
  int line() const { return line_; }

 private:
  int line_;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Carries the diagnostic dump produced when a training step goes non-finite.
class TrainingError : public Error {
 public:
  TrainingError(const std::string& msg, std::string dump)
      : Error(msg), dump_(std::move(dump)) {}
  const std::string& dump() const { return dump_; }

 private:
  std::string dump_;
};

}  // namespace eccfm

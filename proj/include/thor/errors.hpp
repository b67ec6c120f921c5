#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace thor {

// Base for every error the library throws. The CLI maps the subclasses onto
// exit codes (data errors -> 2, contract/shape/index errors -> 3).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

class ContractError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class VocabularyError : public DataError {
 public:
  using DataError::DataError;
};

class IoError : public DataError {
 public:
  using DataError::DataError;
};

class SplitInfeasible : public DataError {
 public:
  using DataError::DataError;
};

// Aggregated parse failure: one entry per offending line.
class ParseError : public DataError {
 public:
  explicit ParseError(std::vector<std::string> issues)
      : DataError(join(issues)), issues_(std::move(issues)) {}

  const std::vector<std::string>& issues() const noexcept { return issues_; }

 private:
  static std::string join(const std::vector<std::string>& issues) {
    std::string out = std::to_string(issues.size()) + " parse error(s)";
    for (const auto& s : issues) {
      out += "\n  ";
      out += s;
    }
    return out;
  }

  std::vector<std::string> issues_;
};

}  // namespace thor

#pragma once

#include <stdexcept>
#include <string>

namespace semcov {

// Error taxonomy. The CLI maps ConfigError/UsageError to exit code 2 and the
// rest to exit code 1.

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ArgumentError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct ParseError : std::runtime_error {
  ParseError(const std::string& msg, long row = -1, std::string column = {})
      : std::runtime_error(format(msg, row, column)), row_(row), column_(std::move(column)) {}
  long row() const { return row_; }
  const std::string& column() const { return column_; }

 private:
  static std::string format(const std::string& msg, long row, const std::string& column) {
    std::string out = msg;
    if (row >= 0) out += " (row " + std::to_string(row);
    if (!column.empty()) out += (row >= 0 ? ", column " : " (column ") + column;
    if (row >= 0 || !column.empty()) out += ")";
    return out;
  }
  long row_;
  std::string column_;
};

/// Raised when a statistic cannot be formed (too few eligible groups, etc.).
struct DiagnosticError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainingError : std::runtime_error {
  TrainingError(const std::string& msg, long step) : std::runtime_error(msg + " at step " + std::to_string(step)), step_(step) {}
  long step() const { return step_; }

 private:
  long step_;
};

}  // namespace semcov

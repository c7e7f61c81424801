#pragma once

#include <stdexcept>
#include <string>

namespace ift {

// Error categories map 1:1 onto the CLI exit codes.
enum class ErrorKind {
  Config = 2,        // bad configuration / bad arguments
  Data = 3,          // malformed or inconsistent input data
  Prerequisite = 4,  // required artifact missing
  Numeric = 5,       // NaN divergence, degenerate geometry, singular systems
};

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const { return kind_; }
  int exit_code() const { return static_cast<int>(kind_); }

private:
  ErrorKind kind_;
};

}  // namespace ift

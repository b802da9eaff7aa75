#pragma once

#include <stdexcept>
#include <string>

namespace vip {

// Precondition / invariant violations on operation inputs.
struct DomainError : std::invalid_argument {
  explicit DomainError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Bad or inconsistent pipeline configuration (CLI exit code 2).
struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// File format / filesystem problems.
struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// A pipeline stage failed; carries the stage name and a machine-readable kind.
// kind is one of: "invalid_input", "io", "non_convergence", "internal".
struct StageError : std::runtime_error {
  std::string stage;
  std::string kind;
  StageError(std::string stage_, std::string kind_, const std::string& msg)
      : std::runtime_error("stage '" + stage_ + "' failed (" + kind_ + "): " + msg),
        stage(std::move(stage_)),
        kind(std::move(kind_)) {}
};

}  // namespace vip

#pragma once

#include <stdexcept>
#include <string>

namespace casp {

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ValidationError : std::runtime_error {
  explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

struct IoError : std::runtime_error {
  explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Thrown when a code path reads a hidden target label while the guard is armed.
struct GuardViolation : std::runtime_error {
  explicit GuardViolation(const std::string& msg) : std::runtime_error(msg) {}
};

// Wraps a stage failure inside run_experiment with the stage name and the
// artifact directory for post-mortem.
struct PipelineError : std::runtime_error {
  explicit PipelineError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace casp

#pragma once

#include <stdexcept>
#include <string>

namespace gridmpc {

/// Invalid model or configuration data (rejected at construction / load time).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Inputs outside an operation's mathematical domain.
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

/// Numerical method failed to produce a usable answer.
class SolverError : public std::runtime_error {
 public:
  SolverError(const std::string& what, double last_residual = 0.0)
      : std::runtime_error(what), last_residual_(last_residual) {}
  double last_residual() const noexcept { return last_residual_; }

 private:
  double last_residual_;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace gridmpc

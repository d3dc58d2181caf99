#pragma once

#include <stdexcept>
#include <string>
#include <vector>

namespace perhom {

// Error taxonomy shared by all modules. Each condition named in a
// module contract gets its own type so callers can react selectively.

struct GeometryUnresolved : std::runtime_error {
  explicit GeometryUnresolved(const std::string& m) : std::runtime_error("GeometryUnresolved: " + m) {}
};

struct GridMismatch : std::runtime_error {
  explicit GridMismatch(const std::string& m) : std::runtime_error("GridMismatch: " + m) {}
};

struct InvalidWeight : std::runtime_error {
  explicit InvalidWeight(const std::string& m) : std::runtime_error("InvalidWeight: " + m) {}
};

struct DegenerateMass : std::runtime_error {
  explicit DegenerateMass(const std::string& m) : std::runtime_error("DegenerateMass: " + m) {}
};

struct KernelUnresolved : std::runtime_error {
  explicit KernelUnresolved(const std::string& m) : std::runtime_error("KernelUnresolved: " + m) {}
};

struct SolverStalled : std::runtime_error {
  SolverStalled(const std::string& m, std::vector<double> history)
      : std::runtime_error("SolverStalled: " + m), residual_history(std::move(history)) {}
  std::vector<double> residual_history;
};

struct RankExceeded : std::runtime_error {
  explicit RankExceeded(const std::string& m) : std::runtime_error("RankExceeded: " + m) {}
};

struct OracleTooLarge : std::runtime_error {
  explicit OracleTooLarge(const std::string& m) : std::runtime_error("OracleTooLarge: " + m) {}
};

struct MeanZeroViolated : std::runtime_error {
  explicit MeanZeroViolated(const std::string& m) : std::runtime_error("MeanZeroViolated: " + m) {}
};

struct ListTooShort : std::runtime_error {
  explicit ListTooShort(const std::string& m) : std::runtime_error("ListTooShort: " + m) {}
};

struct EmptyBand : std::runtime_error {
  explicit EmptyBand(const std::string& m) : std::runtime_error("EmptyBand: " + m) {}
};

struct RankDeficientTrialSpace : std::runtime_error {
  explicit RankDeficientTrialSpace(const std::string& m) : std::runtime_error("RankDeficientTrialSpace: " + m) {}
};

struct InsufficientPoints : std::runtime_error {
  explicit InsufficientPoints(const std::string& m) : std::runtime_error("InsufficientPoints: " + m) {}
};

struct BudgetExceeded : std::runtime_error {
  explicit BudgetExceeded(const std::string& m) : std::runtime_error("BudgetExceeded: " + m) {}
};

struct ConfigError : std::runtime_error {
  explicit ConfigError(const std::string& m) : std::runtime_error("ConfigError: " + m) {}
};

struct InvariantViolation : std::runtime_error {
  explicit InvariantViolation(const std::string& m) : std::runtime_error("InvariantViolation: " + m) {}
};

}  // namespace perhom

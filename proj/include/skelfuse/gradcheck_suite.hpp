#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "skelfuse/tensor.hpp"

namespace skelfuse {

/// Named finite-difference checks. Each check builds its own inputs and
/// returns the worst relative error seen.
class GradCheckRegistry {
 public:
  using Check = std::function<ad::GradCheckResult()>;

  /// Adds a check, replacing any existing check of the same name in place.
  void add(const std::string& name, Check check);
  bool empty() const { return checks_.empty(); }
  std::size_t size() const { return checks_.size(); }
  const std::vector<std::pair<std::string, Check>>& checks() const { return checks_; }

 private:
  std::vector<std::pair<std::string, Check>> checks_;
};

/// Every differentiable op plus the composed models and both losses, on
/// toy sizes drawn from `seed`.
GradCheckRegistry default_gradcheck_registry(std::uint64_t seed = 0);

struct GradCheckOutcome {
  std::string name;
  ad::GradCheckResult result;
};

struct GradCheckReport {
  std::vector<GradCheckOutcome> outcomes;
  std::string worst_name;
  double worst_error = 0.0;
  bool passed = false;  // false for an empty registry
};

GradCheckReport run_gradchecks(const GradCheckRegistry& registry, double tolerance = 1e-4);

}  // namespace skelfuse

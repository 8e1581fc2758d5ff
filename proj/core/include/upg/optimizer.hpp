#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "upg/policy.hpp"

namespace upg {

enum class OptimizerKind { kSgd, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double lr = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

std::string to_string(OptimizerKind k);
OptimizerKind parse_optimizer_kind(const std::string& s);

struct OptimizerState {
  std::uint64_t t = 0;
  std::vector<double> m;
  std::vector<double> v;
};

// theta <- theta - lr * update(grad). The only place PolicyParams are mutated
// during training.
class Optimizer {
 public:
  Optimizer(OptimizerConfig cfg, std::size_t size);
  Optimizer(OptimizerConfig cfg, OptimizerState state);

  // Applies one update and returns the L2 norm of the parameter change.
  double step(PolicyParams& params, const GradientVector& grad);

  const OptimizerConfig& config() const { return cfg_; }
  const OptimizerState& state() const { return state_; }

 private:
  OptimizerConfig cfg_;
  OptimizerState state_;
};

}  // namespace upg

#include "upg/optimizer.hpp"

#include <cmath>

#include "upg/errors.hpp"

namespace upg {

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (kind == OptimizerKind::kAdam) {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
      throw ConfigError("adam betas must lie in [0, 1)");
    if (!(eps > 0.0)) throw ConfigError("adam eps must be > 0");
  }
}

std::string to_string(OptimizerKind k) { return k == OptimizerKind::kSgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::kSgd;
  if (s == "adam" || s == "adam_like") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd | adam)");
}

Optimizer::Optimizer(OptimizerConfig cfg, std::size_t size) : cfg_(cfg) {
  cfg_.validate();
  if (cfg_.kind == OptimizerKind::kAdam) {
    state_.m.assign(size, 0.0);
    state_.v.assign(size, 0.0);
  }
}

Optimizer::Optimizer(OptimizerConfig cfg, OptimizerState state) : cfg_(cfg), state_(std::move(state)) {
  cfg_.validate();
}

double Optimizer::step(PolicyParams& params, const GradientVector& grad) {
  auto w = params.weights();
  if (grad.size() != w.size()) throw InputError("gradient size does not match parameters");
  ++state_.t;
  double delta_sq = 0.0;
  if (cfg_.kind == OptimizerKind::kSgd) {
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double d = cfg_.lr * grad[i];
      w[i] -= d;
      delta_sq += d * d;
    }
    return std::sqrt(delta_sq);
  }
  const double t = static_cast<double>(state_.t);
  const double c1 = 1.0 - std::pow(cfg_.beta1, t);
  const double c2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < w.size(); ++i) {
    auto& m = state_.m[i];
    auto& v = state_.v[i];
    m = cfg_.beta1 * m + (1.0 - cfg_.beta1) * grad[i];
    v = cfg_.beta2 * v + (1.0 - cfg_.beta2) * grad[i] * grad[i];
    const double d = cfg_.lr * (m / c1) / (std::sqrt(v / c2) + cfg_.eps);
    w[i] -= d;
    delta_sq += d * d;
  }
  return std::sqrt(delta_sq);
}

}  // namespace upg

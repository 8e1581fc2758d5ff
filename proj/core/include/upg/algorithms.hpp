#pragma once

// Loss-based reference implementations of the post-training algorithms.
//
// Nothing here goes through the unified estimator: each loss is written
// directly from its published objective so that its gradient (closed form or
// finite differences) can serve as an independent oracle for the estimator.
// Losses are minimized; the matching objective gradient is -grad(loss).

#include <functional>
#include <span>
#include <vector>

#include "upg/estimator.hpp"
#include "upg/policy.hpp"
#include "upg/tasks.hpp"

namespace upg {

struct LossValue {
  double value = 0.0;
  std::vector<double> per_trajectory_terms;

  static LossValue from_terms(std::vector<double> terms);
};

// mean_i -(1/|tau*_i|) sum_t log pi(tau*_t | q, tau*_<t)
LossValue sft_loss(const PolicyParams& params, std::span<const DemonstrationRecord> demos);
// Closed-form gradient of sft_loss: -mean_i (1/|tau*_i|) sum_t grad pi / pi.
GradientVector sft_loss_gradient(const PolicyParams& params,
                                 std::span<const DemonstrationRecord> demos);

// -mean_j (1/|tau_j|) sum_t A_j log pi(tau_t); advantages are constants.
LossValue reinforce_loss(const PolicyParams& params, std::span<const Trajectory> rollouts,
                         std::span<const double> advantages);

// -mean_j (1/|tau_j|) sum_t min(rho A_j, clip(rho, 1-eps_low, 1+eps_high) A_j),
// rho = pi_theta / pi_ref with pi_ref the recorded rollout probability
// (RefKind::kRollout) or 1 (RefKind::kUnit).
LossValue ppo_style_loss(const PolicyParams& params, std::span<const Trajectory> rollouts,
                         std::span<const double> advantages, RefKind ref_kind, double eps_low,
                         double eps_high);

// CISPO: -mean_j (1/|tau_j|) sum_t sg[clip(rho_t)] A_j log pi(tau_t), with the
// clipped ratio frozen at `anchor`.
LossValue cispo_loss(const PolicyParams& params, const PolicyParams& anchor,
                     std::span<const Trajectory> rollouts, std::span<const double> advantages,
                     double eps_low, double eps_high);

// GSPO: -mean_j min(s_j A_j, clip(s_j, 1-eps, 1+eps) A_j) with the
// length-normalized sequence ratio s_j = (pi_theta(tau)/pi_old(tau))^(1/|tau|).
LossValue gspo_loss(const PolicyParams& params, std::span<const Trajectory> rollouts,
                    std::span<const double> advantages, double eps);

// -mean_j (1/|tau_j|) sum_t pi(tau_t) A_j
LossValue srft_offline_loss(const PolicyParams& params, std::span<const Trajectory> demos,
                            std::span<const double> advantages);

// -mean_j (1/|tau_j|) sum_t f(pi(tau_t)) A_j with f(p) = p / (p + gamma).
LossValue luffy_offline_loss(const PolicyParams& params, std::span<const Trajectory> demos,
                             std::span<const double> advantages, double gamma);

double mixed_loss(double alpha, double beta, const LossValue& rl, const LossValue& sft);

using ParamFunction = std::function<double(const PolicyParams&)>;

// Central differences (f(theta + h e_i) - f(theta - h e_i)) / 2h per coordinate.
GradientVector finite_difference_grad(const ParamFunction& f, const PolicyParams& params, double h);

// Enumeration of the generation tree: every token sequence reachable by
// sample_trajectory (stop at EOS or max_len) with its exact log-probability.
struct EnumeratedTrajectory {
  TokenSeq tokens;
  double log_prob = 0.0;
};

inline constexpr double kMaxEnumeration = 1e6;

// Throws ConfigError when V^max_len exceeds kMaxEnumeration.
void check_enumerable(int vocab_size, int max_len);
std::vector<EnumeratedTrajectory> enumerate_trajectories(const PolicyParams& params,
                                                         std::span<const TokenId> question,
                                                         int max_len);

struct ObjectiveSetup {
  const Task* task = nullptr;
  const BehaviorPolicy* behavior = nullptr;  // required when mu > 0
  std::vector<TokenSeq> questions;
  int max_len = 3;
};

// mean_q [ sum_tau pi(tau|q) r(tau|q) ] - mu * KL(pi_beta || pi_theta).
double common_objective_exact(const PolicyParams& params, const ObjectiveSetup& setup, double mu);

// The same objective with an added -lambda * KL(pi_theta || pi_ref).
double trust_region_objective_exact(const PolicyParams& params, const PolicyParams& reference,
                                    const ObjectiveSetup& setup, double lambda, double mu);

}  // namespace upg

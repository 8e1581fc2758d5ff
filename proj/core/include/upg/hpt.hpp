#pragma once

// Hybrid post-training controller: per-question rollout performance, the
// switch gate that picks SFT or RL for the question, and the resulting
// mixed-loss gradient.

#include <span>
#include <string>
#include <utility>
#include <vector>

#include "upg/estimator.hpp"
#include "upg/policy.hpp"
#include "upg/tasks.hpp"

namespace upg {

enum class Branch { kSft, kRl };
std::string to_string(Branch b);

struct GateConfig {
  enum class Kind { kSwitch, kTable };

  Kind kind = Kind::kSwitch;
  // Correct-count threshold: SFT iff round(P * n) <= gamma.
  int gamma = 0;
  int n = 8;
  // kTable: (alpha, beta) for each correct count 0..n.
  std::vector<std::pair<int, int>> table;

  void validate() const;
};

struct RolloutGroup {
  TokenSeq question;
  std::vector<Trajectory> trajectories;
  std::vector<int> scores;
  double P = 0.0;
};

struct RoutingDecision {
  int alpha = 0;
  int beta = 1;
  Branch branch = Branch::kSft;
};

// Arithmetic mean of verifier scores.
double performance(std::span<const int> scores);
RoutingDecision feedback_coefficients(double P, const GateConfig& cfg);

RolloutGroup sample_group(const PolicyParams& params, const Task& task, const TokenSeq& question,
                          int n, double temperature, Engine& rng);

// Mean per-token policy entropy over the group's generated tokens.
double mean_token_entropy(const PolicyParams& params, std::span<const Trajectory> trajectories);

// Loss gradients (to be descended) for each branch.
GradientVector sft_branch_gradient(const PolicyParams& params, const TokenSeq& question,
                                   const TokenSeq& demonstration);
// `behavior` feeds the behavior ratio when the components use mu > 0.
GradientVector rl_branch_gradient(const PolicyParams& params, const RolloutGroup& group,
                                  const EstimatorComponents& comps,
                                  const BehaviorPolicy* behavior = nullptr);
// SRFT-style off-policy loss on the demonstration, with its advantage
// normalized over the on-policy group united with the offline sample.
GradientVector srft_offline_gradient(const PolicyParams& params, const RolloutGroup& group,
                                     const TokenSeq& demonstration);

struct StepRecord {
  int step = 0;
  int question_id = 0;
  double P = 0.0;
  Branch branch = Branch::kSft;
  double reward_mean = 0.0;
  double entropy_mean = 0.0;
  double resp_len_mean = 0.0;
  int rollouts = 0;
};

// Which gradient each question receives.
struct RoutingPolicy {
  enum class Mode { kGate, kAlwaysSft, kAlwaysRl };
  Mode mode = Mode::kGate;
  GateConfig gate;
  // Low-performance branch = w_sft * grad L_SFT + w_off * grad L_SRFT-offline.
  double w_sft = 1.0;
  double w_off = 0.0;
};

struct StepOptions {
  RoutingPolicy routing;
  EstimatorComponents rl_components = preset("grpo");
  double temperature = 1.0;
  const BehaviorPolicy* behavior = nullptr;
};

struct StepResult {
  GradientVector gradient;
  StepRecord record;
  RoutingDecision decision;
  RolloutGroup group;
};

// Draws the rollout group, routes the question, and returns its loss gradient.
StepResult routed_step(const PolicyParams& params, const TokenSeq& question, const Task& task,
                       const DemoIndex& demos, const StepOptions& opts, Engine& rng);

// One hybrid step for one question: switch gate, SFT on tau* or RL on the
// already-drawn rollouts.
StepResult hpt_step(const PolicyParams& params, const TokenSeq& question, const Task& task,
                    const DemoIndex& demos, const GateConfig& cfg,
                    const EstimatorComponents& rl_components, Engine& rng);

}  // namespace upg

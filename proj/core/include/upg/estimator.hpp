#pragma once

// The unified policy-gradient estimator
//
//     grad = 1_stable * (1 / pi_ref) * A_hat * grad pi_theta
//
// assembled per token from four independently selectable components: a
// stabilization mask, a reference-policy denominator, an advantage estimate
// and an optional shaping factor on the likelihood gradient. Each published
// algorithm is a particular selection; see `preset`.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "upg/policy.hpp"

namespace upg {

enum class MaskType { kNone, kPpoClip, kCispoClamp, kGspoSeqClip };
enum class RefKind { kCurrent, kRollout, kUnit, kGspoGeometric };
enum class AdvantageType { kSftOne, kFixedSign, kGrpo, kDrGrpo, kSrftUnion, kUnified, kTrustRegion };
enum class ShapingType { kIdentity, kLuffy };

struct MaskKind {
  MaskType type = MaskType::kNone;
  double eps_low = 0.2;
  double eps_high = 0.2;  // gspo_seq_clip uses eps_low for both sides
};

struct AdvantageKind {
  AdvantageType type = AdvantageType::kSftOne;
  double mu = 0.0;
  double lambda = 0.0;
};

struct ShapingKind {
  ShapingType type = ShapingType::kIdentity;
  double gamma = 0.1;
};

struct EstimatorComponents {
  MaskKind mask;
  RefKind ref = RefKind::kCurrent;
  AdvantageKind advantage;
  ShapingKind shaping;

  // Throws ConfigError on non-positive eps / gamma or negative mu / lambda.
  void validate() const;
  std::string describe() const;
};

struct PresetOptions {
  double eps_low = 0.2;
  double eps_high = 0.2;
  double luffy_gamma = 0.1;
  double mu = 0.0;
  double lambda = 0.0;
};

// Table-row ids: sft, reinforce, ppo, grpo, dr_grpo, cispo, gspo, srft_off,
// luffy_off; plus "unified" (reference = current, trust-region advantage).
EstimatorComponents preset(std::string_view name, const PresetOptions& opts = {});
const std::vector<std::string>& preset_names();
// The eight rows of the unified-view table (no dr_grpo / unified).
const std::vector<std::string>& table_preset_names();

// Additive guard on every standard deviation used for normalization.
inline constexpr double kStdGuard = 1e-6;

struct TokenRecord {
  Context ctx;
  TokenId token = 0;
  double p_current = 1.0;
  double p_rollout = 1.0;
  int seq_len = 0;
  double seq_logprob_current = 0.0;
  double seq_logprob_rollout = 0.0;
};

// Per-token records for `traj` under `params`; the rollout side comes from
// the trajectory's recorded generation probabilities.
std::vector<TokenRecord> build_records(const PolicyParams& params, const Trajectory& traj);

struct AdvantageInputs {
  double reward = 0.0;
  std::vector<double> group_rewards_on;
  std::vector<double> group_rewards_off;
  // pi_beta(tau) / pi_theta(tau); nullopt when tau is outside pi_beta's
  // support (or no behavior policy applies).
  std::optional<double> behavior_ratio;
  // Filled by the estimator from the token records; used by trust_region.
  double seq_logprob_current = 0.0;
  double seq_logprob_ref = 0.0;
};

double advantage(const AdvantageKind& kind, const AdvantageInputs& inputs);

// Population mean / std helpers and whole-group advantages.
double mean_of(std::span<const double> xs);
double population_std(std::span<const double> xs);
std::vector<double> grpo_advantages(std::span<const double> rewards);
std::vector<double> dr_grpo_advantages(std::span<const double> rewards);

double reference_prob(RefKind kind, const TokenRecord& rec);

struct MaskResult {
  double weight = 1.0;
  bool dropped = false;
};

MaskResult stabilization_mask(const MaskKind& kind, const TokenRecord& rec, double adv);

double shaping_weight(const ShapingKind& kind, double p_current);

struct EstimatorSample {
  Trajectory trajectory;
  AdvantageInputs advantage;
};

struct EstimatorStats {
  std::size_t tokens = 0;
  std::size_t dropped_tokens = 0;
};

// out += scale * sum_t mask * shaping * A / pi_ref * grad pi(token_t), with no
// length normalization. Returns the advantage used.
double accumulate_trajectory_estimand(const PolicyParams& params, const EstimatorComponents& comps,
                                      const EstimatorSample& sample, double scale,
                                      std::span<double> out, EstimatorStats* stats = nullptr);

// Mean over samples of (1/|tau_j|) * trajectory estimand. Samples are reduced
// in index order. Masked-out trajectories still count in the mean.
GradientVector unified_gradient(std::span<const EstimatorSample> batch,
                                const EstimatorComponents& comps, const PolicyParams& params,
                                EstimatorStats* stats = nullptr);

}  // namespace upg

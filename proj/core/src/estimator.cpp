#include "upg/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "upg/errors.hpp"

namespace upg {

void EstimatorComponents::validate() const {
  if (mask.type != MaskType::kNone && (!(mask.eps_low > 0.0) || !(mask.eps_high > 0.0)))
    throw ConfigError("mask eps values must be positive");
  if (advantage.mu < 0.0) throw ConfigError("mu must be >= 0");
  if (advantage.lambda < 0.0) throw ConfigError("lambda must be >= 0");
  if (shaping.type == ShapingType::kLuffy && !(shaping.gamma > 0.0))
    throw ConfigError("luffy shaping gamma must be > 0");
}

std::string EstimatorComponents::describe() const {
  std::ostringstream os;
  switch (mask.type) {
    case MaskType::kNone: os << "mask=none"; break;
    case MaskType::kPpoClip: os << "mask=ppo_clip(" << mask.eps_low << "," << mask.eps_high << ")"; break;
    case MaskType::kCispoClamp: os << "mask=cispo_clamp(" << mask.eps_low << "," << mask.eps_high << ")"; break;
    case MaskType::kGspoSeqClip: os << "mask=gspo_seq_clip(" << mask.eps_low << ")"; break;
  }
  static constexpr const char* kRefNames[] = {"current", "rollout", "unit", "gspo_geometric"};
  os << " ref=" << kRefNames[static_cast<int>(ref)];
  static constexpr const char* kAdvNames[] = {"sft_one",    "fixed_sign", "grpo",        "dr_grpo",
                                              "srft_union", "unified",    "trust_region"};
  os << " adv=" << kAdvNames[static_cast<int>(advantage.type)];
  if (advantage.type == AdvantageType::kUnified) os << "(mu=" << advantage.mu << ")";
  if (advantage.type == AdvantageType::kTrustRegion)
    os << "(lambda=" << advantage.lambda << ",mu=" << advantage.mu << ")";
  if (shaping.type == ShapingType::kLuffy)
    os << " shaping=luffy(" << shaping.gamma << ")";
  else
    os << " shaping=identity";
  return os.str();
}

EstimatorComponents preset(std::string_view name, const PresetOptions& o) {
  const MaskKind clip{MaskType::kPpoClip, o.eps_low, o.eps_high};
  EstimatorComponents c;
  if (name == "sft") {
    c = {{}, RefKind::kCurrent, {AdvantageType::kSftOne}, {}};
  } else if (name == "reinforce") {
    c = {{}, RefKind::kCurrent, {AdvantageType::kFixedSign}, {}};
  } else if (name == "ppo") {
    // Terminal reward broadcast to every token stands in for GAE.
    c = {clip, RefKind::kRollout, {AdvantageType::kUnified, 0.0, 0.0}, {}};
  } else if (name == "grpo") {
    c = {clip, RefKind::kRollout, {AdvantageType::kGrpo}, {}};
  } else if (name == "dr_grpo") {
    c = {clip, RefKind::kRollout, {AdvantageType::kDrGrpo}, {}};
  } else if (name == "cispo") {
    c = {{MaskType::kCispoClamp, o.eps_low, o.eps_high}, RefKind::kRollout, {AdvantageType::kGrpo}, {}};
  } else if (name == "gspo") {
    c = {{MaskType::kGspoSeqClip, o.eps_low, o.eps_low}, RefKind::kGspoGeometric,
         {AdvantageType::kGrpo}, {}};
  } else if (name == "srft_off") {
    c = {{}, RefKind::kUnit, {AdvantageType::kSrftUnion}, {}};
  } else if (name == "luffy_off") {
    c = {{}, RefKind::kUnit, {AdvantageType::kSrftUnion}, {ShapingType::kLuffy, o.luffy_gamma}};
  } else if (name == "unified") {
    c = {{}, RefKind::kCurrent, {AdvantageType::kTrustRegion, o.mu, o.lambda}, {}};
  } else {
    throw ConfigError("unknown estimator preset '" + std::string(name) + "'");
  }
  c.validate();
  return c;
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> names{"sft",  "reinforce", "ppo",       "grpo",   "dr_grpo",
                                              "cispo", "gspo",     "srft_off", "luffy_off", "unified"};
  return names;
}

const std::vector<std::string>& table_preset_names() {
  static const std::vector<std::string> names{"sft",   "reinforce", "ppo",      "grpo",
                                              "cispo", "gspo",      "srft_off", "luffy_off"};
  return names;
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) throw InputError("mean of empty group");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double population_std(std::span<const double> xs) {
  const double m = mean_of(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

std::vector<double> grpo_advantages(std::span<const double> rewards) {
  const double m = mean_of(rewards);
  const double sd = population_std(rewards);
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back((r - m) / (sd + kStdGuard));
  return out;
}

std::vector<double> dr_grpo_advantages(std::span<const double> rewards) {
  const double m = mean_of(rewards);
  std::vector<double> out;
  out.reserve(rewards.size());
  for (double r : rewards) out.push_back(r - m);
  return out;
}

double advantage(const AdvantageKind& kind, const AdvantageInputs& in) {
  const double sft_term = in.behavior_ratio ? kind.mu * *in.behavior_ratio : 0.0;
  switch (kind.type) {
    case AdvantageType::kSftOne:
      return 1.0;
    case AdvantageType::kFixedSign:
      return in.reward > 0.5 ? 1.0 : -1.0;
    case AdvantageType::kGrpo: {
      if (in.group_rewards_on.empty()) throw InputError("grpo advantage needs a nonempty group");
      return (in.reward - mean_of(in.group_rewards_on)) /
             (population_std(in.group_rewards_on) + kStdGuard);
    }
    case AdvantageType::kDrGrpo:
      if (in.group_rewards_on.empty()) throw InputError("dr_grpo advantage needs a nonempty group");
      return in.reward - mean_of(in.group_rewards_on);
    case AdvantageType::kSrftUnion: {
      std::vector<double> all = in.group_rewards_on;
      all.insert(all.end(), in.group_rewards_off.begin(), in.group_rewards_off.end());
      if (all.empty()) throw InputError("srft advantage needs a nonempty group");
      return (in.reward - mean_of(all)) / (population_std(all) + kStdGuard);
    }
    case AdvantageType::kUnified:
      return in.reward + sft_term;
    case AdvantageType::kTrustRegion:
      return in.reward - kind.lambda * (in.seq_logprob_current - in.seq_logprob_ref) + sft_term;
  }
  return 0.0;
}

double reference_prob(RefKind kind, const TokenRecord& rec) {
  switch (kind) {
    case RefKind::kCurrent:
      return rec.p_current;
    case RefKind::kRollout:
      return rec.p_rollout;
    case RefKind::kUnit:
      return 1.0;
    case RefKind::kGspoGeometric:
      return rec.p_current *
             std::exp((rec.seq_logprob_rollout - rec.seq_logprob_current) / rec.seq_len);
  }
  return 1.0;
}

namespace {

// Zero derivative of min(rho*A, clip(rho)*A) in the harmful direction.
bool clip_drops(double rho, double adv, double eps_low, double eps_high) {
  return (rho > 1.0 + eps_high && adv > 0.0) || (rho < 1.0 - eps_low && adv < 0.0);
}

}  // namespace

MaskResult stabilization_mask(const MaskKind& kind, const TokenRecord& rec, double adv) {
  switch (kind.type) {
    case MaskType::kNone:
      return {};
    case MaskType::kPpoClip: {
      const double rho = rec.p_current / std::max(rec.p_rollout, kProbFloor);
      if (clip_drops(rho, adv, kind.eps_low, kind.eps_high)) return {0.0, true};
      return {};
    }
    case MaskType::kCispoClamp: {
      const double rho = rec.p_current / std::max(rec.p_rollout, kProbFloor);
      return {std::clamp(rho, 1.0 - kind.eps_low, 1.0 + kind.eps_high) / rho, false};
    }
    case MaskType::kGspoSeqClip: {
      const double s = std::exp((rec.seq_logprob_current - rec.seq_logprob_rollout) / rec.seq_len);
      if (clip_drops(s, adv, kind.eps_low, kind.eps_low)) return {0.0, true};
      return {};
    }
  }
  return {};
}

double shaping_weight(const ShapingKind& kind, double p_current) {
  if (kind.type == ShapingType::kIdentity) return 1.0;
  const double d = p_current + kind.gamma;
  return kind.gamma / (d * d);
}

namespace {

struct TokenStep {
  TokenRecord rec;
  std::vector<double> probs;
};

std::vector<TokenStep> token_steps(const PolicyParams& params, const Trajectory& traj) {
  if (traj.gen_token_probs.size() != traj.tokens.size())
    throw InputError("trajectory gen_token_probs length does not match tokens");
  std::vector<TokenStep> steps;
  steps.reserve(traj.tokens.size());
  const std::span<const TokenId> tokens(traj.tokens);
  double lp_current = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const TokenId tok = tokens[t];
    if (!params.vocab().contains(tok)) throw InputError("trajectory token out of range");
    TokenStep s{{params.context(traj.question, tokens.first(t)), tok}, {}};
    s.probs = token_distribution(params, s.rec.ctx);
    s.rec.p_current = s.probs[tok];
    s.rec.p_rollout = traj.gen_token_probs[t];
    lp_current += floored_log(s.rec.p_current);
    steps.push_back(std::move(s));
  }
  for (auto& s : steps) {
    s.rec.seq_len = static_cast<int>(tokens.size());
    s.rec.seq_logprob_current = lp_current;
    s.rec.seq_logprob_rollout = traj.gen_logprob_sum;
  }
  return steps;
}

}  // namespace

std::vector<TokenRecord> build_records(const PolicyParams& params, const Trajectory& traj) {
  std::vector<TokenRecord> out;
  for (auto& s : token_steps(params, traj)) out.push_back(std::move(s.rec));
  return out;
}

double accumulate_trajectory_estimand(const PolicyParams& params, const EstimatorComponents& comps,
                                      const EstimatorSample& sample, double scale,
                                      std::span<double> out, EstimatorStats* stats) {
  // Only the trust-region advantage depends on the current sequence
  // log-probability; otherwise a zero advantage short-circuits the pass.
  if (comps.advantage.type != AdvantageType::kTrustRegion) {
    const double adv = advantage(comps.advantage, sample.advantage);
    if (adv == 0.0) {
      if (stats) stats->tokens += sample.trajectory.length();
      return adv;
    }
  }
  const auto steps = token_steps(params, sample.trajectory);
  AdvantageInputs in = sample.advantage;
  if (!steps.empty()) {
    in.seq_logprob_current = steps.front().rec.seq_logprob_current;
    in.seq_logprob_ref = steps.front().rec.seq_logprob_rollout;
  }
  const double adv = advantage(comps.advantage, in);
  for (const auto& s : steps) {
    const MaskResult m = stabilization_mask(comps.mask, s.rec, adv);
    if (stats) {
      ++stats->tokens;
      if (m.dropped) ++stats->dropped_tokens;
    }
    if (m.weight == 0.0 || adv == 0.0) continue;
    const double coef = m.weight * shaping_weight(comps.shaping, s.rec.p_current) * adv /
                        std::max(reference_prob(comps.ref, s.rec), kProbFloor);
    // grad pi = pi * grad log pi
    accumulate_grad_log_prob(s.rec.ctx, s.rec.token, s.probs, scale * coef * s.rec.p_current,
                             params.feature_dim(), out);
  }
  return adv;
}

GradientVector unified_gradient(std::span<const EstimatorSample> batch,
                                const EstimatorComponents& comps, const PolicyParams& params,
                                EstimatorStats* stats) {
  GradientVector g(params.size());
  if (batch.empty()) return g;
  const double inv_batch = 1.0 / static_cast<double>(batch.size());
  for (const auto& sample : batch) {
    const auto len = sample.trajectory.length();
    if (len == 0) continue;
    accumulate_trajectory_estimand(params, comps, sample, inv_batch / static_cast<double>(len),
                                   g.values, stats);
  }
  return g;
}

}  // namespace upg

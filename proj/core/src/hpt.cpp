#include "upg/hpt.hpp"

#include <cmath>
#include <sstream>

#include "upg/errors.hpp"

namespace upg {

std::string to_string(Branch b) { return b == Branch::kSft ? "SFT" : "RL"; }

void GateConfig::validate() const {
  if (n < 1) throw ConfigError("rollouts per question must be >= 1");
  if (kind == Kind::kSwitch) {
    if (gamma < 0 || gamma >= n)
      throw ConfigError("gate gamma must satisfy 0 <= gamma < n (got gamma=" +
                        std::to_string(gamma) + ", n=" + std::to_string(n) + ")");
    return;
  }
  if (table.size() != static_cast<std::size_t>(n) + 1)
    throw ConfigError("gate table needs n + 1 entries");
  for (auto [a, b] : table)
    if (a + b != 1 || a < 0 || b < 0) throw ConfigError("gate table entries must be (1,0) or (0,1)");
}

double performance(std::span<const int> scores) {
  if (scores.empty()) throw InputError("performance of an empty rollout group");
  double s = 0.0;
  for (int v : scores) s += v;
  return s / static_cast<double>(scores.size());
}

RoutingDecision feedback_coefficients(double P, const GateConfig& cfg) {
  const int correct = static_cast<int>(std::lround(P * cfg.n));
  if (cfg.kind == GateConfig::Kind::kTable) {
    const auto [a, b] = cfg.table.at(static_cast<std::size_t>(correct));
    return {a, b, b == 1 ? Branch::kSft : Branch::kRl};
  }
  if (correct <= cfg.gamma) return {0, 1, Branch::kSft};
  return {1, 0, Branch::kRl};
}

RolloutGroup sample_group(const PolicyParams& params, const Task& task, const TokenSeq& question,
                          int n, double temperature, Engine& rng) {
  RolloutGroup g;
  g.question = question;
  for (int i = 0; i < n; ++i) {
    g.trajectories.push_back(sample_trajectory(params, question, task.max_len(), temperature, rng));
    g.scores.push_back(verify(task, question, g.trajectories.back()));
  }
  g.P = performance(g.scores);
  return g;
}

double mean_token_entropy(const PolicyParams& params, std::span<const Trajectory> trajectories) {
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> probs(static_cast<std::size_t>(params.vocab_size()));
  for (const auto& traj : trajectories) {
    const std::span<const TokenId> tokens(traj.tokens);
    for (std::size_t t = 0; t < tokens.size(); ++t) {
      token_distribution_into(params, params.context(traj.question, tokens.first(t)), probs);
      total += entropy_of(probs);
      ++count;
    }
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

GradientVector sft_branch_gradient(const PolicyParams& params, const TokenSeq& question,
                                   const TokenSeq& demonstration) {
  const EstimatorSample sample{point_mass_trajectory(question, demonstration), {}};
  return -unified_gradient(std::span(&sample, 1), preset("sft"), params);
}

GradientVector rl_branch_gradient(const PolicyParams& params, const RolloutGroup& group,
                                  const EstimatorComponents& comps,
                                  const BehaviorPolicy* behavior) {
  const std::vector<double> rewards(group.scores.begin(), group.scores.end());
  std::vector<EstimatorSample> batch;
  batch.reserve(group.trajectories.size());
  for (std::size_t i = 0; i < group.trajectories.size(); ++i) {
    EstimatorSample s{group.trajectories[i], {}};
    s.advantage.reward = rewards[i];
    s.advantage.group_rewards_on = rewards;
    if (behavior != nullptr && comps.advantage.mu > 0.0) {
      const auto lb = behavior_log_prob(*behavior, group.question, s.trajectory.tokens);
      if (!lb.impossible)
        s.advantage.behavior_ratio =
            std::exp(lb.value - sequence_log_prob(params, group.question, s.trajectory.tokens));
    }
    batch.push_back(std::move(s));
  }
  return -unified_gradient(batch, comps, params);
}

GradientVector srft_offline_gradient(const PolicyParams& params, const RolloutGroup& group,
                                     const TokenSeq& demonstration) {
  EstimatorSample s{point_mass_trajectory(group.question, demonstration), {}};
  s.advantage.reward = 1.0;
  s.advantage.group_rewards_on.assign(group.scores.begin(), group.scores.end());
  s.advantage.group_rewards_off = {1.0};
  return -unified_gradient(std::span(&s, 1), preset("srft_off"), params);
}

namespace {

std::string describe_question(const TokenSeq& q) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < q.size(); ++i) os << (i ? "," : "") << q[i];
  os << ']';
  return os.str();
}

}  // namespace

StepResult routed_step(const PolicyParams& params, const TokenSeq& question, const Task& task,
                       const DemoIndex& demos, const StepOptions& opts, Engine& rng) {
  const auto& routing = opts.routing;
  StepResult out;
  out.group = sample_group(params, task, question, routing.gate.n, opts.temperature, rng);
  switch (routing.mode) {
    case RoutingPolicy::Mode::kGate:
      out.decision = feedback_coefficients(out.group.P, routing.gate);
      break;
    case RoutingPolicy::Mode::kAlwaysSft:
      out.decision = {0, 1, Branch::kSft};
      break;
    case RoutingPolicy::Mode::kAlwaysRl:
      out.decision = {1, 0, Branch::kRl};
      break;
  }

  if (out.decision.branch == Branch::kSft) {
    const TokenSeq* demo = demos.find(question);
    if (demo == nullptr)
      throw DataError("no demonstration for question " + describe_question(question));
    if (routing.w_off == 0.0 && routing.w_sft == 1.0) {
      out.gradient = sft_branch_gradient(params, question, *demo);
    } else {
      out.gradient = GradientVector(params.size());
      if (routing.w_sft != 0.0)
        out.gradient.add_scaled(sft_branch_gradient(params, question, *demo), routing.w_sft);
      if (routing.w_off != 0.0)
        out.gradient.add_scaled(srft_offline_gradient(params, out.group, *demo), routing.w_off);
    }
  } else {
    out.gradient = rl_branch_gradient(params, out.group, opts.rl_components, opts.behavior);
  }

  auto& rec = out.record;
  rec.P = out.group.P;
  rec.branch = out.decision.branch;
  rec.reward_mean = out.group.P;
  rec.entropy_mean = mean_token_entropy(params, out.group.trajectories);
  double len = 0.0;
  for (const auto& t : out.group.trajectories) len += static_cast<double>(t.length());
  rec.resp_len_mean = len / static_cast<double>(out.group.trajectories.size());
  rec.rollouts = static_cast<int>(out.group.trajectories.size());
  return out;
}

StepResult hpt_step(const PolicyParams& params, const TokenSeq& question, const Task& task,
                    const DemoIndex& demos, const GateConfig& cfg,
                    const EstimatorComponents& rl_components, Engine& rng) {
  cfg.validate();
  StepOptions opts;
  opts.routing.gate = cfg;
  opts.rl_components = rl_components;
  return routed_step(params, question, task, demos, opts, rng);
}

}  // namespace upg

#include "upg/algorithms.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "upg/errors.hpp"

namespace upg {

namespace {

std::vector<double> current_token_probs(const PolicyParams& params, const Trajectory& traj) {
  std::vector<double> out;
  out.reserve(traj.tokens.size());
  std::vector<double> probs(static_cast<std::size_t>(params.vocab_size()));
  const std::span<const TokenId> tokens(traj.tokens);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    token_distribution_into(params, params.context(traj.question, tokens.first(t)), probs);
    out.push_back(probs[tokens[t]]);
  }
  return out;
}

void check_sizes(std::size_t trajectories, std::size_t advantages) {
  if (trajectories != advantages)
    throw InputError("need exactly one advantage per trajectory");
}

double inv_len(const Trajectory& t) {
  return t.tokens.empty() ? 0.0 : 1.0 / static_cast<double>(t.tokens.size());
}

}  // namespace

LossValue LossValue::from_terms(std::vector<double> terms) {
  LossValue v;
  double s = 0.0;
  for (double x : terms) s += x;
  v.value = terms.empty() ? 0.0 : s / static_cast<double>(terms.size());
  v.per_trajectory_terms = std::move(terms);
  return v;
}

LossValue sft_loss(const PolicyParams& params, std::span<const DemonstrationRecord> demos) {
  if (demos.empty()) throw InputError("sft_loss needs at least one demonstration");
  std::vector<double> terms;
  for (const auto& d : demos) {
    if (d.demonstration.empty()) throw InputError("sft_loss: empty demonstration");
    terms.push_back(-sequence_log_prob(params, d.question, d.demonstration) /
                    static_cast<double>(d.demonstration.size()));
  }
  return LossValue::from_terms(std::move(terms));
}

GradientVector sft_loss_gradient(const PolicyParams& params,
                                 std::span<const DemonstrationRecord> demos) {
  if (demos.empty()) throw InputError("sft_loss needs at least one demonstration");
  GradientVector g(params.size());
  for (const auto& d : demos) {
    const auto gl = grad_sequence_log_prob(params, d.question, d.demonstration);
    g.add_scaled(gl, -1.0 / static_cast<double>(d.demonstration.size()));
  }
  g *= 1.0 / static_cast<double>(demos.size());
  return g;
}

LossValue reinforce_loss(const PolicyParams& params, std::span<const Trajectory> rollouts,
                         std::span<const double> advantages) {
  check_sizes(rollouts.size(), advantages.size());
  std::vector<double> terms;
  for (std::size_t j = 0; j < rollouts.size(); ++j) {
    const auto& r = rollouts[j];
    terms.push_back(-advantages[j] * sequence_log_prob(params, r.question, r.tokens) * inv_len(r));
  }
  return LossValue::from_terms(std::move(terms));
}

LossValue ppo_style_loss(const PolicyParams& params, std::span<const Trajectory> rollouts,
                         std::span<const double> advantages, RefKind ref_kind, double eps_low,
                         double eps_high) {
  check_sizes(rollouts.size(), advantages.size());
  if (ref_kind != RefKind::kRollout && ref_kind != RefKind::kUnit)
    throw ConfigError("ppo_style_loss supports rollout or unit reference only");
  std::vector<double> terms;
  for (std::size_t j = 0; j < rollouts.size(); ++j) {
    const auto& r = rollouts[j];
    const auto probs = current_token_probs(params, r);
    const double a = advantages[j];
    double sum = 0.0;
    for (std::size_t t = 0; t < probs.size(); ++t) {
      const double ref = ref_kind == RefKind::kRollout ? r.gen_token_probs[t] : 1.0;
      const double rho = probs[t] / std::max(ref, kProbFloor);
      sum += std::min(rho * a, std::clamp(rho, 1.0 - eps_low, 1.0 + eps_high) * a);
    }
    terms.push_back(-sum * inv_len(r));
  }
  return LossValue::from_terms(std::move(terms));
}

LossValue cispo_loss(const PolicyParams& params, const PolicyParams& anchor,
                     std::span<const Trajectory> rollouts, std::span<const double> advantages,
                     double eps_low, double eps_high) {
  check_sizes(rollouts.size(), advantages.size());
  std::vector<double> terms;
  for (std::size_t j = 0; j < rollouts.size(); ++j) {
    const auto& r = rollouts[j];
    const auto frozen = current_token_probs(anchor, r);
    const auto probs = current_token_probs(params, r);
    double sum = 0.0;
    for (std::size_t t = 0; t < probs.size(); ++t) {
      const double rho = frozen[t] / std::max(r.gen_token_probs[t], kProbFloor);
      const double coef = std::clamp(rho, 1.0 - eps_low, 1.0 + eps_high);
      sum += coef * advantages[j] * floored_log(probs[t]);
    }
    terms.push_back(-sum * inv_len(r));
  }
  return LossValue::from_terms(std::move(terms));
}

LossValue gspo_loss(const PolicyParams& params, std::span<const Trajectory> rollouts,
                    std::span<const double> advantages, double eps) {
  check_sizes(rollouts.size(), advantages.size());
  std::vector<double> terms;
  for (std::size_t j = 0; j < rollouts.size(); ++j) {
    const auto& r = rollouts[j];
    if (r.tokens.empty()) {
      terms.push_back(0.0);
      continue;
    }
    double lp = 0.0;
    for (double p : current_token_probs(params, r)) lp += floored_log(p);
    const double s = std::exp((lp - r.gen_logprob_sum) * inv_len(r));
    const double a = advantages[j];
    terms.push_back(-std::min(s * a, std::clamp(s, 1.0 - eps, 1.0 + eps) * a));
  }
  return LossValue::from_terms(std::move(terms));
}

LossValue srft_offline_loss(const PolicyParams& params, std::span<const Trajectory> demos,
                            std::span<const double> advantages) {
  check_sizes(demos.size(), advantages.size());
  std::vector<double> terms;
  for (std::size_t j = 0; j < demos.size(); ++j) {
    double sum = 0.0;
    for (double p : current_token_probs(params, demos[j])) sum += p * advantages[j];
    terms.push_back(-sum * inv_len(demos[j]));
  }
  return LossValue::from_terms(std::move(terms));
}

LossValue luffy_offline_loss(const PolicyParams& params, std::span<const Trajectory> demos,
                             std::span<const double> advantages, double gamma) {
  check_sizes(demos.size(), advantages.size());
  std::vector<double> terms;
  for (std::size_t j = 0; j < demos.size(); ++j) {
    double sum = 0.0;
    for (double p : current_token_probs(params, demos[j])) sum += p / (p + gamma) * advantages[j];
    terms.push_back(-sum * inv_len(demos[j]));
  }
  return LossValue::from_terms(std::move(terms));
}

double mixed_loss(double alpha, double beta, const LossValue& rl, const LossValue& sft) {
  if (alpha < 0.0 || beta < 0.0) throw InputError("mixed_loss weights must be >= 0");
  return alpha * rl.value + beta * sft.value;
}

GradientVector finite_difference_grad(const ParamFunction& f, const PolicyParams& params, double h) {
  if (!(h > 0.0)) throw InputError("finite difference step must be > 0");
  GradientVector g(params.size());
  PolicyParams probe = params;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const double orig = probe.weights()[i];
    probe.weights()[i] = orig + h;
    const double up = f(probe);
    probe.weights()[i] = orig - h;
    const double down = f(probe);
    probe.weights()[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down))
      throw OracleError("non-finite objective evaluation at coordinate " + std::to_string(i));
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

void check_enumerable(int vocab_size, int max_len) {
  const double size = std::pow(static_cast<double>(vocab_size), max_len);
  if (size > kMaxEnumeration) {
    std::ostringstream os;
    os << "trajectory space too large to enumerate: V^max_len = " << vocab_size << "^" << max_len
       << " ~ " << size << " > " << kMaxEnumeration;
    throw ConfigError(os.str());
  }
}

namespace {

void enumerate_rec(const PolicyParams& params, std::span<const TokenId> question, int max_len,
                   TokenSeq& prefix, double log_prob, std::vector<EnumeratedTrajectory>& out) {
  const auto probs = token_distribution(params, params.context(question, prefix));
  for (int tok = 0; tok < params.vocab_size(); ++tok) {
    prefix.push_back(tok);
    const double lp = log_prob + floored_log(probs[tok]);
    if (tok == params.vocab().eos || static_cast<int>(prefix.size()) == max_len)
      out.push_back({prefix, lp});
    else
      enumerate_rec(params, question, max_len, prefix, lp, out);
    prefix.pop_back();
  }
}

double kl_behavior_to_policy(const PolicyParams& params, const BehaviorPolicy& beta,
                             const TokenSeq& q, int max_len) {
  if (beta.kind == BehaviorPolicy::Kind::kDeterministic) {
    const TokenSeq demo = beta.demonstrator(q);
    if (static_cast<int>(demo.size()) > max_len)
      throw ConfigError("demonstration longer than the enumeration max_len");
    return -sequence_log_prob(params, q, demo);
  }
  double kl = 0.0;
  for (const auto& e : enumerate_trajectories(*beta.params, q, max_len))
    kl += std::exp(e.log_prob) * (e.log_prob - sequence_log_prob(params, q, e.tokens));
  return kl;
}

}  // namespace

std::vector<EnumeratedTrajectory> enumerate_trajectories(const PolicyParams& params,
                                                         std::span<const TokenId> question,
                                                         int max_len) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  check_enumerable(params.vocab_size(), max_len);
  std::vector<EnumeratedTrajectory> out;
  TokenSeq prefix;
  enumerate_rec(params, question, max_len, prefix, 0.0, out);
  return out;
}

double common_objective_exact(const PolicyParams& params, const ObjectiveSetup& setup, double mu) {
  return trust_region_objective_exact(params, params, setup, 0.0, mu);
}

double trust_region_objective_exact(const PolicyParams& params, const PolicyParams& reference,
                                    const ObjectiveSetup& setup, double lambda, double mu) {
  if (setup.task == nullptr) throw ConfigError("objective setup needs a task");
  if (setup.questions.empty()) throw ConfigError("objective setup needs questions");
  if (mu > 0.0 && setup.behavior == nullptr) throw ConfigError("mu > 0 needs a behavior policy");
  double total = 0.0;
  for (const auto& q : setup.questions) {
    double value = 0.0;
    for (const auto& e : enumerate_trajectories(params, q, setup.max_len)) {
      const double p = std::exp(e.log_prob);
      value += p * setup.task->verify(q, e.tokens);
      if (lambda != 0.0) value -= lambda * p * (e.log_prob - sequence_log_prob(reference, q, e.tokens));
    }
    if (mu != 0.0) value -= mu * kl_behavior_to_policy(params, *setup.behavior, q, setup.max_len);
    total += value;
  }
  return total / static_cast<double>(setup.questions.size());
}

}  // namespace upg

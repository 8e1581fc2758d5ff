#include "upg/verification.hpp"

#include <algorithm>
#include <cmath>

#include "upg/algorithms.hpp"
#include "upg/errors.hpp"
#include "upg/estimator.hpp"

namespace upg {

namespace {

std::uint64_t hash_string(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

std::uint64_t hash_tokens(std::uint64_t h, std::span<const TokenId> tokens) {
  h = mix64(h ^ tokens.size());
  for (TokenId t : tokens) h = mix64(h ^ static_cast<std::uint64_t>(t + 1));
  return h;
}

// Oracle-side advantage arithmetic, written independently of the estimator.
double group_mean(const std::vector<double>& xs) {
  double s = 0.0;
  for (double x : xs) s += x;
  return s / static_cast<double>(xs.size());
}

double group_sd(const std::vector<double>& xs) {
  const double m = group_mean(xs);
  double s = 0.0;
  for (double x : xs) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(xs.size()));
}

enum class Family { kSft, kOnPolicy, kOffPolicy, kOffline };

Family family_of(const std::string& name) {
  if (name == "sft") return Family::kSft;
  if (name == "reinforce") return Family::kOnPolicy;
  if (name == "srft_off" || name == "luffy_off") return Family::kOffline;
  return Family::kOffPolicy;
}

struct Instance {
  PolicyParams params;
  std::vector<Trajectory> trajectories;
  std::vector<double> rewards;   // one per trajectory
  std::vector<double> group_on;  // offline presets: the on-policy group
};

bool near_clip_boundary(double rho, double eps) {
  constexpr double kMargin = 1e-3;
  return std::abs(rho - (1.0 - eps)) < kMargin || std::abs(rho - (1.0 + eps)) < kMargin;
}

bool has_kink(const std::string& name, const Instance& inst, const EstimatorComponents& comps) {
  if (name == "cispo" || family_of(name) != Family::kOffPolicy) return false;
  for (const auto& t : inst.trajectories) {
    const auto recs = build_records(inst.params, t);
    if (comps.mask.type == MaskType::kGspoSeqClip) {
      const auto& r = recs.front();
      const double s = std::exp((r.seq_logprob_current - r.seq_logprob_rollout) / r.seq_len);
      if (near_clip_boundary(s, comps.mask.eps_low)) return true;
      continue;
    }
    for (const auto& r : recs)
      if (near_clip_boundary(r.p_current / r.p_rollout, comps.mask.eps_low)) return true;
  }
  return false;
}

std::vector<double> random_bits(Engine& rng, int n) {
  std::vector<double> out(static_cast<std::size_t>(n));
  for (auto& x : out) x = static_cast<double>(uniform_index(rng, 2));
  if (n >= 2) {
    // Keep the group non-degenerate so normalized advantages are exercised.
    out[0] = 1.0;
    out[1] = 0.0;
  }
  return out;
}

Instance make_instance(const std::string& name, Engine& rng) {
  int V = 3 + static_cast<int>(uniform_index(rng, 4));
  int k = 1 + static_cast<int>(uniform_index(rng, 3));
  while (V * V * k > 200) --k;
  const auto vocab = Vocabulary::make(V, 1, 2, 0);
  const auto old = PolicyParams::uniform(vocab, k, 1.0, rng);
  PolicyParams current = old;
  if (family_of(name) == Family::kOffPolicy) {
    for (auto& w : current.weights()) w += 0.3 * (2.0 * uniform01(rng) - 1.0);
  }
  TokenSeq q(1 + uniform_index(rng, 3));
  for (auto& t : q) t = static_cast<TokenId>(uniform_index(rng, static_cast<std::uint64_t>(V)));
  const int J = 2 + static_cast<int>(uniform_index(rng, 3));
  const int max_len = 2 + static_cast<int>(uniform_index(rng, 5));

  Instance inst{current, {}, {}, {}};
  for (int j = 0; j < J; ++j) {
    auto traj = sample_trajectory(old, q, max_len, 1.0, rng);
    if (family_of(name) == Family::kSft || family_of(name) == Family::kOffline)
      traj = point_mass_trajectory(q, traj.tokens);
    inst.trajectories.push_back(std::move(traj));
  }
  if (family_of(name) == Family::kOffline) {
    inst.rewards.assign(static_cast<std::size_t>(J), 1.0);
    inst.group_on = random_bits(rng, 2 + static_cast<int>(uniform_index(rng, 3)));
  } else {
    inst.rewards = random_bits(rng, J);
  }
  return inst;
}

std::vector<double> oracle_advantages(const std::string& name, const Instance& inst) {
  std::vector<double> adv;
  const auto& r = inst.rewards;
  if (name == "sft") {
    adv.assign(r.size(), 1.0);
  } else if (name == "reinforce") {
    for (double x : r) adv.push_back(x > 0.5 ? 1.0 : -1.0);
  } else if (name == "ppo") {
    adv = r;
  } else if (name == "dr_grpo") {
    const double m = group_mean(r);
    for (double x : r) adv.push_back(x - m);
  } else if (name == "srft_off" || name == "luffy_off") {
    auto all = inst.group_on;
    all.push_back(1.0);
    const double m = group_mean(all);
    const double sd = group_sd(all);
    for (double x : r) adv.push_back((x - m) / (sd + 1e-6));
  } else {
    const double m = group_mean(r);
    const double sd = group_sd(r);
    for (double x : r) adv.push_back((x - m) / (sd + 1e-6));
  }
  return adv;
}

ParamFunction oracle_loss(const std::string& name, const Instance& inst,
                          const std::vector<double>& adv, const EstimatorComponents& comps) {
  const auto& trajs = inst.trajectories;
  const double el = comps.mask.eps_low;
  const double eh = comps.mask.eps_high;
  if (name == "sft") {
    std::vector<DemonstrationRecord> demos;
    for (const auto& t : trajs) demos.push_back({t.question, t.tokens});
    return [demos](const PolicyParams& p) { return sft_loss(p, demos).value; };
  }
  if (name == "reinforce")
    return [&trajs, &adv](const PolicyParams& p) { return reinforce_loss(p, trajs, adv).value; };
  if (name == "cispo") {
    const PolicyParams anchor = inst.params;
    return [&trajs, &adv, anchor, el, eh](const PolicyParams& p) {
      return cispo_loss(p, anchor, trajs, adv, el, eh).value;
    };
  }
  if (name == "gspo")
    return [&trajs, &adv, el](const PolicyParams& p) { return gspo_loss(p, trajs, adv, el).value; };
  if (name == "srft_off")
    return [&trajs, &adv](const PolicyParams& p) { return srft_offline_loss(p, trajs, adv).value; };
  if (name == "luffy_off") {
    const double g = comps.shaping.gamma;
    return [&trajs, &adv, g](const PolicyParams& p) {
      return luffy_offline_loss(p, trajs, adv, g).value;
    };
  }
  return [&trajs, &adv, el, eh](const PolicyParams& p) {
    return ppo_style_loss(p, trajs, adv, RefKind::kRollout, el, eh).value;
  };
}

}  // namespace

GradcheckReport gradcheck_preset(const std::string& name, const GradcheckOptions& opts) {
  const auto comps = preset(name);
  if (name == "unified") throw ConfigError("gradcheck covers the table presets and dr_grpo");
  if (opts.trials < 1) throw ConfigError("gradcheck needs at least one trial");
  GradcheckReport report;
  report.preset = name;
  for (int trial = 0; trial < opts.trials; ++trial) {
    Instance inst = [&] {
      for (std::uint64_t attempt = 0;; ++attempt) {
        auto rng = derive_stream(opts.seed, {tag(StreamTag::kInstance), hash_string(name),
                                             static_cast<std::uint64_t>(trial), attempt});
        auto candidate = make_instance(name, rng);
        if (!has_kink(name, candidate, comps)) return candidate;
      }
    }();
    const auto adv = oracle_advantages(name, inst);

    std::vector<EstimatorSample> batch;
    for (std::size_t j = 0; j < inst.trajectories.size(); ++j) {
      EstimatorSample s{inst.trajectories[j], {}};
      s.advantage.reward = inst.rewards[j];
      s.advantage.group_rewards_on =
          family_of(name) == Family::kOffline ? inst.group_on : inst.rewards;
      if (family_of(name) == Family::kOffline) s.advantage.group_rewards_off = {1.0};
      batch.push_back(std::move(s));
    }
    EstimatorStats stats;
    const auto est = unified_gradient(batch, comps, inst.params, &stats);
    const auto oracle = -finite_difference_grad(oracle_loss(name, inst, adv, comps), inst.params, opts.h);

    GradcheckTrial t;
    t.rel_err = relative_error(est, oracle);
    t.params = inst.params.size();
    t.trajectories = inst.trajectories.size();
    for (const auto& tr : inst.trajectories) t.max_len = std::max(t.max_len, tr.length());
    t.dropped_tokens = stats.dropped_tokens;
    if (name == "sft") {
      std::vector<DemonstrationRecord> demos;
      for (const auto& tr : inst.trajectories) demos.push_back({tr.question, tr.tokens});
      t.closed_form_rel_err = relative_error(est, -sft_loss_gradient(inst.params, demos));
      report.max_closed_form_rel_err = std::max(report.max_closed_form_rel_err, t.closed_form_rel_err);
    }
    report.max_rel_err = std::max(report.max_rel_err, t.rel_err);
    report.trials.push_back(t);
  }
  return report;
}

Task make_enumeration_task(int vocab_size, int max_len, std::uint64_t seed) {
  const auto vocab = Vocabulary::make(vocab_size, 1, 2, 0);
  auto generate = [vocab_size](Engine& rng) {
    TokenSeq q(2);
    for (auto& t : q) t = static_cast<TokenId>(uniform_index(rng, static_cast<std::uint64_t>(vocab_size)));
    return q;
  };
  auto verifier = [seed](const TokenSeq& q, std::span<const TokenId> tau) {
    if (tau.empty()) return 0;
    return static_cast<int>(hash_tokens(hash_tokens(mix64(seed), q), tau) & 1ULL);
  };
  auto demonstrator = [seed, vocab_size, max_len](const TokenSeq& q) {
    Engine rng(hash_tokens(mix64(seed ^ 0x5eedULL), q));
    const int len = 1 + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(max_len)));
    TokenSeq tau;
    for (int i = 0; i + 1 < len; ++i) {
      // Any non-EOS token keeps the prefix alive.
      auto t = static_cast<TokenId>(uniform_index(rng, static_cast<std::uint64_t>(vocab_size - 1)));
      tau.push_back(t >= 2 ? t + 1 : t);
    }
    if (len < max_len)
      tau.push_back(2);
    else
      tau.push_back(static_cast<TokenId>(uniform_index(rng, static_cast<std::uint64_t>(vocab_size))));
    return tau;
  };
  auto label = [](const TokenSeq&) { return std::string("all"); };
  return Task("enumeration", vocab, max_len, 1, generate, verifier, demonstrator, label);
}

namespace {

Trajectory trajectory_under(const PolicyParams& law, const TokenSeq& q, const TokenSeq& tokens) {
  Trajectory t;
  t.question = q;
  t.tokens = tokens;
  std::vector<double> probs(static_cast<std::size_t>(law.vocab_size()));
  const std::span<const TokenId> span(tokens);
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    token_distribution_into(law, law.context(q, span.first(i)), probs);
    t.gen_token_probs.push_back(probs[tokens[i]]);
    t.gen_logprob_sum += floored_log(probs[tokens[i]]);
  }
  return t;
}

struct EnumSetup {
  Task task;
  PolicyParams params;
  PolicyParams reference;
  std::vector<TokenSeq> questions;
};

EnumSetup make_enum_setup(std::uint64_t seed, int vocab_size, int max_len) {
  check_enumerable(vocab_size, max_len);
  auto rng = derive_stream(seed, {tag(StreamTag::kInstance), 0xe0ULL});
  Task task = make_enumeration_task(vocab_size, max_len, seed);
  const int window = 2;
  auto params = PolicyParams::uniform(task.vocab(), window, 1.0, rng);
  auto reference = PolicyParams::uniform(task.vocab(), window, 1.0, rng);
  std::vector<TokenSeq> questions;
  for (int i = 0; i < 3; ++i) questions.push_back(task.generate(rng));
  return {std::move(task), std::move(params), std::move(reference), std::move(questions)};
}

}  // namespace

EnumcheckResult enumcheck(double mu, double lambda, std::uint64_t seed, int vocab_size, int max_len,
                          double h) {
  if (mu < 0.0 || lambda < 0.0) throw ConfigError("mu and lambda must be >= 0");
  const auto setup = make_enum_setup(seed, vocab_size, max_len);
  const auto behavior = BehaviorPolicy::deterministic(
      [&task = setup.task](const TokenSeq& q) { return task.demonstrate(q); });
  PresetOptions po;
  po.mu = mu;
  po.lambda = lambda;
  const auto comps = preset("unified", po);

  EnumcheckResult result{mu, lambda, 0.0, 0};
  GradientVector expected(setup.params.size());
  const double inv_q = 1.0 / static_cast<double>(setup.questions.size());
  for (const auto& q : setup.questions) {
    for (const auto& e : enumerate_trajectories(setup.params, q, max_len)) {
      EstimatorSample s{trajectory_under(setup.reference, q, e.tokens), {}};
      s.advantage.reward = setup.task.verify(q, e.tokens);
      const auto lb = behavior_log_prob(behavior, q, e.tokens);
      if (!lb.impossible) s.advantage.behavior_ratio = std::exp(lb.value - e.log_prob);
      accumulate_trajectory_estimand(setup.params, comps, s, std::exp(e.log_prob) * inv_q,
                                     expected.values);
      ++result.trajectories;
    }
  }
  ObjectiveSetup obj{&setup.task, &behavior, setup.questions, max_len};
  const PolicyParams reference = setup.reference;
  const auto fd = finite_difference_grad(
      [&](const PolicyParams& p) { return trust_region_objective_exact(p, reference, obj, lambda, mu); },
      setup.params, h);
  result.rel_err = relative_error(expected, fd);
  return result;
}

IdentityCheck score_function_identities(std::uint64_t seed, int vocab_size, int max_len) {
  const auto setup = make_enum_setup(seed, vocab_size, max_len);
  const auto& theta = setup.params;
  const auto& sampler = setup.reference;  // s = pi_theta_old != pi_theta
  IdentityCheck out;
  for (const auto& q : setup.questions) {
    GradientVector score(theta.size());
    GradientVector under_pi(theta.size());
    GradientVector under_s(theta.size());
    const auto leaves = enumerate_trajectories(theta, q, max_len);
    for (const auto& e : leaves) {
      const auto g = grad_sequence_log_prob(theta, q, e.tokens);
      const double pi = std::exp(e.log_prob);
      const double s = std::exp(sequence_log_prob(sampler, q, e.tokens));
      const double f = setup.task.verify(q, e.tokens);
      score.add_scaled(g, pi);
      under_pi.add_scaled(g, pi * f);
      under_s.add_scaled(g, s * (pi / s) * f);
    }
    for (std::size_t i = 0; i < theta.size(); ++i) {
      out.score_function_err = std::max(out.score_function_err, std::abs(score[i]));
      out.measure_change_err = std::max(out.measure_change_err, std::abs(under_pi[i] - under_s[i]));
    }
  }
  return out;
}

MaskAgreement ppo_mask_agreement(int trials, std::uint64_t seed) {
  auto rng = derive_stream(seed, {tag(StreamTag::kInstance), 0x9909ULL});
  const auto vocab = Vocabulary::make(3, 1, 2, 0);
  const TokenSeq q{0};
  MaskAgreement out;
  for (int i = 0; i < trials; ++i) {
    const double p_rollout = 0.4;
    const double eps = 0.05 + 0.35 * uniform01(rng);
    double adv = 4.0 * uniform01(rng) - 2.0;
    if (adv == 0.0) adv = 1.0;
    TokenRecord rec{Context(vocab, 1, q, {}), 0};
    rec.p_rollout = p_rollout;
    rec.p_current = std::min(1.0, 2.5 * p_rollout * uniform01(rng) + 1e-6);
    const double rho = rec.p_current / rec.p_rollout;

    // Brute force: derivative of min(rho A, clip(rho) A) w.r.t. rho.
    auto surrogate = [&](double r) {
      return std::min(r * adv, std::clamp(r, 1.0 - eps, 1.0 + eps) * adv);
    };
    const double d = 1e-9;
    const double deriv = (surrogate(rho + d) - surrogate(rho - d)) / (2.0 * d);
    const bool oracle_keep = std::abs(deriv) > 0.5 * std::abs(adv);

    MaskKind kind{MaskType::kPpoClip, eps, eps};
    const auto m = stabilization_mask(kind, rec, adv);
    const bool keep = !m.dropped && m.weight == 1.0;
    ++out.trials;
    if (keep == oracle_keep) ++out.agree;
  }
  return out;
}

}  // namespace upg

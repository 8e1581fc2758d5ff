#pragma once

// Verification harnesses shared by the CLI and the test suites: estimator
// presets against independent loss oracles, exact-enumeration objective
// checks, score-function identities and the PPO mask rule.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "upg/policy.hpp"
#include "upg/tasks.hpp"

namespace upg {

struct GradcheckOptions {
  int trials = 20;
  std::uint64_t seed = 1;
  double h = 1e-5;
};

struct GradcheckTrial {
  double rel_err = 0.0;
  // SFT only: distance to the closed-form cross-entropy gradient.
  double closed_form_rel_err = -1.0;
  std::size_t params = 0;
  std::size_t trajectories = 0;
  std::size_t max_len = 0;
  std::size_t dropped_tokens = 0;
};

struct GradcheckReport {
  std::string preset;
  std::vector<GradcheckTrial> trials;
  double max_rel_err = 0.0;
  double max_closed_form_rel_err = -1.0;
};

// Throws ConfigError for an unknown preset.
GradcheckReport gradcheck_preset(const std::string& name, const GradcheckOptions& opts = {});

// Tiny task over an enumerable space: hashed pseudo-random verifier and a
// hashed demonstration that is always a leaf of the generation tree.
Task make_enumeration_task(int vocab_size, int max_len, std::uint64_t seed);

struct EnumcheckResult {
  double mu = 0.0;
  double lambda = 0.0;
  double rel_err = 0.0;
  std::size_t trajectories = 0;
};

// Exact expectation of the unified estimand (reference = current policy)
// against central differences of the regularized objective.
EnumcheckResult enumcheck(double mu, double lambda, std::uint64_t seed, int vocab_size = 3,
                          int max_len = 3, double h = 1e-5);

struct IdentityCheck {
  // max-abs of sum_tau pi(tau) grad log pi(tau)
  double score_function_err = 0.0;
  // max-abs gap between E_s[(pi/s) g] and E_pi[g]
  double measure_change_err = 0.0;
};

IdentityCheck score_function_identities(std::uint64_t seed, int vocab_size = 3, int max_len = 3);

struct MaskAgreement {
  int trials = 0;
  int agree = 0;
};

// Compares the PPO clip mask against the sign of a brute-force numerical
// derivative of min(rho A, clip(rho) A) on random (rho, A, eps) triples.
MaskAgreement ppo_mask_agreement(int trials, std::uint64_t seed);

}  // namespace upg

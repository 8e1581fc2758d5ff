#pragma once

// Training configuration and its flat "key = value" text form.
//
// Keys use the field names below. Lines starting with '#' and blank lines
// are ignored. Unknown keys and malformed values are configuration errors.

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "upg/estimator.hpp"
#include "upg/hpt.hpp"
#include "upg/optimizer.hpp"

namespace upg {

enum class Paradigm { kSft, kRl, kSftThenRl, kHpt, kOffOn, kMixOn };
std::string to_string(Paradigm p);
Paradigm parse_paradigm(const std::string& s);

struct TrainConfig {
  Paradigm paradigm = Paradigm::kHpt;
  std::string task = "sparse_parity";
  int steps = 2000;
  int batch = 16;
  int pool_size = 64;
  std::uint64_t seed = 1;
  OptimizerConfig optimizer;
  std::string preset = "grpo";
  int gate_gamma = 0;
  int n_rollouts = 8;
  double w_sft = 0.1;  // mix_on only
  double w_off = 1.0;  // mix_on and off_on
  int sft_steps = -1;  // sft_then_rl; negative means steps / 2
  double temperature = 1.0;
  double mu = 0.0;
  double lambda = 0.0;
  double eps_low = 0.2;
  double eps_high = 0.2;
  double luffy_gamma = 0.1;
  int window = 0;  // 0 selects the task default
  double init_scale = 0.0;
  int eval_every = 50;  // 0 disables periodic evaluation
  int eval_samples = 8;
  int checkpoint_every = 0;  // 0 writes only the final checkpoint
  std::string demos;         // optional demonstration file (JSON Lines)

  void validate() const;
  int resolved_sft_steps() const { return sft_steps < 0 ? steps / 2 : sft_steps; }
  EstimatorComponents rl_components() const;
  GateConfig gate() const;
};

// Applies one key/value pair; throws ConfigError on unknown key or bad value.
void apply_config_value(TrainConfig& cfg, const std::string& key, const std::string& value);
// Applies every line of a config text. `origin` names the source in errors.
void apply_config_text(TrainConfig& cfg, const std::string& text, const std::string& origin);
void apply_config_file(TrainConfig& cfg, const std::string& path);

// Every key with its resolved value, in a fixed order; parses back to `cfg`.
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& cfg);
std::string echo_config(const TrainConfig& cfg);

// Shortest text that parses back to the same double.
std::string format_double(double v);

}  // namespace upg

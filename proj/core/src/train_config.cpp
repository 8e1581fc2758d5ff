#include "upg/train_config.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "upg/errors.hpp"
#include "upg/tasks.hpp"

namespace upg {

std::string to_string(Paradigm p) {
  switch (p) {
    case Paradigm::kSft: return "sft";
    case Paradigm::kRl: return "rl";
    case Paradigm::kSftThenRl: return "sft_then_rl";
    case Paradigm::kHpt: return "hpt";
    case Paradigm::kOffOn: return "off_on";
    case Paradigm::kMixOn: return "mix_on";
  }
  return "?";
}

Paradigm parse_paradigm(const std::string& s) {
  for (auto p : {Paradigm::kSft, Paradigm::kRl, Paradigm::kSftThenRl, Paradigm::kHpt,
                 Paradigm::kOffOn, Paradigm::kMixOn})
    if (to_string(p) == s) return p;
  throw ConfigError("unknown paradigm '" + s +
                    "' (expected sft | rl | sft_then_rl | hpt | off_on | mix_on)");
}

void TrainConfig::validate() const {
  if (steps < 1) throw ConfigError("steps must be >= 1");
  if (batch < 1) throw ConfigError("batch must be >= 1");
  if (pool_size < 1) throw ConfigError("pool_size must be >= 1");
  optimizer.validate();
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  if (w_sft < 0.0 || w_off < 0.0) throw ConfigError("mix weights must be >= 0");
  if (window < 0) throw ConfigError("window must be >= 0");
  if (init_scale < 0.0) throw ConfigError("init_scale must be >= 0");
  if (eval_every < 0 || checkpoint_every < 0) throw ConfigError("intervals must be >= 0");
  if (eval_samples < 1) throw ConfigError("eval_samples must be >= 1");
  if (resolved_sft_steps() > steps) throw ConfigError("sft_steps exceeds steps");
  builtin_task(task);
  gate().validate();
  rl_components().validate();
}

EstimatorComponents TrainConfig::rl_components() const {
  PresetOptions o;
  o.eps_low = eps_low;
  o.eps_high = eps_high;
  o.luffy_gamma = luffy_gamma;
  o.mu = mu;
  o.lambda = lambda;
  return upg::preset(preset, o);
}

GateConfig TrainConfig::gate() const {
  GateConfig g;
  g.gamma = gate_gamma;
  g.n = n_rollouts;
  return g;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& value) {
  T out{};
  const auto* end = value.data() + value.size();
  const auto res = std::from_chars(value.data(), end, out);
  if (res.ec != std::errc() || res.ptr != end)
    throw ConfigError("invalid value '" + value + "' for key '" + key + "'");
  return out;
}

}  // namespace

void apply_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  auto i = [&](int& f) { f = parse_number<int>(key, value); };
  auto d = [&](double& f) { f = parse_number<double>(key, value); };
  if (key == "paradigm") cfg.paradigm = parse_paradigm(value);
  else if (key == "task") cfg.task = value;
  else if (key == "steps") i(cfg.steps);
  else if (key == "batch") i(cfg.batch);
  else if (key == "pool_size") i(cfg.pool_size);
  else if (key == "seed") cfg.seed = parse_number<std::uint64_t>(key, value);
  else if (key == "optimizer") cfg.optimizer.kind = parse_optimizer_kind(value);
  else if (key == "lr") d(cfg.optimizer.lr);
  else if (key == "beta1") d(cfg.optimizer.beta1);
  else if (key == "beta2") d(cfg.optimizer.beta2);
  else if (key == "adam_eps") d(cfg.optimizer.eps);
  else if (key == "preset") cfg.preset = value;
  else if (key == "gate_gamma") i(cfg.gate_gamma);
  else if (key == "n_rollouts") i(cfg.n_rollouts);
  else if (key == "w_sft") d(cfg.w_sft);
  else if (key == "w_off") d(cfg.w_off);
  else if (key == "sft_steps") i(cfg.sft_steps);
  else if (key == "temperature") d(cfg.temperature);
  else if (key == "mu") d(cfg.mu);
  else if (key == "lambda") d(cfg.lambda);
  else if (key == "eps_low") d(cfg.eps_low);
  else if (key == "eps_high") d(cfg.eps_high);
  else if (key == "luffy_gamma") d(cfg.luffy_gamma);
  else if (key == "window") i(cfg.window);
  else if (key == "init_scale") d(cfg.init_scale);
  else if (key == "eval_every") i(cfg.eval_every);
  else if (key == "eval_samples") i(cfg.eval_samples);
  else if (key == "checkpoint_every") i(cfg.checkpoint_every);
  else if (key == "demos") cfg.demos = value;
  else throw ConfigError("unknown config key '" + key + "'");
}

void apply_config_text(TrainConfig& cfg, const std::string& text, const std::string& origin) {
  std::istringstream is(text);
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    try {
      apply_config_value(cfg, trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void apply_config_file(TrainConfig& cfg, const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file: " + path);
  std::ostringstream ss;
  ss << is.rdbuf();
  apply_config_text(cfg, ss.str(), path);
}

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& cfg) {
  auto d = format_double;
  auto i = [](auto v) { return std::to_string(v); };
  return {
      {"paradigm", to_string(cfg.paradigm)},
      {"task", cfg.task},
      {"steps", i(cfg.steps)},
      {"batch", i(cfg.batch)},
      {"pool_size", i(cfg.pool_size)},
      {"seed", i(cfg.seed)},
      {"optimizer", to_string(cfg.optimizer.kind)},
      {"lr", d(cfg.optimizer.lr)},
      {"beta1", d(cfg.optimizer.beta1)},
      {"beta2", d(cfg.optimizer.beta2)},
      {"adam_eps", d(cfg.optimizer.eps)},
      {"preset", cfg.preset},
      {"gate_gamma", i(cfg.gate_gamma)},
      {"n_rollouts", i(cfg.n_rollouts)},
      {"w_sft", d(cfg.w_sft)},
      {"w_off", d(cfg.w_off)},
      {"sft_steps", i(cfg.sft_steps)},
      {"temperature", d(cfg.temperature)},
      {"mu", d(cfg.mu)},
      {"lambda", d(cfg.lambda)},
      {"eps_low", d(cfg.eps_low)},
      {"eps_high", d(cfg.eps_high)},
      {"luffy_gamma", d(cfg.luffy_gamma)},
      {"window", i(cfg.window)},
      {"init_scale", d(cfg.init_scale)},
      {"eval_every", i(cfg.eval_every)},
      {"eval_samples", i(cfg.eval_samples)},
      {"checkpoint_every", i(cfg.checkpoint_every)},
      {"demos", cfg.demos},
  };
}

std::string echo_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& [k, v] : config_entries(cfg)) out += k + " = " + v + "\n";
  return out;
}

}  // namespace upg

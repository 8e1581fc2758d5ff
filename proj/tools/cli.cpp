#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "upg/algorithms.hpp"
#include "upg/errors.hpp"
#include "upg/estimator.hpp"
#include "upg/metrics.hpp"
#include "upg/trainer.hpp"
#include "upg/verification.hpp"

namespace upg::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

// Flags that map one-to-one onto config keys.
const std::vector<std::pair<std::string, std::string>> kRunFlags = {
    {"task", "task"},         {"paradigm", "paradigm"},     {"preset", "preset"},
    {"gate-gamma", "gate_gamma"}, {"n-rollouts", "n_rollouts"}, {"steps", "steps"},
    {"batch", "batch"},       {"lr", "lr"},                 {"seed", "seed"},
    {"mu", "mu"},             {"lambda", "lambda"},         {"temperature", "temperature"},
};

struct RunFlags {
  std::map<std::string, std::string> values;
  std::vector<std::string> sets;
  std::string config;
  std::string out;
  CLI::App* app = nullptr;
};

void add_run_flags(CLI::App* sub, RunFlags& f, const std::string& default_out) {
  f.app = sub;
  f.out = default_out;
  for (const auto& [flag, key] : kRunFlags)
    sub->add_option("--" + flag, f.values[key], "config key '" + key + "'");
  sub->add_option("--config", f.config, "flat key = value config file (flags take precedence)");
  sub->add_option("--set", f.sets, "extra key=value override, repeatable");
  sub->add_option("--out", f.out, "output directory")->capture_default_str();
}

TrainConfig resolve_config(const RunFlags& f) {
  TrainConfig cfg;
  if (!f.config.empty()) apply_config_file(cfg, f.config);
  for (const auto& [flag, key] : kRunFlags)
    if (f.app->count("--" + flag) > 0) apply_config_value(cfg, key, f.values.at(key));
  for (const auto& s : f.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
    apply_config_value(cfg, s.substr(0, eq), s.substr(eq + 1));
  }
  cfg.validate();
  return cfg;
}

void print_header(std::ostream& out, const std::string& command,
                  const std::vector<std::pair<std::string, std::string>>& entries) {
  out << "# upglab " << command << "\n";
  for (const auto& [k, v] : entries) out << "#   " << k << " = " << v << "\n";
}

std::string fmt(double v, int precision = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

std::string sci(double v) {
  std::ostringstream os;
  os << std::scientific << std::setprecision(2) << v;
  return os.str();
}

double mean_offline_ratio(const std::vector<StepSummary>& s) {
  double total = 0.0;
  for (const auto& x : s) total += x.offline_ratio;
  return s.empty() ? 0.0 : total / static_cast<double>(s.size());
}

double mean_reward(const std::vector<StepSummary>& s) {
  double total = 0.0;
  for (const auto& x : s) total += x.reward_mean;
  return s.empty() ? 0.0 : total / static_cast<double>(s.size());
}

std::vector<json> read_jsonl(const fs::path& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open " + path.string());
  std::vector<json> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(json::parse(line));
    } catch (const json::exception& e) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

TrainConfig config_of_run(const fs::path& dir) {
  TrainConfig cfg;
  apply_config_file(cfg, (dir / "config.echo").string());
  return cfg;
}

fs::path final_checkpoint(const fs::path& dir) {
  std::vector<fs::path> found;
  if (fs::exists(dir / "checkpoints"))
    for (const auto& e : fs::directory_iterator(dir / "checkpoints"))
      if (e.path().extension() == ".ckpt") found.push_back(e.path());
  if (found.empty()) throw DataError("no checkpoints under " + dir.string());
  std::sort(found.begin(), found.end());
  return found.back();
}

// ---------------------------------------------------------------- train

int cmd_train(const RunFlags& f, const std::string& resume, std::ostream& out) {
  const auto cfg = resolve_config(f);
  auto entries = config_entries(cfg);
  entries.emplace_back("out", f.out);
  if (!resume.empty()) entries.emplace_back("resume", resume);
  print_header(out, "train", entries);
  const auto result = train_to_directory(cfg, f.out, resume);
  out << "steps run        " << result.summaries.size() << "\n";
  out << "mean offline     " << fmt(mean_offline_ratio(result.summaries)) << "\n";
  out << "mean reward      " << fmt(mean_reward(result.summaries)) << "\n";
  if (!result.evals.empty())
    out << "final accuracy   " << fmt(result.evals.back().accuracy) << " (step "
        << result.evals.back().step << ")\n";
  out << "outputs          " << f.out << "\n";
  return kExitOk;
}

// ------------------------------------------------------------ gradcheck

int cmd_gradcheck(std::vector<std::string> presets, int trials, std::uint64_t seed, double tol,
                  std::ostream& out) {
  if (presets.empty() || (presets.size() == 1 && presets[0] == "all")) {
    presets = table_preset_names();
    presets.push_back("dr_grpo");
  }
  for (const auto& p : presets) {
    const auto& names = preset_names();
    if (p == "unified" || std::find(names.begin(), names.end(), p) == names.end())
      throw ConfigError("unknown gradcheck preset '" + p + "'");
  }
  std::string joined;
  for (const auto& p : presets) joined += (joined.empty() ? "" : ",") + p;
  print_header(out, "gradcheck", {{"presets", joined},
                                  {"trials", std::to_string(trials)},
                                  {"seed", std::to_string(seed)},
                                  {"tolerance", format_double(tol)},
                                  {"fd_step", "1e-05"}});
  constexpr double kClosedFormTol = 1e-10;
  bool ok = true;
  out << std::left << std::setw(12) << "preset" << std::setw(14) << "max_rel_err"
      << std::setw(16) << "closed_form" << std::setw(10) << "dropped" << "status\n";
  for (const auto& p : presets) {
    GradcheckOptions o;
    o.trials = trials;
    o.seed = seed;
    const auto rep = gradcheck_preset(p, o);
    std::size_t dropped = 0;
    for (const auto& t : rep.trials) dropped += t.dropped_tokens;
    bool pass = rep.max_rel_err <= tol;
    if (rep.max_closed_form_rel_err >= 0.0) pass = pass && rep.max_closed_form_rel_err <= kClosedFormTol;
    ok = ok && pass;
    out << std::setw(12) << p << std::setw(14) << sci(rep.max_rel_err) << std::setw(16)
        << (rep.max_closed_form_rel_err >= 0.0 ? sci(rep.max_closed_form_rel_err) : "-")
        << std::setw(10) << dropped << (pass ? "ok" : "FAIL") << "\n";
  }
  return ok ? kExitOk : kExitFailure;
}

// ------------------------------------------------------------ enumcheck

int cmd_enumcheck(const std::vector<double>& mus, const std::vector<double>& lambdas,
                  std::uint64_t seed, int vocab, int max_len, double tol, std::ostream& out) {
  check_enumerable(vocab, max_len);
  auto list = [](const std::vector<double>& v) {
    std::string s;
    for (double x : v) s += (s.empty() ? "" : ",") + format_double(x);
    return s;
  };
  print_header(out, "enumcheck", {{"mu", list(mus)},
                                  {"lambda", list(lambdas)},
                                  {"seed", std::to_string(seed)},
                                  {"vocab", std::to_string(vocab)},
                                  {"max_len", std::to_string(max_len)},
                                  {"tolerance", format_double(tol)}});
  bool ok = true;
  out << std::left << std::setw(8) << "mu" << std::setw(8) << "lambda" << std::setw(14)
      << "trajectories" << std::setw(12) << "rel_err" << "status\n";
  for (double mu : mus) {
    for (double lambda : lambdas) {
      const auto r = enumcheck(mu, lambda, seed, vocab, max_len);
      const bool pass = r.rel_err <= tol;
      ok = ok && pass;
      out << std::setw(8) << format_double(mu) << std::setw(8) << format_double(lambda)
          << std::setw(14) << r.trajectories << std::setw(12) << sci(r.rel_err)
          << (pass ? "ok" : "FAIL") << "\n";
    }
  }
  return ok ? kExitOk : kExitFailure;
}

// ---------------------------------------------------------- ablate-gate

int cmd_ablate_gate(const RunFlags& f, const std::vector<int>& gammas, std::ostream& out) {
  auto cfg = resolve_config(f);
  if (cfg.paradigm == Paradigm::kSft || cfg.paradigm == Paradigm::kRl ||
      cfg.paradigm == Paradigm::kSftThenRl)
    throw ConfigError("ablate-gate needs a gated paradigm (hpt, off_on, mix_on)");
  if (gammas.empty()) throw ConfigError("ablate-gate needs at least one gamma");
  for (int g : gammas)
    if (g < 0 || g >= cfg.n_rollouts)
      throw ConfigError("gate gamma " + std::to_string(g) + " outside [0, n_rollouts)");
  auto entries = config_entries(cfg);
  std::string list;
  for (int g : gammas) list += (list.empty() ? "" : ",") + std::to_string(g);
  entries.emplace_back("gammas", list);
  entries.emplace_back("out", f.out);
  print_header(out, "ablate-gate", entries);
  out << std::left << std::setw(8) << "gamma" << std::setw(16) << "mean_offline" << std::setw(14)
      << "mean_reward" << std::setw(16) << "final_accuracy" << "dir\n";
  for (int g : gammas) {
    cfg.gate_gamma = g;
    const fs::path dir = fs::path(f.out) / ("gamma_" + std::to_string(g));
    const auto r = train_to_directory(cfg, dir);
    out << std::setw(8) << g << std::setw(16) << fmt(mean_offline_ratio(r.summaries))
        << std::setw(14) << fmt(mean_reward(r.summaries)) << std::setw(16)
        << (r.evals.empty() ? "-" : fmt(r.evals.back().accuracy)) << dir.string() << "\n";
  }
  return kExitOk;
}

// ---------------------------------------------------------------- passk

int cmd_passk(const std::string& run_dir, int samples, int max_k, int resamples,
              std::ostream& out) {
  if (samples < 1 || max_k < 1 || resamples < 1)
    throw ConfigError("samples, max-k and resamples must be >= 1");
  const fs::path dir(run_dir);
  const auto cfg = config_of_run(dir);
  const auto ckpt_path = final_checkpoint(dir);
  Trainer trainer(cfg, std::nullopt, load_configured_demos(cfg, builtin_task(cfg.task)));
  trainer.restore(load_checkpoint(ckpt_path.string()));

  std::vector<int> ks;
  for (int k = 1; k <= std::min(max_k, samples); k *= 2) ks.push_back(k);
  print_header(out, "passk", {{"run", run_dir},
                              {"checkpoint", ckpt_path.filename().string()},
                              {"samples", std::to_string(samples)},
                              {"max_k", std::to_string(max_k)},
                              {"resamples", std::to_string(resamples)},
                              {"temperature", format_double(cfg.temperature)}});

  const auto& pool = trainer.pool();
  const auto& task = trainer.task();
  std::vector<int> correct;
  std::vector<std::vector<int>> scores(pool.size());
  for (std::size_t q = 0; q < pool.size(); ++q) {
    int c = 0;
    for (int i = 0; i < samples; ++i) {
      auto rng = derive_stream(cfg.seed, {tag(StreamTag::kEval), 0x7a55ULL, q,
                                          static_cast<std::uint64_t>(i)});
      const auto t = sample_trajectory(trainer.params(), pool[q], task.max_len(), cfg.temperature, rng);
      scores[q].push_back(verify(task, pool[q], t));
      c += scores[q].back();
    }
    correct.push_back(c);
  }
  std::vector<double> exact;
  std::vector<double> boot;
  out << std::left << std::setw(8) << "k" << std::setw(12) << "exact" << "bootstrap\n";
  for (int k : ks) {
    double e = 0.0;
    double b = 0.0;
    for (std::size_t q = 0; q < pool.size(); ++q) {
      e += pass_at_k_exact(samples, correct[q], k);
      auto rng = derive_stream(cfg.seed, {tag(StreamTag::kBootstrap), q, static_cast<std::uint64_t>(k)});
      b += pass_at_k_bootstrap(scores[q], k, resamples, rng).estimate;
    }
    e /= static_cast<double>(pool.size());
    b /= static_cast<double>(pool.size());
    exact.push_back(e);
    boot.push_back(b);
    out << std::setw(8) << k << std::setw(12) << fmt(e) << fmt(b) << "\n";
  }
  json j;
  j["samples"] = samples;
  j["k"] = ks;
  j["exact"] = exact;
  j["bootstrap"] = boot;
  j["correct"] = correct;
  std::ofstream os(dir / "passk.json", std::ios::trunc);
  os << j.dump() << "\n";
  return kExitOk;
}

// --------------------------------------------------------------- report

struct RunSummary {
  std::string dir;
  TrainConfig cfg;
  double final_accuracy = -1.0;
  std::vector<double> per_question;
  double mean_offline = 0.0;
  double last_reward = 0.0;
  std::optional<json> passk;
};

RunSummary summarize_run(const fs::path& dir) {
  RunSummary s;
  s.dir = dir.string();
  s.cfg = config_of_run(dir);
  const auto metrics = read_jsonl(dir / "metrics.jsonl");
  for (const auto& m : metrics) s.mean_offline += m.at("offline_ratio").get<double>();
  if (!metrics.empty()) {
    s.mean_offline /= static_cast<double>(metrics.size());
    s.last_reward = metrics.back().at("reward_mean").get<double>();
  }
  if (fs::exists(dir / "eval.jsonl")) {
    const auto evals = read_jsonl(dir / "eval.jsonl");
    if (!evals.empty()) {
      s.final_accuracy = evals.back().at("accuracy").get<double>();
      s.per_question = evals.back().at("per_question").get<std::vector<double>>();
    }
  }
  if (fs::exists(dir / "passk.json")) {
    std::ifstream is(dir / "passk.json");
    s.passk = json::parse(is);
  }
  return s;
}

int cmd_report(const std::vector<std::string>& runs, double solved_at, std::ostream& out) {
  if (runs.empty()) throw ConfigError("report needs at least one run directory");
  std::string list;
  for (const auto& r : runs) list += (list.empty() ? "" : ",") + r;
  print_header(out, "report", {{"runs", list}, {"solved_at", format_double(solved_at)}});
  std::vector<RunSummary> sums;
  for (const auto& r : runs) sums.push_back(summarize_run(r));

  out << std::left << std::setw(28) << "run" << std::setw(12) << "paradigm" << std::setw(10)
      << "steps" << std::setw(12) << "final_acc" << std::setw(14) << "mean_offline"
      << std::setw(13) << "last_reward" << "pass@k (exact)\n";
  for (const auto& s : sums) {
    std::string pk = "-";
    if (s.passk) {
      pk.clear();
      const auto ks = s.passk->at("k").get<std::vector<int>>();
      const auto ex = s.passk->at("exact").get<std::vector<double>>();
      for (std::size_t i = 0; i < ks.size(); ++i)
        pk += (pk.empty() ? "" : " ") + std::to_string(ks[i]) + ":" + fmt(ex[i], 3);
    }
    out << std::setw(28) << fs::path(s.dir).filename().string() << std::setw(12)
        << to_string(s.cfg.paradigm) << std::setw(10) << s.cfg.steps << std::setw(12)
        << (s.final_accuracy < 0 ? "-" : fmt(s.final_accuracy)) << std::setw(14)
        << fmt(s.mean_offline) << std::setw(13) << fmt(s.last_reward) << pk << "\n";
  }

  if (sums.size() < 2) return kExitOk;
  const auto& base = sums.front();
  if (base.per_question.empty()) return kExitOk;
  const Trainer pool_source(base.cfg, std::nullopt,
                            load_configured_demos(base.cfg, builtin_task(base.cfg.task)));
  std::vector<std::string> labels;
  for (const auto& q : pool_source.pool()) labels.push_back(pool_source.task().difficulty(q));
  auto solved = [solved_at](const std::vector<double>& acc) {
    std::vector<int> out;
    for (double a : acc) out.push_back(a >= solved_at ? 1 : 0);
    return out;
  };
  const auto solved_base = solved(base.per_question);
  out << "\nexclusive solves vs " << fs::path(base.dir).filename().string()
      << " (+ solved only by the run, - solved only by the baseline)\n";
  for (std::size_t i = 1; i < sums.size(); ++i) {
    const auto& s = sums[i];
    if (s.per_question.size() != solved_base.size() || s.cfg.task != base.cfg.task ||
        s.cfg.seed != base.cfg.seed) {
      out << "  " << fs::path(s.dir).filename().string() << ": different question pool, skipped\n";
      continue;
    }
    const auto r = exclusive_solves(solved(s.per_question), solved_base, labels);
    out << "  " << fs::path(s.dir).filename().string() << ": overall +" << r.overall.gained << " -"
        << r.overall.lost;
    for (const auto& [label, c] : r.per_label) out << " | " << label << " +" << c.gained << " -" << c.lost;
    out << "\n";
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"upglab: unified policy-gradient estimator and hybrid post-training lab"};
  app.require_subcommand(1);

  RunFlags train_flags;
  std::string resume;
  auto* train = app.add_subcommand("train", "run one training configuration");
  add_run_flags(train, train_flags, "upglab_run");
  train->add_option("--resume", resume, "continue from a checkpoint file");

  std::vector<std::string> gc_presets;
  int gc_trials = 20;
  std::uint64_t gc_seed = 1;
  double gc_tol = 1e-4;
  auto* gradcheck = app.add_subcommand("gradcheck", "estimator presets vs loss-gradient oracles");
  gradcheck->add_option("--preset", gc_presets, "preset ids (comma list or repeated; default all)")
      ->delimiter(',');
  gradcheck->add_option("--trials", gc_trials)->capture_default_str();
  gradcheck->add_option("--seed", gc_seed)->capture_default_str();
  gradcheck->add_option("--tolerance", gc_tol)->capture_default_str();

  std::vector<double> ec_mu{0.0, 0.5, 2.0};
  std::vector<double> ec_lambda{0.0};
  std::uint64_t ec_seed = 1;
  int ec_vocab = 3;
  int ec_len = 3;
  double ec_tol = 1e-4;
  auto* enumc = app.add_subcommand("enumcheck", "exact-enumeration objective gradient checks");
  enumc->add_option("--mu", ec_mu)->delimiter(',')->capture_default_str();
  enumc->add_option("--lambda", ec_lambda)->delimiter(',')->capture_default_str();
  enumc->add_option("--seed", ec_seed)->capture_default_str();
  enumc->add_option("--vocab", ec_vocab)->capture_default_str();
  enumc->add_option("--max-len", ec_len)->capture_default_str();
  enumc->add_option("--tolerance", ec_tol)->capture_default_str();

  RunFlags ablate_flags;
  std::vector<int> gammas{0, 1, 2};
  auto* ablate = app.add_subcommand("ablate-gate", "identical-seed runs varying only the gate threshold");
  add_run_flags(ablate, ablate_flags, "upglab_ablate");
  ablate->add_option("--gammas", gammas)->delimiter(',')->capture_default_str();

  std::string pk_run;
  int pk_samples = 256;
  int pk_max_k = 128;
  int pk_resamples = 1000;
  auto* passk = app.add_subcommand("passk", "pass@k of a finished run's final checkpoint");
  passk->add_option("--run", pk_run, "run directory written by train")->required();
  passk->add_option("--samples", pk_samples)->capture_default_str();
  passk->add_option("--max-k", pk_max_k)->capture_default_str();
  passk->add_option("--resamples", pk_resamples)->capture_default_str();

  std::vector<std::string> report_runs;
  double solved_at = 0.5;
  auto* report = app.add_subcommand("report", "summary table over run directories");
  report->add_option("runs", report_runs, "run directories; the first is the baseline")->required();
  report->add_option("--solved-at", solved_at, "per-question accuracy counted as solved")
      ->capture_default_str();

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    const CLI::App* shown = &app;
    for (auto* sub : app.get_subcommands()) shown = sub;
    err << shown->help();
    return kExitUsage;
  }

  try {
    if (*train) return cmd_train(train_flags, resume, out);
    if (*gradcheck) return cmd_gradcheck(gc_presets, gc_trials, gc_seed, gc_tol, out);
    if (*enumc) return cmd_enumcheck(ec_mu, ec_lambda, ec_seed, ec_vocab, ec_len, ec_tol, out);
    if (*ablate) return cmd_ablate_gate(ablate_flags, gammas, out);
    if (*passk) return cmd_passk(pk_run, pk_samples, pk_max_k, pk_resamples, out);
    if (*report) return cmd_report(report_runs, solved_at, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const InputError& e) {
    err << "input error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "numeric error: " << e.what() << "\n";
    return kExitFailure;
  } catch (const OracleError& e) {
    err << "oracle error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitUsage;
}

}  // namespace upg::cli

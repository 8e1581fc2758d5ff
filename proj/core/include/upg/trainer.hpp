#pragma once

// Seeded training loops for every paradigm.
//
// Each step draws `batch` question ids with replacement from a fixed pool,
// routes every question through the paradigm's branch rule, averages the
// per-question loss gradients in batch order, and applies one optimizer
// update. All randomness comes from streams derived from (seed, step, slot),
// so a run is a pure function of its config and can resume from any
// checkpoint bit-identically.

#include <filesystem>
#include <fstream>
#include <optional>
#include <span>
#include <vector>

#include "upg/checkpoint.hpp"
#include "upg/hpt.hpp"
#include "upg/metrics.hpp"
#include "upg/optimizer.hpp"
#include "upg/tasks.hpp"
#include "upg/train_config.hpp"

namespace upg {

struct StepSummary {
  int step = 0;
  double offline_ratio = 0.0;
  double reward_mean = 0.0;
  double entropy_mean = 0.0;
  double resp_len_mean = 0.0;
  double grad_norm = 0.0;
  double delta_norm = 0.0;
  int sft_questions = 0;
  int rollouts = 0;
};

struct EvalRecord {
  int step = 0;
  double accuracy = 0.0;
  std::vector<double> per_question;
};

class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void on_step_records(std::span<const StepRecord>) {}
  virtual void on_step(const StepSummary&) {}
  virtual void on_eval(const EvalRecord&) {}
};

// Writes metrics.jsonl, steps.jsonl and eval.jsonl under `dir`.
class JsonlSink final : public MetricsSink {
 public:
  JsonlSink(const std::filesystem::path& dir, bool append);
  void on_step_records(std::span<const StepRecord> records) override;
  void on_step(const StepSummary& s) override;
  void on_eval(const EvalRecord& e) override;

 private:
  std::ofstream metrics_;
  std::ofstream steps_;
  std::ofstream eval_;
};

std::string to_json_line(const StepSummary& s);
std::string to_json_line(const StepRecord& r);
std::string to_json_line(const EvalRecord& e);

// Low-performance branch = w_sft * grad L_SFT + w_off * grad L_SRFT-offline;
// high-performance branch = on-policy RL.
StepResult mix_on_step(const PolicyParams& params, const TokenSeq& question, const Task& task,
                       const DemoIndex& demos, const GateConfig& gate,
                       const EstimatorComponents& rl_components, double w_sft, double w_off,
                       Engine& rng);

class Trainer {
 public:
  // `task` overrides the builtin named by cfg.task (e.g. to swap verifiers);
  // `demos` overrides both the question pool and the demonstrations.
  explicit Trainer(TrainConfig cfg, std::optional<Task> task = std::nullopt,
                   std::optional<std::vector<DemonstrationRecord>> demos = std::nullopt);

  const TrainConfig& config() const { return cfg_; }
  const Task& task() const { return task_; }
  const std::vector<TokenSeq>& pool() const { return pool_; }
  const PolicyParams& params() const { return params_; }
  const AccuracyGrid& grid() const { return grid_; }
  // Number of completed steps.
  int step() const { return step_; }

  // Runs steps until `until_step` (clamped to cfg.steps) have completed,
  // evaluating at step 0, every eval_every steps, and at the final step.
  void run(int until_step, MetricsSink* sink);
  StepSummary run_step(MetricsSink* sink);
  EvalRecord evaluate() const;

  // Routing used for a given (1-based) step.
  RoutingPolicy routing_for(int step) const;

  CheckpointRecord checkpoint() const;
  // Throws ConfigError if the checkpoint belongs to a different seed or shape.
  void restore(const CheckpointRecord& rec);

 private:
  void maybe_evaluate(MetricsSink* sink);

  TrainConfig cfg_;
  Task task_;
  std::vector<TokenSeq> pool_;
  DemoIndex demo_index_;
  BehaviorPolicy behavior_;
  EstimatorComponents rl_components_;
  PolicyParams params_;
  Optimizer optimizer_;
  AccuracyGrid grid_;
  int step_ = 0;
  int last_eval_step_ = -1;
};

struct TrainResult {
  PolicyParams params;
  std::vector<StepSummary> summaries;
  std::vector<StepRecord> records;
  std::vector<EvalRecord> evals;
  AccuracyGrid grid;
};

// Runs the whole configuration in memory, forwarding to `sink` if given.
TrainResult train(const TrainConfig& cfg, MetricsSink* sink = nullptr,
                  std::optional<Task> task = std::nullopt);

// Full run writing config.echo, metrics/steps/eval JSON Lines, grids/ and
// checkpoints/ under `out`. With `resume_from`, continues that checkpoint
// and appends to the existing metric streams.
TrainResult train_to_directory(const TrainConfig& cfg, const std::filesystem::path& out,
                               const std::string& resume_from = "");

// Loads cfg.demos if set, validated against the task vocabulary.
std::optional<std::vector<DemonstrationRecord>> load_configured_demos(const TrainConfig& cfg,
                                                                      const Task& task);

}  // namespace upg

#include "upg/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "json.hpp"
#include "upg/errors.hpp"

namespace upg {

namespace {

using json = nlohmann::json;

const char* branch_name(Branch b) { return b == Branch::kSft ? "SFT" : "RL"; }

Task resolve_task(const TrainConfig& cfg, std::optional<Task> task) {
  return task ? std::move(*task) : builtin_task(cfg.task);
}

PolicyParams initial_params(const TrainConfig& cfg, const Task& task) {
  const int window = cfg.window > 0 ? cfg.window : task.default_window();
  if (cfg.init_scale == 0.0) return PolicyParams::zeros(task.vocab(), window);
  auto rng = derive_stream(cfg.seed, {tag(StreamTag::kInit)});
  return PolicyParams::uniform(task.vocab(), window, cfg.init_scale, rng);
}

std::vector<int> iota_ids(std::size_t n) {
  std::vector<int> ids(n);
  for (std::size_t i = 0; i < n; ++i) ids[i] = static_cast<int>(i);
  return ids;
}

}  // namespace

std::string to_json_line(const StepSummary& s) {
  json j;
  j["step"] = s.step;
  j["offline_ratio"] = s.offline_ratio;
  j["reward_mean"] = s.reward_mean;
  j["entropy_mean"] = s.entropy_mean;
  j["resp_len_mean"] = s.resp_len_mean;
  j["grad_norm"] = s.grad_norm;
  j["delta_norm"] = s.delta_norm;
  j["sft_questions"] = s.sft_questions;
  j["rollouts"] = s.rollouts;
  return j.dump();
}

std::string to_json_line(const StepRecord& r) {
  json j;
  j["step"] = r.step;
  j["question_id"] = r.question_id;
  j["P"] = r.P;
  j["branch"] = branch_name(r.branch);
  j["reward_mean"] = r.reward_mean;
  j["entropy_mean"] = r.entropy_mean;
  j["resp_len_mean"] = r.resp_len_mean;
  return j.dump();
}

std::string to_json_line(const EvalRecord& e) {
  json j;
  j["step"] = e.step;
  j["accuracy"] = e.accuracy;
  j["per_question"] = e.per_question;
  return j.dump();
}

JsonlSink::JsonlSink(const std::filesystem::path& dir, bool append) {
  std::filesystem::create_directories(dir);
  const auto mode = append ? std::ios::app : std::ios::trunc;
  metrics_.open(dir / "metrics.jsonl", std::ios::out | mode);
  steps_.open(dir / "steps.jsonl", std::ios::out | mode);
  eval_.open(dir / "eval.jsonl", std::ios::out | mode);
  if (!metrics_ || !steps_ || !eval_)
    throw ConfigError("cannot open metric streams under " + dir.string());
}

void JsonlSink::on_step_records(std::span<const StepRecord> records) {
  for (const auto& r : records) steps_ << to_json_line(r) << '\n';
}

void JsonlSink::on_step(const StepSummary& s) { metrics_ << to_json_line(s) << '\n' << std::flush; }

void JsonlSink::on_eval(const EvalRecord& e) { eval_ << to_json_line(e) << '\n'; }

StepResult mix_on_step(const PolicyParams& params, const TokenSeq& question, const Task& task,
                       const DemoIndex& demos, const GateConfig& gate,
                       const EstimatorComponents& rl_components, double w_sft, double w_off,
                       Engine& rng) {
  gate.validate();
  StepOptions opts;
  opts.routing.mode = RoutingPolicy::Mode::kGate;
  opts.routing.gate = gate;
  opts.routing.w_sft = w_sft;
  opts.routing.w_off = w_off;
  opts.rl_components = rl_components;
  return routed_step(params, question, task, demos, opts, rng);
}

std::optional<std::vector<DemonstrationRecord>> load_configured_demos(const TrainConfig& cfg,
                                                                      const Task& task) {
  if (cfg.demos.empty()) return std::nullopt;
  return load_demonstrations(cfg.demos, task.vocab());
}

Trainer::Trainer(TrainConfig cfg, std::optional<Task> task,
                 std::optional<std::vector<DemonstrationRecord>> demos)
    : cfg_(std::move(cfg)),
      task_(resolve_task(cfg_, std::move(task))),
      rl_components_(cfg_.rl_components()),
      params_(initial_params(cfg_, task_)),
      optimizer_(cfg_.optimizer, params_.size()) {
  cfg_.validate();
  std::vector<DemonstrationRecord> records;
  if (demos) {
    if (demos->empty()) throw DataError("demonstration set is empty");
    records = std::move(*demos);
    for (const auto& r : records) pool_.push_back(r.question);
  } else {
    auto rng = derive_stream(cfg_.seed, {tag(StreamTag::kQuestionPool)});
    for (int i = 0; i < cfg_.pool_size; ++i) pool_.push_back(task_.generate(rng));
    records = demonstrations_for(task_, pool_);
  }
  demo_index_ = DemoIndex(records);
  behavior_ = BehaviorPolicy::deterministic([index = demo_index_, task = task_](const TokenSeq& q) {
    const TokenSeq* d = index.find(q);
    return d ? *d : task.demonstrate(q);
  });
  grid_ = AccuracyGrid(iota_ids(pool_.size()), {});
}

RoutingPolicy Trainer::routing_for(int step) const {
  RoutingPolicy r;
  r.gate = cfg_.gate();
  switch (cfg_.paradigm) {
    case Paradigm::kSft:
      r.mode = RoutingPolicy::Mode::kAlwaysSft;
      break;
    case Paradigm::kRl:
      r.mode = RoutingPolicy::Mode::kAlwaysRl;
      break;
    case Paradigm::kSftThenRl:
      r.mode = step <= cfg_.resolved_sft_steps() ? RoutingPolicy::Mode::kAlwaysSft
                                                 : RoutingPolicy::Mode::kAlwaysRl;
      break;
    case Paradigm::kHpt:
      r.mode = RoutingPolicy::Mode::kGate;
      break;
    case Paradigm::kOffOn:
      r.mode = RoutingPolicy::Mode::kGate;
      r.w_sft = 0.0;
      r.w_off = cfg_.w_off;
      break;
    case Paradigm::kMixOn:
      r.mode = RoutingPolicy::Mode::kGate;
      r.w_sft = cfg_.w_sft;
      r.w_off = cfg_.w_off;
      break;
  }
  return r;
}

EvalRecord Trainer::evaluate() const {
  EvalRecord e;
  e.step = step_;
  double total = 0.0;
  for (std::size_t qid = 0; qid < pool_.size(); ++qid) {
    int correct = 0;
    for (int i = 0; i < cfg_.eval_samples; ++i) {
      auto rng = derive_stream(cfg_.seed, {tag(StreamTag::kEval), static_cast<std::uint64_t>(step_),
                                           qid, static_cast<std::uint64_t>(i)});
      const auto traj =
          sample_trajectory(params_, pool_[qid], task_.max_len(), cfg_.temperature, rng);
      correct += verify(task_, pool_[qid], traj);
    }
    const double acc = static_cast<double>(correct) / cfg_.eval_samples;
    e.per_question.push_back(acc);
    total += acc;
  }
  e.accuracy = total / static_cast<double>(pool_.size());
  return e;
}

void Trainer::maybe_evaluate(MetricsSink* sink) {
  if (cfg_.eval_every == 0 || last_eval_step_ == step_) return;
  if (step_ != 0 && step_ % cfg_.eval_every != 0 && step_ != cfg_.steps) return;
  const auto e = evaluate();
  grid_.add_column(e.step, e.per_question);
  last_eval_step_ = step_;
  if (sink) sink->on_eval(e);
}

StepSummary Trainer::run_step(MetricsSink* sink) {
  if (step_ >= cfg_.steps) throw ConfigError("training already finished");
  const int step = step_ + 1;
  const auto ustep = static_cast<std::uint64_t>(step);

  StepOptions opts;
  opts.routing = routing_for(step);
  opts.rl_components = rl_components_;
  opts.temperature = cfg_.temperature;
  opts.behavior = &behavior_;

  auto batch_rng = derive_stream(cfg_.seed, {tag(StreamTag::kBatch), ustep});
  GradientVector grad(params_.size());
  std::vector<StepRecord> records;
  records.reserve(static_cast<std::size_t>(cfg_.batch));
  for (int slot = 0; slot < cfg_.batch; ++slot) {
    const auto qid = uniform_index(batch_rng, pool_.size());
    auto rng = derive_stream(cfg_.seed,
                             {tag(StreamTag::kRollout), ustep, static_cast<std::uint64_t>(slot)});
    auto result = routed_step(params_, pool_[qid], task_, demo_index_, opts, rng);
    if (!result.gradient.all_finite())
      throw NumericError("non-finite gradient at step " + std::to_string(step) + ", question id " +
                         std::to_string(qid));
    grad += result.gradient;
    result.record.step = step;
    result.record.question_id = static_cast<int>(qid);
    records.push_back(result.record);
  }
  grad *= 1.0 / cfg_.batch;

  StepSummary s;
  s.step = step;
  s.grad_norm = grad.norm();
  s.delta_norm = optimizer_.step(params_, grad);
  if (!std::isfinite(s.delta_norm) ||
      !GradientVector({params_.weights().begin(), params_.weights().end()}).all_finite())
    throw NumericError("non-finite parameters after update at step " + std::to_string(step));
  for (const auto& r : records) {
    s.reward_mean += r.reward_mean;
    s.entropy_mean += r.entropy_mean;
    s.resp_len_mean += r.resp_len_mean;
    s.rollouts += r.rollouts;
    if (r.branch == Branch::kSft) ++s.sft_questions;
  }
  const double inv = 1.0 / static_cast<double>(records.size());
  s.reward_mean *= inv;
  s.entropy_mean *= inv;
  s.resp_len_mean *= inv;
  s.offline_ratio = offline_ratio(records);
  step_ = step;

  if (sink) {
    sink->on_step_records(records);
    sink->on_step(s);
  }
  maybe_evaluate(sink);
  return s;
}

void Trainer::run(int until_step, MetricsSink* sink) {
  if (step_ == 0) maybe_evaluate(sink);
  const int stop = std::min(until_step, cfg_.steps);
  while (step_ < stop) run_step(sink);
}

CheckpointRecord Trainer::checkpoint() const {
  return {static_cast<std::uint64_t>(step_), cfg_.seed, params_, optimizer_.config(),
          optimizer_.state()};
}

void Trainer::restore(const CheckpointRecord& rec) {
  if (rec.seed != cfg_.seed)
    throw ConfigError("checkpoint seed " + std::to_string(rec.seed) + " does not match config seed " +
                      std::to_string(cfg_.seed));
  if (rec.params.vocab() != params_.vocab() || rec.params.window() != params_.window())
    throw ConfigError("checkpoint policy shape does not match the task");
  if (rec.step > static_cast<std::uint64_t>(cfg_.steps))
    throw ConfigError("checkpoint step is beyond the configured steps");
  params_ = rec.params;
  optimizer_ = Optimizer(cfg_.optimizer, rec.optimizer_state);
  step_ = static_cast<int>(rec.step);
  last_eval_step_ = step_;
}

namespace {

class RecordingSink final : public MetricsSink {
 public:
  RecordingSink(TrainResult& out, MetricsSink* next) : out_(out), next_(next) {}
  void on_step_records(std::span<const StepRecord> r) override {
    out_.records.insert(out_.records.end(), r.begin(), r.end());
    if (next_) next_->on_step_records(r);
  }
  void on_step(const StepSummary& s) override {
    out_.summaries.push_back(s);
    if (next_) next_->on_step(s);
  }
  void on_eval(const EvalRecord& e) override {
    out_.evals.push_back(e);
    if (next_) next_->on_eval(e);
  }

 private:
  TrainResult& out_;
  MetricsSink* next_;
};

std::string checkpoint_name(int step) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "step_%06d.ckpt", step);
  return buf;
}

}  // namespace

TrainResult train(const TrainConfig& cfg, MetricsSink* sink, std::optional<Task> task) {
  const Task t = resolve_task(cfg, task);
  Trainer trainer(cfg, t, load_configured_demos(cfg, t));
  TrainResult out{trainer.params(), {}, {}, {}, {}};
  RecordingSink rec(out, sink);
  trainer.run(cfg.steps, &rec);
  out.params = trainer.params();
  out.grid = trainer.grid();
  return out;
}

TrainResult train_to_directory(const TrainConfig& cfg, const std::filesystem::path& out,
                               const std::string& resume_from) {
  const Task task = builtin_task(cfg.task);
  Trainer trainer(cfg, task, load_configured_demos(cfg, task));
  if (!resume_from.empty()) trainer.restore(load_checkpoint(resume_from));

  std::filesystem::create_directories(out / "grids");
  std::filesystem::create_directories(out / "checkpoints");
  {
    std::ofstream echo(out / "config.echo", std::ios::trunc);
    echo << echo_config(cfg);
  }
  JsonlSink jsonl(out, !resume_from.empty());
  TrainResult result{trainer.params(), {}, {}, {}, {}};
  RecordingSink rec(result, &jsonl);

  const int every = cfg.checkpoint_every;
  while (trainer.step() < cfg.steps) {
    const int next = every > 0 ? std::min(cfg.steps, (trainer.step() / every + 1) * every) : cfg.steps;
    trainer.run(next, &rec);
    save_checkpoint((out / "checkpoints" / checkpoint_name(trainer.step())).string(),
                    trainer.checkpoint());
  }
  result.params = trainer.params();
  result.grid = trainer.grid();
  {
    std::ofstream csv(out / "grids" / "accuracy.csv", std::ios::trunc);
    write_grid_csv(csv, result.grid);
    if (result.grid.cols() > 0) {
      std::ofstream pgm(out / "grids" / "accuracy.pgm", std::ios::binary | std::ios::trunc);
      write_grid_pgm(pgm, result.grid, 0.0, 1.0);
    }
  }
  return result;
}

}  // namespace upg

#pragma once

// Synthetic verifiable tasks.
//
// Every builtin task shares one answer convention: a correct trajectory is
// exactly [ANS, answer span..., EOS]. The verifier compares the span to the
// task's rule and nothing else, so emitting every token cannot earn reward.

#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "upg/policy.hpp"

namespace upg {

class Task {
 public:
  using Generator = std::function<TokenSeq(Engine&)>;
  using Verifier = std::function<int(const TokenSeq& question, std::span<const TokenId> tokens)>;
  using Demonstrator = std::function<TokenSeq(const TokenSeq& question)>;
  using Labeler = std::function<std::string(const TokenSeq& question)>;

  Task(std::string name, Vocabulary vocab, int max_len, int default_window, Generator generate,
       Verifier verifier, Demonstrator demonstrator, Labeler difficulty);

  const std::string& name() const { return name_; }
  const Vocabulary& vocab() const { return vocab_; }
  // Sampling cutoff for trajectories.
  int max_len() const { return max_len_; }
  // Smallest window in which every demonstrated token is a function of its context.
  int default_window() const { return default_window_; }

  TokenSeq generate(Engine& rng) const { return generate_(rng); }
  int verify(const TokenSeq& question, std::span<const TokenId> tokens) const {
    return verifier_(question, tokens);
  }
  TokenSeq demonstrate(const TokenSeq& question) const { return demonstrator_(question); }
  std::string difficulty(const TokenSeq& question) const { return difficulty_(question); }

  // Copy of this task with the verifier replaced.
  Task with_verifier(Verifier verifier, std::string suffix) const;

 private:
  std::string name_;
  Vocabulary vocab_;
  int max_len_;
  int default_window_;
  Generator generate_;
  Verifier verifier_;
  Demonstrator demonstrator_;
  Labeler difficulty_;
};

// Shared token ids of the builtin tasks.
namespace tokens {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kAnswer = 3;
}  // namespace tokens

struct ModAddOptions {
  int modulus = 5;
};

struct ReverseOptions {
  int length = 3;
  int alphabet = 4;
};

struct SparseParityOptions {
  int bits = 6;
  int subset_size = 3;
  std::uint64_t subset_seed = 7;
};

// Question [BOS, D_a, PLUS, D_b]; answer span [D_{(a+b) mod m}].
Task make_modadd(const ModAddOptions& opts = {});
// Question [BOS, s_1..s_n]; answer span [s_n..s_1].
Task make_reverse(const ReverseOptions& opts = {});
// Question [BOS, b_1..b_L]. The answer span walks the question bit by bit,
// emitting W(j, c_j) where c_j counts the ones among the hidden subset
// positions <= j, and closes with EVEN/ODD for the parity of c_L.
Task make_sparse_parity(const SparseParityOptions& opts = {});

// Looks up "modadd" | "reverse" | "sparse_parity" with default options.
Task builtin_task(std::string_view name);

// Token-level helpers for the builtin layouts (exposed for tests and tools).
namespace modadd {
inline constexpr TokenId kPlus = 4;
constexpr TokenId digit(int d) { return 5 + d; }
TokenSeq question(int a, int b);
}  // namespace modadd

namespace reverse {
constexpr TokenId symbol(int s) { return 4 + s; }
TokenSeq answer_span(std::span<const TokenId> payload);
}  // namespace reverse

namespace sparse_parity {
inline constexpr TokenId kZero = 4;
inline constexpr TokenId kOne = 5;
inline constexpr TokenId kEven = 6;
inline constexpr TokenId kOdd = 7;
constexpr TokenId walk(int step, int count, int subset_size) {
  return 8 + (step - 1) * (subset_size + 1) + count;
}
// Hidden positions (1-based) chosen deterministically from the options.
std::vector<int> hidden_subset(const SparseParityOptions& opts);
TokenSeq answer_span(const SparseParityOptions& opts, const TokenSeq& question);
}  // namespace sparse_parity

int verify(const Task& task, const TokenSeq& question, const Trajectory& traj);

// A supervising trajectory for one question.
struct DemonstrationRecord {
  TokenSeq question;
  TokenSeq demonstration;
  friend bool operator==(const DemonstrationRecord&, const DemonstrationRecord&) = default;
};

std::vector<DemonstrationRecord> demonstrations_for(const Task& task,
                                                    const std::vector<TokenSeq>& questions);

// JSON Lines: {"question": [...], "demonstration": [...]} per line.
void write_demonstrations(std::ostream& os, const std::vector<DemonstrationRecord>& records);
void save_demonstrations(const std::string& path, const std::vector<DemonstrationRecord>& records);
// Rejects empty sequences and ids outside `vocab`, naming the line.
std::vector<DemonstrationRecord> read_demonstrations(std::istream& is, const Vocabulary& vocab);
std::vector<DemonstrationRecord> load_demonstrations(const std::string& path, const Vocabulary& vocab);

class DemoIndex {
 public:
  DemoIndex() = default;
  explicit DemoIndex(const std::vector<DemonstrationRecord>& records);

  const TokenSeq* find(const TokenSeq& question) const;
  std::size_t size() const { return demos_.size(); }

 private:
  std::map<TokenSeq, TokenSeq> demos_;
};

// pi_beta. Deterministic kind is a point mass on the demonstrator's output.
struct BehaviorPolicy {
  enum class Kind { kDeterministic, kExplicit };
  Kind kind = Kind::kDeterministic;
  Task::Demonstrator demonstrator;
  std::optional<PolicyParams> params;

  static BehaviorPolicy deterministic(Task::Demonstrator demonstrator);
  static BehaviorPolicy explicit_softmax(PolicyParams params);
};

// log pi_beta(tau | q), or "impossible" when tau lies outside the support.
struct BehaviorLogProb {
  bool impossible = false;
  double value = 0.0;

  static BehaviorLogProb impossible_value() { return {true, 0.0}; }
};

BehaviorLogProb behavior_log_prob(const BehaviorPolicy& beta, const TokenSeq& question,
                                  std::span<const TokenId> tokens);

}  // namespace upg

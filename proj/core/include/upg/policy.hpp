#pragma once

// Contextual linear-softmax policy over a small token vocabulary.
//
// The policy conditions on a fixed window of the k most recent tokens of
// (question ++ generated prefix), left-padded with PAD. Each window slot is
// one-hot encoded over the vocabulary, giving F = k * V features, and the
// token logits are W * features with W a V x F matrix. Every quantity the
// estimators need (probabilities, log-probabilities, their gradients) has a
// closed form, which is what lets the test oracles be exact.

#include <cstdint>
#include <span>
#include <vector>

#include "upg/rng.hpp"

namespace upg {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

// Probabilities are floored here before any log is taken.
inline constexpr double kProbFloor = 1e-12;

double floored_log(double p);

struct Vocabulary {
  int size = 0;
  TokenId bos = 0;
  TokenId eos = 0;
  TokenId pad = 0;

  // Validates V >= 3 and that the special ids are distinct and in range.
  static Vocabulary make(int size, TokenId bos, TokenId eos, TokenId pad);

  bool contains(TokenId t) const { return t >= 0 && t < size; }
  friend bool operator==(const Vocabulary&, const Vocabulary&) = default;
};

class Context {
 public:
  Context(const Vocabulary& vocab, int window, std::span<const TokenId> question,
          std::span<const TokenId> prefix);

  std::span<const TokenId> window() const { return window_; }
  int window_length() const { return static_cast<int>(window_.size()); }
  int vocab_size() const { return vocab_size_; }
  int feature_dim() const { return window_length() * vocab_size_; }

  // Column of W touched by window slot `slot`.
  int feature_index(int slot) const { return slot * vocab_size_ + window_[slot]; }

  // Dense one-hot feature vector (exactly k ones).
  std::vector<double> features() const;

 private:
  std::vector<TokenId> window_;
  int vocab_size_;
};

class PolicyParams {
 public:
  PolicyParams(Vocabulary vocab, int window, std::vector<double> weights);

  static PolicyParams zeros(const Vocabulary& vocab, int window);
  // Entries uniform in [-scale, scale].
  static PolicyParams uniform(const Vocabulary& vocab, int window, double scale, Engine& rng);

  const Vocabulary& vocab() const { return vocab_; }
  int window() const { return window_; }
  int vocab_size() const { return vocab_.size; }
  int feature_dim() const { return window_ * vocab_.size; }
  std::size_t size() const { return weights_.size(); }

  std::span<const double> weights() const { return weights_; }
  std::span<double> weights() { return weights_; }

  double weight(int row, int col) const {
    return weights_[static_cast<std::size_t>(row) * feature_dim() + col];
  }

  Context context(std::span<const TokenId> question, std::span<const TokenId> prefix) const {
    return Context(vocab_, window_, question, prefix);
  }

  // Throws ConfigError when `ctx` was built for a different shape.
  void check_context(const Context& ctx) const;

 private:
  Vocabulary vocab_;
  int window_;
  std::vector<double> weights_;
};

struct GradientVector {
  std::vector<double> values;

  GradientVector() = default;
  explicit GradientVector(std::size_t n) : values(n, 0.0) {}
  explicit GradientVector(std::vector<double> v) : values(std::move(v)) {}

  std::size_t size() const { return values.size(); }
  double operator[](std::size_t i) const { return values[i]; }
  double& operator[](std::size_t i) { return values[i]; }

  GradientVector& operator+=(const GradientVector& other);
  GradientVector& operator-=(const GradientVector& other);
  GradientVector& operator*=(double s);
  void add_scaled(const GradientVector& other, double s);

  double norm() const;
  bool all_finite() const;
};

GradientVector operator-(GradientVector g);

// ||a - b|| / max(||a||, ||b||, 1e-12).
double relative_error(const GradientVector& a, const GradientVector& b);

struct Trajectory {
  TokenSeq question;
  TokenSeq tokens;
  // Probability of each token under the law that generated it.
  std::vector<double> gen_token_probs;
  double gen_logprob_sum = 0.0;

  std::size_t length() const { return tokens.size(); }
};

// Builds a trajectory whose generating law is a point mass (every gen prob 1),
// e.g. a demonstration drawn from a deterministic behavior policy.
Trajectory point_mass_trajectory(TokenSeq question, TokenSeq tokens);

// Softmax of W * features(ctx).
std::vector<double> token_distribution(const PolicyParams& params, const Context& ctx);

// Same, into a caller-owned buffer of length V; `temperature` scales logits.
void token_distribution_into(const PolicyParams& params, const Context& ctx,
                             std::span<double> out, double temperature = 1.0);

double sequence_log_prob(const PolicyParams& params, std::span<const TokenId> question,
                         std::span<const TokenId> tokens);

Trajectory sample_trajectory(const PolicyParams& params, std::span<const TokenId> question,
                             int max_len, double temperature, Engine& rng);

GradientVector grad_log_prob_token(const PolicyParams& params, const Context& ctx, TokenId token);
GradientVector grad_prob_token(const PolicyParams& params, const Context& ctx, TokenId token);

// out += scale * grad log pi(token | ctx), given the distribution `probs` at ctx.
// Touches only the k active feature columns of each row.
void accumulate_grad_log_prob(const Context& ctx, TokenId token, std::span<const double> probs,
                              double scale, int feature_dim, std::span<double> out);

// Gradient of sequence_log_prob.
GradientVector grad_sequence_log_prob(const PolicyParams& params, std::span<const TokenId> question,
                                      std::span<const TokenId> tokens);

double token_entropy(const PolicyParams& params, const Context& ctx);
double entropy_of(std::span<const double> probs);

}  // namespace upg

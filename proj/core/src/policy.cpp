#include "upg/policy.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "upg/errors.hpp"

namespace upg {

double floored_log(double p) { return std::log(std::max(p, kProbFloor)); }

Vocabulary Vocabulary::make(int size, TokenId bos, TokenId eos, TokenId pad) {
  if (size < 3) throw ConfigError("vocabulary size must be >= 3");
  Vocabulary v{size, bos, eos, pad};
  if (!v.contains(bos) || !v.contains(eos) || !v.contains(pad))
    throw ConfigError("special token id out of vocabulary range");
  if (bos == eos || bos == pad || eos == pad)
    throw ConfigError("special token ids must be pairwise distinct");
  return v;
}

Context::Context(const Vocabulary& vocab, int window, std::span<const TokenId> question,
                 std::span<const TokenId> prefix)
    : window_(static_cast<std::size_t>(window), vocab.pad), vocab_size_(vocab.size) {
  if (window < 1) throw ConfigError("context window must be >= 1");
  // Fill from the right with the most recent tokens.
  int slot = window - 1;
  for (auto it = prefix.rbegin(); it != prefix.rend() && slot >= 0; ++it) window_[slot--] = *it;
  for (auto it = question.rbegin(); it != question.rend() && slot >= 0; ++it)
    window_[slot--] = *it;
  for (TokenId t : window_)
    if (!vocab.contains(t)) throw InputError("token id " + std::to_string(t) + " out of range");
}

std::vector<double> Context::features() const {
  std::vector<double> f(static_cast<std::size_t>(feature_dim()), 0.0);
  for (int s = 0; s < window_length(); ++s) f[feature_index(s)] = 1.0;
  return f;
}

PolicyParams::PolicyParams(Vocabulary vocab, int window, std::vector<double> weights)
    : vocab_(vocab), window_(window), weights_(std::move(weights)) {
  if (window_ < 1) throw ConfigError("context window must be >= 1");
  const auto expected = static_cast<std::size_t>(vocab_.size) * feature_dim();
  if (weights_.size() != expected) {
    std::ostringstream os;
    os << "weight count " << weights_.size() << " != V*F = " << expected;
    throw ConfigError(os.str());
  }
  for (double w : weights_)
    if (!std::isfinite(w)) throw ConfigError("policy weights must be finite");
}

PolicyParams PolicyParams::zeros(const Vocabulary& vocab, int window) {
  return PolicyParams(vocab, window,
                      std::vector<double>(static_cast<std::size_t>(vocab.size) * window * vocab.size));
}

PolicyParams PolicyParams::uniform(const Vocabulary& vocab, int window, double scale, Engine& rng) {
  std::vector<double> w(static_cast<std::size_t>(vocab.size) * window * vocab.size);
  for (double& x : w) x = scale * (2.0 * uniform01(rng) - 1.0);
  return PolicyParams(vocab, window, std::move(w));
}

void PolicyParams::check_context(const Context& ctx) const {
  if (ctx.window_length() != window_ || ctx.vocab_size() != vocab_.size) {
    std::ostringstream os;
    os << "context shape (k=" << ctx.window_length() << ", V=" << ctx.vocab_size()
       << ") does not match policy (k=" << window_ << ", V=" << vocab_.size << ")";
    throw ConfigError(os.str());
  }
}

GradientVector& GradientVector::operator+=(const GradientVector& other) {
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += other.values[i];
  return *this;
}

GradientVector& GradientVector::operator-=(const GradientVector& other) {
  for (std::size_t i = 0; i < values.size(); ++i) values[i] -= other.values[i];
  return *this;
}

GradientVector& GradientVector::operator*=(double s) {
  for (double& v : values) v *= s;
  return *this;
}

void GradientVector::add_scaled(const GradientVector& other, double s) {
  for (std::size_t i = 0; i < values.size(); ++i) values[i] += s * other.values[i];
}

double GradientVector::norm() const {
  double acc = 0.0;
  for (double v : values) acc += v * v;
  return std::sqrt(acc);
}

bool GradientVector::all_finite() const {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

GradientVector operator-(GradientVector g) {
  for (double& v : g.values) v = -v;
  return g;
}

double relative_error(const GradientVector& a, const GradientVector& b) {
  if (a.size() != b.size()) throw InputError("relative_error: size mismatch");
  double diff = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) diff += (a[i] - b[i]) * (a[i] - b[i]);
  const double denom = std::max({a.norm(), b.norm(), 1e-12});
  return std::sqrt(diff) / denom;
}

Trajectory point_mass_trajectory(TokenSeq question, TokenSeq tokens) {
  Trajectory t;
  t.question = std::move(question);
  t.gen_token_probs.assign(tokens.size(), 1.0);
  t.tokens = std::move(tokens);
  t.gen_logprob_sum = 0.0;
  return t;
}

void token_distribution_into(const PolicyParams& params, const Context& ctx, std::span<double> out,
                             double temperature) {
  params.check_context(ctx);
  const int V = params.vocab_size();
  const int F = params.feature_dim();
  const auto w = params.weights();
  double max_logit = -INFINITY;
  for (int r = 0; r < V; ++r) {
    const double* row = w.data() + static_cast<std::size_t>(r) * F;
    double z = 0.0;
    for (int s = 0; s < ctx.window_length(); ++s) z += row[ctx.feature_index(s)];
    z /= temperature;
    out[r] = z;
    max_logit = std::max(max_logit, z);
  }
  double total = 0.0;
  for (int r = 0; r < V; ++r) {
    out[r] = std::exp(out[r] - max_logit);
    total += out[r];
  }
  for (int r = 0; r < V; ++r) out[r] /= total;
}

std::vector<double> token_distribution(const PolicyParams& params, const Context& ctx) {
  std::vector<double> p(static_cast<std::size_t>(params.vocab_size()));
  token_distribution_into(params, ctx, p);
  return p;
}

namespace {

void check_tokens(const Vocabulary& vocab, std::span<const TokenId> tokens) {
  for (std::size_t i = 0; i < tokens.size(); ++i)
    if (!vocab.contains(tokens[i]))
      throw InputError("token id " + std::to_string(tokens[i]) + " at position " +
                       std::to_string(i) + " out of range");
}

}  // namespace

double sequence_log_prob(const PolicyParams& params, std::span<const TokenId> question,
                         std::span<const TokenId> tokens) {
  check_tokens(params.vocab(), question);
  check_tokens(params.vocab(), tokens);
  std::vector<double> probs(static_cast<std::size_t>(params.vocab_size()));
  double total = 0.0;
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const Context ctx = params.context(question, tokens.first(t));
    token_distribution_into(params, ctx, probs);
    total += floored_log(probs[tokens[t]]);
  }
  return total;
}

Trajectory sample_trajectory(const PolicyParams& params, std::span<const TokenId> question,
                             int max_len, double temperature, Engine& rng) {
  if (max_len < 1) throw ConfigError("max_len must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("temperature must be > 0");
  Trajectory traj;
  traj.question.assign(question.begin(), question.end());
  std::vector<double> probs(static_cast<std::size_t>(params.vocab_size()));
  for (int t = 0; t < max_len; ++t) {
    const Context ctx = params.context(question, traj.tokens);
    token_distribution_into(params, ctx, probs, temperature);
    const double u = uniform01(rng);
    double cum = 0.0;
    TokenId pick = static_cast<TokenId>(probs.size() - 1);
    for (std::size_t r = 0; r < probs.size(); ++r) {
      cum += probs[r];
      if (u < cum) {
        pick = static_cast<TokenId>(r);
        break;
      }
    }
    // Guard against rounding leaving u >= cum with a zero-probability tail.
    while (probs[pick] <= 0.0 && pick > 0) --pick;
    traj.tokens.push_back(pick);
    traj.gen_token_probs.push_back(probs[pick]);
    traj.gen_logprob_sum += floored_log(probs[pick]);
    if (pick == params.vocab().eos) break;
  }
  return traj;
}

void accumulate_grad_log_prob(const Context& ctx, TokenId token, std::span<const double> probs,
                              double scale, int feature_dim, std::span<double> out) {
  const int V = static_cast<int>(probs.size());
  for (int r = 0; r < V; ++r) {
    const double coef = scale * ((r == token ? 1.0 : 0.0) - probs[r]);
    if (coef == 0.0) continue;
    double* row = out.data() + static_cast<std::size_t>(r) * feature_dim;
    for (int s = 0; s < ctx.window_length(); ++s) row[ctx.feature_index(s)] += coef;
  }
}

GradientVector grad_log_prob_token(const PolicyParams& params, const Context& ctx, TokenId token) {
  if (!params.vocab().contains(token)) throw InputError("token id out of range");
  const auto probs = token_distribution(params, ctx);
  GradientVector g(params.size());
  accumulate_grad_log_prob(ctx, token, probs, 1.0, params.feature_dim(), g.values);
  return g;
}

GradientVector grad_prob_token(const PolicyParams& params, const Context& ctx, TokenId token) {
  if (!params.vocab().contains(token)) throw InputError("token id out of range");
  const auto probs = token_distribution(params, ctx);
  GradientVector g(params.size());
  accumulate_grad_log_prob(ctx, token, probs, probs[token], params.feature_dim(), g.values);
  return g;
}

GradientVector grad_sequence_log_prob(const PolicyParams& params, std::span<const TokenId> question,
                                      std::span<const TokenId> tokens) {
  check_tokens(params.vocab(), tokens);
  GradientVector g(params.size());
  std::vector<double> probs(static_cast<std::size_t>(params.vocab_size()));
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const Context ctx = params.context(question, tokens.first(t));
    token_distribution_into(params, ctx, probs);
    accumulate_grad_log_prob(ctx, tokens[t], probs, 1.0, params.feature_dim(), g.values);
  }
  return g;
}

double entropy_of(std::span<const double> probs) {
  double h = 0.0;
  for (double p : probs)
    if (p > 0.0) h -= p * std::log(p);
  return std::max(h, 0.0);
}

double token_entropy(const PolicyParams& params, const Context& ctx) {
  return entropy_of(token_distribution(params, ctx));
}

}  // namespace upg

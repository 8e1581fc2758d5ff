#include <cmath>
#include <numeric>

#include "doctest.h"
#include "test_support.hpp"
#include "upg/algorithms.hpp"
#include "upg/errors.hpp"
#include "upg/policy.hpp"

using namespace upg;
using upg::testing::small_vocab;

namespace {

// Softmax of W * features evaluated straight from the weight matrix.
std::vector<double> oracle_distribution(const PolicyParams& p, const Context& ctx) {
  const int V = p.vocab_size();
  std::vector<double> logits(static_cast<std::size_t>(V), 0.0);
  for (int r = 0; r < V; ++r)
    for (int slot = 0; slot < ctx.window_length(); ++slot)
      logits[r] += p.weight(r, slot * V + ctx.window()[slot]);
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (auto& l : logits) z += (l = std::exp(l - mx));
  for (auto& l : logits) l /= z;
  return logits;
}

PolicyParams random_params(int V, int k, double scale, std::uint64_t seed) {
  auto rng = derive_stream(seed, {99});
  return PolicyParams::uniform(small_vocab(V), k, scale, rng);
}

TokenSeq random_tokens(Engine& rng, int V, int n) {
  TokenSeq t(static_cast<std::size_t>(n));
  for (auto& x : t) x = static_cast<TokenId>(uniform_index(rng, static_cast<std::uint64_t>(V)));
  return t;
}

}  // namespace

TEST_SUITE("policy") {

TEST_CASE("vocabulary validation") {
  CHECK_NOTHROW(Vocabulary::make(3, 1, 2, 0));
  CHECK_THROWS_AS(Vocabulary::make(2, 0, 1, 0), ConfigError);
  CHECK_THROWS_AS(Vocabulary::make(4, 1, 1, 0), ConfigError);
  CHECK_THROWS_AS(Vocabulary::make(4, 1, 2, 4), ConfigError);
  CHECK_THROWS_AS(Vocabulary::make(4, -1, 2, 0), ConfigError);
}

TEST_CASE("context window is left padded and one-hot per slot") {
  const auto vocab = small_vocab(5);
  const TokenSeq q{3, 4};
  const TokenSeq prefix{1};
  const Context ctx(vocab, 4, q, prefix);
  REQUIRE(ctx.window_length() == 4);
  CHECK(ctx.window()[0] == vocab.pad);
  CHECK(ctx.window()[1] == 3);
  CHECK(ctx.window()[2] == 4);
  CHECK(ctx.window()[3] == 1);
  const auto f = ctx.features();
  CHECK(f.size() == 20);
  CHECK(std::accumulate(f.begin(), f.end(), 0.0) == 4.0);
  for (int slot = 0; slot < 4; ++slot) CHECK(f[ctx.feature_index(slot)] == 1.0);

  const Context shifted(vocab, 2, q, TokenSeq{1, 2, 3});
  CHECK(shifted.window()[0] == 2);
  CHECK(shifted.window()[1] == 3);
}

TEST_CASE("params reject bad shapes and non-finite weights") {
  const auto vocab = small_vocab(3);
  CHECK_THROWS_AS(PolicyParams(vocab, 2, std::vector<double>(5, 0.0)), ConfigError);
  std::vector<double> w(18, 0.0);
  w[4] = std::nan("");
  CHECK_THROWS_AS(PolicyParams(vocab, 2, w), ConfigError);
  const auto p = PolicyParams::zeros(vocab, 2);
  CHECK(p.size() == 18);
  CHECK_THROWS_AS(p.check_context(Context(small_vocab(4), 2, TokenSeq{1}, {})), ConfigError);
  CHECK_THROWS_AS(token_distribution(p, Context(vocab, 3, TokenSeq{1}, {})), ConfigError);
}

TEST_CASE("token distribution") {
  SUBCASE("zero weights give the uniform law") {
    const auto p = PolicyParams::zeros(small_vocab(6), 3);
    for (double x : token_distribution(p, p.context(TokenSeq{1, 4}, {}))) CHECK(x == doctest::Approx(1.0 / 6));
  }
  SUBCASE("logits (0, ln 3) on a two-token slice give 1 : 3") {
    // Vocabularies have at least three ids; the third logit is 0 as well, so
    // the full law is (1/5, 3/5, 1/5) and tokens {0, 1} split 0.25 / 0.75.
    auto p = PolicyParams::zeros(small_vocab(3), 1);
    const auto ctx = p.context(TokenSeq{0}, {});
    p.weights()[1 * p.feature_dim() + ctx.feature_index(0)] = std::log(3.0);
    const auto d = token_distribution(p, ctx);
    CHECK(d[0] == doctest::Approx(0.2).epsilon(1e-12));
    CHECK(d[1] == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(d[0] / (d[0] + d[1]) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(sequence_log_prob(p, TokenSeq{0}, TokenSeq{1}) == doctest::Approx(std::log(0.6)));
  }
  SUBCASE("matches the direct softmax, positive, sums to one") {
    auto rng = derive_stream(5, {1});
    for (int trial = 0; trial < 50; ++trial) {
      const auto p = random_params(5, 3, 5.0, 100 + trial);
      const auto q = random_tokens(rng, 5, 1 + trial % 4);
      const auto ctx = p.context(q, {});
      const auto d = token_distribution(p, ctx);
      const auto o = oracle_distribution(p, ctx);
      double s = 0.0;
      for (std::size_t i = 0; i < d.size(); ++i) {
        CHECK(d[i] > 0.0);
        CHECK(std::abs(d[i] - o[i]) < 1e-12);
        s += d[i];
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("sequence log-probability") {
  const auto p = PolicyParams::zeros(small_vocab(4), 2);
  CHECK(sequence_log_prob(p, TokenSeq{1}, TokenSeq{}) == 0.0);
  CHECK(sequence_log_prob(p, TokenSeq{1}, TokenSeq{0, 3, 2}) == doctest::Approx(3 * std::log(0.25)));
  CHECK_THROWS_AS(sequence_log_prob(p, TokenSeq{1}, TokenSeq{0, 4}), InputError);
  CHECK_THROWS_AS(sequence_log_prob(p, TokenSeq{1}, TokenSeq{-1}), InputError);
}

TEST_CASE("sampling") {
  SUBCASE("a dominant logit repeats its token") {
    auto p = PolicyParams::zeros(small_vocab(4), 1);
    for (int col = 0; col < p.feature_dim(); ++col) p.weights()[3 * p.feature_dim() + col] = 1000.0;
    Engine rng(1);
    const auto t = sample_trajectory(p, TokenSeq{1}, 5, 1.0, rng);
    CHECK(t.tokens == TokenSeq{3, 3, 3, 3, 3});
    auto q = PolicyParams::zeros(small_vocab(4), 1);
    for (int col = 0; col < q.feature_dim(); ++col) q.weights()[q.vocab().eos * q.feature_dim() + col] = 1000.0;
    CHECK(sample_trajectory(q, TokenSeq{1}, 5, 1.0, rng).tokens == TokenSeq{q.vocab().eos});
  }
  SUBCASE("a fixed seed reproduces the trajectory") {
    const auto p = random_params(6, 2, 1.0, 3);
    auto a = derive_stream(42, {7});
    auto b = derive_stream(42, {7});
    const auto ta = sample_trajectory(p, TokenSeq{1, 4}, 6, 1.0, a);
    const auto tb = sample_trajectory(p, TokenSeq{1, 4}, 6, 1.0, b);
    CHECK(ta.tokens == tb.tokens);
    CHECK(ta.gen_token_probs == tb.gen_token_probs);
  }
  SUBCASE("first-token frequencies under the uniform law") {
    const auto p = PolicyParams::zeros(small_vocab(4), 2);
    Engine rng(2024);
    std::vector<int> counts(4, 0);
    const int n = 100000;
    for (int i = 0; i < n; ++i) ++counts[sample_trajectory(p, TokenSeq{1}, 1, 1.0, rng).tokens[0]];
    for (int c : counts) CHECK(std::abs(c / static_cast<double>(n) - 0.25) < 0.01);
  }
  SUBCASE("recorded probabilities are those of the law sampled from") {
    const auto p = random_params(5, 2, 2.0, 11);
    for (double temp : {1.0, 0.5, 2.0}) {
      Engine rng(9);
      const TokenSeq q{1, 3};
      const auto t = sample_trajectory(p, q, 6, temp, rng);
      REQUIRE(t.length() >= 1);
      REQUIRE(t.length() <= 6);
      double lp = 0.0;
      for (std::size_t i = 0; i < t.length(); ++i) {
        std::vector<double> d(5);
        token_distribution_into(p, p.context(q, std::span(t.tokens).first(i)), d, temp);
        CHECK(t.gen_token_probs[i] == doctest::Approx(d[t.tokens[i]]).epsilon(1e-12));
        CHECK(t.gen_token_probs[i] > 0.0);
        CHECK(t.gen_token_probs[i] <= 1.0);
        lp += std::log(t.gen_token_probs[i]);
      }
      CHECK(std::abs(lp - t.gen_logprob_sum) < 1e-9);
      if (temp == 1.0) CHECK(std::abs(t.gen_logprob_sum - sequence_log_prob(p, q, t.tokens)) < 1e-9);
    }
  }
}

TEST_CASE("closed-form token gradients") {
  SUBCASE("zero weights: one-hot minus uniform on the active columns") {
    const auto p = PolicyParams::zeros(small_vocab(3), 2);
    const auto ctx = p.context(TokenSeq{1, 0}, {});
    const auto g = grad_log_prob_token(p, ctx, 0);
    const auto f = ctx.features();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < p.feature_dim(); ++c)
        CHECK(g[r * p.feature_dim() + c] == doctest::Approx(((r == 0) - 1.0 / 3) * f[c]));
  }
  SUBCASE("rows sum to the zero pattern") {
    const auto p = random_params(5, 3, 2.0, 8);
    const auto g = grad_log_prob_token(p, p.context(TokenSeq{4, 1}, TokenSeq{3}), 2);
    for (int c = 0; c < p.feature_dim(); ++c) {
      double s = 0.0;
      for (int r = 0; r < 5; ++r) s += g[r * p.feature_dim() + c];
      CHECK(std::abs(s) < 1e-12);
    }
  }
  SUBCASE("grad pi = pi * grad log pi and sums to zero over tokens") {
    const auto p = random_params(6, 2, 3.0, 21);
    const auto ctx = p.context(TokenSeq{5, 4}, {});
    const auto d = token_distribution(p, ctx);
    GradientVector total(p.size());
    for (TokenId a = 0; a < 6; ++a) {
      const auto gp = grad_prob_token(p, ctx, a);
      const auto gl = grad_log_prob_token(p, ctx, a);
      for (std::size_t i = 0; i < p.size(); ++i) CHECK(std::abs(gp[i] - d[a] * gl[i]) <= 1e-12);
      total += gp;
    }
    for (double x : total.values) CHECK(std::abs(x) < 1e-9);
  }
  SUBCASE("expected score is zero") {
    const auto p = random_params(5, 3, 3.0, 23);
    const auto ctx = p.context(TokenSeq{1, 3, 4}, {});
    const auto d = token_distribution(p, ctx);
    GradientVector e(p.size());
    for (TokenId a = 0; a < 5; ++a) e.add_scaled(grad_log_prob_token(p, ctx, a), d[a]);
    for (double x : e.values) CHECK(std::abs(x) < 1e-9);
  }
}

TEST_CASE("token gradients match central differences at 50+ random points") {
  auto rng = derive_stream(77, {2});
  for (int trial = 0; trial < 60; ++trial) {
    const int V = 3 + trial % 4;
    const int k = 1 + trial % 3;
    // Weights up to 2: at magnitude 5 a near-deterministic token has a gradient
    // norm near 1e-4 and rounding in the differences dominates the relative
    // error. The absolute check below covers that regime.
    const auto p = random_params(V, k, 2.0, 1000 + trial);
    const auto q = random_tokens(rng, V, 2);
    const auto prefix = random_tokens(rng, V, trial % 3);
    const TokenId tok = static_cast<TokenId>(uniform_index(rng, static_cast<std::uint64_t>(V)));
    const auto ctx = p.context(q, prefix);
    auto seq = prefix;
    seq.push_back(tok);

    // d/dtheta log pi(tok | ctx) = d/dtheta [lp(prefix ++ tok) - lp(prefix)]
    const auto fd_log = finite_difference_grad(
        [&](const PolicyParams& x) {
          return sequence_log_prob(x, q, seq) - sequence_log_prob(x, q, prefix);
        },
        p, 1e-5);
    CHECK(relative_error(grad_log_prob_token(p, ctx, tok), fd_log) <= 1e-5);

    const auto fd_prob = finite_difference_grad(
        [&](const PolicyParams& x) { return token_distribution(x, x.context(q, prefix))[tok]; }, p,
        1e-5);
    CHECK(relative_error(grad_prob_token(p, ctx, tok), fd_prob) <= 1e-5);

    const auto fd_seq =
        finite_difference_grad([&](const PolicyParams& x) { return sequence_log_prob(x, q, seq); }, p, 1e-5);
    CHECK(relative_error(grad_sequence_log_prob(p, q, seq), fd_seq) <= 1e-5);
  }
}

TEST_CASE("token gradients at large weights agree to rounding") {
  auto rng = derive_stream(78, {2});
  for (int trial = 0; trial < 60; ++trial) {
    const int V = 3 + trial % 4;
    const int k = 1 + trial % 3;
    const auto p = random_params(V, k, 5.0, 2000 + trial);
    const auto q = random_tokens(rng, V, 2);
    auto seq = random_tokens(rng, V, 1 + trial % 3);
    const auto fd = finite_difference_grad([&](const PolicyParams& x) { return sequence_log_prob(x, q, seq); },
                                           p, 1e-5);
    CHECK(testing::max_abs_diff(grad_sequence_log_prob(p, q, seq), fd) <= 1e-8);
  }
}

TEST_CASE("entropy") {
  const auto z = PolicyParams::zeros(small_vocab(7), 2);
  CHECK(token_entropy(z, z.context(TokenSeq{1}, {})) == doctest::Approx(std::log(7.0)));
  auto p = PolicyParams::zeros(small_vocab(4), 1);
  for (int c = 0; c < p.feature_dim(); ++c) p.weights()[2 * p.feature_dim() + c] = 60.0;
  CHECK(token_entropy(p, p.context(TokenSeq{1}, {})) < 1e-20);
  const std::vector<double> two{0.25, 0.75};
  CHECK(entropy_of(two) == doctest::Approx(0.5623).epsilon(1e-4));
  CHECK(entropy_of(two) == doctest::Approx(-0.25 * std::log(0.25) - 0.75 * std::log(0.75)));
  const auto r = random_params(5, 2, 4.0, 31);
  const double h = token_entropy(r, r.context(TokenSeq{3}, {}));
  CHECK(h >= 0.0);
  CHECK(h <= std::log(5.0));
}

TEST_CASE("gradient vector arithmetic") {
  GradientVector a(std::vector<double>{3.0, 4.0});
  GradientVector b(std::vector<double>{1.0, 0.0});
  CHECK(a.norm() == 5.0);
  a -= b;
  CHECK(a.values == std::vector<double>{2.0, 4.0});
  a.add_scaled(b, 2.0);
  CHECK(a.values == std::vector<double>{4.0, 4.0});
  CHECK((-a).values == std::vector<double>{-4.0, -4.0});
  CHECK(relative_error(a, a) == 0.0);
  CHECK(relative_error(GradientVector(2), GradientVector(2)) == 0.0);
  CHECK(relative_error(a, GradientVector(2)) == doctest::Approx(1.0));
  a[0] = std::numeric_limits<double>::infinity();
  CHECK_FALSE(a.all_finite());
}

}  // TEST_SUITE

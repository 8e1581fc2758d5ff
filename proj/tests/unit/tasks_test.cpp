#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "test_support.hpp"
#include "upg/errors.hpp"
#include "upg/tasks.hpp"

using namespace upg;

namespace {

Trajectory as_traj(const TokenSeq& q, const TokenSeq& tokens) { return point_mass_trajectory(q, tokens); }

}  // namespace

TEST_SUITE("tasks") {

TEST_CASE("builtin lookup") {
  for (const char* name : {"modadd", "reverse", "sparse_parity"}) CHECK(builtin_task(name).name() == name);
  CHECK_THROWS_AS(builtin_task("bogus"), ConfigError);
}

TEST_CASE("modadd") {
  const auto task = builtin_task("modadd");
  const auto q = modadd::question(3, 4);
  const TokenSeq right{tokens::kAnswer, modadd::digit(2), tokens::kEos};
  CHECK(task.demonstrate(q) == right);
  CHECK(task.verify(q, right) == 1);
  CHECK(task.verify(q, TokenSeq{tokens::kAnswer, modadd::digit(1), tokens::kEos}) == 0);
  CHECK(task.difficulty(modadd::question(1, 2)) == "no_wrap");
  CHECK(task.difficulty(q) == "wrap");
}

TEST_CASE("reverse") {
  const auto task = builtin_task("reverse");
  const TokenSeq payload{reverse::symbol(2), reverse::symbol(3), reverse::symbol(1)};
  CHECK(reverse::answer_span(payload) == TokenSeq{reverse::symbol(1), reverse::symbol(3), reverse::symbol(2)});
  TokenSeq q{tokens::kBos};
  q.insert(q.end(), payload.begin(), payload.end());
  CHECK(task.verify(q, task.demonstrate(q)) == 1);
  CHECK(task.verify(q, TokenSeq{tokens::kAnswer, reverse::symbol(2), reverse::symbol(3), reverse::symbol(1),
                                tokens::kEos}) == 0);
  CHECK(task.difficulty(q) == "distinct");
}

TEST_CASE("the answer marker convention cannot be gamed") {
  const auto task = builtin_task("modadd");
  const auto q = modadd::question(1, 1);
  const auto demo = task.demonstrate(q);
  TokenSeq padded = demo;
  padded.insert(padded.begin(), modadd::digit(2));
  CHECK(task.verify(q, padded) == 0);
  TokenSeq no_eos(demo.begin(), demo.end() - 1);
  CHECK(task.verify(q, no_eos) == 0);
  TokenSeq everything{tokens::kAnswer};
  for (int d = 0; d < 5; ++d) everything.push_back(modadd::digit(d));
  everything.push_back(tokens::kEos);
  CHECK(task.verify(q, everything) == 0);
}

TEST_CASE("sparse parity layout") {
  const SparseParityOptions opts;
  const auto subset = sparse_parity::hidden_subset(opts);
  CHECK(subset.size() == 3);
  CHECK(std::set<int>(subset.begin(), subset.end()).size() == 3);
  for (int j : subset) CHECK((j >= 1 && j <= opts.bits));
  CHECK(sparse_parity::hidden_subset(opts) == subset);

  // Parity of the hidden bits, with the running count walked bit by bit.
  TokenSeq q{tokens::kBos};
  for (int j = 1; j <= opts.bits; ++j) q.push_back(sparse_parity::kOne);
  const auto span = sparse_parity::answer_span(opts, q);
  REQUIRE(span.size() == static_cast<std::size_t>(opts.bits) + 1);
  int count = 0;
  for (int j = 1; j <= opts.bits; ++j) {
    if (std::find(subset.begin(), subset.end(), j) != subset.end()) ++count;
    CHECK(span[j - 1] == sparse_parity::walk(j, count, opts.subset_size));
  }
  CHECK(span.back() == sparse_parity::kOdd);
  const auto task = builtin_task("sparse_parity");
  CHECK(task.difficulty(q) == "ones=3");
  CHECK(task.vocab().size == sparse_parity::walk(opts.bits, 3, 3) + 1);
}

TEST_CASE("sparse parity reward is exponentially rare for the uniform policy") {
  // The verifier accepts exactly one sequence per question, so the uniform
  // policy's pass rate is V^-(answer length); that is far below (1/4)^4.
  const auto task = builtin_task("sparse_parity");
  const auto p = PolicyParams::zeros(task.vocab(), task.default_window());
  auto rng = derive_stream(3, {1});
  const auto q = task.generate(rng);
  const auto demo = task.demonstrate(q);
  const double pass_rate = std::exp(sequence_log_prob(p, q, demo));
  CHECK(pass_rate == doctest::Approx(std::pow(task.vocab().size, -static_cast<double>(demo.size()))));
  CHECK(pass_rate <= std::pow(0.25, 4));
  // Single substitutions anywhere in the demonstration all fail.
  for (std::size_t i = 0; i < demo.size(); ++i) {
    auto bad = demo;
    bad[i] = (bad[i] + 1) % task.vocab().size;
    CHECK(task.verify(q, bad) == 0);
  }
  int hits = 0;
  for (int i = 0; i < 20000; ++i)
    hits += verify(task, q, sample_trajectory(p, q, task.max_len(), 1.0, rng));
  CHECK(hits == 0);
}

TEST_CASE("demonstrations verify on 1000 questions per task") {
  for (const char* name : {"modadd", "reverse", "sparse_parity"}) {
    const auto task = builtin_task(name);
    auto rng = derive_stream(17, {1});
    for (int i = 0; i < 1000; ++i) {
      const auto q = task.generate(rng);
      const auto demo = task.demonstrate(q);
      CHECK(static_cast<int>(demo.size()) <= task.max_len());
      CHECK(verify(task, q, as_traj(q, demo)) == 1);
      CHECK(task.verify(q, demo) == task.verify(q, demo));
    }
  }
}

TEST_CASE("empty trajectories score zero") {
  for (const char* name : {"modadd", "reverse", "sparse_parity"}) {
    const auto task = builtin_task(name);
    auto rng = derive_stream(1, {1});
    const auto q = task.generate(rng);
    CHECK(verify(task, q, Trajectory{q, {}, {}, 0.0}) == 0);
  }
}

TEST_CASE("demonstration files round-trip and reject bad records") {
  const auto task = builtin_task("reverse");
  auto rng = derive_stream(4, {1});
  std::vector<TokenSeq> qs;
  for (int i = 0; i < 20; ++i) qs.push_back(task.generate(rng));
  const auto records = demonstrations_for(task, qs);

  std::stringstream ss;
  write_demonstrations(ss, records);
  const std::string text = ss.str();
  const auto back = read_demonstrations(ss, task.vocab());
  CHECK(back == records);
  std::stringstream again;
  write_demonstrations(again, back);
  CHECK(again.str() == text);

  auto expect_error_on_line = [&](const std::string& body, const std::string& line_tag) {
    std::stringstream in(body);
    try {
      read_demonstrations(in, task.vocab());
      FAIL("expected a data error");
    } catch (const DataError& e) {
      CHECK(std::string(e.what()).find(line_tag) != std::string::npos);
    }
  };
  const std::string good = R"({"question":[1,4,5,6],"demonstration":[3,6,5,4,2]})";
  expect_error_on_line(good + "\n" + R"({"question":[1,4,99],"demonstration":[3,2]})" + "\n", "line 2");
  expect_error_on_line(R"({"question":[],"demonstration":[3,2]})" "\n", "line 1");
  expect_error_on_line(good + "\n\n" + "not json\n", "line 3");
  expect_error_on_line(R"({"question":[1,4]})" "\n", "line 1");
}

TEST_CASE("demo index lookup") {
  const auto task = builtin_task("modadd");
  const auto records = demonstrations_for(task, {modadd::question(0, 1), modadd::question(2, 2)});
  const DemoIndex idx(records);
  REQUIRE(idx.find(modadd::question(2, 2)) != nullptr);
  CHECK(*idx.find(modadd::question(2, 2)) == task.demonstrate(modadd::question(2, 2)));
  CHECK(idx.find(modadd::question(4, 4)) == nullptr);
}

TEST_CASE("behavior policy log-probabilities") {
  const auto task = builtin_task("modadd");
  const auto q = modadd::question(3, 4);
  const auto beta = BehaviorPolicy::deterministic([&task](const TokenSeq& x) { return task.demonstrate(x); });
  const auto demo = task.demonstrate(q);
  const auto on = behavior_log_prob(beta, q, demo);
  CHECK_FALSE(on.impossible);
  CHECK(on.value == 0.0);
  CHECK(behavior_log_prob(beta, q, TokenSeq{tokens::kAnswer, tokens::kEos}).impossible);

  const auto uniform = BehaviorPolicy::explicit_softmax(PolicyParams::zeros(testing::small_vocab(4), 2));
  const auto lp = behavior_log_prob(uniform, TokenSeq{1}, TokenSeq{0, 3});
  CHECK_FALSE(lp.impossible);
  CHECK(lp.value == doctest::Approx(2 * std::log(0.25)));
}

}  // TEST_SUITE

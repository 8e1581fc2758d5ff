#include "upg/tasks.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "upg/errors.hpp"

namespace upg {

namespace {

// Slack beyond a correct trajectory's length so wrong-length answers exist.
constexpr int kLengthSlack = 2;

int match_answer(std::span<const TokenId> tokens, const TokenSeq& span) {
  if (tokens.size() != span.size() + 2) return 0;
  if (tokens.front() != tokens::kAnswer || tokens.back() != tokens::kEos) return 0;
  return std::equal(span.begin(), span.end(), tokens.begin() + 1) ? 1 : 0;
}

TokenSeq wrap_answer(const TokenSeq& span) {
  TokenSeq out;
  out.reserve(span.size() + 2);
  out.push_back(tokens::kAnswer);
  out.insert(out.end(), span.begin(), span.end());
  out.push_back(tokens::kEos);
  return out;
}

Vocabulary builtin_vocab(int size) {
  return Vocabulary::make(size, tokens::kBos, tokens::kEos, tokens::kPad);
}

}  // namespace

Task::Task(std::string name, Vocabulary vocab, int max_len, int default_window, Generator generate,
           Verifier verifier, Demonstrator demonstrator, Labeler difficulty)
    : name_(std::move(name)),
      vocab_(vocab),
      max_len_(max_len),
      default_window_(default_window),
      generate_(std::move(generate)),
      verifier_(std::move(verifier)),
      demonstrator_(std::move(demonstrator)),
      difficulty_(std::move(difficulty)) {
  if (max_len_ < 1) throw ConfigError("task max_len must be >= 1");
  if (default_window_ < 1) throw ConfigError("task window must be >= 1");
}

Task Task::with_verifier(Verifier verifier, std::string suffix) const {
  Task t = *this;
  t.name_ += suffix;
  t.verifier_ = std::move(verifier);
  return t;
}

TokenSeq modadd::question(int a, int b) { return {tokens::kBos, digit(a), kPlus, digit(b)}; }

Task make_modadd(const ModAddOptions& opts) {
  const int m = opts.modulus;
  if (m < 2) throw ConfigError("modadd modulus must be >= 2");
  auto answer = [m](const TokenSeq& q) -> std::optional<int> {
    if (q.size() != 4 || q[0] != tokens::kBos || q[2] != modadd::kPlus) return std::nullopt;
    const int a = q[1] - modadd::digit(0);
    const int b = q[3] - modadd::digit(0);
    if (a < 0 || a >= m || b < 0 || b >= m) return std::nullopt;
    return (a + b) % m;
  };
  return Task(
      "modadd", builtin_vocab(modadd::digit(m)), 3 + kLengthSlack, 4,
      [m](Engine& rng) {
        const int a = static_cast<int>(uniform_index(rng, m));
        const int b = static_cast<int>(uniform_index(rng, m));
        return modadd::question(a, b);
      },
      [answer](const TokenSeq& q, std::span<const TokenId> tau) {
        const auto c = answer(q);
        return c ? match_answer(tau, {modadd::digit(*c)}) : 0;
      },
      [answer](const TokenSeq& q) {
        const auto c = answer(q);
        if (!c) throw InputError("modadd: malformed question");
        return wrap_answer({modadd::digit(*c)});
      },
      [m](const TokenSeq& q) {
        const int a = q[1] - modadd::digit(0);
        const int b = q[3] - modadd::digit(0);
        return std::string(a + b < m ? "no_wrap" : "wrap");
      });
}

TokenSeq reverse::answer_span(std::span<const TokenId> payload) {
  return TokenSeq(payload.rbegin(), payload.rend());
}

Task make_reverse(const ReverseOptions& opts) {
  const int n = opts.length;
  const int alphabet = opts.alphabet;
  if (n < 1 || alphabet < 2) throw ConfigError("reverse needs length >= 1 and alphabet >= 2");
  auto payload = [n](const TokenSeq& q) -> std::optional<std::span<const TokenId>> {
    if (q.size() != static_cast<std::size_t>(n) + 1 || q[0] != tokens::kBos) return std::nullopt;
    return std::span<const TokenId>(q).subspan(1);
  };
  return Task(
      "reverse", builtin_vocab(reverse::symbol(alphabet)), n + 2 + kLengthSlack, 2 * n,
      [n, alphabet](Engine& rng) {
        TokenSeq q{tokens::kBos};
        for (int i = 0; i < n; ++i)
          q.push_back(reverse::symbol(static_cast<int>(uniform_index(rng, alphabet))));
        return q;
      },
      [payload](const TokenSeq& q, std::span<const TokenId> tau) {
        const auto p = payload(q);
        return p ? match_answer(tau, reverse::answer_span(*p)) : 0;
      },
      [payload](const TokenSeq& q) {
        const auto p = payload(q);
        if (!p) throw InputError("reverse: malformed question");
        return wrap_answer(reverse::answer_span(*p));
      },
      [payload](const TokenSeq& q) {
        const auto p = payload(q);
        TokenSeq sorted(p->begin(), p->end());
        std::sort(sorted.begin(), sorted.end());
        const bool distinct = std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end();
        return std::string(distinct ? "distinct" : "repeats");
      });
}

std::vector<int> sparse_parity::hidden_subset(const SparseParityOptions& opts) {
  std::vector<int> positions(static_cast<std::size_t>(opts.bits));
  std::iota(positions.begin(), positions.end(), 1);
  Engine rng(mix64(opts.subset_seed));
  // Partial Fisher-Yates.
  for (int i = 0; i < opts.subset_size; ++i) {
    const auto j = i + static_cast<int>(uniform_index(rng, opts.bits - i));
    std::swap(positions[i], positions[j]);
  }
  positions.resize(static_cast<std::size_t>(opts.subset_size));
  std::sort(positions.begin(), positions.end());
  return positions;
}

TokenSeq sparse_parity::answer_span(const SparseParityOptions& opts, const TokenSeq& question) {
  if (question.size() != static_cast<std::size_t>(opts.bits) + 1 || question[0] != tokens::kBos)
    throw InputError("sparse_parity: malformed question");
  const auto subset = hidden_subset(opts);
  TokenSeq span;
  int count = 0;
  for (int j = 1; j <= opts.bits; ++j) {
    const TokenId bit = question[j];
    if (bit != kZero && bit != kOne) throw InputError("sparse_parity: question token is not a bit");
    if (std::binary_search(subset.begin(), subset.end(), j) && bit == kOne) ++count;
    span.push_back(walk(j, count, opts.subset_size));
  }
  span.push_back(count % 2 == 0 ? kEven : kOdd);
  return span;
}

Task make_sparse_parity(const SparseParityOptions& opts) {
  if (opts.bits < 1 || opts.subset_size < 1 || opts.subset_size > opts.bits)
    throw ConfigError("sparse_parity needs 1 <= subset_size <= bits");
  const int vocab_size = sparse_parity::walk(opts.bits, opts.subset_size, opts.subset_size) + 1;
  return Task(
      "sparse_parity", builtin_vocab(vocab_size), opts.bits + 3 + kLengthSlack, opts.bits + 2,
      [opts](Engine& rng) {
        TokenSeq q{tokens::kBos};
        for (int i = 0; i < opts.bits; ++i)
          q.push_back(uniform_index(rng, 2) ? sparse_parity::kOne : sparse_parity::kZero);
        return q;
      },
      [opts](const TokenSeq& q, std::span<const TokenId> tau) {
        try {
          return match_answer(tau, sparse_parity::answer_span(opts, q));
        } catch (const InputError&) {
          return 0;
        }
      },
      [opts](const TokenSeq& q) { return wrap_answer(sparse_parity::answer_span(opts, q)); },
      [opts](const TokenSeq& q) {
        const auto subset = sparse_parity::hidden_subset(opts);
        int ones = 0;
        for (int j : subset) ones += q[j] == sparse_parity::kOne ? 1 : 0;
        return "ones=" + std::to_string(ones);
      });
}

Task builtin_task(std::string_view name) {
  if (name == "modadd") return make_modadd();
  if (name == "reverse") return make_reverse();
  if (name == "sparse_parity") return make_sparse_parity();
  throw ConfigError("unknown task '" + std::string(name) +
                    "' (expected modadd | reverse | sparse_parity)");
}

int verify(const Task& task, const TokenSeq& question, const Trajectory& traj) {
  if (traj.tokens.empty()) return 0;
  return task.verify(question, traj.tokens);
}

std::vector<DemonstrationRecord> demonstrations_for(const Task& task,
                                                    const std::vector<TokenSeq>& questions) {
  std::vector<DemonstrationRecord> out;
  out.reserve(questions.size());
  for (const auto& q : questions) out.push_back({q, task.demonstrate(q)});
  return out;
}

void write_demonstrations(std::ostream& os, const std::vector<DemonstrationRecord>& records) {
  for (const auto& r : records) {
    nlohmann::json j;
    j["question"] = r.question;
    j["demonstration"] = r.demonstration;
    os << j.dump() << '\n';
  }
}

void save_demonstrations(const std::string& path, const std::vector<DemonstrationRecord>& records) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  write_demonstrations(os, records);
}

std::vector<DemonstrationRecord> read_demonstrations(std::istream& is, const Vocabulary& vocab) {
  std::vector<DemonstrationRecord> out;
  std::string line;
  std::size_t line_no = 0;
  auto fail = [&](const std::string& what) {
    throw DataError("demonstrations line " + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      fail(std::string("invalid JSON: ") + e.what());
    }
    DemonstrationRecord rec;
    for (auto [key, dest] : {std::pair{"question", &rec.question},
                             std::pair{"demonstration", &rec.demonstration}}) {
      if (!j.contains(key) || !j[key].is_array()) fail(std::string("missing array '") + key + "'");
      for (const auto& v : j[key]) {
        if (!v.is_number_integer()) fail(std::string("non-integer id in '") + key + "'");
        const auto id = v.get<std::int64_t>();
        if (id < 0 || id >= vocab.size)
          fail("token id " + std::to_string(id) + " in '" + key + "' out of range [0, " +
               std::to_string(vocab.size) + ")");
        dest->push_back(static_cast<TokenId>(id));
      }
      if (dest->empty()) fail(std::string("empty '") + key + "'");
    }
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<DemonstrationRecord> load_demonstrations(const std::string& path,
                                                     const Vocabulary& vocab) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot open demonstrations file '" + path + "'");
  return read_demonstrations(is, vocab);
}

DemoIndex::DemoIndex(const std::vector<DemonstrationRecord>& records) {
  for (const auto& r : records) demos_.emplace(r.question, r.demonstration);
}

const TokenSeq* DemoIndex::find(const TokenSeq& question) const {
  auto it = demos_.find(question);
  return it == demos_.end() ? nullptr : &it->second;
}

BehaviorPolicy BehaviorPolicy::deterministic(Task::Demonstrator demonstrator) {
  BehaviorPolicy b;
  b.kind = Kind::kDeterministic;
  b.demonstrator = std::move(demonstrator);
  return b;
}

BehaviorPolicy BehaviorPolicy::explicit_softmax(PolicyParams params) {
  BehaviorPolicy b;
  b.kind = Kind::kExplicit;
  b.params = std::move(params);
  return b;
}

BehaviorLogProb behavior_log_prob(const BehaviorPolicy& beta, const TokenSeq& question,
                                  std::span<const TokenId> tokens) {
  if (beta.kind == BehaviorPolicy::Kind::kExplicit)
    return {false, sequence_log_prob(*beta.params, question, tokens)};
  const TokenSeq demo = beta.demonstrator(question);
  if (std::equal(demo.begin(), demo.end(), tokens.begin(), tokens.end())) return {false, 0.0};
  return BehaviorLogProb::impossible_value();
}

}  // namespace upg

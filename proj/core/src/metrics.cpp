#include "upg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "upg/errors.hpp"

namespace upg {

namespace {

// C(56, 28) < 2^53 is the largest central binomial representable exactly.
constexpr int kExactBinomialMax = 56;

std::uint64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  std::uint64_t c = 1;
  for (int i = 0; i < k; ++i) c = c * static_cast<std::uint64_t>(n - i) / static_cast<std::uint64_t>(i + 1);
  return c;
}

}  // namespace

double pass_at_k_exact(int n, int c, int k) {
  if (n < 1 || k < 1) throw InputError("pass@k needs n >= 1 and k >= 1");
  if (k > n) throw InputError("pass@k needs k <= n");
  if (c < 0 || c > n) throw InputError("pass@k needs 0 <= c <= n");
  if (n - c < k) return 1.0;
  if (k == 1) return static_cast<double>(c) / static_cast<double>(n);
  if (n <= kExactBinomialMax) {
    // Both binomials are exact integers below 2^53, so the one division is
    // the correctly rounded value of the rational.
    const auto total = binomial(n, k);
    return static_cast<double>(total - binomial(n - c, k)) / static_cast<double>(total);
  }
  // C(n-c, k) / C(n, k) = prod_{i=0}^{k-1} (n-c-i) / (n-i)
  double miss = 1.0;
  for (int i = 0; i < k; ++i) miss *= static_cast<double>(n - c - i) / static_cast<double>(n - i);
  return 1.0 - miss;
}

PassKEstimate pass_at_k_bootstrap(std::span<const int> scores, int k, int resamples, Engine& rng) {
  if (k < 1 || static_cast<std::size_t>(k) > scores.size())
    throw InputError("bootstrap pass@k needs 1 <= k <= number of samples");
  if (resamples < 1) throw InputError("bootstrap pass@k needs resamples >= 1");
  std::vector<int> pool(scores.begin(), scores.end());
  int hits = 0;
  for (int r = 0; r < resamples; ++r) {
    // Partial Fisher-Yates draws a uniform size-k subset.
    bool any = false;
    for (int i = 0; i < k; ++i) {
      const auto j = i + uniform_index(rng, pool.size() - i);
      std::swap(pool[i], pool[j]);
      any = any || pool[i] != 0;
    }
    hits += any ? 1 : 0;
  }
  return {k, static_cast<double>(hits) / resamples, PassKEstimate::Method::kBootstrap, resamples};
}

double offline_ratio(std::span<const StepRecord> records) {
  if (records.empty()) throw InputError("offline ratio of an empty step");
  const auto sft = std::count_if(records.begin(), records.end(),
                                 [](const StepRecord& r) { return r.branch == Branch::kSft; });
  return static_cast<double>(sft) / static_cast<double>(records.size());
}

AccuracyGrid::AccuracyGrid(std::vector<int> question_ids, std::vector<int> steps)
    : question_ids_(std::move(question_ids)), steps_(std::move(steps)) {
  values_.assign(rows() * cols(), 0.0);
}

void AccuracyGrid::set(std::size_t row, std::size_t col, double v) {
  if (row >= rows() || col >= cols()) throw InputError("grid index out of range");
  values_[row * cols() + col] = v;
}

void AccuracyGrid::add_column(int step, std::span<const double> column) {
  if (column.size() != rows()) throw InputError("grid column has the wrong number of questions");
  std::vector<double> next;
  next.reserve(rows() * (cols() + 1));
  for (std::size_t r = 0; r < rows(); ++r) {
    for (std::size_t c = 0; c < cols(); ++c) next.push_back(at(r, c));
    next.push_back(column[r]);
  }
  steps_.push_back(step);
  values_ = std::move(next);
}

AccuracyGrid difference_grid(const AccuracyGrid& a, const AccuracyGrid& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw InputError("difference_grid: grids have different dimensions");
  if (a.question_ids() != b.question_ids() || a.steps() != b.steps())
    throw InputError("difference_grid: grids cover different questions or steps");
  AccuracyGrid out(a.question_ids(), a.steps());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t c = 0; c < a.cols(); ++c) out.set(r, c, a.at(r, c) - b.at(r, c));
  return out;
}

void write_grid_csv(std::ostream& os, const AccuracyGrid& grid) {
  os << "question_id";
  for (int s : grid.steps()) os << ',' << s;
  os << '\n';
  char buf[64];
  for (std::size_t r = 0; r < grid.rows(); ++r) {
    os << grid.question_ids()[r];
    for (std::size_t c = 0; c < grid.cols(); ++c) {
      std::snprintf(buf, sizeof buf, "%.17g", grid.at(r, c));
      os << ',' << buf;
    }
    os << '\n';
  }
}

namespace {

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

AccuracyGrid read_grid_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line)) throw DataError("grid CSV is empty");
  auto header = split_csv(line);
  if (header.empty() || header[0] != "question_id") throw DataError("grid CSV: bad header");
  std::vector<int> steps;
  std::vector<int> ids;
  std::vector<std::vector<double>> rows;
  try {
    for (std::size_t i = 1; i < header.size(); ++i) steps.push_back(std::stoi(header[i]));
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      auto cells = split_csv(line);
      if (cells.size() != header.size()) throw DataError("grid CSV: ragged row");
      ids.push_back(std::stoi(cells[0]));
      std::vector<double> row;
      for (std::size_t i = 1; i < cells.size(); ++i) row.push_back(std::stod(cells[i]));
      rows.push_back(std::move(row));
    }
  } catch (const std::logic_error&) {
    throw DataError("grid CSV: malformed number");
  }
  AccuracyGrid g(ids, steps);
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < steps.size(); ++c) g.set(r, c, rows[r][c]);
  return g;
}

void write_grid_pgm(std::ostream& os, const AccuracyGrid& grid, double lo, double hi, int cell) {
  if (!(hi > lo) || cell < 1) throw InputError("heatmap needs hi > lo and cell >= 1");
  const std::size_t w = std::max<std::size_t>(grid.cols(), 1) * cell;
  const std::size_t h = std::max<std::size_t>(grid.rows(), 1) * cell;
  os << "P5\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> line(w);
  for (std::size_t y = 0; y < h; ++y) {
    const std::size_t r = y / cell;
    for (std::size_t x = 0; x < w; ++x) {
      const std::size_t c = x / cell;
      double v = 0.0;
      if (r < grid.rows() && c < grid.cols())
        v = std::clamp((grid.at(r, c) - lo) / (hi - lo), 0.0, 1.0);
      line[x] = static_cast<unsigned char>(std::lround(v * 255.0));
    }
    os.write(reinterpret_cast<const char*>(line.data()), static_cast<std::streamsize>(w));
  }
}

ExclusiveSolves exclusive_solves(std::span<const int> solved_a, std::span<const int> solved_b,
                                 std::span<const std::string> labels) {
  if (solved_a.size() != solved_b.size() || solved_a.size() != labels.size())
    throw InputError("exclusive_solves needs evaluations over the same questions");
  ExclusiveSolves out;
  for (std::size_t i = 0; i < solved_a.size(); ++i) {
    auto& bucket = out.per_label[labels[i]];
    if (solved_a[i] && !solved_b[i]) {
      ++bucket.gained;
      ++out.overall.gained;
    } else if (!solved_a[i] && solved_b[i]) {
      ++bucket.lost;
      ++out.overall.lost;
    }
  }
  return out;
}

}  // namespace upg

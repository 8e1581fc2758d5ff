#pragma once

// Evaluation and training-dynamics instrumentation: pass@k, offline-data
// ratio, per-question accuracy grids, and exclusive-solve accounting.

#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "upg/hpt.hpp"
#include "upg/rng.hpp"

namespace upg {

// 1 - C(n-c, k) / C(n, k); exact integer binomials up to n = 56, a product
// of ratios beyond.
double pass_at_k_exact(int n, int c, int k);

struct PassKEstimate {
  enum class Method { kExact, kBootstrap };
  int k = 1;
  double estimate = 0.0;
  Method method = Method::kExact;
  int resamples = 0;
};

// Mean over resamples of [a uniformly drawn size-k subset contains a success].
PassKEstimate pass_at_k_bootstrap(std::span<const int> scores, int k, int resamples, Engine& rng);

// Fraction of a step's questions routed to the SFT branch.
double offline_ratio(std::span<const StepRecord> records);

// Rows are question ids, columns are evaluation steps.
class AccuracyGrid {
 public:
  AccuracyGrid() = default;
  AccuracyGrid(std::vector<int> question_ids, std::vector<int> steps);

  std::size_t rows() const { return question_ids_.size(); }
  std::size_t cols() const { return steps_.size(); }
  const std::vector<int>& question_ids() const { return question_ids_; }
  const std::vector<int>& steps() const { return steps_; }

  double at(std::size_t row, std::size_t col) const { return values_[row * cols() + col]; }
  void set(std::size_t row, std::size_t col, double v);
  // Appends a column; `column` must have one entry per question.
  void add_column(int step, std::span<const double> column);

 private:
  std::vector<int> question_ids_;
  std::vector<int> steps_;
  std::vector<double> values_;
};

// a - b elementwise; throws InputError on a shape or label mismatch.
AccuracyGrid difference_grid(const AccuracyGrid& a, const AccuracyGrid& b);

// CSV: header "question_id,<step>,<step>,...", one row per question.
void write_grid_csv(std::ostream& os, const AccuracyGrid& grid);
AccuracyGrid read_grid_csv(std::istream& is);
// Binary PGM heatmap, one cell per (question, step) scaled by `cell` pixels.
// Values map linearly from [lo, hi] to black..white.
void write_grid_pgm(std::ostream& os, const AccuracyGrid& grid, double lo, double hi, int cell = 4);

struct SolveCounts {
  int gained = 0;  // solved by a, not by b
  int lost = 0;    // solved by b, not by a
  friend bool operator==(const SolveCounts&, const SolveCounts&) = default;
};

struct ExclusiveSolves {
  std::map<std::string, SolveCounts> per_label;
  SolveCounts overall;
};

ExclusiveSolves exclusive_solves(std::span<const int> solved_a, std::span<const int> solved_b,
                                 std::span<const std::string> labels);

}  // namespace upg

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dtr/optimizer.hpp"
#include "dtr/propensity.hpp"

namespace dtr {

// Deterministic d-fold assignment for n items: a seeded shuffle of 0..n-1
// dealt round-robin, so fold sizes differ by at most one.  Returns the fold
// id of each position.  Throws std::invalid_argument when n < d or d < 2.
std::vector<int> kfold_split(int n, int d, std::uint64_t seed);

struct TuningGrid {
  std::vector<double> b_values;
  std::vector<double> lambda_values;
  int d = 5;
  std::uint64_t seed = 0;
};

// Validation scoring rule for cross-validation.
enum class ValidationMetric { kHard, kSmooth };

struct CvCell {
  double b = 0.0;
  double lambda = 0.0;
  int fold = 0;
  double score = 0.0;
  bool skipped = false;
  std::string note;  // reason when skipped
};

struct CvReport {
  std::vector<CvCell> cells;         // grid-major, fold-minor
  std::vector<double> mean_score;    // per grid point, non-skipped folds
  double best_b = 0.0;
  double best_lambda = 0.0;
  int best_index = 0;
};

// Picks the best mean score; ties prefer the larger lambda, then the smaller
// b.  Indexing must follow b-major, lambda-minor grid order.
int select_best(const std::vector<double>& mean_score,
                const std::vector<double>& b_values,
                const std::vector<double>& lambda_values);

// Cross-validates (b, lambda) for the policy fit.  Folds are assigned on the
// id-sorted subject order, so the split is invariant to row order.  Each
// training fold refits the propensity model (for Mode::kFit) and recalibrates
// u0; validation folds are scored with the chosen metric on their own grid.
// Folds whose training part has no failure before t_g, or whose calibration
// fails, are recorded as skipped.  Throws std::runtime_error when every fold
// of every grid point is skipped.
CvReport cross_validate(const Dataset& data, const FitConfig& base,
                        const TuningGrid& grid, PropensitySpec& propensity,
                        ValidationMetric metric = ValidationMetric::kHard);

}  // namespace dtr

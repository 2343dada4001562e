#pragma once

#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "dtr/tuning.hpp"

namespace dtr {

// How a flat covariate index such as "15" in a generator formula maps into
// the per-stage covariate blocks.  kFlattened reads it as the position in
// the concatenated (X_1, ..., X_M) vector: 15 -> stage 1 coordinate 15,
// 33 -> stage 2 coordinate 8.  kStageDigit splits the digits: 15 -> stage 1
// coordinate 5, 33 -> stage 3 coordinate 3.
enum class CovariateIndexing { kFlattened, kStageDigit };

struct ScenarioSpec {
  int example_id = 1;  // 1..4
  int n_train = 500;
  int n_test = 2000;
  int p = 25;
  int n_stages = 5;
  int k = 3;
  double censor_rate = 0.74;
  double t_g = 1.4;
  int replications = 30;
  std::uint64_t seed = 1;
  // Censoring offset; NaN requests calibration to censor_rate.
  double c0 = std::numeric_limits<double>::quiet_NaN();
  CovariateIndexing indexing = CovariateIndexing::kFlattened;
};

// Everything the generator knows that a method must not see.
struct GroundTruth {
  double c0 = 0.0;
  Mat d;                        // n x M optimal (generative) treatments
  std::vector<double> t_true;   // failure times
  std::vector<double> c_true;   // censoring times
};

// Draws a dataset of spec.n_train subjects with stream spec.seed.
std::pair<Dataset, GroundTruth> simulate(const ScenarioSpec& spec);
// Same design with an explicit size and stream.
std::pair<Dataset, GroundTruth> simulate(const ScenarioSpec& spec, int n,
                                         std::uint64_t seed);

// Solves P(C < T) = spec.censor_rate for c0 by bisection on a fixed
// Monte-Carlo sample of size n_mc (common random numbers, so the estimated
// rate is exactly monotone in c0).  Throws std::runtime_error when the rate
// cannot be bracketed or matched within max_steps.
double calibrate_c0(const ScenarioSpec& spec, std::uint64_t seed = 9001,
                    int n_mc = 100000, int max_steps = 60);

// True-rule lookup from a ground truth table.
Recommender truth_recommender(const GroundTruth& truth);
// Uniformly random rule (seeded; a fresh stream per subject/stage pair).
Recommender random_recommender(int k, std::uint64_t seed);

// Weighted Kaplan-Meier value of a rule on a test set at horizon t_g, on the
// grid built from the test set itself.
double evaluate_value(const Dataset& test, const Recommender& rule,
                      const PropensityLookup& propensity, double t_g);

struct BenchConfig {
  std::vector<ScenarioSpec> scenarios;
  TuningGrid grid;       // (b, lambda) cross-validation grid
  FitConfig base;        // defaults for every fit (t_g/b/lambda overridden)
  int threads = 0;       // 0 = library default
};

struct BenchRow {
  ScenarioSpec spec;
  std::vector<double> values;  // estimated value per replication
  double mean = 0.0;
  double sd = 0.0;
  double mean_seconds = 0.0;
};

struct BenchReport {
  std::vector<BenchRow> rows;
};

// Full pipeline per replication: simulate train/test, resolve propensities
// (known uniform for uniform designs, fitted for example 3), cross-validate
// (b, lambda), fit on the training set, evaluate on the test set.  c0 is
// calibrated once per (example, rate) and cached across replications.
BenchReport run_benchmark(const BenchConfig& config);

// Aligned text table of a report (one line per scenario).
std::string format_bench_table(const BenchReport& report);

}  // namespace dtr

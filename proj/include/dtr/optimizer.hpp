#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "dtr/estimator.hpp"

namespace dtr {

// How the surrogate inflection point u0 is derived from the data-scale
// constant C_Q.  kPopulation pins u0 at the population limit of C_Q, which is
// 0 for continuously distributed event times (every E[I(Y = t_s)] vanishes);
// kEmpirical uses -|C_Q|/lambda with C_Q estimated from the training sample.
// The empirical shift grows like (number of grid failures)/lambda and drives
// every surrogate factor to 1 (zero gradient) on realistic data, so the
// population limit is the default.
enum class U0Mode { kPopulation, kEmpirical };

// Settings for one policy fit at a fixed (b, lambda).
struct FitConfig {
  double t_g = 0.0;
  double lambda = 0.1;   // weight of the L2 (not squared) penalty
  double b = 5.0;        // surrogate steepness
  double cbar = 0.5;     // constant in the u0 calibration
  U0Mode u0_mode = U0Mode::kPopulation;
  int max_iter = 300;    // gradient-ascent iteration cap per start
  double epsilon = 1e-4; // stop when max(|dtheta|^2, |dgrad|^2) < epsilon
  double eta0 = 1e-2;    // initial / fallback step size
  double step_min = 1e-6;
  double step_max = 1e2;
  std::uint64_t seed = 1;
  int n_starts = 5;      // independent random restarts
};

struct FitResult {
  PolicySet policy;
  double objective = 0.0;
  std::vector<double> objective_trace;  // per-iteration values, winning start
  bool converged = false;
  int iterations = 0;
  int best_start = 0;
  double cq = 0.0;
  double u0 = 0.0;
};

// Data-scale constant: sum over grid factors of the log inverse-probability
// hazard margin at level cbar.  Always <= 0.  Throws std::runtime_error when
// some factor's weighted hazard reaches cbar (the log argument would be
// non-positive), naming the offending grid index.
double compute_cq(const Dataset& data, const TimeGrid& grid,
                  const PropensityLookup& propensity, double cbar);

// Flat parameter vector layout for the stacked per-stage coefficient blocks:
// for each stage m = 1..m_g, the (K-1) x dim(H_m) matrix row-major, then the
// K-1 intercepts.
struct PolicyLayout {
  int p = 0;
  int k = 0;
  int m_g = 0;
  std::vector<int> offset;  // per stage, start of its block
  int dim = 0;

  PolicyLayout() = default;
  PolicyLayout(int p_, int k_, int m_g_);

  std::vector<double> flatten(const PolicySet& policy) const;
  PolicySet unflatten(const std::vector<double>& theta,
                      const std::vector<double>& stage_boundaries) const;
};

// Smoothed objective Q(theta) = sum_s log(clamped hazard factor) -
// lambda * ||theta||_2, bound to one dataset/grid/surrogate.  Evaluation is
// OpenMP-parallel over subjects with a deterministic blocked reduction.
class SmoothObjective {
 public:
  SmoothObjective(const Dataset& data, const TimeGrid& grid,
                  const SimplexCode& code, const SurrogateParams& sp,
                  const PropensityLookup& propensity, double lambda);
  ~SmoothObjective();

  SmoothObjective(const SmoothObjective&) = delete;
  SmoothObjective& operator=(const SmoothObjective&) = delete;

  const PolicyLayout& layout() const;

  double value(const std::vector<double>& theta) const;
  // Returns the objective and writes the analytic gradient.
  double value_and_grad(const std::vector<double>& theta,
                        std::vector<double>& grad) const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

// Barzilai-Borwein gradient ascent on a generic objective.
struct BbOptions {
  int max_iter = 300;
  double epsilon = 1e-4;
  double eta0 = 1e-2;
  double step_min = 1e-6;
  double step_max = 1e2;
};

struct BbResult {
  std::vector<double> theta;  // best iterate by objective value
  double objective = 0.0;
  std::vector<double> trace;  // objective at the initial point and each step
  bool converged = false;
  int iterations = 0;
};

// value_and_grad(theta, grad) must return the objective and fill grad.
BbResult bb_ascent(
    const std::function<double(const std::vector<double>&,
                               std::vector<double>&)>& value_and_grad,
    std::vector<double> init, const BbOptions& opts);

// Full fit at fixed (b, lambda): builds the grid, sets u0 per config.u0_mode
// (C_Q is computed and reported either way), and runs n_starts BB ascents
// from uniform [-0.1, 0.1] initials seeded by config.seed, keeping the best
// objective.  A caller that already computed the data-scale constant for this
// data/grid (e.g. once per cross-validation fold) can pass it to skip the
// recomputation.
FitResult fit_policy(const Dataset& data, const FitConfig& config,
                     const PropensityLookup& propensity,
                     const double* precomputed_cq = nullptr);

}  // namespace dtr

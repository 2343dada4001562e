#pragma once

#include <functional>
#include <vector>

#include "dtr/dataset.hpp"
#include "dtr/geometry.hpp"

namespace dtr {

// Logistic surrogate l(u) = 1 / (1 + exp(-b (u - u0))).
struct SurrogateParams {
  double b = 1.0;
  double u0 = 0.0;
};

double logistic(double u, const SurrogateParams& sp);
double logistic_deriv(double u, const SurrogateParams& sp);  // b l (1 - l)

// Joint propensity lookup: estimated (or known) probability of the observed
// treatment sequence through the given stage, prod_{j<=m} p(A_j | H_j).
// The subject index allows table-backed implementations.
using PropensityLookup =
    std::function<double(int subj, const Trajectory& traj, int stage)>;

// Known randomization with equal arm probabilities: joint = K^{-m}.
PropensityLookup uniform_propensity(int k);

// Decision-rule lookup used by the hard estimator.  Implementations exist
// for fitted policies, simulation ground truth, and baseline rules.
using Recommender =
    std::function<int(int subj, const Trajectory& traj, int stage)>;

Recommender policy_recommender(const PolicySet& policy, const SimplexCode& code);
Recommender constant_recommender(int arm);

// Weights w_i(s) for weight index s = 0..g-1 (the s-th hazard factor uses
// column s-1).  Column s applies the rule/surrogate through stage m(t_s).
// Subjects already exited before stage m(t_s) hold 0 and are never read.
struct WeightTable {
  int n = 0;
  int g = 0;
  std::vector<double> w;  // n x g, row-major

  double at(int subj, int s) const {
    return w[static_cast<std::size_t>(subj) * g + s];
  }
};

WeightTable hard_weight_table(const Dataset& data, const Recommender& rule,
                              const PropensityLookup& propensity,
                              const TimeGrid& grid);

// Single column s of the hard table.
std::vector<double> hard_weights(const Dataset& data, const Recommender& rule,
                                 const PropensityLookup& propensity,
                                 const TimeGrid& grid, int s);

WeightTable smooth_weight_table(const Dataset& data, const PolicySet& policy,
                                const SimplexCode& code,
                                const SurrogateParams& sp,
                                const PropensityLookup& propensity,
                                const TimeGrid& grid);

std::vector<double> smooth_weights(const Dataset& data, const PolicySet& policy,
                                   const SimplexCode& code,
                                   const SurrogateParams& sp,
                                   const PropensityLookup& propensity,
                                   const TimeGrid& grid, int s);

// Weighted death/risk sums per hazard factor: num[s-1] adds w_i(s-1) over
// subjects failing exactly at t_s, den[s-1] over subjects with Y_i >= t_s.
// Subjects tied at Y_i = t_s count in both.
struct FactorSums {
  std::vector<double> num;
  std::vector<double> den;
};

FactorSums factor_sums(const Dataset& data, const TimeGrid& grid,
                       const WeightTable& table);

// Inverse-probability-weighted Kaplan-Meier value at t_g with the hard
// agreement indicator.  Factors with an empty weighted risk set are skipped;
// each factor is confined to [0, 1], so the value lies in [0, 1].
double km_value_hard(const Dataset& data, const Recommender& rule,
                     const PropensityLookup& propensity, const TimeGrid& grid);

double km_value_hard(const Dataset& data, const PolicySet& policy,
                     const PropensityLookup& propensity, const TimeGrid& grid);

// Smoothed estimate plus per-factor internals for reuse by the optimizer.
struct SmoothValue {
  double value = 1.0;
  std::vector<double> hazard;  // N_s / D_s per factor (0 when skipped)
  std::vector<double> factor;  // clamped 1 - hazard actually multiplied
  int clamped = 0;             // factors clipped at the lower floor
};

// Lower floor applied to each smooth hazard factor before taking logs.
inline constexpr double kFactorFloor = 1e-10;

SmoothValue km_value_smooth(const Dataset& data, const PolicySet& policy,
                            const SimplexCode& code, const SurrogateParams& sp,
                            const PropensityLookup& propensity,
                            const TimeGrid& grid);

}  // namespace dtr

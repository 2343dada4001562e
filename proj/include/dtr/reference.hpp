#pragma once

#include "dtr/estimator.hpp"

// Serial reference implementations of the weighted estimators and the smooth
// objective/gradient, written as straight formula transcriptions with no
// cumulative-product caching and no OpenMP.  They exist to pin down the
// parallel kernels in tests and benchmarks, not for production use.
namespace dtr::ref {

double km_value_hard(const Dataset& data, const Recommender& rule,
                     const PropensityLookup& propensity, const TimeGrid& grid);

SmoothValue km_value_smooth(const Dataset& data, const PolicySet& policy,
                            const SimplexCode& code, const SurrogateParams& sp,
                            const PropensityLookup& propensity,
                            const TimeGrid& grid);

// Q(theta) with the same clamping rules as the production objective.
double objective(const Dataset& data, const PolicySet& policy,
                 const SimplexCode& code, const SurrogateParams& sp,
                 const PropensityLookup& propensity, const TimeGrid& grid,
                 double lambda);

}  // namespace dtr::ref

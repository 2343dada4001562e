#include "dtr/reference.hpp"

#include <algorithm>
#include <cmath>

namespace dtr::ref {

namespace {

// Weight of one subject for the s-th hazard factor (1-based s), straight from
// the definitions.  Subjects that exited before stage m(t_{s-1}) weigh 0.
double hard_weight(const Dataset& data, int i, const Recommender& rule,
                   const PropensityLookup& propensity, int mu) {
  const Trajectory& subj = data.subjects[i];
  if (static_cast<int>(subj.stages.size()) < mu) return 0.0;
  double agree = 1.0;
  for (int j = 1; j <= mu; ++j)
    if (subj.stages[j - 1].treatment != rule(i, subj, j)) agree = 0.0;
  return agree / propensity(i, subj, mu);
}

double smooth_weight(const Dataset& data, int i, const PolicySet& policy,
                     const SimplexCode& code, const SurrogateParams& sp,
                     const PropensityLookup& propensity, int mu, int p) {
  const Trajectory& subj = data.subjects[i];
  if (static_cast<int>(subj.stages.size()) < mu) return 0.0;
  double prod = 1.0;
  for (int j = 1; j <= mu; ++j) {
    const std::vector<double> h = history_vector(subj, j, p);
    const std::vector<double> f = evaluate_policy(policy, j, h);
    const int a = subj.stages[j - 1].treatment;
    prod *= logistic(dot(code.v.row(a - 1), f.data(), code.k - 1), sp);
  }
  return prod / propensity(i, subj, mu);
}

}  // namespace

double km_value_hard(const Dataset& data, const Recommender& rule,
                     const PropensityLookup& propensity, const TimeGrid& grid) {
  double value = 1.0;
  for (int s = 1; s <= grid.g(); ++s) {
    const int mu = grid.weight_stage(s);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < data.n(); ++i) {
      const Trajectory& subj = data.subjects[i];
      if (subj.time < grid.points[s - 1]) continue;
      const double w = hard_weight(data, i, rule, propensity, mu);
      den += w;
      if (subj.time == grid.points[s - 1] && subj.event == 1) num += w;
    }
    if (den <= 0.0) continue;
    value *= std::min(1.0, std::max(0.0, 1.0 - num / den));
  }
  return value;
}

SmoothValue km_value_smooth(const Dataset& data, const PolicySet& policy,
                            const SimplexCode& code, const SurrogateParams& sp,
                            const PropensityLookup& propensity,
                            const TimeGrid& grid) {
  SmoothValue out;
  out.hazard.assign(grid.g(), 0.0);
  out.factor.assign(grid.g(), 1.0);
  for (int s = 1; s <= grid.g(); ++s) {
    const int mu = grid.weight_stage(s);
    double num = 0.0, den = 0.0;
    for (int i = 0; i < data.n(); ++i) {
      const Trajectory& subj = data.subjects[i];
      if (subj.time < grid.points[s - 1]) continue;
      const double w =
          smooth_weight(data, i, policy, code, sp, propensity, mu, data.p);
      den += w;
      if (subj.time == grid.points[s - 1] && subj.event == 1) num += w;
    }
    if (den <= 0.0) continue;
    out.hazard[s - 1] = num / den;
    const double raw = 1.0 - out.hazard[s - 1];
    out.factor[s - 1] = std::min(1.0, std::max(kFactorFloor, raw));
    if (raw < kFactorFloor) ++out.clamped;
    out.value *= out.factor[s - 1];
  }
  return out;
}

double objective(const Dataset& data, const PolicySet& policy,
                 const SimplexCode& code, const SurrogateParams& sp,
                 const PropensityLookup& propensity, const TimeGrid& grid,
                 double lambda) {
  const SmoothValue sv =
      ref::km_value_smooth(data, policy, code, sp, propensity, grid);
  double q = 0.0;
  for (double f : sv.factor) q += std::log(f);
  double norm_sq = 0.0;
  for (const PolicyStage& stage : policy.stages) {
    for (double v : stage.coef.a) norm_sq += v * v;
    for (double v : stage.intercept) norm_sq += v * v;
  }
  return q - lambda * std::sqrt(norm_sq);
}

}  // namespace dtr::ref

#include "dtr/estimator.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "dtr/parallel.hpp"

namespace dtr {

double logistic(double u, const SurrogateParams& sp) {
  const double z = sp.b * (u - sp.u0);
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double logistic_deriv(double u, const SurrogateParams& sp) {
  const double l = logistic(u, sp);
  return sp.b * l * (1.0 - l);
}

PropensityLookup uniform_propensity(int k) {
  if (k < 2) throw std::invalid_argument("uniform_propensity: k must be >= 2");
  return [k](int, const Trajectory&, int stage) {
    return std::pow(1.0 / static_cast<double>(k), stage);
  };
}

Recommender policy_recommender(const PolicySet& policy, const SimplexCode& code) {
  // Copy both: the returned closure must stay valid after the caller's
  // arguments go out of scope.
  return [policy, code](int, const Trajectory& traj, int stage) {
    return recommend(policy, code, stage,
                     history_vector(traj, stage, policy.p));
  };
}

Recommender constant_recommender(int arm) {
  return [arm](int, const Trajectory&, int) { return arm; };
}

namespace {

// Stage applied by weight column s = 0..g-1 (column s-1 feeds factor s).
int column_stage(const TimeGrid& grid, int s) {
  return s == 0 ? 1 : grid.stage[s - 1];
}

int max_weight_stage(const TimeGrid& grid) {
  return grid.g() <= 1 ? 1 : grid.stage[grid.g() - 2];
}

// Shared skeleton: fills the table from a per-subject stage-cumulative
// weight function cum(i, mu) defined for mu = 1..min(m(Y_i), m_top).
template <typename Cum>
WeightTable fill_table(const Dataset& data, const TimeGrid& grid, Cum&& cum) {
  WeightTable table;
  table.n = data.n();
  table.g = grid.g();
  table.w.assign(static_cast<std::size_t>(table.n) * table.g, 0.0);
  const int m_top = max_weight_stage(grid);
  parallel_for(table.n, [&](int i) {
    const Trajectory& subj = data.subjects[i];
    const int cap = std::min<int>(static_cast<int>(subj.stages.size()), m_top);
    std::vector<double> by_stage(cap + 1, 0.0);
    for (int mu = 1; mu <= cap; ++mu) by_stage[mu] = cum(i, mu);
    for (int s = 0; s < table.g; ++s) {
      const int mu = column_stage(grid, s);
      if (mu <= cap) table.w[static_cast<std::size_t>(i) * table.g + s] = by_stage[mu];
    }
  });
  return table;
}

}  // namespace

// Deterministic blocked reduction of the factor sums.
FactorSums factor_sums(const Dataset& data, const TimeGrid& grid,
                       const WeightTable& table) {
  const int g = grid.g();
  const int nb = num_blocks(data.n());
  std::vector<double> bnum(static_cast<std::size_t>(nb) * g, 0.0);
  std::vector<double> bden(static_cast<std::size_t>(nb) * g, 0.0);
  for_blocks(data.n(), [&](int bi, int begin, int end) {
    double* num = bnum.data() + static_cast<std::size_t>(bi) * g;
    double* den = bden.data() + static_cast<std::size_t>(bi) * g;
    for (int i = begin; i < end; ++i) {
      const Trajectory& subj = data.subjects[i];
      const double* w = table.w.data() + static_cast<std::size_t>(i) * g;
      for (int s = 0; s < g && grid.points[s] <= subj.time; ++s) {
        den[s] += w[s];
        if (subj.event == 1 && subj.time == grid.points[s]) num[s] += w[s];
      }
    }
  });
  FactorSums sums;
  sums.num.assign(g, 0.0);
  sums.den.assign(g, 0.0);
  for (int bi = 0; bi < nb; ++bi)
    for (int s = 0; s < g; ++s) {
      sums.num[s] += bnum[static_cast<std::size_t>(bi) * g + s];
      sums.den[s] += bden[static_cast<std::size_t>(bi) * g + s];
    }
  return sums;
}

WeightTable hard_weight_table(const Dataset& data, const Recommender& rule,
                              const PropensityLookup& propensity,
                              const TimeGrid& grid) {
  // cum(i, mu) = prod_{j<=mu} 1[A_ij = rule_j] / joint propensity.  The rule
  // is evaluated stage by stage, never past the subject's exit.
  return fill_table(data, grid, [&](int i, int mu) {
    const Trajectory& subj = data.subjects[i];
    for (int j = 1; j <= mu; ++j)
      if (subj.stages[j - 1].treatment != rule(i, subj, j)) return 0.0;
    return 1.0 / propensity(i, subj, mu);
  });
}

std::vector<double> hard_weights(const Dataset& data, const Recommender& rule,
                                 const PropensityLookup& propensity,
                                 const TimeGrid& grid, int s) {
  if (s < 0 || s >= grid.g())
    throw std::invalid_argument("hard_weights: weight index outside 0..g-1");
  const WeightTable table = hard_weight_table(data, rule, propensity, grid);
  std::vector<double> column(table.n);
  for (int i = 0; i < table.n; ++i) column[i] = table.at(i, s);
  return column;
}

WeightTable smooth_weight_table(const Dataset& data, const PolicySet& policy,
                                const SimplexCode& code,
                                const SurrogateParams& sp,
                                const PropensityLookup& propensity,
                                const TimeGrid& grid) {
  return fill_table(data, grid, [&](int i, int mu) {
    const Trajectory& subj = data.subjects[i];
    double prod = 1.0;
    for (int j = 1; j <= mu; ++j) {
      const std::vector<double> f =
          evaluate_policy(policy, j, history_vector(subj, j, policy.p));
      const double u =
          dot(code.v.row(subj.stages[j - 1].treatment - 1), f.data(), code.k - 1);
      prod *= logistic(u, sp);
    }
    return prod / propensity(i, subj, mu);
  });
}

std::vector<double> smooth_weights(const Dataset& data, const PolicySet& policy,
                                   const SimplexCode& code,
                                   const SurrogateParams& sp,
                                   const PropensityLookup& propensity,
                                   const TimeGrid& grid, int s) {
  if (s < 0 || s >= grid.g())
    throw std::invalid_argument("smooth_weights: weight index outside 0..g-1");
  const WeightTable table =
      smooth_weight_table(data, policy, code, sp, propensity, grid);
  std::vector<double> column(table.n);
  for (int i = 0; i < table.n; ++i) column[i] = table.at(i, s);
  return column;
}

double km_value_hard(const Dataset& data, const Recommender& rule,
                     const PropensityLookup& propensity, const TimeGrid& grid) {
  const WeightTable table = hard_weight_table(data, rule, propensity, grid);
  const FactorSums sums = factor_sums(data, grid, table);
  double value = 1.0;
  for (int s = 0; s < grid.g(); ++s) {
    if (sums.den[s] <= 0.0) continue;  // empty weighted risk set: skip
    const double factor = 1.0 - sums.num[s] / sums.den[s];
    value *= std::clamp(factor, 0.0, 1.0);
  }
  return value;
}

double km_value_hard(const Dataset& data, const PolicySet& policy,
                     const PropensityLookup& propensity, const TimeGrid& grid) {
  const SimplexCode code = build_simplex(policy.k);
  return km_value_hard(data, policy_recommender(policy, code), propensity, grid);
}

SmoothValue km_value_smooth(const Dataset& data, const PolicySet& policy,
                            const SimplexCode& code, const SurrogateParams& sp,
                            const PropensityLookup& propensity,
                            const TimeGrid& grid) {
  const WeightTable table =
      smooth_weight_table(data, policy, code, sp, propensity, grid);
  const FactorSums sums = factor_sums(data, grid, table);
  SmoothValue out;
  out.hazard.assign(grid.g(), 0.0);
  out.factor.assign(grid.g(), 1.0);
  for (int s = 0; s < grid.g(); ++s) {
    if (sums.den[s] <= 0.0) continue;
    out.hazard[s] = sums.num[s] / sums.den[s];
    double factor = 1.0 - out.hazard[s];
    if (factor < kFactorFloor) {
      factor = kFactorFloor;
      ++out.clamped;
    }
    out.factor[s] = std::min(factor, 1.0);
    out.value *= out.factor[s];
  }
  return out;
}

}  // namespace dtr

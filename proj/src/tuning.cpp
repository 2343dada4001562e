#include "dtr/tuning.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "dtr/parallel.hpp"
#include "dtr/rng.hpp"

namespace dtr {

std::vector<int> kfold_split(int n, int d, std::uint64_t seed) {
  if (d < 2) throw std::invalid_argument("kfold_split: need at least 2 folds");
  if (n < d) throw std::invalid_argument("kfold_split: fewer items than folds");
  std::vector<int> perm(n);
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  for (int i = n - 1; i > 0; --i)
    std::swap(perm[i], perm[rng.uniform_int(i + 1)]);
  std::vector<int> fold(n);
  for (int pos = 0; pos < n; ++pos) fold[perm[pos]] = pos % d;
  return fold;
}

int select_best(const std::vector<double>& mean_score,
                const std::vector<double>& b_values,
                const std::vector<double>& lambda_values) {
  const int nl = static_cast<int>(lambda_values.size());
  int best = -1;
  for (int gi = 0; gi < static_cast<int>(mean_score.size()); ++gi) {
    if (!std::isfinite(mean_score[gi])) continue;
    if (best < 0) {
      best = gi;
      continue;
    }
    const double s = mean_score[gi], sb = mean_score[best];
    const double l = lambda_values[gi % nl], lb = lambda_values[best % nl];
    const double b = b_values[gi / nl], bb = b_values[best / nl];
    if (s > sb || (s == sb && (l > lb || (l == lb && b < bb)))) best = gi;
  }
  if (best < 0)
    throw std::runtime_error("select_best: no grid point produced a score");
  return best;
}

namespace {

// One fold's precomputed pieces, shared across the (b, lambda) grid.
struct FoldContext {
  Dataset train;
  Dataset val;
  PropensityLookup train_prop;
  PropensityLookup val_prop;
  bool usable = false;
  double cq = 0.0;
  std::string note;
};

bool has_event_by(const Dataset& data, double t_g) {
  for (const Trajectory& subj : data.subjects)
    if (subj.event == 1 && subj.time > 0.0 && subj.time <= t_g) return true;
  return false;
}

}  // namespace

CvReport cross_validate(const Dataset& data, const FitConfig& base,
                        const TuningGrid& grid, PropensitySpec& propensity,
                        ValidationMetric metric) {
  if (grid.b_values.empty() || grid.lambda_values.empty())
    throw std::invalid_argument("cross_validate: empty grid");
  const int n = data.n();
  const int d = grid.d;
  const int max_stage = data.stage_of(base.t_g);

  // Tune lambda_star once on the full data; folds refit with it.
  if (propensity.mode == PropensitySpec::Mode::kFit &&
      static_cast<int>(propensity.lambda_star.size()) < max_stage)
    make_propensity(data, max_stage, propensity);

  // Fold assignment on the id-sorted subject order, so the split does not
  // depend on row order.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    return data.subjects[a].id < data.subjects[b].id;
  });
  const std::vector<int> fold_of_pos = kfold_split(n, d, grid.seed);
  std::vector<int> fold(n);
  for (int pos = 0; pos < n; ++pos) fold[order[pos]] = fold_of_pos[pos];

  std::vector<FoldContext> ctx(d);
  for (int f = 0; f < d; ++f) {
    std::vector<int> train_idx, val_idx;
    for (int i = 0; i < n; ++i) (fold[i] == f ? val_idx : train_idx).push_back(i);
    FoldContext& fc = ctx[f];
    fc.train = subset(data, train_idx);
    fc.val = subset(data, val_idx);
    if (!has_event_by(fc.train, base.t_g)) {
      fc.note = "no failure before t_g in the training fold";
      continue;
    }
    try {
      if (propensity.mode == PropensitySpec::Mode::kFit) {
        PropensityModel model;
        model.k = data.k;
        for (int m = 1; m <= max_stage; ++m)
          model.stages.push_back(
              fit_propensity(fc.train, m, propensity.lambda_star[m - 1]));
        fc.train_prop = model_propensity(model, data.p);
        fc.val_prop = fc.train_prop;
      } else {
        fc.train_prop = uniform_propensity(data.k);
        fc.val_prop = fc.train_prop;
      }
      const TimeGrid train_grid = build_time_grid(fc.train, base.t_g);
      fc.cq = compute_cq(fc.train, train_grid, fc.train_prop, base.cbar);
      fc.usable = true;
    } catch (const std::exception& e) {
      fc.note = e.what();
    }
  }

  const int nb = static_cast<int>(grid.b_values.size());
  const int nl = static_cast<int>(grid.lambda_values.size());
  CvReport report;
  report.cells.resize(static_cast<std::size_t>(nb) * nl * d);

  parallel_for(nb * nl * d, [&](int cell) {
    const int gi = cell / d;
    const int f = cell % d;
    CvCell& out = report.cells[cell];
    out.b = grid.b_values[gi / nl];
    out.lambda = grid.lambda_values[gi % nl];
    out.fold = f;
    const FoldContext& fc = ctx[f];
    if (!fc.usable) {
      out.skipped = true;
      out.note = fc.note;
      return;
    }
    try {
      FitConfig config = base;
      config.b = out.b;
      config.lambda = out.lambda;
      config.seed = mix_seed(base.seed, static_cast<std::uint64_t>(f));
      const FitResult fit = fit_policy(fc.train, config, fc.train_prop, &fc.cq);
      const TimeGrid val_grid = build_time_grid(fc.val, base.t_g);
      if (metric == ValidationMetric::kHard) {
        out.score = km_value_hard(fc.val, fit.policy, fc.val_prop, val_grid);
      } else {
        const SimplexCode code = build_simplex(data.k);
        SurrogateParams sp;
        sp.b = config.b;
        sp.u0 = fit.u0;
        out.score = km_value_smooth(fc.val, fit.policy, code, sp, fc.val_prop,
                                    val_grid)
                        .value;
      }
    } catch (const std::exception& e) {
      out.skipped = true;
      out.note = e.what();
    }
  });

  report.mean_score.assign(static_cast<std::size_t>(nb) * nl,
                           std::numeric_limits<double>::quiet_NaN());
  for (int gi = 0; gi < nb * nl; ++gi) {
    double sum = 0.0;
    int cnt = 0;
    for (int f = 0; f < d; ++f) {
      const CvCell& cell = report.cells[static_cast<std::size_t>(gi) * d + f];
      if (!cell.skipped) {
        sum += cell.score;
        ++cnt;
      }
    }
    if (cnt > 0) report.mean_score[gi] = sum / cnt;
  }

  report.best_index =
      select_best(report.mean_score, grid.b_values, grid.lambda_values);
  report.best_b = grid.b_values[report.best_index / nl];
  report.best_lambda = grid.lambda_values[report.best_index % nl];
  return report;
}

}  // namespace dtr

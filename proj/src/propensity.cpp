#include "dtr/propensity.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "dtr/parallel.hpp"
#include "dtr/rng.hpp"
#include "dtr/tuning.hpp"

namespace dtr {

namespace {

// Indices of the subjects that reached the given stage.
std::vector<int> stage_subjects(const Dataset& data, int stage) {
  std::vector<int> idx;
  for (int i = 0; i < data.n(); ++i)
    if (static_cast<int>(data.subjects[i].stages.size()) >= stage)
      idx.push_back(i);
  return idx;
}

struct StageDesign {
  int n = 0;
  int d = 0;  // history dimension
  int k = 0;
  std::vector<double> h;  // n x d
  std::vector<int> a;     // observed arm, 0-based
};

StageDesign build_design(const Dataset& data, int stage,
                         const std::vector<int>& idx) {
  StageDesign de;
  de.n = static_cast<int>(idx.size());
  de.d = history_dim(stage, data.p);
  de.k = data.k;
  de.h.resize(static_cast<std::size_t>(de.n) * de.d);
  de.a.resize(de.n);
  for (int r = 0; r < de.n; ++r) {
    const Trajectory& subj = data.subjects[idx[r]];
    const std::vector<double> hv = history_vector(subj, stage, data.p);
    std::copy(hv.begin(), hv.end(),
              de.h.begin() + static_cast<std::size_t>(r) * de.d);
    de.a[r] = subj.stages[stage - 1].treatment - 1;
  }
  return de;
}

// Parameters as one flat vector: coef (d x K, row-major) then intercepts (K).
int param_dim(const StageDesign& de) { return de.d * de.k + de.k; }

// Average negative log-likelihood and its gradient (deterministic blocked
// reduction).  Returns the value; fills grad when non-null.
double neg_loglik(const StageDesign& de, const std::vector<double>& beta,
                  std::vector<double>* grad) {
  const int d = de.d, k = de.k, n = de.n;
  const int dim = param_dim(de);
  const int nb = num_blocks(n);
  std::vector<double> bval(nb, 0.0);
  std::vector<double> bgrad(grad ? static_cast<std::size_t>(nb) * dim : 0, 0.0);
  for_blocks(n, [&](int bi, int begin, int end) {
    std::vector<double> z(k), pr(k);
    double* bg = grad ? bgrad.data() + static_cast<std::size_t>(bi) * dim : nullptr;
    for (int r = begin; r < end; ++r) {
      const double* h = de.h.data() + static_cast<std::size_t>(r) * d;
      double zmax = -1e300;
      for (int a = 0; a < k; ++a) {
        double s = beta[static_cast<std::size_t>(d) * k + a];  // intercept
        for (int c = 0; c < d; ++c) s += h[c] * beta[static_cast<std::size_t>(c) * k + a];
        z[a] = s;
        zmax = std::max(zmax, s);
      }
      double lse = 0.0;
      for (int a = 0; a < k; ++a) lse += std::exp(z[a] - zmax);
      lse = zmax + std::log(lse);
      bval[bi] += lse - z[de.a[r]];
      if (bg) {
        for (int a = 0; a < k; ++a) {
          pr[a] = std::exp(z[a] - lse);
          const double resid = pr[a] - (a == de.a[r] ? 1.0 : 0.0);
          bg[static_cast<std::size_t>(d) * k + a] += resid;
          for (int c = 0; c < d; ++c)
            bg[static_cast<std::size_t>(c) * k + a] += resid * h[c];
        }
      }
    }
  });
  double value = 0.0;
  for (int bi = 0; bi < nb; ++bi) value += bval[bi];
  value /= n;
  if (grad) {
    grad->assign(dim, 0.0);
    for (int bi = 0; bi < nb; ++bi)
      axpy(1.0, bgrad.data() + static_cast<std::size_t>(bi) * dim, grad->data(),
           dim);
    for (double& v : *grad) v /= n;
  }
  return value;
}

double soft_threshold(double v, double t) {
  if (v > t) return v - t;
  if (v < -t) return v + t;
  return 0.0;
}

// Proximal-gradient (ISTA) fit with backtracking; coefficients are
// soft-thresholded, intercepts take plain gradient steps.  beta is both the
// warm start and the result.
void prox_fit(const StageDesign& de, double lambda,
              const PropensityFitOptions& opts, std::vector<double>& beta) {
  const int d = de.d, k = de.k;
  const int dim = param_dim(de);
  const int n_coef = d * k;
  std::vector<double> grad(dim), next(dim), diff(dim);
  double f = neg_loglik(de, beta, &grad);
  double step = 1.0;
  for (int iter = 0; iter < opts.max_iter; ++iter) {
    // KKT residual of the composite objective.
    double kkt = 0.0;
    for (int j = 0; j < n_coef; ++j) {
      const double r = beta[j] != 0.0
                           ? std::abs(grad[j] + lambda * (beta[j] > 0 ? 1 : -1))
                           : std::max(0.0, std::abs(grad[j]) - lambda);
      kkt = std::max(kkt, r);
    }
    for (int j = n_coef; j < dim; ++j) kkt = std::max(kkt, std::abs(grad[j]));
    if (kkt < opts.tol) break;

    // Backtracking proximal step.
    double f_next = 0.0;
    for (;;) {
      for (int j = 0; j < n_coef; ++j)
        next[j] = soft_threshold(beta[j] - step * grad[j], step * lambda);
      for (int j = n_coef; j < dim; ++j) next[j] = beta[j] - step * grad[j];
      f_next = neg_loglik(de, next, nullptr);
      double lin = f, quad = 0.0;
      for (int j = 0; j < dim; ++j) {
        const double dj = next[j] - beta[j];
        lin += grad[j] * dj;
        quad += dj * dj;
      }
      if (f_next <= lin + quad / (2.0 * step) + 1e-15) break;
      step *= 0.5;
      if (step < 1e-12) break;
    }
    beta.swap(next);
    f = neg_loglik(de, beta, &grad);
    step = std::min(step * 1.25, 1e4);
  }
}

StagePropensityModel pack_model(const StageDesign& de, int stage,
                                double lambda_star,
                                const std::vector<double>& beta) {
  StagePropensityModel model;
  model.stage = stage;
  model.lambda_star = lambda_star;
  model.coef = Mat(de.d, de.k);
  std::copy(beta.begin(), beta.begin() + static_cast<std::size_t>(de.d) * de.k,
            model.coef.a.begin());
  model.intercept.assign(beta.begin() + static_cast<std::size_t>(de.d) * de.k,
                         beta.end());
  // Softmax is shift invariant; pick the mean-zero representative.
  const double mean =
      std::accumulate(model.intercept.begin(), model.intercept.end(), 0.0) /
      de.k;
  for (double& v : model.intercept) v -= mean;
  return model;
}

void check_arms(const StageDesign& de, int stage) {
  std::vector<int> count(de.k, 0);
  for (int a : de.a) ++count[a];
  for (int a = 0; a < de.k; ++a)
    if (count[a] == 0)
      throw std::runtime_error("fit_propensity: stage " + std::to_string(stage) +
                               ": empty treatment arm " + std::to_string(a + 1));
}

// Held-out average log-loss of a parameter vector on a design.
double log_loss(const StageDesign& de, const std::vector<double>& beta) {
  return neg_loglik(de, beta, nullptr);
}

// Smallest lambda that keeps every coefficient at zero: the max absolute
// coefficient gradient at the intercept-only optimum.
double lambda_max(const StageDesign& de) {
  std::vector<double> beta(param_dim(de), 0.0);
  // Intercept-only optimum: log arm frequencies (any shift).
  std::vector<double> freq(de.k, 0.0);
  for (int a : de.a) freq[a] += 1.0;
  for (int a = 0; a < de.k; ++a)
    beta[static_cast<std::size_t>(de.d) * de.k + a] =
        std::log(std::max(freq[a], 0.5) / de.n);
  std::vector<double> grad;
  neg_loglik(de, beta, &grad);
  double top = 0.0;
  for (int j = 0; j < de.d * de.k; ++j) top = std::max(top, std::abs(grad[j]));
  return top;
}

}  // namespace

std::vector<double> softmax_probs(const StagePropensityModel& model,
                                  const std::vector<double>& h) {
  if (static_cast<int>(h.size()) != model.coef.rows)
    throw std::invalid_argument("softmax_probs: history has the wrong length");
  const int k = static_cast<int>(model.intercept.size());
  std::vector<double> z(k);
  double zmax = -1e300;
  for (int a = 0; a < k; ++a) {
    double s = model.intercept[a];
    for (int c = 0; c < model.coef.rows; ++c) s += h[c] * model.coef(c, a);
    z[a] = s;
    zmax = std::max(zmax, s);
  }
  double lse = 0.0;
  for (int a = 0; a < k; ++a) lse += std::exp(z[a] - zmax);
  for (int a = 0; a < k; ++a) z[a] = std::exp(z[a] - zmax) / lse;
  return z;
}

double multinomial_loglik(const StagePropensityModel& model,
                          const Dataset& data, int stage) {
  const std::vector<int> idx = stage_subjects(data, stage);
  if (idx.empty())
    throw std::runtime_error("multinomial_loglik: no subject reached stage " +
                             std::to_string(stage));
  const StageDesign de = build_design(data, stage, idx);
  std::vector<double> beta(param_dim(de), 0.0);
  for (int c = 0; c < de.d; ++c)
    for (int a = 0; a < de.k; ++a)
      beta[static_cast<std::size_t>(c) * de.k + a] = model.coef(c, a);
  for (int a = 0; a < de.k; ++a)
    beta[static_cast<std::size_t>(de.d) * de.k + a] = model.intercept[a];
  return -neg_loglik(de, beta, nullptr);
}

StagePropensityModel fit_propensity(const Dataset& data, int stage,
                                    double lambda_star,
                                    const PropensityFitOptions& opts) {
  if (lambda_star < 0.0)
    throw std::invalid_argument("fit_propensity: lambda_star must be >= 0");
  const std::vector<int> idx = stage_subjects(data, stage);
  if (idx.empty())
    throw std::runtime_error("fit_propensity: no subject reached stage " +
                             std::to_string(stage));
  const StageDesign de = build_design(data, stage, idx);
  check_arms(de, stage);
  std::vector<double> beta(param_dim(de), 0.0);
  prox_fit(de, lambda_star, opts, beta);
  return pack_model(de, stage, lambda_star, beta);
}

double tune_lambda_star(const Dataset& data, int stage, int folds,
                        int grid_size, std::uint64_t seed) {
  const std::vector<int> idx = stage_subjects(data, stage);
  const int n = static_cast<int>(idx.size());
  if (n < folds)
    throw std::runtime_error("tune_lambda_star: fewer stage-" +
                             std::to_string(stage) + " subjects than folds");
  const StageDesign all = build_design(data, stage, idx);
  check_arms(all, stage);

  // Log-spaced path from the all-zero lambda down three decades.
  const double top = std::max(lambda_max(all), 1e-8);
  std::vector<double> path(grid_size);
  for (int j = 0; j < grid_size; ++j)
    path[j] = top * std::pow(10.0, -3.0 * j / (grid_size - 1));

  // Fold split on the id-sorted order of the stage subjects.
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int bi) {
    return data.subjects[idx[a]].id < data.subjects[idx[bi]].id;
  });
  const std::vector<int> fold_of_pos = kfold_split(n, folds, seed);
  std::vector<int> fold(n);
  for (int pos = 0; pos < n; ++pos) fold[order[pos]] = fold_of_pos[pos];

  std::vector<double> loss(grid_size, 0.0);
  std::vector<int> scored(grid_size, 0);
  for (int f = 0; f < folds; ++f) {
    std::vector<int> train_rows, val_rows;
    for (int r = 0; r < n; ++r)
      (fold[r] == f ? val_rows : train_rows).push_back(r);
    StageDesign tr, va;
    tr.n = static_cast<int>(train_rows.size());
    va.n = static_cast<int>(val_rows.size());
    tr.d = va.d = all.d;
    tr.k = va.k = all.k;
    for (int r : train_rows) {
      tr.h.insert(tr.h.end(), all.h.begin() + static_cast<std::size_t>(r) * all.d,
                  all.h.begin() + static_cast<std::size_t>(r + 1) * all.d);
      tr.a.push_back(all.a[r]);
    }
    for (int r : val_rows) {
      va.h.insert(va.h.end(), all.h.begin() + static_cast<std::size_t>(r) * all.d,
                  all.h.begin() + static_cast<std::size_t>(r + 1) * all.d);
      va.a.push_back(all.a[r]);
    }
    // Every arm must appear in the training part; otherwise skip the fold.
    std::vector<int> count(tr.k, 0);
    for (int a : tr.a) ++count[a];
    if (std::find(count.begin(), count.end(), 0) != count.end()) continue;

    std::vector<double> beta(param_dim(tr), 0.0);
    for (int j = 0; j < grid_size; ++j) {  // warm-started path, large to small
      prox_fit(tr, path[j], PropensityFitOptions{}, beta);
      loss[j] += log_loss(va, beta);
      ++scored[j];
    }
  }

  int best = -1;
  for (int j = 0; j < grid_size; ++j) {
    if (scored[j] == 0) continue;
    if (best < 0 || loss[j] / scored[j] < loss[best] / scored[best] - 1e-12)
      best = j;
  }
  if (best < 0)
    throw std::runtime_error("tune_lambda_star: every fold lacked an arm");
  return path[best];  // ties keep the earlier (larger) lambda
}

PropensityModel fit_propensity_model(const Dataset& data, int max_stage,
                                     int folds, int grid_size,
                                     std::uint64_t seed) {
  PropensityModel model;
  model.k = data.k;
  for (int m = 1; m <= max_stage; ++m) {
    const double lambda =
        tune_lambda_star(data, m, folds, grid_size, mix_seed(seed, m));
    model.stages.push_back(fit_propensity(data, m, lambda));
  }
  return model;
}

double joint_propensity(const PropensityModel& model, const Trajectory& subj,
                        int stage, int p) {
  if (stage < 1 || stage > static_cast<int>(model.stages.size()))
    throw std::invalid_argument("joint_propensity: stage outside the model");
  double prod = 1.0;
  for (int j = 1; j <= stage; ++j) {
    const std::vector<double> probs =
        softmax_probs(model.stages[j - 1], history_vector(subj, j, p));
    prod *= probs[subj.stages[j - 1].treatment - 1];
  }
  return std::max(prod, kPropensityFloor);
}

PropensityLookup model_propensity(const PropensityModel& model, int p) {
  const auto shared = std::make_shared<PropensityModel>(model);
  return [shared, p](int, const Trajectory& subj, int stage) {
    return joint_propensity(*shared, subj, stage, p);
  };
}

PropensityLookup make_propensity(const Dataset& data, int max_stage,
                                 PropensitySpec& spec) {
  if (spec.mode == PropensitySpec::Mode::kKnownUniform)
    return uniform_propensity(data.k);
  if (static_cast<int>(spec.lambda_star.size()) < max_stage) {
    spec.lambda_star.resize(max_stage);
    for (int m = 1; m <= max_stage; ++m)
      spec.lambda_star[m - 1] = tune_lambda_star(
          data, m, spec.cv_folds, spec.grid_size, mix_seed(spec.seed, m));
  }
  PropensityModel model;
  model.k = data.k;
  for (int m = 1; m <= max_stage; ++m)
    model.stages.push_back(fit_propensity(data, m, spec.lambda_star[m - 1]));
  return model_propensity(model, data.p);
}

}  // namespace dtr

#pragma once

#include <cstdint>
#include <vector>

#include "dtr/estimator.hpp"

namespace dtr {

// Multinomial logistic model for one stage: P(A = a | H = h) proportional to
// exp(intercept[a-1] + h . coef column a-1).
struct StagePropensityModel {
  int stage = 1;
  double lambda_star = 0.0;
  std::vector<double> intercept;  // K
  Mat coef;                       // dim(H_m) x K
};

struct PropensityModel {
  int k = 0;
  std::vector<StagePropensityModel> stages;  // stages 1..size()
};

// Arm probabilities for one history (numerically stable softmax).
std::vector<double> softmax_probs(const StagePropensityModel& model,
                                  const std::vector<double>& h);

// Average per-subject log-likelihood of the stage-m assignments among the
// subjects that reached stage m.
double multinomial_loglik(const StagePropensityModel& model,
                          const Dataset& data, int stage);

struct PropensityFitOptions {
  double tol = 1e-6;     // KKT residual target
  int max_iter = 5000;
};

// L1-penalized multinomial logistic fit by proximal gradient with
// backtracking.  Coefficients are soft-thresholded; intercepts are left
// unpenalized and mean-centered afterwards.  Subjects without stage m are
// excluded.  Throws std::runtime_error when some arm has no observation.
StagePropensityModel fit_propensity(const Dataset& data, int stage,
                                    double lambda_star,
                                    const PropensityFitOptions& opts = {});

// Picks lambda_star by d-fold cross-validated held-out log-loss over a
// log-spaced grid anchored at the smallest lambda that zeroes every
// coefficient.  Ties keep the larger lambda.
double tune_lambda_star(const Dataset& data, int stage, int folds = 5,
                        int grid_size = 10, std::uint64_t seed = 0);

// Tunes and fits stages 1..max_stage.
PropensityModel fit_propensity_model(const Dataset& data, int max_stage,
                                     int folds = 5, int grid_size = 10,
                                     std::uint64_t seed = 0);

// Joint probability of the observed assignments through `stage`, floored at
// kPropensityFloor.
inline constexpr double kPropensityFloor = 1e-6;

double joint_propensity(const PropensityModel& model, const Trajectory& subj,
                        int stage, int p);

// PropensityLookup backed by a fitted model.
PropensityLookup model_propensity(const PropensityModel& model, int p);

// How a pipeline obtains propensities.
struct PropensitySpec {
  enum class Mode { kKnownUniform, kFit };
  Mode mode = Mode::kKnownUniform;
  int cv_folds = 5;
  int grid_size = 10;
  std::uint64_t seed = 0;
  // Reused per-stage lambda_star values; tuned on first use when empty.
  std::vector<double> lambda_star;
};

// Resolves the spec on a dataset: either the known uniform lookup or a model
// fitted on `data` for stages 1..max_stage (tuning lambda_star if needed and
// recording it back into the spec).
PropensityLookup make_propensity(const Dataset& data, int max_stage,
                                 PropensitySpec& spec);

}  // namespace dtr

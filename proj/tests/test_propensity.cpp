#include <cmath>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "dtr/propensity.hpp"
#include "dtr/rng.hpp"
#include "oracles.hpp"

namespace {

// Single-stage dataset with assignments drawn from a known two-direction
// multinomial logistic model over the first coordinates.
dtr::Dataset logistic_assignments(int n, int p, std::uint64_t seed,
                                  double signal) {
  dtr::Rng rng(seed);
  dtr::Dataset data;
  data.p = p;
  data.k = 3;
  data.stage_boundaries = {0.0};
  for (int i = 0; i < n; ++i) {
    dtr::Trajectory subj;
    subj.id = "s" + std::to_string(i + 1);
    subj.time = rng.uniform(0.1, 2.0);
    subj.event = rng.uniform() < 0.5 ? 1 : 0;
    subj.stages.resize(1);
    subj.stages[0].x.resize(p);
    for (double& v : subj.stages[0].x) v = rng.normal();
    const double z1 = signal * subj.stages[0].x[0];
    const double z2 = -signal * subj.stages[0].x[1];
    const double w1 = std::exp(z1), w2 = std::exp(z2), w3 = 1.0;
    const double u = rng.uniform() * (w1 + w2 + w3);
    subj.stages[0].treatment = u < w1 ? 1 : (u < w1 + w2 ? 2 : 3);
    data.subjects.push_back(subj);
  }
  data.validate();
  return data;
}

}  // namespace

TEST_CASE("softmax probabilities are stable and normalized") {
  dtr::StagePropensityModel model;
  model.stage = 1;
  model.intercept = {800.0, 0.0, -800.0};
  model.coef = dtr::Mat(1, 3);
  const std::vector<double> probs = dtr::softmax_probs(model, {0.0});
  REQUIRE(probs.size() == 3);
  CHECK(probs[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(probs[1] >= 0.0);
  CHECK(probs[2] >= 0.0);
  CHECK(probs[0] + probs[1] + probs[2] == doctest::Approx(1.0).epsilon(1e-12));

  model.intercept = {0.2, -0.1, 0.4};
  model.coef = dtr::Mat(2, 3);
  model.coef(0, 0) = 1.0;
  model.coef(1, 2) = -0.5;
  const std::vector<double> h = {0.7, -0.3};
  const std::vector<double> q = dtr::softmax_probs(model, h);
  // Direct transcription.
  const double z1 = 0.2 + 0.7;
  const double z2 = -0.1;
  const double z3 = 0.4 - 0.5 * -0.3;
  const double tot = std::exp(z1) + std::exp(z2) + std::exp(z3);
  CHECK(q[0] == doctest::Approx(std::exp(z1) / tot).epsilon(1e-14));
  CHECK(q[1] == doctest::Approx(std::exp(z2) / tot).epsilon(1e-14));
  CHECK(q[2] == doctest::Approx(std::exp(z3) / tot).epsilon(1e-14));
}

TEST_CASE("two-arm log-likelihood reduces to the sigmoid form") {
  dtr::Rng rng(3);
  dtr::Dataset data;
  data.p = 2;
  data.k = 2;
  data.stage_boundaries = {0.0};
  for (int i = 0; i < 50; ++i) {
    dtr::Trajectory subj;
    subj.id = "s" + std::to_string(i);
    subj.time = rng.uniform(0.1, 1.0);
    subj.event = 1;
    subj.stages.resize(1);
    subj.stages[0].x = {rng.normal(), rng.normal()};
    subj.stages[0].treatment = 1 + rng.uniform_int(2);
    data.subjects.push_back(subj);
  }
  data.validate();

  dtr::StagePropensityModel model;
  model.stage = 1;
  model.intercept = {0.3, -0.3};
  model.coef = dtr::Mat(2, 2);
  model.coef(0, 0) = 0.8;
  model.coef(1, 0) = -0.2;
  model.coef(0, 1) = -0.4;
  model.coef(1, 1) = 0.6;

  double expect = 0.0;
  for (const dtr::Trajectory& subj : data.subjects) {
    const auto& x = subj.stages[0].x;
    const double z1 = 0.3 + 0.8 * x[0] - 0.2 * x[1];
    const double z2 = -0.3 - 0.4 * x[0] + 0.6 * x[1];
    const double margin = subj.stages[0].treatment == 1 ? z1 - z2 : z2 - z1;
    expect += -std::log1p(std::exp(-margin));
  }
  expect /= data.n();
  CHECK(dtr::multinomial_loglik(model, data, 1) ==
        doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("heavy penalty recovers the intercept-only fit exactly") {
  dtr::Rng rng(8);
  const dtr::Dataset data =
      oracle::random_censored_dataset(rng, 600, 3, 3, {0.0}, 1.5, 0.5);
  const dtr::StagePropensityModel model = dtr::fit_propensity(data, 1, 10.0);
  for (double v : model.coef.a) CHECK(std::fabs(v) <= 1e-8);
  // Unpenalized intercepts put the fitted probabilities at the empirical
  // arm frequencies.
  int count[3] = {0, 0, 0};
  for (const auto& subj : data.subjects) ++count[subj.stages[0].treatment - 1];
  const std::vector<double> probs =
      dtr::softmax_probs(model, std::vector<double>(3, 0.0));
  for (int a = 0; a < 3; ++a)
    CHECK(probs[a] ==
          doctest::Approx(count[a] / 600.0).epsilon(1e-5));
  // Intercepts are mean-centered.
  CHECK(model.intercept[0] + model.intercept[1] + model.intercept[2] ==
        doctest::Approx(0.0).epsilon(1e-10));
}

TEST_CASE("a light penalty finds real assignment signal") {
  const dtr::Dataset train = logistic_assignments(800, 4, 21, 1.2);
  const dtr::Dataset held = logistic_assignments(800, 4, 22, 1.2);
  const dtr::StagePropensityModel fitted =
      dtr::fit_propensity(train, 1, 0.01);
  const dtr::StagePropensityModel flat = dtr::fit_propensity(train, 1, 10.0);
  CHECK(dtr::multinomial_loglik(fitted, held, 1) >
        dtr::multinomial_loglik(flat, held, 1) + 0.05);
}

TEST_CASE("every arm must appear at the fitted stage") {
  dtr::Rng rng(11);
  dtr::Dataset data =
      oracle::random_censored_dataset(rng, 30, 2, 3, {0.0}, 1.2, 0.5);
  for (auto& subj : data.subjects) subj.stages[0].treatment = 1 + (subj.stages[0].treatment == 3 ? 1 : 0);
  CHECK_THROWS_WITH_AS(dtr::fit_propensity(data, 1, 0.1),
                       doctest::Contains("empty treatment arm"),
                       std::runtime_error);
}

TEST_CASE("lambda tuning is deterministic and positive") {
  const dtr::Dataset data = logistic_assignments(300, 3, 31, 0.8);
  const double a = dtr::tune_lambda_star(data, 1, 5, 8, 99);
  const double b = dtr::tune_lambda_star(data, 1, 5, 8, 99);
  CHECK(a == b);
  CHECK(a > 0.0);
}

TEST_CASE("joint propensity multiplies stages and respects the floor") {
  dtr::Rng rng(13);
  const dtr::Dataset data = oracle::random_censored_dataset(
      rng, 120, 2, 3, {0.0, 0.5, 1.0}, 1.6, 0.5);
  dtr::PropensityModel model = dtr::fit_propensity_model(data, 2, 4, 6, 17);
  REQUIRE(model.stages.size() == 2);
  CHECK(model.k == 3);
  CHECK(model.stages[0].stage == 1);
  CHECK(model.stages[1].stage == 2);
  CHECK(model.stages[0].lambda_star > 0.0);

  const dtr::PropensityLookup lookup = dtr::model_propensity(model, data.p);
  for (int i = 0; i < data.n(); ++i) {
    const dtr::Trajectory& subj = data.subjects[i];
    const int top = std::min<int>(2, subj.stages.size());
    double manual = 1.0;
    for (int m = 1; m <= top; ++m) {
      const std::vector<double> h = dtr::history_vector(subj, m, data.p);
      manual *=
          dtr::softmax_probs(model.stages[m - 1], h)[subj.stages[m - 1].treatment - 1];
    }
    if (top >= 1) {
      CHECK(lookup(i, subj, top) ==
            doctest::Approx(std::max(manual, dtr::kPropensityFloor))
                .epsilon(1e-14));
      CHECK(dtr::joint_propensity(model, subj, top, data.p) ==
            lookup(i, subj, top));
    }
  }

  // Extreme coefficients drive the product under the floor.
  dtr::PropensityModel harsh = model;
  for (auto& stage : harsh.stages) stage.intercept = {-200.0, 100.0, 100.0};
  dtr::Trajectory probe = data.subjects[0];
  probe.stages.resize(1);
  probe.stages[0].treatment = 1;
  CHECK(dtr::joint_propensity(harsh, probe, 1, data.p) ==
        dtr::kPropensityFloor);
}

TEST_CASE("the propensity spec resolves to uniform or fitted lookups") {
  dtr::Rng rng(19);
  const dtr::Dataset data = oracle::random_censored_dataset(
      rng, 90, 2, 3, {0.0, 0.5}, 1.2, 0.5);

  dtr::PropensitySpec uniform;
  const dtr::PropensityLookup u = dtr::make_propensity(data, 2, uniform);
  CHECK(u(0, data.subjects[0], 1) == doctest::Approx(1.0 / 3.0));

  dtr::PropensitySpec fit;
  fit.mode = dtr::PropensitySpec::Mode::kFit;
  fit.cv_folds = 4;
  fit.grid_size = 5;
  fit.seed = 7;
  const dtr::PropensityLookup f = dtr::make_propensity(data, 2, fit);
  REQUIRE(fit.lambda_star.size() == 2);  // recorded back for reuse
  CHECK(fit.lambda_star[0] > 0.0);
  const double p1 = f(0, data.subjects[0], 1);
  CHECK(p1 > 0.0);
  CHECK(p1 < 1.0);

  // Reuse skips retuning: explicitly seeded lambda_star values are honored.
  dtr::PropensitySpec reuse;
  reuse.mode = dtr::PropensitySpec::Mode::kFit;
  reuse.lambda_star = fit.lambda_star;
  const dtr::PropensityLookup g = dtr::make_propensity(data, 2, reuse);
  CHECK(g(0, data.subjects[0], 1) == doctest::Approx(p1).epsilon(1e-12));
}

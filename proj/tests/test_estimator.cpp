#include <cmath>
#include <vector>

#include "doctest.h"
#include "dtr/estimator.hpp"
#include "dtr/reference.hpp"
#include "dtr/rng.hpp"
#include "oracles.hpp"

namespace {

dtr::Recommender echo_rule() {
  return [](int, const dtr::Trajectory& subj, int stage) {
    return subj.stages[stage - 1].treatment;
  };
}

dtr::PropensityLookup unit_propensity() {
  return [](int, const dtr::Trajectory&, int) { return 1.0; };
}

dtr::Dataset single_stage_data(const std::vector<double>& time,
                               const std::vector<int>& event) {
  dtr::Dataset data;
  data.p = 1;
  data.k = 2;
  data.stage_boundaries = {0.0};
  for (std::size_t i = 0; i < time.size(); ++i) {
    dtr::Trajectory subj;
    subj.id = "s" + std::to_string(i + 1);
    subj.time = time[i];
    subj.event = event[i];
    subj.stages.resize(1);
    subj.stages[0].x = {0.0};
    subj.stages[0].treatment = 1;
    data.subjects.push_back(subj);
  }
  data.validate();
  return data;
}

// Zero policy: every score is 0, so the recommender always returns arm 1 and
// every surrogate factor is l(0).
dtr::PolicySet zero_policy(int p, int k, int m_g,
                           const std::vector<double>& boundaries) {
  dtr::PolicySet policy;
  policy.p = p;
  policy.k = k;
  policy.m_g = m_g;
  policy.stage_boundaries = boundaries;
  for (int m = 1; m <= m_g; ++m) {
    dtr::PolicyStage stage;
    stage.coef = dtr::Mat(k - 1, dtr::history_dim(m, p));
    stage.intercept.assign(k - 1, 0.0);
    policy.stages.push_back(stage);
  }
  return policy;
}

}  // namespace

TEST_CASE("logistic surrogate hits its frozen values") {
  dtr::SurrogateParams sp;  // b = 1, u0 = 0
  CHECK(dtr::logistic(2.0, sp) ==
        doctest::Approx(0.8807970779778823).epsilon(1e-15));
  CHECK(dtr::logistic(0.0, sp) == doctest::Approx(0.5).epsilon(1e-15));
  sp.b = 3.0;
  sp.u0 = 0.5;
  const double l = dtr::logistic(1.0, sp);
  CHECK(l == doctest::Approx(1.0 / (1.0 + std::exp(-1.5))).epsilon(1e-15));
  CHECK(dtr::logistic_deriv(1.0, sp) ==
        doctest::Approx(3.0 * l * (1.0 - l)).epsilon(1e-14));
  // Saturation stays finite and monotone.
  CHECK(dtr::logistic(800.0, sp) == doctest::Approx(1.0));
  CHECK(dtr::logistic(-800.0, sp) == doctest::Approx(0.0));
}

TEST_CASE("uniform propensity compounds by stage") {
  const dtr::PropensityLookup prop = dtr::uniform_propensity(3);
  dtr::Trajectory subj;
  CHECK(prop(0, subj, 1) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(prop(0, subj, 2) == doctest::Approx(1.0 / 9.0).epsilon(1e-15));
  CHECK(prop(0, subj, 4) == doctest::Approx(1.0 / 81.0).epsilon(1e-15));
}

TEST_CASE("hand-checkable survival product") {
  // Deaths at 0.2 and 0.3, censored at 0.35: (1 - 1/3)(1 - 1/2) = 1/3.
  const dtr::Dataset data = single_stage_data({0.2, 0.3, 0.35}, {1, 1, 0});
  const dtr::TimeGrid grid = dtr::build_time_grid(data, 0.3);
  const double v =
      dtr::km_value_hard(data, echo_rule(), unit_propensity(), grid);
  CHECK(v == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
}

TEST_CASE("tied exits count in both the death and risk sums") {
  const dtr::Dataset data =
      single_stage_data({0.4, 0.4, 0.4, 0.6}, {1, 1, 0, 0});
  const dtr::TimeGrid grid = dtr::build_time_grid(data, 0.5);
  // At 0.4: risk {all four}, deaths 2 -> factor 1/2.  At 0.5: no deaths.
  const double v =
      dtr::km_value_hard(data, echo_rule(), unit_propensity(), grid);
  CHECK(v == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("unit-weight estimator reproduces the textbook estimate") {
  dtr::Rng rng(99);
  for (int rep = 0; rep < 12; ++rep) {
    const int n = 20 + rng.uniform_int(120);
    const dtr::Dataset data = oracle::random_censored_dataset(
        rng, n, 2, 3, {0.0, 0.5, 1.0}, 1.6, 0.3 + 0.4 * rng.uniform());
    const double t_g = rng.uniform(0.3, 1.3);
    std::vector<double> time;
    std::vector<int> event;
    for (const dtr::Trajectory& subj : data.subjects) {
      time.push_back(subj.time);
      event.push_back(subj.event);
    }
    const dtr::TimeGrid grid = dtr::build_time_grid(data, t_g);
    const double ours =
        dtr::km_value_hard(data, echo_rule(), unit_propensity(), grid);
    const double book = oracle::textbook_km(time, event, t_g);
    CHECK(std::fabs(ours - book) < 1e-12);
  }
}

TEST_CASE("an empty weighted risk set skips its factor") {
  // Nobody received arm 2, so the constant-2 rule zeroes every weight and the
  // product has no surviving factor.
  const dtr::Dataset data = single_stage_data({0.2, 0.3, 0.4}, {1, 1, 1});
  const dtr::TimeGrid grid = dtr::build_time_grid(data, 0.35);
  const double v = dtr::km_value_hard(data, dtr::constant_recommender(2),
                                      unit_propensity(), grid);
  CHECK(v == 1.0);
}

TEST_CASE("hard weights divide agreement by the joint propensity") {
  dtr::Rng rng(7);
  const dtr::Dataset data =
      oracle::random_censored_dataset(rng, 60, 2, 3, {0.0, 0.5}, 1.2, 0.7);
  const dtr::TimeGrid grid = dtr::build_time_grid(data, 0.9);
  const dtr::PropensityLookup prop = dtr::uniform_propensity(3);
  const dtr::WeightTable table =
      dtr::hard_weight_table(data, echo_rule(), prop, grid);
  REQUIRE(table.n == data.n());
  REQUIRE(table.g == grid.g());
  for (int i = 0; i < data.n(); ++i) {
    for (int s = 0; s < grid.g(); ++s) {
      const int mu = grid.weight_stage(s + 1);
      const auto& subj = data.subjects[i];
      const double expect =
          static_cast<int>(subj.stages.size()) < mu ? 0.0 : std::pow(3.0, mu);
      CHECK(table.at(i, s) == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  // Column extractor agrees with the table.
  const std::vector<double> col =
      dtr::hard_weights(data, echo_rule(), prop, grid, grid.g() - 1);
  for (int i = 0; i < data.n(); ++i)
    CHECK(col[i] == table.at(i, grid.g() - 1));
}

TEST_CASE("factor sums match a direct tally") {
  dtr::Rng rng(21);
  const dtr::Dataset data =
      oracle::random_censored_dataset(rng, 80, 2, 2, {0.0, 0.5}, 1.2, 0.6);
  const dtr::TimeGrid grid = dtr::build_time_grid(data, 0.9);
  const dtr::WeightTable table = dtr::hard_weight_table(
      data, echo_rule(), dtr::uniform_propensity(2), grid);
  const dtr::FactorSums sums = dtr::factor_sums(data, grid, table);
  REQUIRE(static_cast<int>(sums.num.size()) == grid.g());
  for (int s = 1; s <= grid.g(); ++s) {
    double num = 0.0, den = 0.0;
    for (int i = 0; i < data.n(); ++i) {
      const auto& subj = data.subjects[i];
      if (subj.time < grid.points[s - 1]) continue;
      den += table.at(i, s - 1);
      if (subj.time == grid.points[s - 1] && subj.event == 1)
        num += table.at(i, s - 1);
    }
    CHECK(sums.den[s - 1] == doctest::Approx(den).epsilon(1e-12));
    CHECK(sums.num[s - 1] == doctest::Approx(num).epsilon(1e-12));
  }
}

TEST_CASE("smooth estimator agrees with its reference transcription") {
  dtr::Rng rng(33);
  const dtr::SimplexCode code = dtr::build_simplex(3);
  for (int rep = 0; rep < 6; ++rep) {
    const dtr::Dataset data = oracle::random_censored_dataset(
        rng, 50 + rng.uniform_int(60), 3, 3, {0.0, 0.5, 1.0}, 1.6, 0.6);
    dtr::PolicySet policy = zero_policy(3, 3, 2, data.stage_boundaries);
    for (auto& stage : policy.stages) {
      for (double& v : stage.coef.a) v = rng.uniform(-0.6, 0.6);
      for (double& v : stage.intercept) v = rng.uniform(-0.3, 0.3);
    }
    const dtr::SurrogateParams sp{2.0, -0.4};
    const dtr::TimeGrid grid = dtr::build_time_grid(data, 0.9);
    const dtr::SmoothValue a = dtr::km_value_smooth(
        data, policy, code, sp, dtr::uniform_propensity(3), grid);
    const dtr::SmoothValue b = dtr::ref::km_value_smooth(
        data, policy, code, sp, dtr::uniform_propensity(3), grid);
    CHECK(a.value == doctest::Approx(b.value).epsilon(1e-12));
    CHECK(a.clamped == b.clamped);
    REQUIRE(a.hazard.size() == b.hazard.size());
    for (std::size_t s = 0; s < a.hazard.size(); ++s) {
      CHECK(a.hazard[s] == doctest::Approx(b.hazard[s]).epsilon(1e-12));
      CHECK(a.factor[s] == doctest::Approx(b.factor[s]).epsilon(1e-12));
    }
  }
}

TEST_CASE("a fully depleted risk set clamps at the factor floor") {
  // Both subjects die at 0.3; with the zero policy every weight is equal, so
  // the hazard at 0.3 is exactly 1 and the factor clamps to the floor.
  const dtr::Dataset data = single_stage_data({0.3, 0.3}, {1, 1});
  const dtr::TimeGrid grid = dtr::build_time_grid(data, 0.4);
  const dtr::PolicySet policy = zero_policy(1, 2, 1, {0.0});
  const dtr::SmoothValue sv =
      dtr::km_value_smooth(data, policy, dtr::build_simplex(2),
                           dtr::SurrogateParams{1.0, 0.0},
                           unit_propensity(), grid);
  CHECK(sv.clamped == 1);
  CHECK(sv.factor[0] == dtr::kFactorFloor);
  CHECK(sv.hazard[0] == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(sv.value == doctest::Approx(dtr::kFactorFloor).epsilon(1e-12));
}

TEST_CASE("steep surrogate approaches the hard indicator") {
  // The b -> infinity limit recovers the hard indicator only where exactly
  // one arm scores positive and no score sits near zero, so the fixture puts
  // each stage's covariates near a scaled simplex vertex and the policy reads
  // them back directly.
  const dtr::SimplexCode code = dtr::build_simplex(3);
  dtr::PolicySet policy = zero_policy(2, 3, 2, {0.0, 0.5});
  policy.stages[0].coef(0, 0) = 1.0;
  policy.stages[0].coef(1, 1) = 1.0;
  policy.stages[1].coef(0, 2) = 1.0;  // stage-2 covariates inside H_2
  policy.stages[1].coef(1, 3) = 1.0;

  dtr::Rng rng(55);
  dtr::Dataset data;
  data.p = 2;
  data.k = 3;
  data.stage_boundaries = {0.0, 0.5};
  for (int i = 0; i < 70; ++i) {
    dtr::Trajectory subj;
    subj.id = "s" + std::to_string(100 + i);
    const double raw = rng.uniform(0.05, 1.1);
    subj.time = std::max(0.05, std::round(raw / 0.05) * 0.05);
    subj.event = rng.uniform() < 0.7 ? 1 : 0;
    subj.stages.resize(data.stage_of(subj.time));
    for (dtr::StageRecord& stage : subj.stages) {
      const int target = rng.uniform_int(3);
      const double scale = rng.uniform(0.5, 1.5);
      stage.x = {scale * code.v(target, 0) + 0.05 * rng.normal(),
                 scale * code.v(target, 1) + 0.05 * rng.normal()};
      stage.treatment = 1 + rng.uniform_int(3);
    }
    data.subjects.push_back(std::move(subj));
  }
  data.validate();

  double min_margin = 1e300;
  for (const dtr::Trajectory& subj : data.subjects)
    for (int m = 1; m <= static_cast<int>(subj.stages.size()); ++m) {
      const std::vector<double> scores = dtr::classify_scores(
          code, dtr::evaluate_policy(policy, m,
                                     dtr::history_vector(subj, m, data.p)));
      int positive = 0;
      for (double s : scores) {
        min_margin = std::min(min_margin, std::fabs(s));
        positive += s > 0.0 ? 1 : 0;
      }
      REQUIRE(positive == 1);
    }
  REQUIRE(min_margin >= 0.02);

  const dtr::TimeGrid grid = dtr::build_time_grid(data, 0.9);
  const dtr::PropensityLookup prop = dtr::uniform_propensity(3);
  const double hard = dtr::km_value_hard(data, policy, prop, grid);
  const double smooth =
      dtr::km_value_smooth(data, policy, code,
                           dtr::SurrogateParams{1000.0, 0.0}, prop, grid)
          .value;
  CHECK(std::fabs(hard - smooth) < 1e-6);
}

TEST_CASE("policy recommender matches the policy's own argmax") {
  dtr::Rng rng(61);
  const dtr::SimplexCode code = dtr::build_simplex(3);
  const dtr::Dataset data = oracle::random_censored_dataset(
      rng, 30, 2, 3, {0.0, 0.5}, 1.2, 0.6);
  dtr::PolicySet policy = zero_policy(2, 3, 2, data.stage_boundaries);
  for (auto& stage : policy.stages)
    for (double& v : stage.coef.a) v = rng.uniform(-1.0, 1.0);
  const dtr::Recommender rule = dtr::policy_recommender(policy, code);
  for (int i = 0; i < data.n(); ++i) {
    const auto& subj = data.subjects[i];
    for (int m = 1; m <= static_cast<int>(subj.stages.size()); ++m) {
      const std::vector<double> h = dtr::history_vector(subj, m, data.p);
      CHECK(rule(i, subj, m) ==
            dtr::recommend(policy, code, m, h));
    }
  }
}

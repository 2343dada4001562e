#include "dtr/simbench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <stdexcept>

#include "dtr/parallel.hpp"
#include "dtr/rng.hpp"

namespace dtr {

namespace {

struct CovariateRef {
  int stage = 1;  // 1-based
  int coord = 1;  // 1-based
};

CovariateRef map_index(int idx, int p, int n_stages, CovariateIndexing mode) {
  CovariateRef ref;
  if (mode == CovariateIndexing::kFlattened) {
    ref.stage = (idx - 1) / p + 1;
    ref.coord = (idx - 1) % p + 1;
  } else {
    ref.stage = idx / 10;
    ref.coord = idx % 10;
  }
  if (ref.stage < 1 || ref.stage > n_stages || ref.coord < 1 || ref.coord > p)
    throw std::invalid_argument(
        "scenario: covariate index " + std::to_string(idx) +
        " does not map inside " + std::to_string(n_stages) + " stages of " +
        std::to_string(p) + " covariates");
  return ref;
}

// Per-stage signal directions assembled from a base p-vector: one multiplier
// per covariate block plus raw coefficients on the past-treatment entries.
struct BlockPlan {
  std::vector<double> block_mult;
  std::vector<double> treat_coef;
};

std::vector<double> expand_theta(const std::vector<double>& base,
                                 const BlockPlan& plan, int p) {
  const int m = static_cast<int>(plan.block_mult.size());
  std::vector<double> theta(history_dim(m, p), 0.0);
  for (int b = 0; b < m; ++b)
    for (int c = 0; c < p; ++c) theta[b * p + c] = plan.block_mult[b] * base[c];
  for (int j = 0; j < m - 1; ++j) theta[m * p + j] = plan.treat_coef[j];
  return theta;
}

std::vector<BlockPlan> block_plans(int example_id, int n_stages) {
  std::vector<BlockPlan> plans;
  if (example_id == 4) {
    plans = {{{1.0}, {}},
             {{-0.5, 1.0}, {-0.3}},
             {{0.25, -0.25, 1.5}, {-0.05, -0.1}},
             {{0.25, -0.25, -0.25, 1.0}, {0.05, 0.05, -0.15}},
             {{0.05, -0.1, -0.25, -0.5, 1.0}, {0.05, -0.05, 0.05, -0.1}}};
  } else {
    plans = {{{1.0}, {}},
             {{0.5, -1.5}, {0.1}},
             {{0.25, -0.5, 1.0}, {0.05, 0.1}},
             {{0.1, -0.25, 0.5, 1.0}, {0.01, -0.05, 0.1}},
             {{0.05, -0.1, 0.25, 0.5, 1.0}, {0.01, -0.05, 0.05, -0.1}}};
  }
  if (n_stages > static_cast<int>(plans.size()))
    throw std::invalid_argument(
        "scenario: generative rule defined for at most 5 stages");
  plans.resize(n_stages);
  return plans;
}

std::vector<double> padded(std::vector<double> head, int p) {
  head.resize(p, 0.0);
  return head;
}

// Everything fixed about one scenario's generator, shared by all draws.
struct ExampleModel {
  int example_id = 1;
  int p = 0;
  int n_stages = 0;
  int k = 0;
  SimplexCode code;
  // theta[m-1][j]: stage-(m) signal direction j over the history vector.
  std::vector<std::vector<std::vector<double>>> theta;
  // gamma[m-1][j]: assignment-model direction for example 3.
  std::vector<std::vector<std::vector<double>>> gamma;
  CovariateRef t_ref[3];  // covariates entering the failure-time exponent
  int n_t_refs = 0;
};

ExampleModel build_model(const ScenarioSpec& spec) {
  if (spec.example_id < 1 || spec.example_id > 4)
    throw std::invalid_argument("scenario: example_id must be 1..4");
  if (spec.p < 3) throw std::invalid_argument("scenario: need p >= 3");
  if (spec.n_stages < 1)
    throw std::invalid_argument("scenario: need at least one stage");
  if (spec.k < 2) throw std::invalid_argument("scenario: need k >= 2");
  if (spec.example_id != 1 && spec.k != 3)
    throw std::invalid_argument(
        "scenario: examples 2-4 are defined for 3 arms");
  ExampleModel md;
  md.example_id = spec.example_id;
  md.p = spec.p;
  md.n_stages = spec.n_stages;
  md.k = spec.k;
  md.code = build_simplex(spec.k);

  std::vector<int> t_idx;
  std::vector<std::vector<double>> base(2);
  switch (spec.example_id) {
    case 1:
      t_idx = {15, 22, 33};
      break;
    case 2:
    case 3:
      base[0] = padded({1.0, 1.0, 1.0}, spec.p);
      base[1] = padded({1.0, -1.0, -1.0}, spec.p);
      t_idx = {15, 12};
      break;
    case 4:
      base[0] = padded({-1.0, 0.5, -1.0}, spec.p);
      base[1] = padded({0.5, -1.0, -1.0}, spec.p);
      t_idx = {13, 15};
      break;
  }
  md.n_t_refs = static_cast<int>(t_idx.size());
  for (int r = 0; r < md.n_t_refs; ++r)
    md.t_ref[r] = map_index(t_idx[r], spec.p, spec.n_stages, spec.indexing);

  if (spec.example_id != 1) {
    const std::vector<BlockPlan> plans =
        block_plans(spec.example_id, spec.n_stages);
    md.theta.resize(spec.n_stages);
    for (int m = 1; m <= spec.n_stages; ++m)
      for (int j = 0; j < 2; ++j)
        md.theta[m - 1].push_back(expand_theta(base[j], plans[m - 1], spec.p));
  }
  if (spec.example_id == 3) {
    const std::vector<std::vector<double>> gbase = {
        padded({0.0, 0.0, 0.25}, spec.p), padded({0.0, -0.25, 0.5}, spec.p)};
    md.gamma.resize(spec.n_stages);
    for (int m = 1; m <= spec.n_stages; ++m) {
      BlockPlan flat;
      flat.block_mult.assign(m, 1.0);
      flat.treat_coef.assign(m - 1, 0.0);
      for (int j = 0; j < 2; ++j)
        md.gamma[m - 1].push_back(expand_theta(gbase[j], flat, spec.p));
    }
  }
  return md;
}

struct RawDraw {
  std::vector<double> x;  // n_stages * p, stage-major
  std::vector<int> a;     // assigned treatments, labels 1..k
  std::vector<int> d;     // generative optimal treatments
  double log_t = 0.0;
  double log_c = 0.0;  // censoring exponent without the offset c0
};

RawDraw draw_subject(const ExampleModel& md, Rng& rng) {
  const int p = md.p;
  RawDraw out;
  out.x.assign(static_cast<std::size_t>(md.n_stages) * p, 0.0);
  out.a.resize(md.n_stages);
  out.d.resize(md.n_stages);
  double agree_sum = 0.0;
  const double agree_gain = md.example_id == 1 || md.example_id == 4 ? 0.5 : 0.75;
  std::vector<double> h;
  for (int m = 1; m <= md.n_stages; ++m) {
    double* x = out.x.data() + static_cast<std::size_t>(m - 1) * p;
    if (md.example_id == 1) {
      const int d = 1 + rng.uniform_int(md.k);
      out.d[m - 1] = d;
      const double sd = std::sqrt(0.1);
      for (int c = 0; c < p; ++c)
        x[c] = (c == d - 1 ? 0.5 * m : 0.0) + sd * rng.normal();
    } else if (md.example_id == 4) {
      for (int c = 0; c < p; ++c) x[c] = rng.uniform();
    } else {
      for (int c = 0; c < p; ++c) x[c] = rng.normal();
    }
    h.resize(history_dim(m, p));
    std::copy(out.x.begin(), out.x.begin() + static_cast<std::size_t>(m) * p,
              h.begin());
    for (int j = 0; j < m - 1; ++j) h[m * p + j] = out.a[j];
    if (md.example_id == 2 || md.example_id == 3) {
      const std::vector<double> f = {dot(h, md.theta[m - 1][0]),
                                     dot(h, md.theta[m - 1][1])};
      out.d[m - 1] = recommend(md.code, f);
    } else if (md.example_id == 4) {
      const double f1 = dot(h, md.theta[m - 1][0]);
      const double f2 = dot(h, md.theta[m - 1][1]);
      int d = 1 + (f1 * f1 * f1 > 0.0 ? 1 : 0) + (f2 * f2 * f2 > 0.0 ? 1 : 0);
      const double u = rng.uniform();
      const int replacement = 1 + rng.uniform_int(md.k);
      if (u >= 0.95) d = replacement;
      out.d[m - 1] = d;
    }
    if (md.example_id == 3) {
      const double z1 = dot(h, md.gamma[m - 1][0]);
      const double z2 = dot(h, md.gamma[m - 1][1]);
      const double mx = std::max({z1, z2, 0.0});
      const double w1 = std::exp(z1 - mx);
      const double w2 = std::exp(z2 - mx);
      const double w3 = std::exp(-mx);
      const double u = rng.uniform() * (w1 + w2 + w3);
      out.a[m - 1] = u < w1 ? 1 : (u < w1 + w2 ? 2 : 3);
    } else {
      out.a[m - 1] = 1 + rng.uniform_int(md.k);
    }
    if (out.a[m - 1] == out.d[m - 1]) agree_sum += agree_gain;
  }

  const auto xref = [&](const CovariateRef& r) {
    return out.x[static_cast<std::size_t>(r.stage - 1) * p + (r.coord - 1)];
  };
  double cov_term = 0.0;
  switch (md.example_id) {
    case 1: {
      const double x1 = xref(md.t_ref[0]);
      const double x2 = xref(md.t_ref[1]);
      const double x3 = xref(md.t_ref[2]);
      cov_term = -3.0 * x1 + x2 * x2 * x2 - std::fabs(x3);
      break;
    }
    case 2:
    case 3:
      cov_term = -0.5 * std::fabs(xref(md.t_ref[0])) + xref(md.t_ref[1]);
      break;
    case 4:
      cov_term = -2.0 * std::fabs(xref(md.t_ref[0])) + xref(md.t_ref[1]);
      break;
  }
  out.log_t = agree_sum + cov_term + rng.normal();

  if (md.example_id == 1) {
    const double e2 = rng.normal(), e3 = rng.normal(), e4 = rng.normal();
    out.log_c = 0.5 * e2 * e2 - e2 + e3 - 2.0 * e4 * e4;
  } else if (md.example_id == 4) {
    const double e2 = rng.uniform(), e3 = rng.uniform(), e4 = rng.uniform();
    out.log_c = 0.5 * std::fabs(e2) + e3 + e4;
  } else {
    const double e2 = rng.normal(), e3 = rng.normal(), e4 = rng.normal();
    out.log_c = 0.5 * e2 + e3 - e4;
  }
  return out;
}

std::vector<double> default_boundaries(int n_stages) {
  std::vector<double> b(n_stages);
  for (int m = 0; m < n_stages; ++m) b[m] = 0.5 * m;
  return b;
}

std::string subject_id(int i, int width) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "s%0*d", width, i + 1);
  return buf;
}

}  // namespace

double calibrate_c0(const ScenarioSpec& spec, std::uint64_t seed, int n_mc,
                    int max_steps) {
  if (!(spec.censor_rate > 0.0 && spec.censor_rate < 1.0))
    throw std::invalid_argument("calibrate_c0: censor rate must be in (0, 1)");
  if (n_mc < 100) throw std::invalid_argument("calibrate_c0: n_mc too small");
  const ExampleModel md = build_model(spec);
  // C < T exactly when c0 < log T - (log C - c0), so with one fixed sample
  // the censoring rate is a monotone step function of c0.
  std::vector<double> q(n_mc);
  parallel_for(n_mc, [&](int i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    const RawDraw raw = draw_subject(md, rng);
    q[i] = raw.log_t - raw.log_c;
  });
  const auto rate = [&](double c0) {
    int over = 0;
    for (double v : q) over += v > c0 ? 1 : 0;
    return static_cast<double>(over) / n_mc;
  };
  double lo = -60.0, hi = 60.0;
  if (rate(lo) < spec.censor_rate || rate(hi) > spec.censor_rate)
    throw std::runtime_error("calibrate_c0: target rate cannot be bracketed");
  for (int step = 0; step < max_steps; ++step) {
    const double mid = 0.5 * (lo + hi);
    if (rate(mid) >= spec.censor_rate)
      lo = mid;
    else
      hi = mid;
  }
  const double c0 = 0.5 * (lo + hi);
  if (std::fabs(rate(c0) - spec.censor_rate) > 2.0 / n_mc)
    throw std::runtime_error(
        "calibrate_c0: rate not matched within the step budget");
  return c0;
}

std::pair<Dataset, GroundTruth> simulate(const ScenarioSpec& spec, int n,
                                         std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("simulate: need n >= 1");
  ScenarioSpec s = spec;
  if (std::isnan(s.c0)) s.c0 = calibrate_c0(s);
  const ExampleModel md = build_model(s);

  Dataset data;
  data.p = s.p;
  data.k = s.k;
  data.stage_boundaries = default_boundaries(s.n_stages);
  data.subjects.resize(n);

  GroundTruth truth;
  truth.c0 = s.c0;
  truth.d = Mat(n, s.n_stages);
  truth.t_true.resize(n);
  truth.c_true.resize(n);

  int width = 1;
  for (int v = n; v >= 10; v /= 10) ++width;

  parallel_for(n, [&](int i) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
    const RawDraw raw = draw_subject(md, rng);
    const double t = std::exp(raw.log_t);
    const double c = std::exp(s.c0 + raw.log_c);
    Trajectory& subj = data.subjects[i];
    subj.id = subject_id(i, width);
    subj.time = std::min(t, c);
    subj.event = t <= c ? 1 : 0;
    const int m_y = data.stage_of(subj.time);
    subj.stages.resize(m_y);
    for (int m = 0; m < m_y; ++m) {
      const double* x = raw.x.data() + static_cast<std::size_t>(m) * s.p;
      subj.stages[m].x.assign(x, x + s.p);
      subj.stages[m].treatment = raw.a[m];
    }
    for (int m = 0; m < s.n_stages; ++m) truth.d(i, m) = raw.d[m];
    truth.t_true[i] = t;
    truth.c_true[i] = c;
  });
  data.validate();
  return {std::move(data), std::move(truth)};
}

std::pair<Dataset, GroundTruth> simulate(const ScenarioSpec& spec) {
  return simulate(spec, spec.n_train, spec.seed);
}

Recommender truth_recommender(const GroundTruth& truth) {
  const Mat d = truth.d;
  return [d](int subj, const Trajectory&, int stage) {
    if (subj < 0 || subj >= d.rows || stage < 1 || stage > d.cols)
      throw std::out_of_range("truth_recommender: no entry for that stage");
    return static_cast<int>(std::llround(d(subj, stage - 1)));
  };
}

Recommender random_recommender(int k, std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("random_recommender: need k >= 2");
  return [k, seed](int subj, const Trajectory&, int stage) {
    Rng rng(mix_seed(mix_seed(seed, static_cast<std::uint64_t>(subj)),
                     static_cast<std::uint64_t>(stage)));
    return 1 + rng.uniform_int(k);
  };
}

double evaluate_value(const Dataset& test, const Recommender& rule,
                      const PropensityLookup& propensity, double t_g) {
  const TimeGrid grid = build_time_grid(test, t_g);
  return km_value_hard(test, rule, propensity, grid);
}

BenchReport run_benchmark(const BenchConfig& config) {
  if (config.threads > 0) set_threads(config.threads);
  BenchReport report;
  std::map<std::string, double> c0_cache;
  for (const ScenarioSpec& scenario : config.scenarios) {
    ScenarioSpec s = scenario;
    if (std::isnan(s.c0)) {
      char key[96];
      std::snprintf(key, sizeof key, "%d/%.12g/%d/%d/%d/%d", s.example_id,
                    s.censor_rate, s.p, s.n_stages, s.k,
                    static_cast<int>(s.indexing));
      const auto hit = c0_cache.find(key);
      if (hit != c0_cache.end()) {
        s.c0 = hit->second;
      } else {
        s.c0 = calibrate_c0(s);
        c0_cache.emplace(key, s.c0);
      }
    }
    BenchRow row;
    row.spec = s;
    double total_seconds = 0.0;
    for (int rep = 0; rep < s.replications; ++rep) {
      const auto started = std::chrono::steady_clock::now();
      const std::uint64_t rep_seed =
          mix_seed(s.seed, static_cast<std::uint64_t>(rep));
      const auto train = simulate(s, s.n_train, mix_seed(rep_seed, 0));
      const auto test = simulate(s, s.n_test, mix_seed(rep_seed, 1));
      const int max_stage = train.first.stage_of(s.t_g);

      PropensitySpec prop;
      if (s.example_id == 3) {
        prop.mode = PropensitySpec::Mode::kFit;
        prop.seed = mix_seed(rep_seed, 3);
      }
      FitConfig base = config.base;
      base.t_g = s.t_g;
      base.seed = rep_seed;
      TuningGrid grid = config.grid;
      grid.seed = mix_seed(rep_seed, 2);
      const CvReport cv = cross_validate(train.first, base, grid, prop);
      base.b = cv.best_b;
      base.lambda = cv.best_lambda;

      const PropensityLookup train_prop =
          make_propensity(train.first, max_stage, prop);
      const FitResult fit = fit_policy(train.first, base, train_prop);

      PropensityLookup test_prop;
      if (s.example_id == 3) {
        PropensitySpec test_spec = prop;  // reuse the tuned lambda_star path
        test_prop = make_propensity(test.first, max_stage, test_spec);
      } else {
        test_prop = uniform_propensity(s.k);
      }
      const SimplexCode code = build_simplex(s.k);
      const double value = evaluate_value(
          test.first, policy_recommender(fit.policy, code), test_prop, s.t_g);
      row.values.push_back(value);
      total_seconds += std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - started)
                           .count();
    }
    const int r = static_cast<int>(row.values.size());
    double mean = 0.0;
    for (double v : row.values) mean += v;
    mean /= r;
    double var = 0.0;
    for (double v : row.values) var += (v - mean) * (v - mean);
    row.mean = mean;
    row.sd = r > 1 ? std::sqrt(var / (r - 1)) : 0.0;
    row.mean_seconds = total_seconds / r;
    report.rows.push_back(std::move(row));
  }
  return report;
}

std::string format_bench_table(const BenchReport& report) {
  std::string out;
  char line[160];
  std::snprintf(line, sizeof line, "%-8s %6s %6s %7s %5s %9s %9s %9s\n",
                "example", "t_g", "cens", "n", "reps", "mean", "sd", "sec/rep");
  out += line;
  for (const BenchRow& row : report.rows) {
    std::snprintf(line, sizeof line,
                  "%-8d %6.3f %6.2f %7d %5d %9.4f %9.4f %9.2f\n",
                  row.spec.example_id, row.spec.t_g, row.spec.censor_rate,
                  row.spec.n_train, static_cast<int>(row.values.size()),
                  row.mean, row.sd, row.mean_seconds);
    out += line;
  }
  return out;
}

}  // namespace dtr

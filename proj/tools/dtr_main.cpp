#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dtr/io.hpp"
#include "dtr/parallel.hpp"
#include "dtr/rng.hpp"

namespace {

std::string joined_argv(int argc, char** argv) {
  std::string s;
  for (int i = 0; i < argc; ++i) {
    if (i) s += ' ';
    s += argv[i];
  }
  return s;
}

dtr::PropensitySpec propensity_spec(const std::string& mode,
                                    std::uint64_t seed) {
  dtr::PropensitySpec spec;
  spec.seed = seed;
  if (mode == "fit")
    spec.mode = dtr::PropensitySpec::Mode::kFit;
  else if (mode != "uniform")
    throw CLI::ValidationError("--propensity", "must be uniform or fit");
  return spec;
}

void emit_manifest(const std::string& out_path, const std::string& command,
                   std::uint64_t seed, const std::string& config_text) {
  dtr::write_file(out_path, dtr::run_manifest(command, seed, config_text));
}

}  // namespace

int main(int argc, char** argv) {
  const std::string invocation = joined_argv(argc, argv);
  CLI::App app{
      "Censored multi-stage treatment-rule estimation: simulate, fit, "
      "evaluate, tune, benchmark."};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads,
                 "worker threads (default: DTR_THREADS or all cores)");

  // ---- simulate ----------------------------------------------------------
  auto* sim = app.add_subcommand("simulate", "draw a synthetic dataset");
  dtr::ScenarioSpec spec;
  int sim_n = 500;
  std::uint64_t sim_seed = 1;
  std::string sim_out;
  bool sim_truth = false;
  bool stage_digit = false;
  sim->add_option("--example", spec.example_id, "scenario 1..4")
      ->check(CLI::Range(1, 4));
  sim->add_option("--n", sim_n, "subjects to draw")->check(CLI::PositiveNumber);
  sim->add_option("--seed", sim_seed, "stream seed");
  sim->add_option("--p", spec.p, "covariates per stage");
  sim->add_option("--stages", spec.n_stages, "number of stages");
  sim->add_option("--arms", spec.k, "treatment arms");
  sim->add_option("--censor-rate", spec.censor_rate,
                  "target fraction censored");
  sim->add_option("--c0", spec.c0,
                  "censoring offset (skips calibration when given)");
  sim->add_flag("--stage-digit-indexing", stage_digit,
                "read generator covariate indices as stage digit + coordinate");
  sim->add_flag("--truth", sim_truth, "also write truth.csv");
  sim->add_option("--out", sim_out, "output directory")->required();

  // ---- fit ---------------------------------------------------------------
  auto* fit = app.add_subcommand("fit", "estimate a treatment policy");
  std::string fit_data, fit_out, fit_result_out, fit_prop = "uniform";
  dtr::FitConfig fit_config;
  fit->add_option("--data", fit_data, "dataset directory")->required();
  fit->add_option("--t-g", fit_config.t_g, "evaluation horizon")->required();
  fit->add_option("--lambda", fit_config.lambda, "penalty weight");
  fit->add_option("--b", fit_config.b, "surrogate steepness");
  fit->add_option("--cbar", fit_config.cbar, "shift calibration constant");
  std::string fit_u0_mode = "population";
  fit->add_option("--u0-mode", fit_u0_mode,
                  "surrogate shift: population (u0 = 0) | empirical "
                  "(u0 = -|C_Q|/lambda)");
  fit->add_option("--max-iter", fit_config.max_iter, "iteration cap");
  fit->add_option("--epsilon", fit_config.epsilon, "convergence threshold");
  fit->add_option("--starts", fit_config.n_starts, "random restarts");
  fit->add_option("--seed", fit_config.seed, "restart seed");
  fit->add_option("--propensity", fit_prop, "uniform|fit");
  fit->add_option("--out", fit_out, "policy JSON path")->required();
  fit->add_option("--result-out", fit_result_out,
                  "full fit report JSON path");

  // ---- evaluate ----------------------------------------------------------
  auto* ev = app.add_subcommand("evaluate",
                                "value of a rule on a dataset");
  std::string ev_data, ev_policy, ev_prop = "uniform";
  double ev_tg = 0.0;
  int ev_constant = 0;
  std::uint64_t ev_seed = 1;
  bool ev_random = false;
  ev->add_option("--data", ev_data, "dataset directory")->required();
  ev->add_option("--t-g", ev_tg, "evaluation horizon")->required();
  ev->add_option("--policy", ev_policy, "policy JSON from `fit`");
  ev->add_option("--constant", ev_constant,
                 "score the rule that always assigns this arm");
  ev->add_flag("--random", ev_random, "score a uniformly random rule");
  ev->add_option("--seed", ev_seed, "seed for --random");
  ev->add_option("--propensity", ev_prop, "uniform|fit");

  // ---- cv ----------------------------------------------------------------
  auto* cv = app.add_subcommand("cv", "cross-validate (b, lambda)");
  std::string cv_data, cv_out, cv_prop = "uniform", cv_metric = "hard";
  dtr::FitConfig cv_base;
  dtr::TuningGrid cv_grid;
  cv->add_option("--data", cv_data, "dataset directory")->required();
  cv->add_option("--t-g", cv_base.t_g, "evaluation horizon")->required();
  cv->add_option("--b", cv_grid.b_values, "steepness grid")
      ->delimiter(',')
      ->required();
  cv->add_option("--lambda", cv_grid.lambda_values, "penalty grid")
      ->delimiter(',')
      ->required();
  cv->add_option("--folds", cv_grid.d, "cross-validation folds");
  cv->add_option("--seed", cv_base.seed, "fit seed (fold splits derive)");
  cv->add_option("--metric", cv_metric, "hard|smooth validation score");
  cv->add_option("--propensity", cv_prop, "uniform|fit");
  cv->add_option("--max-iter", cv_base.max_iter, "iteration cap");
  cv->add_option("--starts", cv_base.n_starts, "random restarts");
  cv->add_option("--out", cv_out, "fold-level CSV report path");

  // ---- bench -------------------------------------------------------------
  auto* bench = app.add_subcommand("bench", "replicate the four scenarios");
  std::string bench_config_path, bench_out;
  bench->add_option("--config", bench_config_path, "benchmark JSON config")
      ->required();
  bench->add_option("--out", bench_out, "per-replication CSV path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (const char* env = std::getenv("DTR_THREADS"); env && threads == 0)
      threads = std::atoi(env);
    if (threads > 0) dtr::set_threads(threads);

    if (*sim) {
      spec.indexing = stage_digit ? dtr::CovariateIndexing::kStageDigit
                                  : dtr::CovariateIndexing::kFlattened;
      const auto [data, truth] = dtr::simulate(spec, sim_n, sim_seed);
      dtr::save_dataset_dir(data, sim_out);
      if (sim_truth) dtr::save_ground_truth(truth, sim_out + "/truth.csv");
      emit_manifest(sim_out + "/manifest.json", "simulate", sim_seed,
                    invocation);
      std::printf("n=%d censored=%s c0=%s\n", data.n(),
                  dtr::fmt_g17([&] {
                        int c = 0;
                        for (const auto& s : data.subjects)
                          c += s.event == 0 ? 1 : 0;
                        return static_cast<double>(c) / data.n();
                      }())
                      .c_str(),
                  dtr::fmt_g17(truth.c0).c_str());
    } else if (*fit) {
      if (fit_u0_mode == "empirical") {
        fit_config.u0_mode = dtr::U0Mode::kEmpirical;
      } else if (fit_u0_mode != "population") {
        throw CLI::ValidationError("--u0-mode",
                                   "must be population or empirical");
      }
      const dtr::Dataset data = dtr::load_dataset_dir(fit_data);
      dtr::PropensitySpec prop = propensity_spec(fit_prop, fit_config.seed);
      const dtr::PropensityLookup lookup =
          dtr::make_propensity(data, data.stage_of(fit_config.t_g), prop);
      const dtr::FitResult result = dtr::fit_policy(data, fit_config, lookup);
      dtr::write_file(fit_out, dtr::policy_to_json(result.policy));
      if (!fit_result_out.empty())
        dtr::write_file(fit_result_out, dtr::fit_result_to_json(result));
      emit_manifest(fit_out + ".manifest.json", "fit", fit_config.seed,
                    invocation);
      std::printf("objective=%s converged=%d iterations=%d start=%d\n",
                  dtr::fmt_g17(result.objective).c_str(),
                  result.converged ? 1 : 0, result.iterations,
                  result.best_start);
    } else if (*ev) {
      const dtr::Dataset data = dtr::load_dataset_dir(ev_data);
      dtr::PropensitySpec prop = propensity_spec(ev_prop, ev_seed);
      const dtr::PropensityLookup lookup =
          dtr::make_propensity(data, data.stage_of(ev_tg), prop);
      dtr::Recommender rule;
      const int picked = (!ev_policy.empty() ? 1 : 0) +
                         (ev_constant > 0 ? 1 : 0) + (ev_random ? 1 : 0);
      if (picked != 1)
        throw CLI::ValidationError(
            "evaluate", "pick exactly one of --policy, --constant, --random");
      if (!ev_policy.empty()) {
        const dtr::PolicySet policy =
            dtr::policy_from_json(dtr::read_file(ev_policy));
        rule = dtr::policy_recommender(policy, dtr::build_simplex(policy.k));
      } else if (ev_constant > 0) {
        rule = dtr::constant_recommender(ev_constant);
      } else {
        rule = dtr::random_recommender(data.k, ev_seed);
      }
      const double value = dtr::evaluate_value(data, rule, lookup, ev_tg);
      std::printf("value=%s\n", dtr::fmt_g17(value).c_str());
    } else if (*cv) {
      const dtr::Dataset data = dtr::load_dataset_dir(cv_data);
      cv_grid.seed = dtr::mix_seed(cv_base.seed, 2);
      dtr::PropensitySpec prop = propensity_spec(cv_prop, cv_base.seed);
      const dtr::ValidationMetric metric =
          cv_metric == "smooth" ? dtr::ValidationMetric::kSmooth
                                : dtr::ValidationMetric::kHard;
      if (cv_metric != "hard" && cv_metric != "smooth")
        throw CLI::ValidationError("--metric", "must be hard or smooth");
      const dtr::CvReport report =
          dtr::cross_validate(data, cv_base, cv_grid, prop, metric);
      if (!cv_out.empty()) {
        dtr::write_file(cv_out, dtr::cv_report_to_csv(report));
        emit_manifest(cv_out + ".manifest.json", "cv", cv_base.seed,
                      invocation);
      }
      std::printf("best_b=%s best_lambda=%s\n",
                  dtr::fmt_g17(report.best_b).c_str(),
                  dtr::fmt_g17(report.best_lambda).c_str());
    } else if (*bench) {
      dtr::BenchConfig config =
          dtr::bench_config_from_json(dtr::read_file(bench_config_path));
      if (threads > 0) config.threads = threads;
      const dtr::BenchReport report = dtr::run_benchmark(config);
      if (!bench_out.empty()) {
        dtr::write_file(bench_out, dtr::bench_report_to_csv(report));
        emit_manifest(bench_out + ".manifest.json", "bench",
                      config.base.seed, invocation);
      }
      std::fputs(dtr::format_bench_table(report).c_str(), stdout);
    }
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "dtr: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "dtr: %s\n", e.what());
    return 1;
  }
  return 0;
}

// Times the OpenMP kernels against the serial reference transcriptions on a
// synthetic dataset and reports the largest numeric deviation of each pair.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <vector>

#include "dtr/optimizer.hpp"
#include "dtr/parallel.hpp"
#include "dtr/reference.hpp"
#include "dtr/rng.hpp"
#include "dtr/simbench.hpp"

namespace {

double time_best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const double sec =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    if (sec < best) best = sec;
  }
  return best;
}

void report(const char* kernel, double serial, double parallel, double dev) {
  std::printf("%-18s %10.4f ms %10.4f ms %8.2fx   %.3e\n", kernel,
              serial * 1e3, parallel * 1e3, serial / parallel, dev);
}

}  // namespace

int main(int argc, char** argv) {
  const int n = argc > 1 ? std::atoi(argv[1]) : 2000;
  const int reps = argc > 2 ? std::atoi(argv[2]) : 5;

  dtr::ScenarioSpec spec;
  spec.example_id = 2;
  spec.c0 = 1.0;  // fixed offset; the exact censoring rate is irrelevant here
  const auto [data, truth] = dtr::simulate(spec, n, 42);
  const dtr::TimeGrid grid = dtr::build_time_grid(data, spec.t_g);
  const dtr::SimplexCode code = dtr::build_simplex(data.k);
  const dtr::PropensityLookup prop = dtr::uniform_propensity(data.k);
  const dtr::SurrogateParams sp{5.0, -1.0};

  const dtr::PolicyLayout layout(data.p, data.k, grid.stage.back());
  dtr::Rng rng(7);
  std::vector<double> theta(layout.dim);
  for (double& v : theta) v = rng.uniform(-0.1, 0.1);
  const dtr::PolicySet policy = layout.unflatten(theta, data.stage_boundaries);
  const dtr::Recommender rule = dtr::policy_recommender(policy, code);
  const double lambda = 0.1;

  std::printf("n=%d  grid=%d factors  dim=%d  threads=%d  (best of %d)\n\n",
              data.n(), grid.g(), layout.dim, dtr::max_threads(), reps);
  std::printf("%-18s %13s %13s %9s   %s\n", "kernel", "serial", "parallel",
              "speedup", "max |diff|");

  {
    double serial_v = 0.0, parallel_v = 0.0;
    const double ts = time_best_of(reps, [&] {
      serial_v = dtr::ref::km_value_hard(data, rule, prop, grid);
    });
    const double tp = time_best_of(reps, [&] {
      parallel_v = dtr::km_value_hard(data, rule, prop, grid);
    });
    report("km_value_hard", ts, tp, std::fabs(serial_v - parallel_v));
  }
  {
    dtr::SmoothValue sv_s, sv_p;
    const double ts = time_best_of(reps, [&] {
      sv_s = dtr::ref::km_value_smooth(data, policy, code, sp, prop, grid);
    });
    const double tp = time_best_of(reps, [&] {
      sv_p = dtr::km_value_smooth(data, policy, code, sp, prop, grid);
    });
    double dev = std::fabs(sv_s.value - sv_p.value);
    for (int s = 0; s < grid.g(); ++s)
      dev = std::max(dev, std::fabs(sv_s.hazard[s] - sv_p.hazard[s]));
    report("km_value_smooth", ts, tp, dev);
  }
  {
    const dtr::SmoothObjective obj(data, grid, code, sp, prop, lambda);
    double serial_v = 0.0, parallel_v = 0.0;
    std::vector<double> grad(layout.dim);
    const double ts = time_best_of(reps, [&] {
      serial_v =
          dtr::ref::objective(data, policy, code, sp, prop, grid, lambda);
    });
    const double tp = time_best_of(
        reps, [&] { parallel_v = obj.value_and_grad(theta, grad); });
    report("objective+grad", ts, tp, std::fabs(serial_v - parallel_v));
  }
  return 0;
}

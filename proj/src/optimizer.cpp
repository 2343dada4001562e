#include "dtr/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <mutex>
#include <stdexcept>

#include "dtr/parallel.hpp"
#include "dtr/rng.hpp"

namespace dtr {

double compute_cq(const Dataset& data, const TimeGrid& grid,
                  const PropensityLookup& propensity, double cbar) {
  if (!(cbar > 0.0))
    throw std::invalid_argument("compute_cq: cbar must be positive");
  // Pure inverse-propensity weights: an echo rule agrees with every subject.
  const Recommender echo = [](int, const Trajectory& traj, int stage) {
    return traj.stages[stage - 1].treatment;
  };
  const WeightTable table = hard_weight_table(data, echo, propensity, grid);
  const FactorSums sums = factor_sums(data, grid, table);
  double cq = 0.0;
  for (int s = 0; s < grid.g(); ++s) {
    if (sums.den[s] <= 0.0) continue;
    const double margin = 1.0 - sums.num[s] / sums.den[s] / cbar;
    if (margin <= 0.0)
      throw std::runtime_error(
          "compute_cq: weighted hazard at grid point " + std::to_string(s + 1) +
          " (t = " + std::to_string(grid.points[s]) + ") reaches cbar");
    cq += std::log(margin);
  }
  return cq;
}

PolicyLayout::PolicyLayout(int p_, int k_, int m_g_) : p(p_), k(k_), m_g(m_g_) {
  offset.resize(m_g);
  int at = 0;
  for (int m = 1; m <= m_g; ++m) {
    offset[m - 1] = at;
    at += (k - 1) * (history_dim(m, p) + 1);
  }
  dim = at;
}

std::vector<double> PolicyLayout::flatten(const PolicySet& policy) const {
  std::vector<double> theta(dim, 0.0);
  for (int m = 1; m <= m_g; ++m) {
    const PolicyStage& ps = policy.stages[m - 1];
    const int d = history_dim(m, p);
    double* block = theta.data() + offset[m - 1];
    for (int r = 0; r < k - 1; ++r) {
      for (int c = 0; c < d; ++c) block[r * d + c] = ps.coef(r, c);
      block[(k - 1) * d + r] = ps.intercept[r];
    }
  }
  return theta;
}

PolicySet PolicyLayout::unflatten(
    const std::vector<double>& theta,
    const std::vector<double>& stage_boundaries) const {
  PolicySet policy;
  policy.p = p;
  policy.k = k;
  policy.m_g = m_g;
  policy.stage_boundaries = stage_boundaries;
  policy.stages.resize(m_g);
  for (int m = 1; m <= m_g; ++m) {
    const int d = history_dim(m, p);
    const double* block = theta.data() + offset[m - 1];
    PolicyStage& ps = policy.stages[m - 1];
    ps.coef = Mat(k - 1, d);
    ps.intercept.resize(k - 1);
    for (int r = 0; r < k - 1; ++r) {
      for (int c = 0; c < d; ++c) ps.coef(r, c) = block[r * d + c];
      ps.intercept[r] = block[(k - 1) * d + r];
    }
  }
  return policy;
}

// ---- Smoothed objective ----

struct SmoothObjective::Impl {
  const Dataset* data = nullptr;
  TimeGrid grid;
  SimplexCode code;
  SurrogateParams sp;
  double lambda = 0.0;
  PolicyLayout layout;

  int n = 0, g = 0, m_g = 0;
  std::vector<int> col_stage;      // per factor q = 0..g-1
  std::vector<int> cap;            // usable stages per subject
  std::vector<int> treat;          // n x m_g, 0-based arm, -1 when absent
  std::vector<double> inv_prop;    // n x m_g, 1/P_i(mu), 0 when absent
  std::vector<double> hist;        // concatenated H_ij blocks
  std::vector<std::size_t> hist_off;  // n x m_g offsets into hist
  std::vector<int> last_factor;    // largest q with t_{q+1} <= Y_i, else -1
  std::vector<int> event_factor;   // q with Y_i == t_{q+1} and event, else -1

  const double* history(int i, int j) const {  // H_ij, stage j in 1..cap[i]
    return hist.data() + hist_off[static_cast<std::size_t>(i) * m_g + (j - 1)];
  }

  double eval(const std::vector<double>& theta, std::vector<double>* grad) const;
};

SmoothObjective::SmoothObjective(const Dataset& data, const TimeGrid& grid,
                                 const SimplexCode& code,
                                 const SurrogateParams& sp,
                                 const PropensityLookup& propensity,
                                 double lambda)
    : impl_(new Impl) {
  Impl& im = *impl_;
  im.data = &data;
  im.grid = grid;
  im.code = code;
  im.sp = sp;
  im.lambda = lambda;
  im.n = data.n();
  im.g = grid.g();
  im.col_stage.resize(im.g);
  for (int q = 0; q < im.g; ++q)
    im.col_stage[q] = q == 0 ? 1 : grid.stage[q - 1];
  im.m_g = im.g > 0 ? im.col_stage[im.g - 1] : 1;
  im.layout = PolicyLayout(data.p, data.k, im.m_g);

  im.cap.resize(im.n);
  im.treat.assign(static_cast<std::size_t>(im.n) * im.m_g, -1);
  im.inv_prop.assign(static_cast<std::size_t>(im.n) * im.m_g, 0.0);
  im.hist_off.assign(static_cast<std::size_t>(im.n) * im.m_g, 0);
  im.last_factor.resize(im.n);
  im.event_factor.resize(im.n);

  std::size_t total = 0;
  for (int i = 0; i < im.n; ++i) {
    const Trajectory& subj = data.subjects[i];
    im.cap[i] = std::min<int>(static_cast<int>(subj.stages.size()), im.m_g);
    for (int j = 1; j <= im.cap[i]; ++j) {
      im.hist_off[static_cast<std::size_t>(i) * im.m_g + (j - 1)] = total;
      total += history_dim(j, data.p);
    }
  }
  im.hist.resize(total);
  parallel_for(im.n, [&](int i) {
    const Trajectory& subj = data.subjects[i];
    for (int j = 1; j <= im.cap[i]; ++j) {
      const std::vector<double> h = history_vector(subj, j, data.p);
      std::copy(h.begin(), h.end(),
                im.hist.begin() +
                    im.hist_off[static_cast<std::size_t>(i) * im.m_g + (j - 1)]);
      im.treat[static_cast<std::size_t>(i) * im.m_g + (j - 1)] =
          subj.stages[j - 1].treatment - 1;
      im.inv_prop[static_cast<std::size_t>(i) * im.m_g + (j - 1)] =
          1.0 / propensity(i, subj, j);
    }
    // Risk-set horizon and exact-death factor.
    int last = -1;
    int ev = -1;
    for (int q = 0; q < im.g && grid.points[q] <= subj.time; ++q) {
      last = q;
      if (subj.event == 1 && subj.time == grid.points[q]) ev = q;
    }
    im.last_factor[i] = last;
    im.event_factor[i] = ev;
  });
}

SmoothObjective::~SmoothObjective() = default;

const PolicyLayout& SmoothObjective::layout() const { return impl_->layout; }

double SmoothObjective::Impl::eval(const std::vector<double>& theta,
                                   std::vector<double>* grad) const {
  if (static_cast<int>(theta.size()) != layout.dim)
    throw std::invalid_argument("objective: theta has the wrong length");
  const int km1 = code.k - 1;

  // Phase A: per-subject scores, surrogate factors, stage-cumulative weights.
  std::vector<double> ratio(grad ? static_cast<std::size_t>(n) * m_g : 0, 0.0);
  std::vector<double> wstage(static_cast<std::size_t>(n) * m_g, 0.0);
  parallel_for(n, [&](int i) {
    double cum = 1.0;
    for (int j = 1; j <= cap[i]; ++j) {
      const std::size_t at = static_cast<std::size_t>(i) * m_g + (j - 1);
      const int d = history_dim(j, layout.p);
      const double* h = history(i, j);
      const double* block = theta.data() + layout.offset[j - 1];
      const double* vrow = code.v.row(treat[at]);
      double u = 0.0;
      for (int r = 0; r < km1; ++r)
        u += vrow[r] * (block[km1 * d + r] + dot(block + r * d, h, d));
      const double l = logistic(u, sp);
      cum *= l;
      wstage[at] = cum * inv_prop[at];
      if (grad) ratio[at] = sp.b * (1.0 - l);  // l'(u) / l(u)
    }
  });

  // Phase B: weighted death/risk sums per factor (deterministic blocks).
  const int nb = num_blocks(n);
  std::vector<double> bnum(static_cast<std::size_t>(nb) * g, 0.0);
  std::vector<double> bden(static_cast<std::size_t>(nb) * g, 0.0);
  for_blocks(n, [&](int bi, int begin, int end) {
    double* bn = bnum.data() + static_cast<std::size_t>(bi) * g;
    double* bd = bden.data() + static_cast<std::size_t>(bi) * g;
    for (int i = begin; i < end; ++i) {
      const double* w = wstage.data() + static_cast<std::size_t>(i) * m_g;
      for (int q = 0; q <= last_factor[i]; ++q) {
        const double wi = w[col_stage[q] - 1];
        bd[q] += wi;
        if (event_factor[i] == q) bn[q] += wi;
      }
    }
  });
  std::vector<double> num(g, 0.0), den(g, 0.0);
  for (int bi = 0; bi < nb; ++bi)
    for (int q = 0; q < g; ++q) {
      num[q] += bnum[static_cast<std::size_t>(bi) * g + q];
      den[q] += bden[static_cast<std::size_t>(bi) * g + q];
    }

  // Phase C: factors, objective, and per-factor gradient coefficients.
  double value = 0.0;
  std::vector<double> c_num(grad ? g : 0, 0.0);  // 1 / (F_q D_q)
  std::vector<double> c_den(grad ? g : 0, 0.0);  // N_q / (F_q D_q^2)
  for (int q = 0; q < g; ++q) {
    if (den[q] <= 0.0) continue;  // empty risk set: factor skipped
    const double raw = 1.0 - num[q] / den[q];
    const double factor = std::clamp(raw, kFactorFloor, 1.0);
    value += std::log(factor);
    if (grad && raw > kFactorFloor) {
      c_num[q] = 1.0 / (factor * den[q]);
      c_den[q] = num[q] / (factor * den[q] * den[q]);
    }
  }

  const double norm = nrm2(theta);
  value -= lambda * norm;
  if (!grad) return value;

  // Phase D: per-subject stage multipliers g_ij via suffix sums over factors.
  std::vector<double> gstage(static_cast<std::size_t>(n) * m_g, 0.0);
  parallel_for(n, [&](int i) {
    double* gs = gstage.data() + static_cast<std::size_t>(i) * m_g;
    const double* w = wstage.data() + static_cast<std::size_t>(i) * m_g;
    for (int q = 0; q <= last_factor[i]; ++q) {
      const double coef =
          c_den[q] - (event_factor[i] == q ? c_num[q] : 0.0);
      if (coef != 0.0) gs[col_stage[q] - 1] += coef * w[col_stage[q] - 1];
    }
    // Suffix-sum over stages, then scale by the per-stage score ratio.
    double suffix = 0.0;
    for (int j = m_g; j >= 1; --j) {
      suffix += gs[j - 1];
      gs[j - 1] = j <= cap[i]
                      ? suffix * ratio[static_cast<std::size_t>(i) * m_g + (j - 1)]
                      : 0.0;
    }
  });

  // Phase E: gradient accumulation (deterministic blocks).
  grad->assign(layout.dim, 0.0);
  std::vector<double> bgrad(static_cast<std::size_t>(nb) * layout.dim, 0.0);
  for_blocks(n, [&](int bi, int begin, int end) {
    double* bg = bgrad.data() + static_cast<std::size_t>(bi) * layout.dim;
    for (int i = begin; i < end; ++i) {
      for (int j = 1; j <= cap[i]; ++j) {
        const std::size_t at = static_cast<std::size_t>(i) * m_g + (j - 1);
        const double gij = gstage[at];
        if (gij == 0.0) continue;
        const int d = history_dim(j, layout.p);
        const double* h = history(i, j);
        const double* vrow = code.v.row(treat[at]);
        double* block = bg + layout.offset[j - 1];
        for (int r = 0; r < km1; ++r) {
          const double a = gij * vrow[r];
          axpy(a, h, block + r * d, d);
          block[km1 * d + r] += a;
        }
      }
    }
  });
  for (int bi = 0; bi < nb; ++bi)
    axpy(1.0, bgrad.data() + static_cast<std::size_t>(bi) * layout.dim,
         grad->data(), layout.dim);

  if (norm > 0.0)
    axpy(-lambda / norm, theta.data(), grad->data(), layout.dim);
  return value;
}

double SmoothObjective::value(const std::vector<double>& theta) const {
  return impl_->eval(theta, nullptr);
}

double SmoothObjective::value_and_grad(const std::vector<double>& theta,
                                       std::vector<double>& grad) const {
  return impl_->eval(theta, &grad);
}

// ---- Barzilai-Borwein ascent ----

BbResult bb_ascent(
    const std::function<double(const std::vector<double>&,
                               std::vector<double>&)>& value_and_grad,
    std::vector<double> init, const BbOptions& opts) {
  const int dim = static_cast<int>(init.size());
  std::vector<double> theta = std::move(init);
  std::vector<double> grad(dim), prev_theta(dim), prev_grad(dim);

  double q = value_and_grad(theta, grad);
  if (!std::isfinite(q))
    throw std::runtime_error("bb_ascent: objective not finite at the start");

  BbResult out;
  out.theta = theta;
  out.objective = q;
  out.trace.push_back(q);

  double eta = opts.eta0;
  for (int k = 0; k < opts.max_iter; ++k) {
    if (k > 0) {
      // Secant step for ascent: eta = -(dtheta . dgrad) / |dgrad|^2, which is
      // positive under locally concave curvature.  Non-finite or non-positive
      // ratios fall back to eta0.
      double sy = 0.0, yy = 0.0;
      for (int j = 0; j < dim; ++j) {
        const double dt = theta[j] - prev_theta[j];
        const double dg = grad[j] - prev_grad[j];
        sy += dt * dg;
        yy += dg * dg;
      }
      const double bb = -sy / yy;
      eta = (std::isfinite(bb) && bb > 0.0)
                ? std::clamp(bb, opts.step_min, opts.step_max)
                : opts.eta0;
    }
    prev_theta = theta;
    prev_grad = grad;
    for (int j = 0; j < dim; ++j) theta[j] += eta * grad[j];

    q = value_and_grad(theta, grad);
    out.trace.push_back(q);
    out.iterations = k + 1;
    if (std::isfinite(q) && q > out.objective) {
      out.objective = q;
      out.theta = theta;
    }

    double dt_sq = 0.0, dg_sq = 0.0;
    for (int j = 0; j < dim; ++j) {
      const double dt = theta[j] - prev_theta[j];
      const double dg = grad[j] - prev_grad[j];
      dt_sq += dt * dt;
      dg_sq += dg * dg;
    }
    // The first move is scaled by the arbitrary fallback eta0, so a small
    // displacement there says nothing about stationarity; only test once
    // steps are secant-scaled.
    if (k > 0 && std::max(dt_sq, dg_sq) < opts.epsilon) {
      out.converged = true;
      break;
    }
    if (!std::isfinite(q)) break;  // safeguard; best iterate already kept
  }
  return out;
}

// ---- Multi-start fit ----

FitResult fit_policy(const Dataset& data, const FitConfig& config,
                     const PropensityLookup& propensity,
                     const double* precomputed_cq) {
  if (!(config.lambda > 0.0))
    throw std::invalid_argument("fit_policy: lambda must be positive");
  if (!(config.b > 0.0))
    throw std::invalid_argument("fit_policy: b must be positive");
  if (config.n_starts < 1)
    throw std::invalid_argument("fit_policy: n_starts must be >= 1");

  const TimeGrid grid = build_time_grid(data, config.t_g);
  const double cq = precomputed_cq
                        ? *precomputed_cq
                        : compute_cq(data, grid, propensity, config.cbar);
  SurrogateParams sp;
  sp.b = config.b;
  sp.u0 = config.u0_mode == U0Mode::kEmpirical ? -std::abs(cq) / config.lambda
                                               : 0.0;

  const SimplexCode code = build_simplex(data.k);
  const SmoothObjective objective(data, grid, code, sp, propensity,
                                  config.lambda);
  const PolicyLayout& layout = objective.layout();

  BbOptions opts;
  opts.max_iter = config.max_iter;
  opts.epsilon = config.epsilon;
  opts.eta0 = config.eta0;
  opts.step_min = config.step_min;
  opts.step_max = config.step_max;

  const auto eval = [&objective](const std::vector<double>& theta,
                                 std::vector<double>& grad) {
    return objective.value_and_grad(theta, grad);
  };

  std::vector<BbResult> runs(config.n_starts);
  std::exception_ptr failure;
  std::once_flag failure_once;
  parallel_for(config.n_starts, [&](int r) {
    try {
      Rng rng(mix_seed(config.seed, static_cast<std::uint64_t>(r)));
      std::vector<double> init(layout.dim);
      for (double& v : init) v = rng.uniform(-0.1, 0.1);
      runs[r] = bb_ascent(eval, std::move(init), opts);
    } catch (...) {
      // Exceptions must not unwind out of the parallel region; surface the
      // first one after it ends.
      std::call_once(failure_once,
                     [&] { failure = std::current_exception(); });
    }
  });
  if (failure) std::rethrow_exception(failure);

  int best = 0;
  for (int r = 1; r < config.n_starts; ++r)
    if (runs[r].objective > runs[best].objective) best = r;

  FitResult result;
  result.policy = layout.unflatten(runs[best].theta, data.stage_boundaries);
  result.objective = runs[best].objective;
  result.objective_trace = std::move(runs[best].trace);
  result.converged = runs[best].converged;
  result.iterations = runs[best].iterations;
  result.best_start = best;
  result.cq = cq;
  result.u0 = sp.u0;
  return result;
}

}  // namespace dtr

#include "hpbm/calibration.hpp"

#include "hpbm/error.hpp"
#include "hpbm/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

namespace hpbm::calib {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

struct Point {
  std::vector<double> x;
  double f = kInf;
};

bool better(const Point& a, const Point& b) { return a.f < b.f; }

// Mirror a coordinate back into [lo, hi]; a second violation clamps.
double reflect_into(double v, double lo, double hi) {
  if (v < lo) v = lo + (lo - v);
  if (v > hi) v = hi - (v - hi);
  return std::clamp(v, lo, hi);
}

}  // namespace

SceConfig SceConfig::resolved(std::size_t dim) const {
  if (dim == 0) throw InvalidInput("SCE needs at least one parameter");
  SceConfig c = *this;
  const int d = static_cast<int>(dim);
  if (c.points_per_complex <= 0) c.points_per_complex = 2 * d + 1;
  if (c.simplex_size <= 0) c.simplex_size = d + 1;
  if (c.cce_steps <= 0) c.cce_steps = 2 * d + 1;
  if (c.n_complexes < 2) throw InvalidInput("SCE needs at least 2 complexes");
  if (c.simplex_size < 2 || c.simplex_size > c.points_per_complex) {
    throw InvalidInput("simplex size must lie in [2, points_per_complex]");
  }
  if (c.n_complexes * c.points_per_complex < d + 2) throw InvalidInput("SCE population must be at least dim + 2");
  if (c.max_evals < static_cast<std::size_t>(c.n_complexes * c.points_per_complex)) {
    throw InvalidInput("max_evals is smaller than the initial population");
  }
  if (c.convergence_window < 1 || !(c.convergence_threshold >= 0.0)) {
    throw InvalidInput("invalid SCE convergence settings");
  }
  return c;
}

void BoundedProblem::validate() const {
  if (!objective) throw InvalidInput("bounded problem has no objective");
  if (lower.empty() || lower.size() != upper.size()) throw InvalidInput("bounds must be nonempty and paired");
  for (std::size_t i = 0; i < lower.size(); ++i) {
    if (!std::isfinite(lower[i]) || !std::isfinite(upper[i]) || !(lower[i] < upper[i])) {
      throw InvalidInput("bound " + std::to_string(i) + " must be finite with lower < upper");
    }
  }
  if (!start.empty()) {
    if (start.size() != lower.size()) throw InvalidInput("start point has the wrong dimension");
    for (std::size_t i = 0; i < start.size(); ++i) {
      if (!(start[i] >= lower[i] && start[i] <= upper[i])) throw InvalidInput("start point outside bounds");
    }
  }
}

SceResult sce_minimize(const BoundedProblem& problem, const SceConfig& config) {
  problem.validate();
  const std::size_t dim = problem.dim();
  const SceConfig c = config.resolved(dim);
  const std::size_t ngs = static_cast<std::size_t>(c.n_complexes);
  const std::size_t npg = static_cast<std::size_t>(c.points_per_complex);
  const std::size_t nps = static_cast<std::size_t>(c.simplex_size);
  const std::size_t population = ngs * npg;

  std::mt19937_64 rng(c.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SceResult result;
  auto evaluate = [&](const std::vector<double>& x) {
    ++result.eval_count;
    const double f = problem.objective(x);
    return std::isfinite(f) ? f : kInf;
  };
  auto budget_left = [&] { return result.eval_count < c.max_evals; };

  std::vector<Point> pop(population);
  std::size_t non_finite = 0;
  for (std::size_t i = 0; i < population; ++i) {
    pop[i].x.resize(dim);
    for (std::size_t j = 0; j < dim; ++j) {
      pop[i].x[j] = problem.lower[j] + unit(rng) * (problem.upper[j] - problem.lower[j]);
    }
    if (i == 0 && !problem.start.empty()) pop[i].x = problem.start;
    pop[i].f = evaluate(pop[i].x);
    if (!std::isfinite(pop[i].f)) ++non_finite;
  }
  if (2 * non_finite > population) {
    throw InvalidInput("objective is non-finite at " + std::to_string(non_finite) + " of " +
                       std::to_string(population) + " initial points");
  }
  std::stable_sort(pop.begin(), pop.end(), better);
  result.trace.push_back({0, pop.front().f, result.eval_count});

  // Triangular selection: rank r (0-based) is drawn with probability
  // 2 (npg - r) / (npg (npg + 1)).
  auto draw_rank = [&]() {
    const double n = static_cast<double>(npg);
    const double r = std::floor(n + 0.5 - std::sqrt((n + 0.5) * (n + 0.5) - n * (n + 1.0) * unit(rng)));
    return std::min(static_cast<std::size_t>(std::max(r, 0.0)), npg - 1);
  };

  std::vector<Point> complex(npg);
  std::vector<std::size_t> simplex;
  int shuffle = 0;
  bool out_of_budget = false;
  while (!out_of_budget) {
    for (std::size_t k = 0; k < ngs && !out_of_budget; ++k) {
      for (std::size_t j = 0; j < npg; ++j) complex[j] = pop[k + ngs * j];

      for (int step = 0; step < c.cce_steps; ++step) {
        if (!budget_left()) {
          out_of_budget = true;
          break;
        }
        simplex.clear();
        simplex.push_back(0);
        while (simplex.size() < nps) {
          const std::size_t r = draw_rank();
          if (std::find(simplex.begin(), simplex.end(), r) == simplex.end()) simplex.push_back(r);
        }
        std::sort(simplex.begin(), simplex.end());
        const std::size_t worst = simplex.back();

        std::vector<double> centroid(dim, 0.0);
        for (std::size_t s = 0; s + 1 < nps; ++s) {
          for (std::size_t j = 0; j < dim; ++j) centroid[j] += complex[simplex[s]].x[j];
        }
        for (double& v : centroid) v /= static_cast<double>(nps - 1);

        Point trial;
        trial.x.resize(dim);
        for (std::size_t j = 0; j < dim; ++j) {
          trial.x[j] = reflect_into(2.0 * centroid[j] - complex[worst].x[j], problem.lower[j], problem.upper[j]);
        }
        trial.f = evaluate(trial.x);
        if (!(trial.f < complex[worst].f) && budget_left()) {
          for (std::size_t j = 0; j < dim; ++j) trial.x[j] = 0.5 * (centroid[j] + complex[worst].x[j]);
          trial.f = evaluate(trial.x);
          if (!(trial.f < complex[worst].f) && budget_left()) {
            // Random point in the smallest box holding the complex.
            for (std::size_t j = 0; j < dim; ++j) {
              double lo = complex[0].x[j];
              double hi = lo;
              for (const Point& p : complex) {
                lo = std::min(lo, p.x[j]);
                hi = std::max(hi, p.x[j]);
              }
              trial.x[j] = lo + unit(rng) * (hi - lo);
            }
            trial.f = evaluate(trial.x);
          }
        }
        complex[worst] = std::move(trial);
        std::stable_sort(complex.begin(), complex.end(), better);
      }
      for (std::size_t j = 0; j < npg; ++j) pop[k + ngs * j] = complex[j];
    }

    std::stable_sort(pop.begin(), pop.end(), better);
    ++shuffle;
    result.trace.push_back({shuffle, pop.front().f, result.eval_count});

    if (shuffle >= c.convergence_window) {
      const double old_best = result.trace[result.trace.size() - 1 - c.convergence_window].best_value;
      const double new_best = pop.front().f;
      const double denom = std::max(std::abs(old_best), std::numeric_limits<double>::min());
      if ((old_best - new_best) / denom < c.convergence_threshold) {
        result.converged = true;
        break;
      }
    }
    if (!budget_left()) break;
  }

  result.best_params = pop.front().x;
  result.best_value = pop.front().f;
  return result;
}

namespace {

double* param_slot(pbm::PbmParams& p, const std::string& name) {
  if (name == "theta_saturation") return &p.theta_saturation;
  if (name == "theta_residual") return &p.theta_residual;
  if (name == "theta_field_capacity") return &p.theta_field_capacity;
  if (name == "top_depth") return &p.top_depth;
  if (name == "lower_depth") return &p.lower_depth;
  if (name == "infiltration_rate_max") return &p.infiltration_rate_max;
  if (name == "percolation_coeff") return &p.percolation_coeff;
  if (name == "et_partition") return &p.et_partition;
  if (name == "melt_threshold") return &p.melt_threshold;
  if (name == "degree_day_factor") return &p.degree_day_factor;
  throw InvalidInput("unknown PBM parameter '" + name + "'");
}

}  // namespace

double get_param(const pbm::PbmParams& params, const std::string& name) {
  pbm::PbmParams copy = params;
  return *param_slot(copy, name);
}

void set_param(pbm::PbmParams& params, const std::string& name, double value) { *param_slot(params, name) = value; }

std::vector<ParamBound> default_calibration_bounds() {
  return {
      {"infiltration_rate_max", 0.5, 20.0},
      {"percolation_coeff", 0.001, 0.2},
      {"et_partition", 0.0, 1.0},
      {"melt_threshold", -2.0, 6.0},
  };
}

double pbm_rmse_objective(std::span<const pbm::Forcing> forcing, std::span<const double> observations,
                          const pbm::PbmParams& params) {
  if (forcing.size() != observations.size()) throw InvalidInput("forcing and observations are misaligned");
  const auto states = pbm::pbm_run(pbm::spin_up(forcing, params), forcing, params);
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t t = 0; t < observations.size(); ++t) {
    if (!std::isfinite(observations[t])) continue;
    const double e = states[t].theta_top - observations[t];
    sum += e * e;
    ++count;
  }
  if (count == 0) throw InvalidInput("no observations to score");
  return std::sqrt(sum / static_cast<double>(count));
}

CalibrationResult calibrate_pbm(std::span<const pbm::Forcing> forcing, std::span<const double> observations,
                                const pbm::PbmParams& base, const std::vector<ParamBound>& bounds,
                                const SceConfig& config) {
  base.validate();
  if (forcing.size() != observations.size()) throw InvalidInput("forcing and observations are misaligned");
  if (std::none_of(observations.begin(), observations.end(), [](double y) { return std::isfinite(y); })) {
    throw InvalidInput("calibration needs at least one training observation");
  }
  if (bounds.empty()) throw InvalidInput("calibration needs at least one parameter bound");

  BoundedProblem problem;
  for (const ParamBound& b : bounds) {
    (void)get_param(base, b.name);
    problem.lower.push_back(b.lower);
    problem.upper.push_back(b.upper);
    problem.start.push_back(std::clamp(get_param(base, b.name), b.lower, b.upper));
  }
  auto with = [&](std::span<const double> x) {
    pbm::PbmParams p = base;
    for (std::size_t i = 0; i < bounds.size(); ++i) set_param(p, bounds[i].name, x[i]);
    return p;
  };
  problem.objective = [&](std::span<const double> x) {
    const pbm::PbmParams p = with(x);
    try {
      p.validate();
    } catch (const InvalidInput&) {
      return kInf;
    }
    return pbm_rmse_objective(forcing, observations, p);
  };

  CalibrationResult out;
  out.default_objective = pbm_rmse_objective(forcing, observations, base);
  out.sce = sce_minimize(problem, config);
  out.params = with(out.sce.best_params);
  out.objective = out.sce.best_value;
  return out;
}

}  // namespace hpbm::calib

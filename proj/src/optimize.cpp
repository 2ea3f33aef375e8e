#include "mripet/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>

#include "mripet/volume.hpp"

namespace mripet {

std::string to_string(StopReason r) {
  switch (r) {
    case StopReason::MaxIterations: return "max-iters";
    case StopReason::MinStep: return "min-step";
    case StopReason::GradientTolerance: return "gradient-tol";
    case StopReason::CostTolerance: return "cost-tol";
  }
  return "unknown";
}

OptReport regular_step_gd(const CostFunction &f, const Eigen::VectorXd &init,
                          const RegularStepOptions &opts) {
  const auto n = static_cast<Eigen::Index>(f.num_params);
  if (init.size() != n) throw Error("initial parameter vector has wrong length");
  if (!(opts.min_step > 0.0 && opts.min_step < opts.max_step))
    throw Error("regular step descent needs 0 < min_step < max_step");
  if (!(opts.relaxation > 0.0 && opts.relaxation < 1.0))
    throw Error("regular step descent needs 0 < relaxation < 1");
  const Eigen::VectorXd scales = opts.scales.size() == n ? opts.scales : Eigen::VectorXd::Ones(n);
  if ((scales.array() <= 0.0).any()) throw Error("parameter scales must be positive");

  OptReport rep;
  Eigen::VectorXd x = init;
  Eigen::VectorXd g(n);
  double cost = f.evaluate(x, g);
  rep.evaluations = 1;
  rep.initial_cost = cost;
  rep.final_params = x;
  rep.final_cost = cost;
  double step = opts.max_step;
  rep.trace.push_back({0, cost, step});

  Eigen::VectorXd prev_dir;
  rep.stop_reason = StopReason::MaxIterations;
  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    const Eigen::VectorXd dir = g.cwiseQuotient(scales);
    const double norm = dir.norm();
    if (!(norm > opts.grad_tol)) {
      rep.stop_reason = StopReason::GradientTolerance;
      break;
    }
    if (prev_dir.size() == n && dir.dot(prev_dir) < 0.0) step *= opts.relaxation;
    if (step < opts.min_step) {
      rep.stop_reason = StopReason::MinStep;
      break;
    }
    x -= (step / norm) * dir.cwiseQuotient(scales);
    cost = f.evaluate(x, g);
    ++rep.evaluations;
    rep.iterations = iter;
    rep.trace.push_back({iter, cost, step});
    if (cost < rep.final_cost) {
      rep.final_cost = cost;
      rep.final_params = x;
    }
    prev_dir = dir;
  }
  return rep;
}

namespace {
  Eigen::VectorXd project(const Eigen::VectorXd &x, const Eigen::VectorXd &lo,
                          const Eigen::VectorXd &hi) {
    return x.cwiseMax(lo).cwiseMin(hi);
  }

  // Gradient with components zeroed where a bound blocks descent.
  Eigen::VectorXd free_gradient(const Eigen::VectorXd &x, const Eigen::VectorXd &g,
                                const Eigen::VectorXd &lo, const Eigen::VectorXd &hi) {
    Eigen::VectorXd pg = g;
    for (Eigen::Index i = 0; i < x.size(); ++i)
      if ((x[i] <= lo[i] && g[i] > 0.0) || (x[i] >= hi[i] && g[i] < 0.0)) pg[i] = 0.0;
    return pg;
  }
}  // namespace

OptReport lbfgs_bounded(const CostFunction &f, const Eigen::VectorXd &init,
                        const Eigen::VectorXd &lower, const Eigen::VectorXd &upper,
                        const LbfgsOptions &opts) {
  const auto n = static_cast<Eigen::Index>(f.num_params);
  if (init.size() != n || lower.size() != n || upper.size() != n)
    throw Error("L-BFGS parameter, lower and upper vectors must match the parameter count");
  if ((lower.array() > upper.array()).any()) throw Error("invalid box: lower exceeds upper");
  if ((init.array() < lower.array()).any() || (init.array() > upper.array()).any())
    throw Error("invalid box: initial point lies outside the bounds");
  if (opts.memory < 1) throw Error("L-BFGS memory must be >= 1");

  struct Pair {
    Eigen::VectorXd s, y;
    double rho;
  };
  std::deque<Pair> pairs;

  OptReport rep;
  Eigen::VectorXd x = init;
  Eigen::VectorXd g(n);
  double cost = f.evaluate(x, g);
  rep.evaluations = 1;
  rep.initial_cost = cost;
  rep.trace.push_back({0, cost, 0.0});
  rep.stop_reason = StopReason::MaxIterations;

  Eigen::VectorXd g_new(n);
  for (int iter = 1; iter <= opts.max_iters; ++iter) {
    const Eigen::VectorXd pg = free_gradient(x, g, lower, upper);
    if (pg.lpNorm<Eigen::Infinity>() <= opts.grad_tol) {
      rep.stop_reason = StopReason::GradientTolerance;
      break;
    }

    // Two-loop recursion on the free subspace.
    Eigen::VectorXd q = pg;
    std::vector<double> alpha(pairs.size());
    for (std::size_t m = pairs.size(); m-- > 0;) {
      alpha[m] = pairs[m].rho * pairs[m].s.dot(q);
      q -= alpha[m] * pairs[m].y;
    }
    const double gamma = pairs.empty()
                             ? 1.0 / pg.norm()
                             : pairs.back().s.dot(pairs.back().y) / pairs.back().y.squaredNorm();
    Eigen::VectorXd d = gamma * q;
    for (std::size_t m = 0; m < pairs.size(); ++m) {
      const double beta = pairs[m].rho * pairs[m].y.dot(d);
      d += (alpha[m] - beta) * pairs[m].s;
    }
    d = -d;
    for (Eigen::Index i = 0; i < n; ++i)
      if (pg[i] == 0.0 && g[i] != 0.0) d[i] = 0.0;
    if (!(g.dot(d) < 0.0)) {
      pairs.clear();
      d = -pg / pg.norm();
    }

    // Projected backtracking line search.
    double step = 1.0;
    bool accepted = false;
    Eigen::VectorXd x_new;
    double cost_new = cost;
    for (int ls = 0; ls < opts.max_line_search; ++ls, step *= 0.5) {
      x_new = project(x + step * d, lower, upper);
      const Eigen::VectorXd dx = x_new - x;
      if (dx.lpNorm<Eigen::Infinity>() == 0.0) break;
      cost_new = f.evaluate(x_new, g_new);
      ++rep.evaluations;
      if (cost_new <= cost + opts.armijo_c1 * g.dot(dx)) {
        accepted = true;
        break;
      }
    }
    if (!accepted) {
      rep.stop_reason = StopReason::MinStep;
      break;
    }

    Eigen::VectorXd s = x_new - x;
    Eigen::VectorXd y = g_new - g;
    const double sy = s.dot(y);
    if (sy > 1e-12 * y.squaredNorm() && sy > 0.0) {
      pairs.push_back({std::move(s), std::move(y), 1.0 / sy});
      if (static_cast<int>(pairs.size()) > opts.memory) pairs.pop_front();
    }

    const double decrease = cost - cost_new;
    const double step_norm = (x_new - x).norm();
    x = x_new;
    g = g_new;
    cost = cost_new;
    rep.iterations = iter;
    rep.trace.push_back({iter, cost, step_norm});
    if (opts.cost_tol > 0.0
        && decrease <= opts.cost_tol * std::max({std::abs(cost), std::abs(cost + decrease), 1e-300})) {
      rep.stop_reason = StopReason::CostTolerance;
      break;
    }
  }
  rep.final_params = x;
  rep.final_cost = cost;
  return rep;
}

void write_trace_csv(std::ostream &out, const OptReport &report, const std::string &label) {
  for (const auto &t : report.trace) {
    if (!label.empty()) out << label << ',';
    out << t.iteration << ',' << format_double(t.cost) << ',' << format_double(t.step) << '\n';
  }
}

}  // namespace mripet

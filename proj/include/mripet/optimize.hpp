#pragma once

#include <functional>
#include <limits>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace mripet {

/// Objective with gradient: returns f(x) and writes grad f(x) into `grad`.
struct CostFunction {
  std::size_t num_params = 0;
  std::function<double(const Eigen::VectorXd &x, Eigen::VectorXd &grad)> evaluate;
};

enum class StopReason { MaxIterations, MinStep, GradientTolerance, CostTolerance };

std::string to_string(StopReason r);

struct TraceEntry {
  int iteration = 0;
  double cost = 0.0;
  double step = 0.0;
};

struct OptReport {
  Eigen::VectorXd final_params;
  double final_cost = 0.0;
  double initial_cost = 0.0;
  int iterations = 0;
  int evaluations = 0;
  StopReason stop_reason = StopReason::MaxIterations;
  std::vector<TraceEntry> trace;
};

struct RegularStepOptions {
  double max_step = 1.0;
  double min_step = 1e-4;
  double relaxation = 0.5;
  int max_iters = 200;
  double grad_tol = 1e-12;
  /// Parameter p_i is optimized as p_i * scales_i; empty means all ones.
  Eigen::VectorXd scales;
};

/// Normalized-gradient descent with a fixed step length that is multiplied
/// by `relaxation` whenever the new gradient turns against the previous one.
/// Returns the lowest-cost iterate visited.
OptReport regular_step_gd(const CostFunction &f, const Eigen::VectorXd &init,
                          const RegularStepOptions &opts);

struct LbfgsOptions {
  int memory = 5;
  double grad_tol = 1e-6;
  /// Stops when the relative cost decrease of an iteration falls below this.
  double cost_tol = 0.0;
  int max_iters = 100;
  int max_line_search = 30;
  double armijo_c1 = 1e-4;
};

/// Limited-memory BFGS with box constraints enforced by projection.
/// Variables sitting on a bound with the gradient pushing outward are held
/// fixed for the direction computation; trial points are projected onto the
/// box and accepted under an Armijo condition.
OptReport lbfgs_bounded(const CostFunction &f, const Eigen::VectorXd &init,
                        const Eigen::VectorXd &lower, const Eigen::VectorXd &upper,
                        const LbfgsOptions &opts);

/// Writes "iteration,cost,step" lines, optionally prefixed by `label,`.
void write_trace_csv(std::ostream &out, const OptReport &report, const std::string &label = {});

}  // namespace mripet

#pragma once

#include <Eigen/Dense>
#include <functional>

namespace vardecomp {

struct BfgsOptions {
  int max_iterations = 500;
  double gradient_tol = 1e-8;   // max-norm
  double step_tol = 1e-12;      // max-norm of the accepted step
  int max_halvings = 50;
};

struct BfgsResult {
  Eigen::VectorXd x;
  double value = 0.0;
  int iterations = 0;
  bool converged = false;
};

// Objective callback: returns f(x) and fills grad. Must be deterministic.
using ObjectiveFn = std::function<double(const Eigen::VectorXd&, Eigen::VectorXd&)>;

// Quasi-Newton maximization with backtracking line search; the objective
// value never decreases between accepted iterates.
BfgsResult bfgs_maximize(const ObjectiveFn& fg, Eigen::VectorXd x0,
                         const BfgsOptions& opts = {});

}  // namespace vardecomp

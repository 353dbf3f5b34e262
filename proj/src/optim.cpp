#include "vardecomp/optim.hpp"

#include <cmath>
#include <limits>

namespace vardecomp {

BfgsResult bfgs_maximize(const ObjectiveFn& fg, Eigen::VectorXd x0, const BfgsOptions& opts) {
  const int dim = static_cast<int>(x0.size());
  Eigen::MatrixXd inv_hess = Eigen::MatrixXd::Identity(dim, dim);
  Eigen::VectorXd x = std::move(x0);
  Eigen::VectorXd grad(dim), grad_new(dim);
  double f = fg(x, grad);

  BfgsResult result;
  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    if (grad.lpNorm<Eigen::Infinity>() < opts.gradient_tol) {
      result.converged = true;
      result.iterations = iter;
      break;
    }

    Eigen::VectorXd direction = inv_hess * grad;
    if (direction.dot(grad) <= 0.0) {
      // Curvature update went bad; fall back to steepest ascent.
      inv_hess.setIdentity();
      direction = grad;
    }

    // Backtracking with an Armijo increase condition.
    double step = 1.0;
    const double slope = grad.dot(direction);
    Eigen::VectorXd x_new;
    double f_new = -std::numeric_limits<double>::infinity();
    bool accepted = false;
    for (int h = 0; h < opts.max_halvings; ++h) {
      x_new = x + step * direction;
      f_new = fg(x_new, grad_new);
      if (std::isfinite(f_new) && f_new >= f + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      // No ascent step available at machine resolution: stationary enough.
      result.converged = grad.lpNorm<Eigen::Infinity>() < 1e2 * opts.gradient_tol;
      result.iterations = iter;
      break;
    }

    const Eigen::VectorXd s = x_new - x;
    const Eigen::VectorXd delta_grad = grad_new - grad;  // note: maximization
    const double sy = -s.dot(delta_grad);                 // s'(g_old - g_new) > 0 on concave arcs
    if (sy > 1e-12 * s.norm() * delta_grad.norm()) {
      const Eigen::VectorXd hy = inv_hess * (-delta_grad);
      const double yhy = -delta_grad.dot(hy);
      inv_hess += ((sy + yhy) / (sy * sy)) * (s * s.transpose()) -
                  (hy * s.transpose() + s * hy.transpose()) / sy;
    }

    const double step_size = s.lpNorm<Eigen::Infinity>();
    x = std::move(x_new);
    f = f_new;
    grad = grad_new;
    result.iterations = iter + 1;
    if (step_size < opts.step_tol) {
      result.converged = true;
      break;
    }
  }
  if (!result.converged && grad.lpNorm<Eigen::Infinity>() < opts.gradient_tol) {
    result.converged = true;
  }
  result.x = std::move(x);
  result.value = f;
  return result;
}

}  // namespace vardecomp

#pragma once

#include <Eigen/Dense>

#include "vardecomp/types.hpp"

namespace vardecomp {

struct GlmFit {
  Eigen::VectorXd coef;  // intercept first
  FitMeta meta;
};

// Ordinary least squares of y on (1, x).
GlmFit fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y);

// Plain (single-level) logistic regression of y on (1, x) by Newton-Raphson
// with step halving. Kept separate from the multinomial solver so the
// two-cell reduction test compares genuinely different code paths.
GlmFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                    double gradient_tol = 1e-10, int max_iterations = 100);

}  // namespace vardecomp

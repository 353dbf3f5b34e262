#include "vardecomp/glm.hpp"

#include <cmath>

#include "vardecomp/errors.hpp"
#include "vardecomp/math.hpp"

namespace vardecomp {

namespace {

Eigen::MatrixXd with_intercept(const Eigen::MatrixXd& x) {
  Eigen::MatrixXd design(x.rows(), x.cols() + 1);
  design.col(0).setOnes();
  design.rightCols(x.cols()) = x;
  return design;
}

}  // namespace

GlmFit fit_ols(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
  const Eigen::MatrixXd design = with_intercept(x);
  GlmFit fit;
  fit.coef = (design.transpose() * design).ldlt().solve(design.transpose() * y);
  const Eigen::VectorXd resid = y - design * fit.coef;
  const double n = static_cast<double>(y.size());
  const double rss = resid.squaredNorm();
  fit.meta.log_likelihood = -0.5 * n * (std::log(2.0 * M_PI * rss / n) + 1.0);
  fit.meta.converged = true;
  fit.meta.iterations = 1;
  return fit;
}

GlmFit fit_logistic(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                    double gradient_tol, int max_iterations) {
  const Eigen::MatrixXd design = with_intercept(x);
  const Eigen::Index n = design.rows();
  const Eigen::Index k = design.cols();

  bool seen0 = false, seen1 = false;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (y[i] == 0.0) seen0 = true;
    else if (y[i] == 1.0) seen1 = true;
    else throw DataError("logistic regression outcome must be 0 or 1");
  }
  if (!seen0 || !seen1) throw DataError("logistic regression needs both outcome levels present");

  Eigen::VectorXd coef = Eigen::VectorXd::Zero(k);
  Eigen::VectorXd eta(n), mu(n);
  auto loglik = [&](const Eigen::VectorXd& b) {
    eta = design * b;
    double ll = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) ll += y[i] * eta[i] - log1pexp(eta[i]);
    return ll;
  };

  double ll = loglik(coef);
  GlmFit fit;
  for (int iter = 0; iter < max_iterations; ++iter) {
    for (Eigen::Index i = 0; i < n; ++i) mu[i] = logistic(eta[i]);
    const Eigen::VectorXd grad = design.transpose() * (y - mu);
    if (grad.lpNorm<Eigen::Infinity>() < gradient_tol) {
      fit.meta.converged = true;
      fit.meta.iterations = iter;
      break;
    }
    Eigen::MatrixXd info = Eigen::MatrixXd::Zero(k, k);
    for (Eigen::Index i = 0; i < n; ++i) {
      const double w = mu[i] * (1.0 - mu[i]);
      info.noalias() += w * design.row(i).transpose() * design.row(i);
    }
    Eigen::VectorXd step = info.ldlt().solve(grad);
    double scale = 1.0;
    double ll_new = loglik(coef + step);
    int halvings = 0;
    while (!(ll_new >= ll) && halvings < 40) {
      scale *= 0.5;
      ll_new = loglik(coef + scale * step);
      ++halvings;
    }
    coef += scale * step;
    ll = ll_new;
    fit.meta.iterations = iter + 1;
  }
  if (!fit.meta.converged) {
    eta = design * coef;
    for (Eigen::Index i = 0; i < n; ++i) mu[i] = logistic(eta[i]);
    const Eigen::VectorXd grad = design.transpose() * (y - mu);
    fit.meta.converged = grad.lpNorm<Eigen::Infinity>() < gradient_tol;
    if (!fit.meta.converged) throw ConvergenceError("logistic regression did not converge");
  }
  fit.coef = std::move(coef);
  fit.meta.log_likelihood = ll;
  return fit;
}

}  // namespace vardecomp

#pragma once

#include <Eigen/Dense>
#include <memory>

#include "vardecomp/glm.hpp"
#include "vardecomp/types.hpp"

namespace vardecomp {

enum class Link { identity, logit };

struct OutcomeFitOptions {
  bool reml = false;                // identity link only; default ML
  bool fix_surgeon_level = false;   // constrain kappa2 = 0 (hospital-intercept model)
  double inner_gradient_tol = 1e-10;
  double outer_gradient_tol = 1e-8;
  int max_outer_iterations = 500;
  const struct OutcomeParams* warm_start = nullptr;  // speeds up bootstrap refits
};

// Fitted nested random-intercept model. hospital_effects and surgeon_effects
// hold the empirical Bayes predictions (conditional means for the identity
// link, Laplace posterior modes for the logit link). Immutable once fitted.
struct OutcomeParams {
  Link link = Link::identity;
  double alpha0 = 0.0;
  Eigen::VectorXd beta;
  double tau2 = 0.0;
  double kappa2 = 0.0;
  double sigma2 = 0.0;                // identity link only; NaN for logit
  Eigen::VectorXd hospital_effects;   // length m
  Eigen::VectorXd surgeon_effects;    // length q, flattened cell order
  Hierarchy hierarchy;
  bool tau2_boundary = false;
  bool kappa2_boundary = false;
  FitMeta fit_meta;

  double linear_predictor(int hospital, int surgeon, const Eigen::VectorXd& x) const;
};

// Gaussian marginal likelihood, ML (default) or REML, optimized over
// (log tau2, log kappa2, log sigma2) with fixed effects profiled out.
OutcomeParams fit_linear_mixed(const DataSet& d, const OutcomeFitOptions& opts = {});

// Laplace-approximated maximum likelihood for the logit link; one
// mode-finding inner loop per hospital, parallelizable across hospitals.
OutcomeParams fit_logistic_mixed(const DataSet& d, const OutcomeFitOptions& opts = {});

// Fitted conditional mean g^{-1}(alpha0 + a_z + c_zs + beta'x) with the
// empirical Bayes effect predictions. Ids are 0-based.
double predict_mu(const OutcomeParams& params, int hospital, int surgeon,
                  const Eigen::VectorXd& x);

// mu(1-mu) for the logit link, sigma2 for the identity link.
double conditional_variance(const OutcomeParams& params, int hospital, int surgeon,
                            const Eigen::VectorXd& x);

// ---------------------------------------------------------------------------
// Likelihood surfaces exposed for finite-difference checks.
// ---------------------------------------------------------------------------

// Full-parameter Gaussian marginal log-likelihood.
// v = (alpha0, beta_1..beta_p, log tau2, log kappa2, log sigma2).
double linear_mixed_loglik(const DataSet& d, const Eigen::VectorXd& v,
                           Eigen::VectorXd* grad = nullptr);

// REML criterion with fixed effects profiled.
// v = (log tau2, log kappa2, log sigma2).
double linear_mixed_reml(const DataSet& d, const Eigen::VectorXd& v,
                         Eigen::VectorXd* grad = nullptr);

// Laplace-approximated marginal log-likelihood for the logit link.
// v = (alpha0, beta_1..beta_p, log tau2, log kappa2).
double logistic_mixed_laplace(const DataSet& d, const Eigen::VectorXd& v,
                              Eigen::VectorXd* grad = nullptr);

// ---------------------------------------------------------------------------
// Marginal regressions for the semi-parametric path
// ---------------------------------------------------------------------------

// Conditional-mean models at the three conditioning depths. model_szx is the
// same object as the full nested fit, not a refit.
struct MarginalModels {
  Link link = Link::identity;
  GlmFit model_x;
  OutcomeParams model_zx;
  std::shared_ptr<const OutcomeParams> model_szx;

  double predict_x(const Eigen::VectorXd& x) const;
  double predict_zx(int hospital, const Eigen::VectorXd& x) const;
  double predict_szx(int hospital, int surgeon, const Eigen::VectorXd& x) const;
};

MarginalModels fit_marginal_models(const DataSet& d, const OutcomeFitOptions& opts = {});
MarginalModels fit_marginal_models(const DataSet& d,
                                   std::shared_ptr<const OutcomeParams> full_model,
                                   const OutcomeFitOptions& opts = {});

}  // namespace vardecomp

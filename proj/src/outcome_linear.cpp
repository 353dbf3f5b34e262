#include <cmath>
#include <limits>

#include "vardecomp/errors.hpp"
#include "vardecomp/math.hpp"
#include "vardecomp/optim.hpp"
#include "vardecomp/outcome.hpp"

namespace vardecomp {

double OutcomeParams::linear_predictor(int hospital, int surgeon,
                                       const Eigen::VectorXd& x) const {
  if (!hierarchy.valid_cell(hospital, surgeon)) throw DataError("invalid (hospital, surgeon) cell");
  if (x.size() != beta.size()) throw DataError("covariate vector has wrong length");
  return alpha0 + hospital_effects[hospital] +
         surgeon_effects[hierarchy.cell_index(hospital, surgeon)] + beta.dot(x);
}

double predict_mu(const OutcomeParams& params, int hospital, int surgeon,
                  const Eigen::VectorXd& x) {
  const double lp = params.linear_predictor(hospital, surgeon, x);
  return params.link == Link::logit ? logistic(lp) : lp;
}

double conditional_variance(const OutcomeParams& params, int hospital, int surgeon,
                            const Eigen::VectorXd& x) {
  if (params.link == Link::logit) {
    const double mu = predict_mu(params, hospital, surgeon, x);
    return mu * (1.0 - mu);
  }
  if (!params.hierarchy.valid_cell(hospital, surgeon)) {
    throw DataError("invalid (hospital, surgeon) cell");
  }
  return params.sigma2;
}

// ---------------------------------------------------------------------------
// Nested Gaussian marginal likelihood via per-cell sufficient statistics.
//
// Within hospital z the marginal covariance is
//   V_z = sigma2 I + kappa2 sum_s 1_s 1_s' + tau2 1 1',
// inverted cell-block-wise with two Woodbury steps, so every evaluation is
// O(q) after a single O(n p^2) statistics pass.
// ---------------------------------------------------------------------------

namespace {

constexpr double kLogVarFloor = -30.0;
constexpr double kBoundaryLog = -20.0;

struct LmmStats {
  int n = 0;
  int pt = 0;  // p + 1 (intercept first)
  Eigen::MatrixXd sxx;
  Eigen::VectorXd sxy;
  double syy = 0.0;
  std::vector<double> cell_count;      // q
  std::vector<Eigen::VectorXd> cell_sx;
  std::vector<double> cell_sy;
  Hierarchy hierarchy;

  static LmmStats build(const DataSet& d) {
    LmmStats st;
    st.hierarchy = d.hierarchy();
    st.n = static_cast<int>(d.size());
    st.pt = d.covariate_dim() + 1;
    const int q = st.hierarchy.cells();
    st.sxx = Eigen::MatrixXd::Zero(st.pt, st.pt);
    st.sxy = Eigen::VectorXd::Zero(st.pt);
    st.cell_count.assign(q, 0.0);
    st.cell_sx.assign(q, Eigen::VectorXd::Zero(st.pt));
    st.cell_sy.assign(q, 0.0);
    Eigen::VectorXd xt(st.pt);
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      xt[0] = 1.0;
      for (int t = 1; t < st.pt; ++t) xt[t] = d.x()(i, t - 1);
      const double yi = d.y()[i];
      st.sxx.noalias() += xt * xt.transpose();
      st.sxy.noalias() += yi * xt;
      st.syy += yi * yi;
      const int c = d.cell_of(i);
      st.cell_count[c] += 1.0;
      st.cell_sx[c] += xt;
      st.cell_sy[c] += yi;
    }
    return st;
  }
};

// Per-evaluation quantities shared between the value and gradient paths.
struct LmmWork {
  double tau2 = 0.0, kappa2 = 0.0, sigma2 = 0.0;
  std::vector<double> denom;    // per cell: sigma2 + kappa2 k_c
  std::vector<double> cc;       // per cell: kappa2 / (sigma2 denom)
  std::vector<double> u;        // per hospital
  std::vector<double> rho;      // per hospital: tau2 / (1 + tau2 u_z)
  std::vector<Eigen::VectorXd> hx;  // per hospital: sum_c Sx_c / denom_c
  double logdet_v = 0.0;
  Eigen::MatrixXd a;            // X' V^-1 X
  Eigen::VectorXd rhs;          // X' V^-1 y
  Eigen::LDLT<Eigen::MatrixXd> a_ldlt;

  void prepare(const LmmStats& st, double tau2_in, double kappa2_in, double sigma2_in) {
    tau2 = tau2_in;
    kappa2 = kappa2_in;
    sigma2 = sigma2_in;
    const Hierarchy& hier = st.hierarchy;
    const int q = hier.cells();
    const int m = hier.hospitals();
    denom.resize(q);
    cc.resize(q);
    u.assign(m, 0.0);
    rho.assign(m, 0.0);
    hx.assign(m, Eigen::VectorXd::Zero(st.pt));
    logdet_v = 0.0;
    a = st.sxx / sigma2;
    rhs = st.sxy / sigma2;
    std::vector<double> gy(m, 0.0);
    for (int c = 0; c < q; ++c) {
      const int z = hier.cell_hospital(c);
      const double k = st.cell_count[c];
      denom[c] = sigma2 + kappa2 * k;
      cc[c] = kappa2 / (sigma2 * denom[c]);
      u[z] += k / denom[c];
      hx[z] += st.cell_sx[c] / denom[c];
      gy[z] += st.cell_sy[c] / denom[c];
      logdet_v += k * std::log(sigma2) + std::log(denom[c] / sigma2);
      if (cc[c] != 0.0) {
        a.noalias() -= cc[c] * st.cell_sx[c] * st.cell_sx[c].transpose();
        rhs.noalias() -= cc[c] * st.cell_sy[c] * st.cell_sx[c];
      }
    }
    for (int z = 0; z < m; ++z) {
      rho[z] = tau2 / (1.0 + tau2 * u[z]);
      logdet_v += std::log1p(tau2 * u[z]);
      if (rho[z] != 0.0) {
        a.noalias() -= rho[z] * hx[z] * hx[z].transpose();
        rhs.noalias() -= rho[z] * gy[z] * hx[z];
      }
    }
    a_ldlt.compute(a);
  }

  // Residual cell sums and quadratic form for fixed effects b.
  void residuals(const LmmStats& st, const Eigen::VectorXd& b, std::vector<double>& r_cell,
                 std::vector<double>& g_hosp, double& r_quad) const {
    const Hierarchy& hier = st.hierarchy;
    const int q = hier.cells();
    r_cell.resize(q);
    g_hosp.assign(hier.hospitals(), 0.0);
    for (int c = 0; c < q; ++c) {
      r_cell[c] = st.cell_sy[c] - st.cell_sx[c].dot(b);
      g_hosp[hier.cell_hospital(c)] += r_cell[c] / denom[c];
    }
    const double rr = st.syy - 2.0 * b.dot(st.sxy) + b.dot(st.sxx * b);
    double quad = rr / sigma2;
    for (int c = 0; c < q; ++c) quad -= cc[c] * r_cell[c] * r_cell[c];
    for (int z = 0; z < hier.hospitals(); ++z) quad -= rho[z] * g_hosp[z] * g_hosp[z];
    r_quad = quad;
  }
};

struct VarianceGradient {
  double d_tau2 = 0.0, d_kappa2 = 0.0, d_sigma2 = 0.0;
};

// d loglik / d (tau2, kappa2, sigma2) = -1/2 (tr(V^-1 Vdot) - r'V^-1 Vdot V^-1 r),
// plus the REML correction +1/2 tr(A^-1 X'V^-1 Vdot V^-1 X) when requested.
VarianceGradient variance_gradient(const LmmStats& st, const LmmWork& w,
                                   const std::vector<double>& r_cell,
                                   const std::vector<double>& g_hosp, const Eigen::VectorXd& b,
                                   bool reml) {
  const Hierarchy& hier = st.hierarchy;
  const int q = hier.cells();
  const int m = hier.hospitals();
  const double sigma2 = w.sigma2;

  double tr_tau = 0.0, quad_tau = 0.0;
  for (int z = 0; z < m; ++z) {
    const double shrink = 1.0 + w.tau2 * w.u[z];
    tr_tau += w.u[z] / shrink;
    quad_tau += (g_hosp[z] / shrink) * (g_hosp[z] / shrink);
  }

  double tr_kappa = 0.0, quad_kappa = 0.0;
  double tr_sigma = 0.0, quad_sigma = 0.0;
  const double rr = st.syy - 2.0 * b.dot(st.sxy) + b.dot(st.sxx * b);
  quad_sigma = rr / (sigma2 * sigma2);
  double tr_sigma_cells = 0.0;
  for (int c = 0; c < q; ++c) {
    const int z = hier.cell_hospital(c);
    const double k = st.cell_count[c];
    const double dc = w.denom[c];
    tr_kappa += k / dc - w.rho[z] * (k / dc) * (k / dc);
    const double v_r = r_cell[c] / dc - w.rho[z] * (k / dc) * g_hosp[z];
    quad_kappa += v_r * v_r;
    tr_sigma_cells += w.cc[c] * k + w.rho[z] * k / (dc * dc);
    const double d_cell = w.cc[c] * r_cell[c] + w.rho[z] * g_hosp[z] / dc;
    quad_sigma += -2.0 / sigma2 * d_cell * r_cell[c] + k * d_cell * d_cell;
  }
  tr_sigma = st.n / sigma2 - tr_sigma_cells;

  VarianceGradient grad;
  grad.d_tau2 = -0.5 * (tr_tau - quad_tau);
  grad.d_kappa2 = -0.5 * (tr_kappa - quad_kappa);
  grad.d_sigma2 = -0.5 * (tr_sigma - quad_sigma);

  if (reml) {
    Eigen::MatrixXd s_tau = Eigen::MatrixXd::Zero(st.pt, st.pt);
    Eigen::MatrixXd s_kappa = Eigen::MatrixXd::Zero(st.pt, st.pt);
    Eigen::MatrixXd s_sigma = st.sxx / (sigma2 * sigma2);
    for (int z = 0; z < m; ++z) {
      const Eigen::VectorXd j = w.hx[z] / (1.0 + w.tau2 * w.u[z]);
      s_tau.noalias() += j * j.transpose();
    }
    for (int c = 0; c < q; ++c) {
      const int z = hier.cell_hospital(c);
      const double k = st.cell_count[c];
      const double dc = w.denom[c];
      const Eigen::VectorXd kv = st.cell_sx[c] / dc - w.rho[z] * (k / dc) * w.hx[z];
      s_kappa.noalias() += kv * kv.transpose();
      const Eigen::VectorXd dvec = w.cc[c] * st.cell_sx[c] + w.rho[z] * w.hx[z] / dc;
      s_sigma.noalias() -= (st.cell_sx[c] * dvec.transpose() + dvec * st.cell_sx[c].transpose()) / sigma2;
      s_sigma.noalias() += k * dvec * dvec.transpose();
    }
    grad.d_tau2 += 0.5 * w.a_ldlt.solve(s_tau).trace();
    grad.d_kappa2 += 0.5 * w.a_ldlt.solve(s_kappa).trace();
    grad.d_sigma2 += 0.5 * w.a_ldlt.solve(s_sigma).trace();
  }
  return grad;
}

constexpr double kLog2Pi = 1.8378770664093453;

double clamped_exp(double logv) { return std::exp(std::max(logv, kLogVarFloor)); }

}  // namespace

double linear_mixed_loglik(const DataSet& d, const Eigen::VectorXd& v, Eigen::VectorXd* grad) {
  if (d.outcome_kind() != OutcomeKind::continuous) {
    throw DataError("identity-link model requires a continuous outcome");
  }
  const LmmStats st = LmmStats::build(d);
  const int pt = st.pt;
  if (v.size() != pt + 3) throw DataError("parameter vector has wrong length");
  const Eigen::VectorXd b = v.head(pt);
  const double tau2 = clamped_exp(v[pt]);
  const double kappa2 = clamped_exp(v[pt + 1]);
  const double sigma2 = clamped_exp(v[pt + 2]);

  LmmWork w;
  w.prepare(st, tau2, kappa2, sigma2);
  std::vector<double> r_cell, g_hosp;
  double r_quad = 0.0;
  w.residuals(st, b, r_cell, g_hosp, r_quad);
  const double ll = -0.5 * (st.n * kLog2Pi + w.logdet_v + r_quad);

  if (grad != nullptr) {
    grad->resize(pt + 3);
    // X'V^-1 r
    Eigen::VectorXd gb = (st.sxy - st.sxx * b) / sigma2;
    for (int c = 0; c < st.hierarchy.cells(); ++c) {
      gb.noalias() -= w.cc[c] * r_cell[c] * st.cell_sx[c];
    }
    for (int z = 0; z < st.hierarchy.hospitals(); ++z) {
      gb.noalias() -= w.rho[z] * g_hosp[z] * w.hx[z];
    }
    grad->head(pt) = gb;
    const VarianceGradient vg = variance_gradient(st, w, r_cell, g_hosp, b, false);
    (*grad)[pt] = vg.d_tau2 * tau2;
    (*grad)[pt + 1] = vg.d_kappa2 * kappa2;
    (*grad)[pt + 2] = vg.d_sigma2 * sigma2;
  }
  return ll;
}

namespace {

// Shared by the REML surface and the fitter: profiled criterion over
// variance parameters, ML or REML.
double profiled_criterion(const LmmStats& st, double tau2, double kappa2, double sigma2,
                          bool reml, Eigen::VectorXd* grad_nat, Eigen::VectorXd* b_out,
                          LmmWork* work_out) {
  LmmWork w;
  w.prepare(st, tau2, kappa2, sigma2);
  const Eigen::VectorXd b = w.a_ldlt.solve(w.rhs);
  std::vector<double> r_cell, g_hosp;
  double r_quad = 0.0;
  w.residuals(st, b, r_cell, g_hosp, r_quad);

  double crit;
  if (reml) {
    const double logdet_a = w.a_ldlt.vectorD().array().abs().log().sum();
    crit = -0.5 * ((st.n - st.pt) * kLog2Pi + w.logdet_v + logdet_a + r_quad);
  } else {
    crit = -0.5 * (st.n * kLog2Pi + w.logdet_v + r_quad);
  }
  if (grad_nat != nullptr) {
    const VarianceGradient vg = variance_gradient(st, w, r_cell, g_hosp, b, reml);
    grad_nat->resize(3);
    (*grad_nat)[0] = vg.d_tau2;
    (*grad_nat)[1] = vg.d_kappa2;
    (*grad_nat)[2] = vg.d_sigma2;
  }
  if (b_out != nullptr) *b_out = b;
  if (work_out != nullptr) *work_out = std::move(w);
  return crit;
}

}  // namespace

double linear_mixed_reml(const DataSet& d, const Eigen::VectorXd& v, Eigen::VectorXd* grad) {
  if (d.outcome_kind() != OutcomeKind::continuous) {
    throw DataError("identity-link model requires a continuous outcome");
  }
  if (v.size() != 3) throw DataError("parameter vector has wrong length");
  const LmmStats st = LmmStats::build(d);
  const double tau2 = clamped_exp(v[0]);
  const double kappa2 = clamped_exp(v[1]);
  const double sigma2 = clamped_exp(v[2]);
  Eigen::VectorXd grad_nat;
  const double crit = profiled_criterion(st, tau2, kappa2, sigma2, true,
                                         grad != nullptr ? &grad_nat : nullptr, nullptr, nullptr);
  if (grad != nullptr) {
    grad->resize(3);
    (*grad)[0] = grad_nat[0] * tau2;
    (*grad)[1] = grad_nat[1] * kappa2;
    (*grad)[2] = grad_nat[2] * sigma2;
  }
  return crit;
}

OutcomeParams fit_linear_mixed(const DataSet& d, const OutcomeFitOptions& opts) {
  if (d.outcome_kind() != OutcomeKind::continuous) {
    throw DataError("fit_linear_mixed requires a continuous outcome");
  }
  if (d.size() <= d.covariate_dim() + 2) {
    throw DataError("too few records for the linear mixed model");
  }
  const LmmStats st = LmmStats::build(d);
  const bool fix_kappa = opts.fix_surgeon_level;
  const int n_var = fix_kappa ? 2 : 3;

  const double var_y =
      (st.syy - st.sxy[0] * st.sxy[0] / st.n) / std::max(1, st.n - 1);
  Eigen::VectorXd v0(n_var);
  if (opts.warm_start != nullptr && opts.warm_start->link == Link::identity) {
    const OutcomeParams& ws = *opts.warm_start;
    v0[0] = std::log(std::max(ws.tau2, 1e-8));
    if (fix_kappa) {
      v0[1] = std::log(std::max(ws.sigma2, 1e-8));
    } else {
      v0[1] = std::log(std::max(ws.kappa2, 1e-8));
      v0[2] = std::log(std::max(ws.sigma2, 1e-8));
    }
  } else {
    const double base = std::max(var_y, 1e-4);
    v0.setConstant(std::log(base / 4.0));
    v0[n_var - 1] = std::log(base / 2.0);
  }

  auto unpack = [&](const Eigen::VectorXd& v, double& tau2, double& kappa2, double& sigma2) {
    tau2 = clamped_exp(v[0]);
    kappa2 = fix_kappa ? 0.0 : clamped_exp(v[1]);
    sigma2 = clamped_exp(v[n_var - 1]);
  };

  ObjectiveFn objective = [&](const Eigen::VectorXd& v, Eigen::VectorXd& grad) {
    double tau2, kappa2, sigma2;
    unpack(v, tau2, kappa2, sigma2);
    Eigen::VectorXd grad_nat;
    const double crit =
        profiled_criterion(st, tau2, kappa2, sigma2, opts.reml, &grad_nat, nullptr, nullptr);
    grad.resize(n_var);
    grad[0] = (v[0] > kLogVarFloor) ? grad_nat[0] * tau2 : 0.0;
    if (!fix_kappa) grad[1] = (v[1] > kLogVarFloor) ? grad_nat[1] * kappa2 : 0.0;
    grad[n_var - 1] = (v[n_var - 1] > kLogVarFloor) ? grad_nat[2] * sigma2 : 0.0;
    return crit;
  };

  BfgsOptions bopts;
  bopts.max_iterations = opts.max_outer_iterations;
  bopts.gradient_tol = opts.outer_gradient_tol;
  const BfgsResult res = bfgs_maximize(objective, v0, bopts);
  if (!res.converged) {
    throw ConvergenceError("linear mixed model did not converge");
  }

  OutcomeParams params;
  params.link = Link::identity;
  params.hierarchy = st.hierarchy;
  double tau2, kappa2, sigma2;
  unpack(res.x, tau2, kappa2, sigma2);
  params.tau2_boundary = res.x[0] < kBoundaryLog;
  params.kappa2_boundary = !fix_kappa && res.x[1] < kBoundaryLog;
  if (params.tau2_boundary) tau2 = 0.0;
  if (params.kappa2_boundary || fix_kappa) kappa2 = 0.0;

  // Final pass at the (possibly boundary-snapped) estimates.
  LmmWork w;
  Eigen::VectorXd b;
  const double final_ll =
      profiled_criterion(st, tau2, kappa2, sigma2, opts.reml, nullptr, &b, &w);
  std::vector<double> r_cell, g_hosp;
  double r_quad = 0.0;
  w.residuals(st, b, r_cell, g_hosp, r_quad);

  params.alpha0 = b[0];
  params.beta = b.tail(st.pt - 1);
  params.tau2 = tau2;
  params.kappa2 = kappa2;
  params.sigma2 = sigma2;

  const Hierarchy& hier = st.hierarchy;
  params.hospital_effects.resize(hier.hospitals());
  for (int z = 0; z < hier.hospitals(); ++z) {
    params.hospital_effects[z] = tau2 * g_hosp[z] / (1.0 + tau2 * w.u[z]);
  }
  params.surgeon_effects.resize(hier.cells());
  for (int c = 0; c < hier.cells(); ++c) {
    const int z = hier.cell_hospital(c);
    params.surgeon_effects[c] =
        kappa2 * (r_cell[c] / w.denom[c] - w.rho[z] * (st.cell_count[c] / w.denom[c]) * g_hosp[z]);
  }

  params.fit_meta.log_likelihood = final_ll;
  params.fit_meta.iterations = res.iterations;
  params.fit_meta.converged = true;
  if (params.tau2_boundary) params.fit_meta.warnings.push_back("tau2 estimated at boundary 0");
  if (!fix_kappa && params.kappa2_boundary) {
    params.fit_meta.warnings.push_back("kappa2 estimated at boundary 0");
  }
  return params;
}

// ---------------------------------------------------------------------------
// Marginal model stack
// ---------------------------------------------------------------------------

double MarginalModels::predict_x(const Eigen::VectorXd& x) const {
  double lp = model_x.coef[0];
  for (int t = 0; t < x.size(); ++t) lp += model_x.coef[t + 1] * x[t];
  return link == Link::logit ? logistic(lp) : lp;
}

double MarginalModels::predict_zx(int hospital, const Eigen::VectorXd& x) const {
  const double lp = model_zx.alpha0 + model_zx.hospital_effects[hospital] + model_zx.beta.dot(x);
  return link == Link::logit ? logistic(lp) : lp;
}

double MarginalModels::predict_szx(int hospital, int surgeon, const Eigen::VectorXd& x) const {
  return predict_mu(*model_szx, hospital, surgeon, x);
}

MarginalModels fit_marginal_models(const DataSet& d,
                                   std::shared_ptr<const OutcomeParams> full_model,
                                   const OutcomeFitOptions& opts) {
  MarginalModels mm;
  mm.link = d.outcome_kind() == OutcomeKind::binary ? Link::logit : Link::identity;
  mm.model_x = mm.link == Link::logit ? fit_logistic(d.x(), d.y()) : fit_ols(d.x(), d.y());
  OutcomeFitOptions zx_opts = opts;
  zx_opts.fix_surgeon_level = true;
  zx_opts.warm_start = nullptr;
  mm.model_zx = mm.link == Link::logit ? fit_logistic_mixed(d, zx_opts)
                                       : fit_linear_mixed(d, zx_opts);
  mm.model_szx = std::move(full_model);
  return mm;
}

MarginalModels fit_marginal_models(const DataSet& d, const OutcomeFitOptions& opts) {
  auto full = std::make_shared<OutcomeParams>(d.outcome_kind() == OutcomeKind::binary
                                                  ? fit_logistic_mixed(d, opts)
                                                  : fit_linear_mixed(d, opts));
  return fit_marginal_models(d, std::move(full), opts);
}

}  // namespace vardecomp

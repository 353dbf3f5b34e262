#include <cmath>
#include <limits>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "vardecomp/errors.hpp"
#include "vardecomp/math.hpp"
#include "vardecomp/optim.hpp"
#include "vardecomp/outcome.hpp"

namespace vardecomp {

// ---------------------------------------------------------------------------
// Laplace-approximated likelihood for the nested logistic model.
//
// Hospitals are conditionally independent, so the integrated likelihood
// factorizes per hospital. Within hospital z the penalized-likelihood Hessian
// over u = (a, c_1..c_h) has arrow structure (surgeon coordinates couple only
// through the hospital intercept), giving O(h) solves and determinants.
// ---------------------------------------------------------------------------

namespace {

constexpr double kLogVarFloor = -30.0;
constexpr double kBoundaryLog = -20.0;

struct GlmmIndex {
  int n = 0;
  int pt = 0;
  std::vector<int> order;           // records sorted by (hospital, surgeon)
  std::vector<int> hospital_begin;  // m+1 offsets into order
  std::vector<int> local_surgeon;   // aligned with order
  Hierarchy hierarchy;

  static GlmmIndex build(const DataSet& d) {
    GlmmIndex ix;
    ix.hierarchy = d.hierarchy();
    ix.n = static_cast<int>(d.size());
    ix.pt = d.covariate_dim() + 1;
    const int m = ix.hierarchy.hospitals();
    std::vector<int> counts(m, 0);
    for (Eigen::Index i = 0; i < d.size(); ++i) ++counts[d.hospital_of(i)];
    ix.hospital_begin.assign(m + 1, 0);
    for (int z = 0; z < m; ++z) ix.hospital_begin[z + 1] = ix.hospital_begin[z] + counts[z];
    std::vector<int> cursor(ix.hospital_begin.begin(), ix.hospital_begin.end() - 1);
    ix.order.resize(ix.n);
    for (Eigen::Index i = 0; i < d.size(); ++i) ix.order[cursor[d.hospital_of(i)]++] = static_cast<int>(i);
    ix.local_surgeon.resize(ix.n);
    for (int r = 0; r < ix.n; ++r) ix.local_surgeon[r] = d.surgeon_of(ix.order[r]);
    return ix;
  }
};

// Solve the arrow system [[d0, b'], [b, diag(ds)]] x = rhs.
void arrow_solve(double d0, const std::vector<double>& b, const std::vector<double>& ds,
                 std::vector<double>& rhs_x) {
  const std::size_t h = b.size();
  double schur = d0;
  double g0 = rhs_x[0];
  for (std::size_t s = 0; s < h; ++s) {
    schur -= b[s] * b[s] / ds[s];
    g0 -= b[s] * rhs_x[1 + s] / ds[s];
  }
  const double x0 = g0 / schur;
  rhs_x[0] = x0;
  for (std::size_t s = 0; s < h; ++s) rhs_x[1 + s] = (rhs_x[1 + s] - b[s] * x0) / ds[s];
}

struct HospitalResult {
  double loglik = 0.0;
  Eigen::VectorXd grad;
  bool failed = false;
};

// Mode-finding plus the Laplace value and (optionally) gradient for one
// hospital. u is the warm-started mode estimate, updated in place.
HospitalResult hospital_laplace(const DataSet& d, const GlmmIndex& ix, int z,
                                const Eigen::VectorXd& base, double tau2, double kappa2,
                                bool fix_surgeon, std::vector<double>& u, bool want_grad,
                                double inner_tol) {
  const int h = fix_surgeon ? 0 : ix.hierarchy.surgeons_in(z);
  const int dim_u = 1 + h;
  const int r_begin = ix.hospital_begin[z];
  const int r_end = ix.hospital_begin[z + 1];
  const int pt = ix.pt;
  const int n_par = pt + (fix_surgeon ? 1 : 2);
  if (static_cast<int>(u.size()) != dim_u) u.assign(dim_u, 0.0);

  HospitalResult out;
  std::vector<double> grad_u(dim_u), step(dim_u), bvec(std::max(h, 0)), ds(std::max(h, 0));
  double d0 = 0.0;

  auto penalized_value = [&](const std::vector<double>& uu) {
    double value = 0.0;
    for (int r = r_begin; r < r_end; ++r) {
      const int i = ix.order[r];
      const double eta = base[i] + uu[0] + (fix_surgeon ? 0.0 : uu[1 + ix.local_surgeon[r]]);
      value += d.y()[i] * eta - log1pexp(eta);
    }
    value -= uu[0] * uu[0] / (2.0 * tau2);
    if (!fix_surgeon) {
      for (int s = 0; s < h; ++s) value -= uu[1 + s] * uu[1 + s] / (2.0 * kappa2);
    }
    return value;
  };

  double g_val = penalized_value(u);
  bool mode_found = false;
  for (int inner = 0; inner < 200; ++inner) {
    std::fill(grad_u.begin(), grad_u.end(), 0.0);
    d0 = 1.0 / tau2;
    if (!fix_surgeon) {
      std::fill(bvec.begin(), bvec.end(), 0.0);
      for (int s = 0; s < h; ++s) ds[s] = 1.0 / kappa2;
    }
    for (int r = r_begin; r < r_end; ++r) {
      const int i = ix.order[r];
      const int s = ix.local_surgeon[r];
      const double eta = base[i] + u[0] + (fix_surgeon ? 0.0 : u[1 + s]);
      const double mu = logistic(eta);
      const double w = mu * (1.0 - mu);
      const double resid = d.y()[i] - mu;
      grad_u[0] += resid;
      d0 += w;
      if (!fix_surgeon) {
        grad_u[1 + s] += resid;
        bvec[s] += w;
        ds[s] += w;
      }
    }
    grad_u[0] -= u[0] / tau2;
    if (!fix_surgeon) {
      for (int s = 0; s < h; ++s) grad_u[1 + s] -= u[1 + s] / kappa2;
    }
    double gmax = 0.0;
    for (double g : grad_u) gmax = std::max(gmax, std::abs(g));
    if (gmax < inner_tol) {
      mode_found = true;
      break;
    }
    step = grad_u;
    if (fix_surgeon) {
      step[0] = grad_u[0] / d0;
    } else {
      arrow_solve(d0, bvec, ds, step);
    }
    double scale = 1.0;
    std::vector<double> u_new(dim_u);
    for (int halving = 0; halving < 40; ++halving) {
      for (int j = 0; j < dim_u; ++j) u_new[j] = u[j] + scale * step[j];
      const double g_new = penalized_value(u_new);
      if (g_new >= g_val - 1e-14 * std::abs(g_val)) {
        u = u_new;
        g_val = g_new;
        break;
      }
      scale *= 0.5;
    }
  }
  if (!mode_found) {
    out.failed = true;
    return out;
  }

  // Curvature at the mode (d0, bvec, ds refreshed by the last gradient pass
  // before convergence; recompute cleanly for safety).
  d0 = 1.0 / tau2;
  if (!fix_surgeon) {
    std::fill(bvec.begin(), bvec.end(), 0.0);
    for (int s = 0; s < h; ++s) ds[s] = 1.0 / kappa2;
  }
  std::vector<double> sw(h, 0.0);
  std::vector<double> swp(h, 0.0);
  Eigen::MatrixXd swx = Eigen::MatrixXd::Zero(std::max(h, 1), pt);
  Eigen::MatrixXd swpx = Eigen::MatrixXd::Zero(std::max(h, 1), pt);
  Eigen::VectorXd hres = Eigen::VectorXd::Zero(pt);
  double sw0 = 0.0, swp0 = 0.0;
  Eigen::VectorXd swx0 = Eigen::VectorXd::Zero(pt);
  Eigen::VectorXd swpx0 = Eigen::VectorXd::Zero(pt);
  Eigen::VectorXd xt(pt);
  for (int r = r_begin; r < r_end; ++r) {
    const int i = ix.order[r];
    const int s = ix.local_surgeon[r];
    const double eta = base[i] + u[0] + (fix_surgeon ? 0.0 : u[1 + s]);
    const double mu = logistic(eta);
    const double w = mu * (1.0 - mu);
    const double wp = w * (1.0 - 2.0 * mu);
    xt[0] = 1.0;
    for (int t = 1; t < pt; ++t) xt[t] = d.x()(i, t - 1);
    d0 += w;
    sw0 += w;
    swp0 += wp;
    swx0 += w * xt;
    swpx0 += wp * xt;
    hres += (d.y()[i] - mu) * xt;
    if (!fix_surgeon) {
      bvec[s] += w;
      ds[s] += w;
      sw[s] += w;
      swp[s] += wp;
      swx.row(s) += w * xt.transpose();
      swpx.row(s) += wp * xt.transpose();
    }
  }

  double schur = d0;
  double log_det_h = 0.0;
  for (int s = 0; s < h; ++s) {
    schur -= bvec[s] * bvec[s] / ds[s];
    log_det_h += std::log(ds[s]);
  }
  log_det_h += std::log(schur);
  const double log_det_d = std::log(tau2) + (fix_surgeon ? 0.0 : h * std::log(kappa2));
  out.loglik = g_val - 0.5 * log_det_d - 0.5 * log_det_h;

  if (!want_grad) return out;

  // Arrow inverse entries needed for the trace terms.
  const double hinv00 = 1.0 / schur;
  std::vector<double> hinv0s(h), hinvss(h);
  for (int s = 0; s < h; ++s) {
    hinv0s[s] = -bvec[s] / (ds[s] * schur);
    hinvss[s] = 1.0 / ds[s] + bvec[s] * bvec[s] / (ds[s] * ds[s] * schur);
  }

  out.grad = Eigen::VectorXd::Zero(n_par);
  std::vector<double> xi(dim_u), uprime(dim_u);
  for (int k = 0; k < n_par; ++k) {
    double explicit_g = 0.0;
    double dlogdet_d = 0.0;
    std::fill(xi.begin(), xi.end(), 0.0);
    if (k < pt) {
      explicit_g = hres[k];
      xi[0] = -swx0[k];
      for (int s = 0; s < h; ++s) xi[1 + s] = -swx(s, k);
    } else if (k == pt) {  // log tau2
      explicit_g = u[0] * u[0] / (2.0 * tau2);
      dlogdet_d = 1.0;
      xi[0] = u[0] / tau2;
    } else {  // log kappa2
      for (int s = 0; s < h; ++s) explicit_g += u[1 + s] * u[1 + s] / (2.0 * kappa2);
      dlogdet_d = static_cast<double>(h);
      for (int s = 0; s < h; ++s) xi[1 + s] = u[1 + s] / kappa2;
    }

    uprime = xi;
    if (fix_surgeon) {
      uprime[0] = xi[0] / d0;
    } else {
      arrow_solve(d0, bvec, ds, uprime);
    }

    // Per-cell sums of dW = W'(1-2mu) d(eta); d(eta) = x_k + u0' + u_s'.
    double trace = 0.0;
    double dh00 = (k == pt) ? -1.0 / tau2 : 0.0;
    if (fix_surgeon) {
      const double s0 = (k < pt ? swpx0[k] : 0.0) + uprime[0] * swp0;
      trace = (dh00 + s0) * (1.0 / d0);
    } else {
      double total_s = 0.0;
      for (int s = 0; s < h; ++s) {
        const double s_cell = (k < pt ? swpx(s, k) : 0.0) + (uprime[0] + uprime[1 + s]) * swp[s];
        total_s += s_cell;
        const double dhss = s_cell + (k == pt + 1 ? -1.0 / kappa2 : 0.0);
        trace += 2.0 * hinv0s[s] * s_cell + hinvss[s] * dhss;
      }
      trace += hinv00 * (dh00 + total_s);
    }
    out.grad[k] = explicit_g - 0.5 * trace - 0.5 * dlogdet_d;
  }
  return out;
}

struct LaplaceEvaluator {
  const DataSet* d;
  GlmmIndex ix;
  bool fix_surgeon = false;
  double inner_tol = 1e-10;
  mutable std::vector<std::vector<double>> u_state;  // warm starts per hospital

  explicit LaplaceEvaluator(const DataSet& data, bool fix, double tol)
      : d(&data), ix(GlmmIndex::build(data)), fix_surgeon(fix), inner_tol(tol) {
    u_state.assign(ix.hierarchy.hospitals(), {});
  }

  int n_par() const { return ix.pt + (fix_surgeon ? 1 : 2); }

  // v = (delta, log tau2 [, log kappa2])
  double evaluate(const Eigen::VectorXd& v, Eigen::VectorXd* grad) const {
    const int pt = ix.pt;
    const int m = ix.hierarchy.hospitals();
    const double tau2 = std::exp(std::max(v[pt], kLogVarFloor));
    const double kappa2 =
        fix_surgeon ? 0.0 : std::exp(std::max(v[pt + 1], kLogVarFloor));

    Eigen::VectorXd base(d->size());
    for (Eigen::Index i = 0; i < d->size(); ++i) {
      double lp = v[0];
      for (int t = 1; t < pt; ++t) lp += v[t] * d->x()(i, t - 1);
      base[i] = lp;
    }

    std::vector<double> ll(m, 0.0);
    Eigen::MatrixXd grads;
    if (grad != nullptr) grads = Eigen::MatrixXd::Zero(m, n_par());
    bool failed = false;

#pragma omp parallel for schedule(static)
    for (int z = 0; z < m; ++z) {
      HospitalResult res = hospital_laplace(*d, ix, z, base, tau2, kappa2, fix_surgeon,
                                            u_state[z], grad != nullptr, inner_tol);
      if (res.failed) {
#pragma omp critical
        failed = true;
      } else {
        ll[z] = res.loglik;
        if (grad != nullptr) grads.row(z) = res.grad;
      }
    }
    if (failed) throw ConvergenceError("inner mode-finding failed in the logistic mixed model");

    if (grad != nullptr) {
      grad->resize(n_par());
      for (int k = 0; k < n_par(); ++k) {
        std::vector<double> col(m);
        for (int z = 0; z < m; ++z) col[z] = grads(z, k);
        (*grad)[k] = pairwise_sum(col);
      }
      // Flat beyond the floor: the parameter no longer moves the model.
      if (v[pt] <= kLogVarFloor) (*grad)[pt] = 0.0;
      if (!fix_surgeon && v[pt + 1] <= kLogVarFloor) (*grad)[pt + 1] = 0.0;
    }
    return pairwise_sum(ll);
  }
};

void check_binary(const DataSet& d) {
  if (d.outcome_kind() != OutcomeKind::binary) {
    throw DataError("fit_logistic_mixed requires a binary outcome");
  }
  bool seen0 = false, seen1 = false;
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d.y()[i] == 0.0) seen0 = true;
    else seen1 = true;
  }
  if (!seen0 || !seen1) {
    throw DataError("binary outcome must include both 0 and 1 observations");
  }
}

}  // namespace

double logistic_mixed_laplace(const DataSet& d, const Eigen::VectorXd& v, Eigen::VectorXd* grad) {
  check_binary(d);
  const LaplaceEvaluator eval(d, false, 1e-12);
  if (v.size() != eval.n_par()) throw DataError("parameter vector has wrong length");
  return eval.evaluate(v, grad);
}

OutcomeParams fit_logistic_mixed(const DataSet& d, const OutcomeFitOptions& opts) {
  check_binary(d);
  LaplaceEvaluator eval(d, opts.fix_surgeon_level, opts.inner_gradient_tol);
  const int pt = eval.ix.pt;
  const int n_par = eval.n_par();

  Eigen::VectorXd v0(n_par);
  if (opts.warm_start != nullptr && opts.warm_start->link == Link::logit &&
      opts.warm_start->beta.size() == pt - 1) {
    const OutcomeParams& ws = *opts.warm_start;
    v0[0] = ws.alpha0;
    for (int t = 1; t < pt; ++t) v0[t] = ws.beta[t - 1];
    v0[pt] = std::log(std::max(ws.tau2, 1e-8));
    if (!opts.fix_surgeon_level) v0[pt + 1] = std::log(std::max(ws.kappa2, 1e-8));
  } else {
    v0.setZero();
    try {
      const GlmFit init = fit_logistic(d.x(), d.y(), 1e-8, 50);
      v0.head(pt) = init.coef;
    } catch (const ConvergenceError&) {
      // keep zeros
    }
    v0[pt] = std::log(0.5);
    if (!opts.fix_surgeon_level) v0[pt + 1] = std::log(0.5);
  }

  ObjectiveFn objective = [&](const Eigen::VectorXd& v, Eigen::VectorXd& grad) {
    return eval.evaluate(v, &grad);
  };
  BfgsOptions bopts;
  bopts.max_iterations = opts.max_outer_iterations;
  bopts.gradient_tol = opts.outer_gradient_tol;
  const BfgsResult res = bfgs_maximize(objective, v0, bopts);
  if (!res.converged) throw ConvergenceError("logistic mixed model did not converge");

  OutcomeParams params;
  params.link = Link::logit;
  params.hierarchy = eval.ix.hierarchy;
  params.alpha0 = res.x[0];
  params.beta = res.x.segment(1, pt - 1);
  params.sigma2 = std::numeric_limits<double>::quiet_NaN();
  params.tau2 = std::exp(std::max(res.x[pt], kLogVarFloor));
  params.kappa2 =
      opts.fix_surgeon_level ? 0.0 : std::exp(std::max(res.x[pt + 1], kLogVarFloor));
  params.tau2_boundary = res.x[pt] < kBoundaryLog;
  params.kappa2_boundary = !opts.fix_surgeon_level && res.x[pt + 1] < kBoundaryLog;

  // Refresh the modes at the optimum; they are the empirical Bayes
  // predictions.
  eval.evaluate(res.x, nullptr);
  const int m = params.hierarchy.hospitals();
  params.hospital_effects.resize(m);
  params.surgeon_effects = Eigen::VectorXd::Zero(params.hierarchy.cells());
  for (int z = 0; z < m; ++z) {
    params.hospital_effects[z] = eval.u_state[z][0];
    if (!opts.fix_surgeon_level) {
      for (int s = 0; s < params.hierarchy.surgeons_in(z); ++s) {
        params.surgeon_effects[params.hierarchy.cell_index(z, s)] = eval.u_state[z][1 + s];
      }
    }
  }
  if (params.tau2_boundary) {
    params.tau2 = 0.0;
    params.hospital_effects.setZero();
    params.fit_meta.warnings.push_back("tau2 estimated at boundary 0");
  }
  if (params.kappa2_boundary) {
    params.kappa2 = 0.0;
    params.surgeon_effects.setZero();
    params.fit_meta.warnings.push_back("kappa2 estimated at boundary 0");
  }
  params.fit_meta.log_likelihood = res.value;
  params.fit_meta.iterations = res.iterations;
  params.fit_meta.converged = true;
  return params;
}

}  // namespace vardecomp

#include "vardecomp/decompose.hpp"

#include <cmath>
#include <memory>
#include <vector>

#include "vardecomp/dataset.hpp"
#include "vardecomp/errors.hpp"
#include "vardecomp/math.hpp"

namespace vardecomp {

std::string to_string(DecompositionMethod method) {
  switch (method) {
    case DecompositionMethod::model_based: return "model";
    case DecompositionMethod::semi_parametric: return "semi";
    case DecompositionMethod::three_way: return "threeway";
    case DecompositionMethod::hypothetical: return "hypothetical";
  }
  return "?";
}

std::string to_string(ResidualMode mode) {
  return mode == ResidualMode::by_subtraction ? "by_subtraction" : "model_based";
}

// ---------------------------------------------------------------------------
// TargetAssignment
// ---------------------------------------------------------------------------

TargetAssignment TargetAssignment::uniform(const Hierarchy& hierarchy) {
  TargetAssignment t(Kind::uniform, hierarchy);
  const int m = hierarchy.hospitals();
  t.hospital_fn_ = [m](const Eigen::VectorXd&, std::span<double> out) {
    for (double& v : out) v = 1.0 / m;
  };
  t.surgeon_fn_ = [hierarchy](int z, const Eigen::VectorXd&, std::span<double> out) {
    const double p = 1.0 / hierarchy.surgeons_in(z);
    for (double& v : out) v = p;
  };
  return t;
}

TargetAssignment TargetAssignment::volume_preserving(const DataSet& d) {
  const Hierarchy& hier = d.hierarchy();
  const int m = hier.hospitals();
  const int q = hier.cells();
  std::vector<double> hosp_freq(m, 0.0);
  std::vector<double> cell_freq(q, 0.0);
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    hosp_freq[d.hospital_of(i)] += 1.0;
    cell_freq[d.cell_of(i)] += 1.0;
  }
  const double n = static_cast<double>(d.size());
  for (double& v : hosp_freq) v /= n;
  std::vector<std::vector<double>> surg_freq(m);
  for (int z = 0; z < m; ++z) {
    surg_freq[z].resize(hier.surgeons_in(z));
    const double hz = hosp_freq[z] * n;
    for (int s = 0; s < hier.surgeons_in(z); ++s) {
      if (hz == 0.0) throw DataError("volume-preserving target undefined for an empty hospital");
      surg_freq[z][s] = cell_freq[hier.cell_index(z, s)] / hz;
    }
  }
  TargetAssignment t(Kind::volume_preserving, hier);
  t.hospital_fn_ = [hosp_freq](const Eigen::VectorXd&, std::span<double> out) {
    for (std::size_t z = 0; z < out.size(); ++z) out[z] = hosp_freq[z];
  };
  t.surgeon_fn_ = [surg_freq](int z, const Eigen::VectorXd&, std::span<double> out) {
    for (std::size_t s = 0; s < out.size(); ++s) out[s] = surg_freq[z][s];
  };
  return t;
}

TargetAssignment TargetAssignment::observed(const AssignmentModel& model) {
  TargetAssignment t(Kind::observed, model.hierarchy());
  // Copy the fitted model so the target stays valid on its own.
  auto shared = std::make_shared<AssignmentModel>(model);
  t.hospital_fn_ = [shared](const Eigen::VectorXd& x, std::span<double> out) {
    shared->hospital_probs_into(x, out);
  };
  t.surgeon_fn_ = [shared](int z, const Eigen::VectorXd& x, std::span<double> out) {
    shared->surgeon_probs_into(z, x, out);
  };
  return t;
}

TargetAssignment TargetAssignment::custom(
    const Hierarchy& hierarchy,
    std::function<void(const Eigen::VectorXd&, std::span<double>)> hospital_fn,
    std::function<void(int, const Eigen::VectorXd&, std::span<double>)> surgeon_fn) {
  TargetAssignment t(Kind::custom, hierarchy);
  t.hospital_fn_ = std::move(hospital_fn);
  t.surgeon_fn_ = std::move(surgeon_fn);
  return t;
}

void TargetAssignment::hospital_probs_into(const Eigen::VectorXd& x, std::span<double> out) const {
  if (static_cast<int>(out.size()) != hierarchy_.hospitals()) {
    throw DataError("output span has wrong length");
  }
  hospital_fn_(x, out);
}

void TargetAssignment::surgeon_probs_into(int hospital, const Eigen::VectorXd& x,
                                          std::span<double> out) const {
  if (static_cast<int>(out.size()) != hierarchy_.surgeons_in(hospital)) {
    throw DataError("output span has wrong length");
  }
  surgeon_fn_(hospital, x, out);
}

void TargetAssignment::cell_probs_into(const Eigen::VectorXd& x, std::span<double> out) const {
  const int m = hierarchy_.hospitals();
  std::vector<double> e(m);
  hospital_fn_(x, e);
  std::vector<double> g;
  for (int z = 0; z < m; ++z) {
    const int h = hierarchy_.surgeons_in(z);
    g.resize(h);
    surgeon_fn_(z, x, std::span<double>(g.data(), h));
    const int base = hierarchy_.hospital_offset(z);
    for (int s = 0; s < h; ++s) {
      const double p = e[z] * g[s];
      if (!(p > 0.0)) {
        throw DataError("target assignment probability is zero on observed cell (" +
                        std::to_string(z + 1) + "," + std::to_string(s + 1) + ")");
      }
      out[base + s] = p;
    }
  }
}

// ---------------------------------------------------------------------------
// Grid kernels
// ---------------------------------------------------------------------------

namespace {

// Per-point pieces of the four-way estimators. With mu(z,s), joint weights
// p(z,s) and hospital means H_z = sum_s mu g(s|z):
//   weighted_mean  W   = sum_z H_z e_z
//   between_hosp   t2  = sum_z e_z (H_z - W)^2
//   between_surg   t3  = sum_z e_z sum_s g (mu - H_z)^2
//   residual       t4  = sum_z sum_s V(z,s) g e
// All inner means are accumulated as deviations from a reference value, so
// each term is nonnegative and vanishes identically when the means are
// constant (equal surgeon effects give t3 = 0 exactly, not just to rounding).
struct PointTerms {
  double w = 0.0;
  double t2 = 0.0;
  double t3 = 0.0;
  double t4 = 0.0;
};

struct PointScratch {
  std::vector<double> hospital_mean;
  std::vector<double> hospital_weight;
};

PointTerms point_terms(const Hierarchy& hier, std::span<const double> mu,
                       std::span<const double> cellp, std::span<const double> cv,
                       PointScratch& scratch) {
  PointTerms t;
  const int m = hier.hospitals();
  scratch.hospital_mean.resize(m);
  scratch.hospital_weight.resize(m);
  for (int z = 0; z < m; ++z) {
    const int base = hier.hospital_offset(z);
    const int h = hier.surgeons_in(z);
    double ez = 0.0;
    for (int s = 0; s < h; ++s) ez += cellp[base + s];
    scratch.hospital_weight[z] = ez;
    if (ez <= 0.0) {
      scratch.hospital_mean[z] = 0.0;
      continue;
    }
    const double mu_ref = mu[base];
    double dev_sum = 0.0, vz = 0.0;
    for (int s = 0; s < h; ++s) {
      const double g = cellp[base + s] / ez;
      dev_sum += (mu[base + s] - mu_ref) * g;
      vz += cv[base + s] * g;
    }
    const double hz = mu_ref + dev_sum;
    double spread = 0.0;
    for (int s = 0; s < h; ++s) {
      const double d = mu[base + s] - hz;
      spread += d * d * (cellp[base + s] / ez);
    }
    scratch.hospital_mean[z] = hz;
    t.t3 += spread * ez;
    t.t4 += vz * ez;
  }
  const double h_ref = scratch.hospital_mean[0];
  double dev_sum = 0.0;
  for (int z = 0; z < m; ++z) {
    dev_sum += (scratch.hospital_mean[z] - h_ref) * scratch.hospital_weight[z];
  }
  t.w = h_ref + dev_sum;
  for (int z = 0; z < m; ++z) {
    const double d = scratch.hospital_mean[z] - t.w;
    t.t2 += d * d * scratch.hospital_weight[z];
  }
  return t;
}

VarianceComponents assemble(double t1, double t2, double t3, double t4,
                            ResidualMode residual_mode, std::optional<double> empirical_var) {
  VarianceComponents out;
  out.case_mix = t1;
  out.between_hospital = t2;
  out.between_surgeon = t3;
  if (residual_mode == ResidualMode::by_subtraction) {
    if (!empirical_var) {
      throw DataError("residual by subtraction needs the empirical variance");
    }
    out.residual = *empirical_var - (t1 + t2 + t3);
  } else {
    out.residual = t4;
  }
  out.residual_mode = residual_mode;
  return out;
}

}  // namespace

VarianceComponents decompose_grid(const CellGrid& grid, ResidualMode residual_mode,
                                  std::optional<double> empirical_var) {
  const Hierarchy& hier = grid.hierarchy();
  const int n = grid.points();
  const int q = hier.cells();
  std::vector<double> wpoint(n), wbuf(n), t2buf(n), t3buf(n), t4buf(n), weights(n);

#pragma omp parallel
  {
    std::vector<double> mu(q), cellp(q), cv(q);
    PointScratch scratch;
#pragma omp for schedule(static)
    for (int i = 0; i < n; ++i) {
      grid.fill(i, mu, cellp, cv);
      const PointTerms t = point_terms(hier, mu, cellp, cv, scratch);
      const double wt = grid.weight(i);
      weights[i] = wt;
      wpoint[i] = t.w;
      wbuf[i] = wt * t.w;
      t2buf[i] = wt * t.t2;
      t3buf[i] = wt * t.t3;
      t4buf[i] = wt * t.t4;
    }
  }

  const double grand_mean = pairwise_sum(wbuf);
  for (int i = 0; i < n; ++i) {
    const double dev = wpoint[i] - grand_mean;
    wbuf[i] = weights[i] * dev * dev;
  }
  double t1 = pairwise_sum(wbuf);
  if (grid.equal_weights() && n > 1) t1 *= static_cast<double>(n) / (n - 1);

  return assemble(t1, pairwise_sum(t2buf), pairwise_sum(t3buf), pairwise_sum(t4buf),
                  residual_mode, empirical_var);
}

VarianceComponents decompose_grid_reference(const CellGrid& grid, ResidualMode residual_mode,
                                            std::optional<double> empirical_var) {
  const Hierarchy& hier = grid.hierarchy();
  const int n = grid.points();
  const int q = hier.cells();
  std::vector<double> mu(q), cellp(q), cv(q);
  PointScratch scratch;
  std::vector<double> w_point(n), wt(n);
  double t2 = 0.0, t3 = 0.0, t4 = 0.0, grand = 0.0;
  for (int i = 0; i < n; ++i) {
    grid.fill(i, mu, cellp, cv);
    const PointTerms t = point_terms(hier, mu, cellp, cv, scratch);
    wt[i] = grid.weight(i);
    w_point[i] = t.w;
    grand += wt[i] * t.w;
    t2 += wt[i] * t.t2;
    t3 += wt[i] * t.t3;
    t4 += wt[i] * t.t4;
  }
  double t1 = 0.0;
  for (int i = 0; i < n; ++i) t1 += wt[i] * (w_point[i] - grand) * (w_point[i] - grand);
  if (grid.equal_weights() && n > 1) t1 *= static_cast<double>(n) / (n - 1);
  return assemble(t1, t2, t3, t4, residual_mode, empirical_var);
}

// ---------------------------------------------------------------------------
// Grids over fitted models
// ---------------------------------------------------------------------------

namespace {

void check_compatible(const DataSet& d, const OutcomeParams& theta) {
  if (!d.hierarchy().same_shape(theta.hierarchy)) {
    throw DataError("hierarchy mismatch between dataset and outcome model");
  }
  if (theta.beta.size() != d.covariate_dim()) {
    throw DataError("covariate dimension mismatch between dataset and outcome model");
  }
}

// Cell means/variances from a fitted outcome model over the dataset's
// empirical covariate distribution.
class FittedGridBase : public CellGrid {
 public:
  FittedGridBase(const DataSet& d, const OutcomeParams& theta) : d_(d), theta_(theta) {
    check_compatible(d, theta);
    const Hierarchy& hier = d.hierarchy();
    cell_base_.resize(hier.cells());
    for (int c = 0; c < hier.cells(); ++c) {
      cell_base_[c] = theta.alpha0 + theta.hospital_effects[hier.cell_hospital(c)] +
                      theta.surgeon_effects[c];
    }
  }

  const Hierarchy& hierarchy() const override { return d_.hierarchy(); }
  int points() const override { return static_cast<int>(d_.size()); }
  bool equal_weights() const override { return true; }
  double weight(int) const override { return 1.0 / static_cast<double>(d_.size()); }

 protected:
  void fill_outcome(int i, std::span<double> mu, std::span<double> cv) const {
    const double bx = theta_.beta.dot(d_.x().row(i));
    const int q = d_.hierarchy().cells();
    if (theta_.link == Link::logit) {
      for (int c = 0; c < q; ++c) {
        const double p = logistic(cell_base_[c] + bx);
        mu[c] = p;
        cv[c] = p * (1.0 - p);
      }
    } else {
      for (int c = 0; c < q; ++c) {
        mu[c] = cell_base_[c] + bx;
        cv[c] = theta_.sigma2;
      }
    }
  }

  const DataSet& d_;
  const OutcomeParams& theta_;
  std::vector<double> cell_base_;
};

class FittedGrid final : public FittedGridBase {
 public:
  FittedGrid(const DataSet& d, const OutcomeParams& theta, const AssignmentModel& eta)
      : FittedGridBase(d, theta), eta_(eta) {
    if (!d.hierarchy().same_shape(eta.hierarchy())) {
      throw DataError("hierarchy mismatch between dataset and assignment model");
    }
    if (eta.covariate_dim() != d.covariate_dim()) {
      throw DataError("covariate dimension mismatch between dataset and assignment model");
    }
  }

  void fill(int i, std::span<double> mu, std::span<double> cellp,
            std::span<double> cv) const override {
    fill_outcome(i, mu, cv);
    eta_.cell_probs_into(d_.x().row(i), cellp);
  }

 private:
  const AssignmentModel& eta_;
};

class HypotheticalGrid final : public FittedGridBase {
 public:
  HypotheticalGrid(const DataSet& d, const OutcomeParams& theta, const TargetAssignment& target)
      : FittedGridBase(d, theta), target_(target) {
    if (!d.hierarchy().same_shape(target.hierarchy())) {
      throw DataError("hierarchy mismatch between dataset and target assignment");
    }
  }

  void fill(int i, std::span<double> mu, std::span<double> cellp,
            std::span<double> cv) const override {
    fill_outcome(i, mu, cv);
    target_.cell_probs_into(d_.x().row(i), cellp);
  }

 private:
  const TargetAssignment& target_;
};

}  // namespace

VarianceComponents decompose_model_based(const DataSet& d, const OutcomeParams& theta,
                                         const AssignmentModel& eta, ResidualMode residual_mode) {
  const FittedGrid grid(d, theta, eta);
  std::optional<double> ev;
  if (residual_mode == ResidualMode::by_subtraction) ev = empirical_variance(d);
  VarianceComponents out = decompose_grid(grid, residual_mode, ev);
  out.method = DecompositionMethod::model_based;
  return out;
}

VarianceComponents decompose_hypothetical(const DataSet& d, const OutcomeParams& theta,
                                          const TargetAssignment& target) {
  const HypotheticalGrid grid(d, theta, target);
  VarianceComponents out = decompose_grid(grid, ResidualMode::model_based);
  out.method = DecompositionMethod::hypothetical;
  return out;
}

// ---------------------------------------------------------------------------
// Three-way legacy decomposition. Evaluated from its own per-point kernel in
// the centered hospital-level form so the consistency with the four-way path
// is a genuine numerical check rather than a reuse of the same sums.
// ---------------------------------------------------------------------------

VarianceComponents decompose_three_way(const DataSet& d, const OutcomeParams& theta,
                                       const AssignmentModel& eta, ResidualMode residual_mode) {
  check_compatible(d, theta);
  if (!d.hierarchy().same_shape(eta.hierarchy())) {
    throw DataError("hierarchy mismatch between dataset and assignment model");
  }
  const Hierarchy& hier = d.hierarchy();
  const int n = static_cast<int>(d.size());
  const int m = hier.hospitals();
  const int q = hier.cells();

  std::vector<double> cell_base(q);
  for (int c = 0; c < q; ++c) {
    cell_base[c] = theta.alpha0 + theta.hospital_effects[hier.cell_hospital(c)] +
                   theta.surgeon_effects[c];
  }

  std::vector<double> wbuf(n), t2buf(n), resbuf(n);
#pragma omp parallel
  {
    std::vector<double> cellp(q), hmean(m), hvar(m), evec(m);
#pragma omp for schedule(static)
    for (int i = 0; i < n; ++i) {
      const double bx = theta.beta.dot(d.x().row(i));
      eta.cell_probs_into(d.x().row(i), cellp);
      // Hospital-level potential-outcome mean E(Y(z)|x) and variance
      // V(Y(z)|x) = Var_s(mu) + E_s V(Y|z,s,x).
      for (int z = 0; z < m; ++z) {
        const int base = hier.hospital_offset(z);
        const int h = hier.surgeons_in(z);
        double ez = 0.0;
        for (int s = 0; s < h; ++s) ez += cellp[base + s];
        evec[z] = ez;
        auto mu_at = [&](int s) {
          return theta.link == Link::logit ? logistic(cell_base[base + s] + bx)
                                           : cell_base[base + s] + bx;
        };
        const double mu_ref = mu_at(0);
        double dev_sum = 0.0, condv = 0.0;
        for (int s = 0; s < h; ++s) {
          const double g = ez > 0.0 ? cellp[base + s] / ez : 0.0;
          const double mu = mu_at(s);
          dev_sum += (mu - mu_ref) * g;
          condv += (theta.link == Link::logit ? mu * (1.0 - mu) : theta.sigma2) * g;
        }
        const double mean = mu_ref + dev_sum;
        double spread = 0.0;
        for (int s = 0; s < h; ++s) {
          const double g = ez > 0.0 ? cellp[base + s] / ez : 0.0;
          const double d = mu_at(s) - mean;
          spread += d * d * g;
        }
        hmean[z] = mean;
        hvar[z] = spread + condv;
      }
      const double h_ref = hmean[0];
      double dev_sum = 0.0;
      for (int z = 0; z < m; ++z) dev_sum += (hmean[z] - h_ref) * evec[z];
      const double w = h_ref + dev_sum;
      double t2 = 0.0, res = 0.0;
      for (int z = 0; z < m; ++z) {
        t2 += (hmean[z] - w) * (hmean[z] - w) * evec[z];
        res += hvar[z] * evec[z];
      }
      wbuf[i] = w;
      t2buf[i] = t2;
      resbuf[i] = res;
    }
  }

  const double grand = pairwise_mean(wbuf);
  std::vector<double> sq(n);
  for (int i = 0; i < n; ++i) sq[i] = (wbuf[i] - grand) * (wbuf[i] - grand);

  VarianceComponents out;
  out.method = DecompositionMethod::three_way;
  out.residual_mode = residual_mode;
  out.has_surgeon_component = false;
  out.case_mix = pairwise_sum(sq) / std::max(1, n - 1);
  out.between_hospital = pairwise_mean(t2buf);
  out.between_surgeon = 0.0;
  if (residual_mode == ResidualMode::by_subtraction) {
    out.residual = empirical_variance(d) - out.case_mix - out.between_hospital;
  } else {
    out.residual = pairwise_mean(resbuf);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Semi-parametric path
// ---------------------------------------------------------------------------

VarianceComponents decompose_semiparametric_from_predictions(
    const DataSet& d, const Eigen::VectorXd& pred_x, const Eigen::VectorXd& pred_zx,
    const Eigen::VectorXd& pred_szx, ResidualMode residual_mode,
    const Eigen::VectorXd* cond_var_szx) {
  const Eigen::Index n = d.size();
  if (pred_x.size() != n || pred_zx.size() != n || pred_szx.size() != n) {
    throw DataError("prediction vectors must have one entry per record");
  }
  VarianceComponents out;
  out.method = DecompositionMethod::semi_parametric;
  out.residual_mode = residual_mode;
  out.case_mix = sample_variance(std::span<const double>(pred_x.data(), n));

  std::vector<double> buf(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    buf[i] = (pred_zx[i] - pred_x[i]) * (pred_zx[i] - pred_x[i]);
  }
  out.between_hospital = pairwise_mean(buf);
  for (Eigen::Index i = 0; i < n; ++i) {
    buf[i] = (pred_szx[i] - pred_zx[i]) * (pred_szx[i] - pred_zx[i]);
  }
  out.between_surgeon = pairwise_mean(buf);

  if (residual_mode == ResidualMode::by_subtraction) {
    out.residual =
        empirical_variance(d) - (out.case_mix + out.between_hospital + out.between_surgeon);
  } else {
    if (cond_var_szx == nullptr || cond_var_szx->size() != n) {
      throw DataError("model-based semi-parametric residual needs per-record conditional variances");
    }
    for (Eigen::Index i = 0; i < n; ++i) buf[i] = (*cond_var_szx)[i];
    out.residual = pairwise_mean(buf);
  }
  return out;
}

VarianceComponents decompose_semiparametric(const DataSet& d, const MarginalModels& mm,
                                            ResidualMode residual_mode) {
  const Eigen::Index n = d.size();
  if (!d.hierarchy().same_shape(mm.model_szx->hierarchy)) {
    throw DataError("hierarchy mismatch between dataset and marginal models");
  }
  Eigen::VectorXd pred_x(n), pred_zx(n), pred_szx(n), cv(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Eigen::VectorXd x = d.x().row(i);
    pred_x[i] = mm.predict_x(x);
    pred_zx[i] = mm.predict_zx(d.hospital_of(i), x);
    pred_szx[i] = mm.predict_szx(d.hospital_of(i), d.surgeon_of(i), x);
    cv[i] = conditional_variance(*mm.model_szx, d.hospital_of(i), d.surgeon_of(i), x);
  }
  return decompose_semiparametric_from_predictions(d, pred_x, pred_zx, pred_szx, residual_mode,
                                                   &cv);
}

double icc_summary(const OutcomeParams& theta) {
  if (theta.link != Link::identity) {
    throw DataError(
        "icc_summary is defined for the identity link only; the logit link has no "
        "residual variance scale in this decomposition (no latent-scale convention is applied)");
  }
  const double denom = theta.tau2 + theta.kappa2 + theta.sigma2;
  if (denom <= 0.0) return 0.0;
  return (theta.tau2 + theta.kappa2) / denom;
}

}  // namespace vardecomp

#include "vardecomp/assignment.hpp"

#include <cmath>
#include <string>

#include "vardecomp/errors.hpp"

namespace vardecomp {

// ---------------------------------------------------------------------------
// AssignmentModel
// ---------------------------------------------------------------------------

AssignmentModel::AssignmentModel(Kind kind, Hierarchy hierarchy, int covariate_dim)
    : kind_(kind), hierarchy_(std::move(hierarchy)), p_(covariate_dim) {
  const int q = hierarchy_.cells();
  const int m = hierarchy_.hospitals();
  if (kind_ == Kind::joint) {
    joint_coef_ = Eigen::MatrixXd::Zero(q - 1, p_ + 1);
  } else {
    hospital_coef_ = Eigen::MatrixXd::Zero(m - 1, p_ + 1);
    surgeon_coef_.resize(m);
    for (int z = 0; z < m; ++z) {
      surgeon_coef_[z] = Eigen::MatrixXd::Zero(hierarchy_.surgeons_in(z) - 1, p_ + 1);
    }
  }
}

void AssignmentModel::set_nested_coef(Eigen::MatrixXd hospital,
                                      std::vector<Eigen::MatrixXd> surgeon) {
  hospital_coef_ = std::move(hospital);
  surgeon_coef_ = std::move(surgeon);
}

int AssignmentModel::parameter_count() const {
  return (hierarchy_.cells() - 1) * (p_ + 1);
}

namespace {

// Stable softmax over linear predictors with class 0 pinned to 0. coef has
// one row per non-reference class.
void softmax_into(const Eigen::MatrixXd& coef, const Eigen::VectorXd& x,
                  std::span<double> out) {
  const int n_classes = static_cast<int>(coef.rows()) + 1;
  out[0] = 0.0;
  double max_lp = 0.0;
  for (int j = 1; j < n_classes; ++j) {
    double lp = coef(j - 1, 0);
    for (int t = 0; t < x.size(); ++t) lp += coef(j - 1, t + 1) * x[t];
    out[j] = lp;
    if (lp > max_lp) max_lp = lp;
  }
  double denom = 0.0;
  for (int j = 0; j < n_classes; ++j) {
    out[j] = std::exp(out[j] - max_lp);
    denom += out[j];
  }
  for (int j = 0; j < n_classes; ++j) out[j] /= denom;
}

}  // namespace

void AssignmentModel::cell_probs_into(const Eigen::VectorXd& x, std::span<double> out) const {
  if (x.size() != p_) throw DataError("covariate vector has wrong length");
  const int q = hierarchy_.cells();
  if (static_cast<int>(out.size()) != q) throw DataError("output span has wrong length");
  if (kind_ == Kind::joint) {
    softmax_into(joint_coef_, x, out);
    return;
  }
  const int m = hierarchy_.hospitals();
  std::vector<double> e(m);
  hospital_probs_into(x, e);
  std::vector<double> g;
  for (int z = 0; z < m; ++z) {
    const int h = hierarchy_.surgeons_in(z);
    g.resize(h);
    surgeon_probs_into(z, x, g);
    const int base = hierarchy_.hospital_offset(z);
    for (int s = 0; s < h; ++s) out[base + s] = e[z] * g[s];
  }
}

Eigen::VectorXd AssignmentModel::cell_probs(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(hierarchy_.cells());
  cell_probs_into(x, std::span<double>(out.data(), out.size()));
  return out;
}

void AssignmentModel::hospital_probs_into(const Eigen::VectorXd& x, std::span<double> out) const {
  const int m = hierarchy_.hospitals();
  if (static_cast<int>(out.size()) != m) throw DataError("output span has wrong length");
  if (kind_ == Kind::nested) {
    if (x.size() != p_) throw DataError("covariate vector has wrong length");
    if (m == 1) {
      out[0] = 1.0;
      return;
    }
    softmax_into(hospital_coef_, x, out);
    return;
  }
  std::vector<double> cellp(hierarchy_.cells());
  cell_probs_into(x, cellp);
  for (int z = 0; z < m; ++z) {
    double total = 0.0;
    const int base = hierarchy_.hospital_offset(z);
    for (int s = 0; s < hierarchy_.surgeons_in(z); ++s) total += cellp[base + s];
    out[z] = total;
  }
}

Eigen::VectorXd AssignmentModel::hospital_probs(const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(hierarchy_.hospitals());
  hospital_probs_into(x, std::span<double>(out.data(), out.size()));
  return out;
}

void AssignmentModel::surgeon_probs_into(int hospital, const Eigen::VectorXd& x,
                                         std::span<double> out) const {
  if (hospital < 0 || hospital >= hierarchy_.hospitals()) throw DataError("invalid hospital id");
  const int h = hierarchy_.surgeons_in(hospital);
  if (static_cast<int>(out.size()) != h) throw DataError("output span has wrong length");
  if (kind_ == Kind::nested) {
    if (x.size() != p_) throw DataError("covariate vector has wrong length");
    if (h == 1) {
      out[0] = 1.0;
      return;
    }
    softmax_into(surgeon_coef_[hospital], x, out);
    return;
  }
  std::vector<double> cellp(hierarchy_.cells());
  cell_probs_into(x, cellp);
  const int base = hierarchy_.hospital_offset(hospital);
  double total = 0.0;
  for (int s = 0; s < h; ++s) total += cellp[base + s];
  for (int s = 0; s < h; ++s) out[s] = cellp[base + s] / total;
}

Eigen::VectorXd AssignmentModel::surgeon_probs(int hospital, const Eigen::VectorXd& x) const {
  Eigen::VectorXd out(hierarchy_.surgeons_in(hospital));
  surgeon_probs_into(hospital, x, std::span<double>(out.data(), out.size()));
  return out;
}

Eigen::VectorXd AssignmentModel::flatten() const {
  Eigen::VectorXd packed(parameter_count());
  Eigen::Index pos = 0;
  auto pack_rows = [&](const Eigen::MatrixXd& block) {
    for (Eigen::Index r = 0; r < block.rows(); ++r) {
      packed.segment(pos, block.cols()) = block.row(r);
      pos += block.cols();
    }
  };
  if (kind_ == Kind::joint) {
    pack_rows(joint_coef_);
  } else {
    pack_rows(hospital_coef_);
    for (const auto& block : surgeon_coef_) pack_rows(block);
  }
  return packed;
}

AssignmentModel AssignmentModel::with_parameters(const Eigen::VectorXd& packed) const {
  if (packed.size() != parameter_count()) throw DataError("packed parameter vector has wrong length");
  AssignmentModel out(kind_, hierarchy_, p_);
  Eigen::Index pos = 0;
  auto unpack_rows = [&](Eigen::MatrixXd& block) {
    for (Eigen::Index r = 0; r < block.rows(); ++r) {
      block.row(r) = packed.segment(pos, block.cols());
      pos += block.cols();
    }
  };
  if (kind_ == Kind::joint) {
    unpack_rows(out.joint_coef_);
  } else {
    unpack_rows(out.hospital_coef_);
    for (auto& block : out.surgeon_coef_) unpack_rows(block);
  }
  out.meta_ = meta_;
  out.meta_.warnings.push_back("parameters replaced by external draw");
  return out;
}

// ---------------------------------------------------------------------------
// Multinomial Newton solver
// ---------------------------------------------------------------------------

namespace {

struct MultinomialFit {
  Eigen::MatrixXd coef;  // (classes-1) x (p+1)
  Eigen::MatrixXd vcov;
  FitMeta meta;
};

// Newton-Raphson on the multinomial log-likelihood with class 0 as reference.
// class_label(i) in [0, n_classes); rows(i) indexes the records to use.
MultinomialFit fit_multinomial_core(const Eigen::MatrixXd& x,
                                    const std::vector<int>& rows,
                                    const std::vector<int>& class_label,
                                    int n_classes,
                                    const MultinomialFitOptions& opts,
                                    const std::function<std::string(int, int)>& describe) {
  const int p = static_cast<int>(x.cols());
  const int pt = p + 1;
  const int k = (n_classes - 1) * pt;  // free parameters
  const std::size_t n = rows.size();

  MultinomialFit fit;
  fit.coef = Eigen::MatrixXd::Zero(n_classes - 1, pt);

  std::vector<double> probs(n_classes);
  Eigen::VectorXd xtilde(pt);
  Eigen::VectorXd grad(k);
  Eigen::MatrixXd hess(k, k);

  auto loglik = [&](const Eigen::MatrixXd& coef) {
    double ll = 0.0;
    for (std::size_t r = 0; r < n; ++r) {
      const int i = rows[r];
      double max_lp = 0.0;
      probs[0] = 0.0;
      for (int j = 1; j < n_classes; ++j) {
        double lp = coef(j - 1, 0);
        for (int t = 0; t < p; ++t) lp += coef(j - 1, t + 1) * x(i, t);
        probs[j] = lp;
        if (lp > max_lp) max_lp = lp;
      }
      double denom = 0.0;
      for (int j = 0; j < n_classes; ++j) denom += std::exp(probs[j] - max_lp);
      ll += probs[class_label[i]] - max_lp - std::log(denom);
    }
    if (opts.ridge > 0.0) ll -= 0.5 * opts.ridge * coef.squaredNorm();
    return ll;
  };

  double ll = loglik(fit.coef);
  bool converged = false;
  int iterations = 0;

  for (int iter = 0; iter < opts.max_iterations; ++iter) {
    // Score and observed information.
    grad.setZero();
    hess.setZero();
    for (std::size_t r = 0; r < n; ++r) {
      const int i = rows[r];
      xtilde[0] = 1.0;
      for (int t = 0; t < p; ++t) xtilde[t + 1] = x(i, t);
      double max_lp = 0.0;
      probs[0] = 0.0;
      for (int j = 1; j < n_classes; ++j) {
        probs[j] = fit.coef.row(j - 1).dot(xtilde);
        if (probs[j] > max_lp) max_lp = probs[j];
      }
      double denom = 0.0;
      for (int j = 0; j < n_classes; ++j) {
        probs[j] = std::exp(probs[j] - max_lp);
        denom += probs[j];
      }
      for (int j = 0; j < n_classes; ++j) probs[j] /= denom;

      const int label = class_label[i];
      for (int j = 1; j < n_classes; ++j) {
        const double resid = (label == j ? 1.0 : 0.0) - probs[j];
        grad.segment((j - 1) * pt, pt) += resid * xtilde;
        for (int l = j; l < n_classes; ++l) {
          const double w = probs[j] * ((j == l ? 1.0 : 0.0) - probs[l]);
          hess.block((j - 1) * pt, (l - 1) * pt, pt, pt).noalias() +=
              w * xtilde * xtilde.transpose();
        }
      }
    }
    hess.triangularView<Eigen::StrictlyLower>() = hess.transpose();
    if (opts.ridge > 0.0) {
      Eigen::Map<const Eigen::VectorXd> flat(fit.coef.data(), fit.coef.size());
      // coef is stored column-major; rebuild the row-major flat view.
      for (int j = 1; j < n_classes; ++j) {
        grad.segment((j - 1) * pt, pt) -= opts.ridge * fit.coef.row(j - 1).transpose();
      }
      hess.diagonal().array() += opts.ridge;
    }

    if (grad.lpNorm<Eigen::Infinity>() < opts.gradient_tol) {
      converged = true;
      iterations = iter;
      break;
    }

    Eigen::VectorXd step = hess.ldlt().solve(grad);
    double scale = 1.0;
    Eigen::MatrixXd coef_new = fit.coef;
    for (int j = 1; j < n_classes; ++j) {
      coef_new.row(j - 1) += scale * step.segment((j - 1) * pt, pt).transpose();
    }
    double ll_new = loglik(coef_new);
    int halvings = 0;
    while (!(ll_new >= ll) && halvings < 40) {
      scale *= 0.5;
      coef_new = fit.coef;
      for (int j = 1; j < n_classes; ++j) {
        coef_new.row(j - 1) += scale * step.segment((j - 1) * pt, pt).transpose();
      }
      ll_new = loglik(coef_new);
      ++halvings;
    }
    fit.coef = std::move(coef_new);
    ll = ll_new;
    iterations = iter + 1;

    // Separation watch: saturating coefficients mean the likelihood is
    // unbounded along some direction.
    for (int j = 1; j < n_classes; ++j) {
      for (int t = 0; t < pt; ++t) {
        if (std::abs(fit.coef(j - 1, t)) > opts.separation_threshold) {
          throw ConvergenceError("complete separation detected: " + describe(j, t) +
                                 " diverged beyond |" +
                                 std::to_string(opts.separation_threshold) + "|");
        }
      }
    }
  }

  if (!converged) {
    throw ConvergenceError("multinomial fit did not converge in " +
                           std::to_string(opts.max_iterations) + " iterations");
  }

  // vcov = inverse observed information at the optimum (information was just
  // assembled for the convergence check).
  fit.vcov = hess.ldlt().solve(Eigen::MatrixXd::Identity(k, k));
  fit.meta.log_likelihood = ll;
  fit.meta.iterations = iterations;
  fit.meta.converged = true;
  return fit;
}

std::vector<int> all_rows(Eigen::Index n) {
  std::vector<int> rows(n);
  for (Eigen::Index i = 0; i < n; ++i) rows[i] = static_cast<int>(i);
  return rows;
}

void check_cells_observed(const DataSet& d) {
  std::vector<long> counts(d.hierarchy().cells(), 0);
  for (Eigen::Index i = 0; i < d.size(); ++i) ++counts[d.cell_of(i)];
  for (int c = 0; c < d.hierarchy().cells(); ++c) {
    if (counts[c] == 0) {
      throw DataError("cell (" + std::to_string(d.hierarchy().cell_hospital(c) + 1) + "," +
                      std::to_string(d.hierarchy().cell_surgeon(c) + 1) +
                      ") has no observations");
    }
  }
}

std::string covariate_name(const DataSet& d, int t) {
  return t == 0 ? std::string("intercept") : d.covariate_names()[t - 1];
}

}  // namespace

AssignmentModel fit_joint_multinomial(const DataSet& d, const MultinomialFitOptions& opts) {
  const Hierarchy& hier = d.hierarchy();
  const int q = hier.cells();
  if (q < 2) throw DataError("joint multinomial needs at least two cells");
  check_cells_observed(d);

  std::vector<int> labels(d.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) labels[i] = d.cell_of(i);

  auto describe = [&](int j, int t) {
    return "cell (" + std::to_string(hier.cell_hospital(j) + 1) + "," +
           std::to_string(hier.cell_surgeon(j) + 1) + "), " + covariate_name(d, t);
  };
  MultinomialFit core = fit_multinomial_core(d.x(), all_rows(d.size()), labels, q, opts, describe);

  AssignmentModel model(AssignmentModel::Kind::joint, hier, d.covariate_dim());
  model.set_joint_coef(std::move(core.coef));
  model.set_vcov(std::move(core.vcov));
  model.set_fit_meta(std::move(core.meta));
  return model;
}

AssignmentModel fit_nested_multinomial(const DataSet& d, const MultinomialFitOptions& opts) {
  const Hierarchy& hier = d.hierarchy();
  const int m = hier.hospitals();
  const int q = hier.cells();
  if (q < 2) throw DataError("nested multinomial needs at least two cells");
  check_cells_observed(d);

  const int pt = d.covariate_dim() + 1;
  AssignmentModel model(AssignmentModel::Kind::nested, hier, d.covariate_dim());
  Eigen::MatrixXd vcov = Eigen::MatrixXd::Zero((q - 1) * pt, (q - 1) * pt);
  FitMeta meta;
  meta.converged = true;

  Eigen::MatrixXd hospital_coef = Eigen::MatrixXd::Zero(m - 1, pt);
  Eigen::Index vpos = 0;
  if (m > 1) {
    std::vector<int> labels(d.size());
    for (Eigen::Index i = 0; i < d.size(); ++i) labels[i] = d.hospital_of(i);
    auto describe = [&](int j, int t) {
      return "hospital " + std::to_string(j + 1) + ", " + covariate_name(d, t);
    };
    MultinomialFit core =
        fit_multinomial_core(d.x(), all_rows(d.size()), labels, m, opts, describe);
    hospital_coef = std::move(core.coef);
    const Eigen::Index dim = (m - 1) * pt;
    vcov.block(0, 0, dim, dim) = core.vcov;
    vpos = dim;
    meta.log_likelihood += core.meta.log_likelihood;
    meta.iterations = std::max(meta.iterations, core.meta.iterations);
  }

  std::vector<Eigen::MatrixXd> surgeon_coef(m);
  for (int z = 0; z < m; ++z) {
    const int h = hier.surgeons_in(z);
    surgeon_coef[z] = Eigen::MatrixXd::Zero(h - 1, pt);
    if (h == 1) continue;  // degenerate sub-model, g = 1, no parameters
    std::vector<int> rows;
    std::vector<int> labels(d.size(), 0);
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      if (d.hospital_of(i) == z) {
        rows.push_back(static_cast<int>(i));
        labels[i] = d.surgeon_of(i);
      }
    }
    auto describe = [&](int j, int t) {
      return "hospital " + std::to_string(z + 1) + " surgeon " + std::to_string(j + 1) + ", " +
             covariate_name(d, t);
    };
    MultinomialFit core;
    try {
      core = fit_multinomial_core(d.x(), rows, labels, h, opts, describe);
    } catch (const ConvergenceError& err) {
      throw ConvergenceError("surgeon sub-model for hospital " + std::to_string(z + 1) + ": " +
                             err.what());
    }
    surgeon_coef[z] = std::move(core.coef);
    const Eigen::Index dim = (h - 1) * pt;
    vcov.block(vpos, vpos, dim, dim) = core.vcov;
    vpos += dim;
    meta.log_likelihood += core.meta.log_likelihood;
    meta.iterations = std::max(meta.iterations, core.meta.iterations);
  }

  model.set_nested_coef(std::move(hospital_coef), std::move(surgeon_coef));
  model.set_vcov(std::move(vcov));
  model.set_fit_meta(std::move(meta));
  return model;
}

}  // namespace vardecomp

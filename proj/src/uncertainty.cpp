#include "vardecomp/uncertainty.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "vardecomp/dataset.hpp"
#include "vardecomp/errors.hpp"
#include "vardecomp/math.hpp"
#include "vardecomp/rng.hpp"

namespace vardecomp {

std::string ComponentDraws::to_csv() const {
  std::ostringstream out;
  out << "replicate,omega1,omega2,omega3,omega4\n";
  char buf[64];
  for (Eigen::Index r = 0; r < draws.rows(); ++r) {
    out << (r + 1);
    for (int j = 0; j < 4; ++j) {
      std::snprintf(buf, sizeof(buf), ",%.17g", draws(r, j));
      out << buf;
    }
    out << '\n';
  }
  return out.str();
}

// ---------------------------------------------------------------------------
// Normal approximation for the assignment parameters
// ---------------------------------------------------------------------------

namespace {

Eigen::MatrixXd symmetric_sqrt(const Eigen::MatrixXd& vcov, bool* floored) {
  Eigen::MatrixXd sym = 0.5 * (vcov + vcov.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw DataError("vcov eigendecomposition failed");
  Eigen::VectorXd values = eig.eigenvalues();
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  bool any_negative = false;
  for (Eigen::Index j = 0; j < values.size(); ++j) {
    if (values[j] < 0.0) {
      if (values[j] < -1e-8 * scale) any_negative = true;
      values[j] = 0.0;
    }
  }
  if (floored != nullptr) *floored = any_negative;
  return eig.eigenvectors() * values.cwiseSqrt().asDiagonal() * eig.eigenvectors().transpose();
}

}  // namespace

std::vector<Eigen::VectorXd> sample_eta(const AssignmentModel& eta, int count,
                                        std::uint64_t seed) {
  const Eigen::VectorXd center = eta.flatten();
  if (eta.vcov().rows() != center.size() || eta.vcov().cols() != center.size()) {
    throw DataError("vcov dimension does not match the parameter count");
  }
  const Eigen::MatrixXd root = symmetric_sqrt(eta.vcov(), nullptr);
  std::vector<Eigen::VectorXd> draws;
  draws.reserve(count);
  for (int r = 0; r < count; ++r) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(r));
    Eigen::VectorXd z(center.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = rng.normal();
    draws.push_back(center + root * z);
  }
  return draws;
}

// ---------------------------------------------------------------------------
// Parametric bootstrap for the outcome parameters
// ---------------------------------------------------------------------------

BootstrapResult bootstrap_theta(const DataSet& d, const OutcomeParams& theta, int count,
                                std::uint64_t seed, const BootstrapOptions& opts) {
  if (!d.hierarchy().same_shape(theta.hierarchy)) {
    throw DataError("hierarchy mismatch between dataset and outcome model");
  }
  const Hierarchy& hier = d.hierarchy();
  const int m = hier.hospitals();
  const int q = hier.cells();
  const bool binary = theta.link == Link::logit;

  BootstrapResult result;
  result.replicates.resize(count);

  OutcomeFitOptions fit_opts = opts.fit;
  fit_opts.warm_start = &theta;

  const double tau_sd = std::sqrt(std::max(theta.tau2, 0.0));
  const double kappa_sd = std::sqrt(std::max(theta.kappa2, 0.0));
  const double sigma_sd = binary ? 0.0 : std::sqrt(std::max(theta.sigma2, 0.0));

#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < count; ++r) {
    Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(r));
    Eigen::VectorXd a(m), c(q);
    if (opts.redraw_effects) {
      for (int z = 0; z < m; ++z) a[z] = tau_sd * rng.normal();
      for (int j = 0; j < q; ++j) c[j] = kappa_sd * rng.normal();
    } else {
      a = theta.hospital_effects;
      c = theta.surgeon_effects;
    }
    Eigen::VectorXd y_new(d.size());
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      const double lp =
          theta.alpha0 + a[d.hospital_of(i)] + c[d.cell_of(i)] + theta.beta.dot(d.x().row(i));
      if (binary) {
        y_new[i] = rng.bernoulli(logistic(lp)) ? 1.0 : 0.0;
      } else {
        y_new[i] = lp + sigma_sd * rng.normal();
      }
    }
    try {
      const DataSet replicate =
          d.with_outcome(std::move(y_new), binary ? OutcomeKind::binary : OutcomeKind::continuous);
      result.replicates[r] =
          binary ? fit_logistic_mixed(replicate, fit_opts) : fit_linear_mixed(replicate, fit_opts);
    } catch (const std::exception&) {
      result.replicates[r] = std::nullopt;
    }
  }

  for (const auto& rep : result.replicates) {
    if (!rep) ++result.failures;
  }
  if (count > 0 &&
      static_cast<double>(result.failures) > opts.max_failure_fraction * count) {
    throw ConvergenceError("bootstrap aborted: " + std::to_string(result.failures) + " of " +
                           std::to_string(count) + " replicate refits failed");
  }
  return result;
}

// ---------------------------------------------------------------------------
// Posterior factorization: f(theta | data) f(eta | data)
// ---------------------------------------------------------------------------

PosteriorResult component_posterior(const DataSet& d, const OutcomeParams& theta,
                                    const AssignmentModel& eta, int count, std::uint64_t seed,
                                    const PosteriorOptions& opts) {
  PosteriorResult result;
  result.point = decompose_model_based(d, theta, eta, opts.residual_mode);

  // Distinct sub-seeds keep the two posterior factors independent.
  Rng mix(seed);
  const std::uint64_t theta_seed = mix.next_u64();
  const std::uint64_t eta_seed = mix.next_u64();

  const BootstrapResult boots = bootstrap_theta(d, theta, count, theta_seed, opts.bootstrap);
  result.failed_replicates = boots.failures;

  const Eigen::VectorXd center = eta.flatten();
  bool floored = false;
  const Eigen::MatrixXd root = symmetric_sqrt(eta.vcov(), &floored);
  result.vcov_floored = floored;

  const std::optional<double> ev =
      opts.residual_mode == ResidualMode::by_subtraction
          ? std::optional<double>(empirical_variance(d))
          : std::nullopt;

  std::vector<int> kept;
  for (int r = 0; r < count; ++r) {
    if (boots.replicates[r]) kept.push_back(r);
  }
  const int n_kept = static_cast<int>(kept.size());
  Eigen::MatrixXd draws(n_kept, 4);
  std::vector<std::uint8_t> neg_flag(n_kept, 0);

#pragma omp parallel for schedule(dynamic)
  for (int idx = 0; idx < n_kept; ++idx) {
    const int r = kept[idx];
    Rng rng = Rng::stream(eta_seed, static_cast<std::uint64_t>(r));
    Eigen::VectorXd z(center.size());
    for (Eigen::Index j = 0; j < z.size(); ++j) z[j] = rng.normal();
    const AssignmentModel eta_draw = eta.with_parameters(center + root * z);
    const VarianceComponents comp =
        decompose_model_based(d, *boots.replicates[r], eta_draw, opts.residual_mode);
    draws(idx, 0) = comp.case_mix;
    draws(idx, 1) = comp.between_hospital;
    draws(idx, 2) = comp.between_surgeon;
    draws(idx, 3) = comp.residual;
    if (comp.residual < 0.0) neg_flag[idx] = 1;
  }

  result.draws.draws = std::move(draws);
  result.draws.subtraction_negative = std::move(neg_flag);
  result.draws.seed = seed;

  result.intervals.level = opts.level;
  const std::array<double, 4> point = result.point.as_array();
  const double alpha = 1.0 - opts.level;
  for (int j = 0; j < 4; ++j) {
    IntervalSummary& s = result.intervals.component[j];
    s.point = point[j];
    if (n_kept == 0) continue;
    std::vector<double> col(n_kept);
    for (int r = 0; r < n_kept; ++r) col[r] = result.draws.draws(r, j);
    s.mean = pairwise_mean(col);
    s.sd = n_kept > 1 ? std::sqrt(sample_variance(col)) : 0.0;
    std::sort(col.begin(), col.end());
    s.lower = quantile_sorted(col, alpha / 2.0);
    s.upper = quantile_sorted(col, 1.0 - alpha / 2.0);
  }
  return result;
}

}  // namespace vardecomp

#include "vardecomp/simulation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numbers>
#include <sstream>

#include "vardecomp/dataset.hpp"
#include "vardecomp/errors.hpp"
#include "vardecomp/math.hpp"
#include "vardecomp/outcome.hpp"

namespace vardecomp {

void SimConfig::validate() const {
  if (n < 1) throw DataError("n must be >= 1");
  if (m < 1) throw DataError("m must be >= 1");
  if (q < m) throw DataError("q must be >= m");
  if (hospital_effect_sd < 0 || surgeon_effect_sd < 0 || assign_intercept_sd < 0 ||
      assign_coef_sd < 0) {
    throw DataError("standard deviations must be nonnegative");
  }
}

Hierarchy SimConfig::make_hierarchy() const {
  validate();
  std::vector<int> counts(m, q / m);
  for (int z = 0; z < q % m; ++z) counts[z] += 1;
  return Hierarchy(counts);
}

double GeneratingMechanism::true_mu(int cell, const Eigen::VectorXd& x) const {
  const double lp = hospital_effects[hierarchy.cell_hospital(cell)] + surgeon_effects[cell] +
                    beta[0] * x[0] + beta[1] * x[1];
  // Logistic(0,1) noise: P(lp + eps >= 0) is the inverse logit of lp.
  return outcome_kind == OutcomeKind::binary ? logistic(lp) : lp;
}

double GeneratingMechanism::true_cond_var(int cell, const Eigen::VectorXd& x) const {
  if (outcome_kind == OutcomeKind::binary) {
    const double mu = true_mu(cell, x);
    return mu * (1.0 - mu);
  }
  return std::numbers::pi * std::numbers::pi / 3.0;
}

void GeneratingMechanism::cell_probs_into(const Eigen::VectorXd& x, std::span<double> out) const {
  const int q = hierarchy.cells();
  out[0] = 0.0;
  double max_lp = 0.0;
  for (int c = 1; c < q; ++c) {
    double lp = assign_coef(c - 1, 0);
    for (int t = 0; t < x.size(); ++t) lp += assign_coef(c - 1, t + 1) * x[t];
    out[c] = lp;
    max_lp = std::max(max_lp, lp);
  }
  double denom = 0.0;
  for (int c = 0; c < q; ++c) {
    out[c] = std::exp(out[c] - max_lp);
    denom += out[c];
  }
  for (int c = 0; c < q; ++c) out[c] /= denom;
}

GeneratingMechanism draw_mechanism(const SimConfig& cfg, Rng& rng) {
  cfg.validate();
  GeneratingMechanism mech;
  mech.hierarchy = cfg.make_hierarchy();
  mech.beta = cfg.beta;
  mech.outcome_kind = cfg.outcome_kind;
  const int q = mech.hierarchy.cells();
  const int m = mech.hierarchy.hospitals();
  mech.hospital_effects.resize(m);
  for (int z = 0; z < m; ++z) mech.hospital_effects[z] = cfg.hospital_effect_sd * rng.normal();
  mech.surgeon_effects.resize(q);
  for (int c = 0; c < q; ++c) mech.surgeon_effects[c] = cfg.surgeon_effect_sd * rng.normal();
  mech.assign_coef.resize(q - 1, 3);
  for (int c = 0; c < q - 1; ++c) {
    mech.assign_coef(c, 0) = cfg.assign_intercept_sd * rng.normal();
    mech.assign_coef(c, 1) = cfg.assign_coef_sd * rng.normal();
    mech.assign_coef(c, 2) = cfg.assign_coef_sd * rng.normal();
  }
  return mech;
}

DataSet generate_population(const SimConfig& cfg, const GeneratingMechanism& mech, Rng& rng) {
  cfg.validate();
  const Hierarchy& hier = mech.hierarchy;
  const int q = hier.cells();
  const int n = cfg.n;

  Eigen::VectorXd y(n);
  Eigen::MatrixXd x(n, 2);
  std::vector<int> hospital(n), surgeon(n);
  std::vector<double> cellp(q);
  Eigen::Vector2d xi;
  for (int i = 0; i < n; ++i) {
    xi[0] = rng.normal();
    xi[1] = rng.bernoulli(0.5) ? 1.0 : 0.0;
    x.row(i) = xi;
    mech.cell_probs_into(xi, cellp);
    const int cell = rng.categorical(cellp);
    hospital[i] = hier.cell_hospital(cell);
    surgeon[i] = hier.cell_surgeon(cell);
    const double lp = mech.hospital_effects[hospital[i]] + mech.surgeon_effects[cell] +
                      mech.beta[0] * xi[0] + mech.beta[1] * xi[1];
    const double y_cont = lp + rng.logistic();
    y[i] = cfg.outcome_kind == OutcomeKind::binary ? (y_cont >= 0.0 ? 1.0 : 0.0) : y_cont;
  }
  return DataSet(hier, std::move(y), std::move(x), std::move(hospital), std::move(surgeon),
                 {"x1", "x2"}, cfg.outcome_kind);
}

std::pair<DataSet, GeneratingMechanism> generate_population(const SimConfig& cfg) {
  Rng mech_rng = Rng::stream(cfg.seed, 0);
  GeneratingMechanism mech = draw_mechanism(cfg, mech_rng);
  Rng data_rng = Rng::stream(cfg.seed, 1);
  DataSet d = generate_population(cfg, mech, data_rng);
  return {std::move(d), std::move(mech)};
}

// ---------------------------------------------------------------------------
// Monte Carlo truth
// ---------------------------------------------------------------------------

TruthComponents true_components(const GeneratingMechanism& mech, long n_mc, std::uint64_t seed) {
  if (n_mc < 2) throw DataError("n_mc must be >= 2");
  const Hierarchy& hier = mech.hierarchy;
  const int m = hier.hospitals();
  const int q = hier.cells();
  const long n = n_mc;

  std::vector<double> wbuf(n), t2buf(n), t3buf(n), t4buf(n);
#pragma omp parallel
  {
    std::vector<double> cellp(q);
    Eigen::Vector2d x;
#pragma omp for schedule(static)
    for (long j = 0; j < n; ++j) {
      Rng rng = Rng::stream(seed, static_cast<std::uint64_t>(j));
      x[0] = rng.normal();
      x[1] = rng.bernoulli(0.5) ? 1.0 : 0.0;
      mech.cell_probs_into(x, cellp);
      double w = 0.0, h2e = 0.0, t3 = 0.0, t4 = 0.0;
      for (int z = 0; z < m; ++z) {
        const int base = hier.hospital_offset(z);
        const int h = hier.surgeons_in(z);
        double ez = 0.0;
        for (int s = 0; s < h; ++s) ez += cellp[base + s];
        double hz = 0.0, m2 = 0.0, vz = 0.0;
        for (int s = 0; s < h; ++s) {
          const double g = cellp[base + s] / ez;
          const double mu = mech.true_mu(base + s, x);
          hz += mu * g;
          m2 += mu * mu * g;
          vz += mech.true_cond_var(base + s, x) * g;
        }
        w += hz * ez;
        h2e += hz * hz * ez;
        t3 += (m2 - hz * hz) * ez;
        t4 += vz * ez;
      }
      wbuf[j] = w;
      t2buf[j] = h2e - w * w;
      t3buf[j] = t3;
      t4buf[j] = t4;
    }
  }

  TruthComponents truth;
  truth.n_mc = n_mc;
  const double grand = pairwise_mean(wbuf);
  std::vector<double> sq(n), quad(n);
  for (long j = 0; j < n; ++j) sq[j] = (wbuf[j] - grand) * (wbuf[j] - grand);
  const double m2 = pairwise_sum(sq) / static_cast<double>(n);
  truth.value[0] = pairwise_sum(sq) / static_cast<double>(n - 1);
  for (long j = 0; j < n; ++j) quad[j] = sq[j] * sq[j];
  const double m4 = pairwise_sum(quad) / static_cast<double>(n);
  truth.mc_se[0] = std::sqrt(std::max(m4 - m2 * m2, 0.0) / static_cast<double>(n));

  auto mean_and_se = [n](std::vector<double>& buf, double& value, double& se) {
    value = pairwise_mean(buf);
    for (double& b : buf) b = (b - value) * (b - value);
    const double var = pairwise_sum(buf) / static_cast<double>(n - 1);
    se = std::sqrt(var / static_cast<double>(n));
  };
  mean_and_se(t2buf, truth.value[1], truth.mc_se[1]);
  mean_and_se(t3buf, truth.value[2], truth.mc_se[2]);
  mean_and_se(t4buf, truth.value[3], truth.mc_se[3]);
  return truth;
}

// ---------------------------------------------------------------------------
// Replication harness
// ---------------------------------------------------------------------------

std::string ReplicationResult::rows_to_csv() const {
  std::ostringstream out;
  out << "replicate,method,component,estimate\n";
  char buf[64];
  for (const ReplicationRow& row : rows) {
    std::snprintf(buf, sizeof(buf), "%.17g", row.estimate);
    out << row.replicate << ',' << to_string(row.method) << ','
        << kComponentNames[row.component] << ',' << buf << '\n';
  }
  return out.str();
}

ReplicationResult run_replications(const ReplicationConfig& cfg) {
  cfg.base.validate();
  const int reps = cfg.replications;
  ReplicationResult result;
  result.replications_run = reps;

  Rng mech_rng = Rng::stream(cfg.seed, 0);
  const GeneratingMechanism base_mech = draw_mechanism(cfg.base, mech_rng);
  if (!cfg.redraw_mechanism) {
    result.truth = true_components(base_mech, cfg.truth_mc, cfg.seed ^ 0x5eedULL);
  }

  const bool want_semi =
      std::find(cfg.methods.begin(), cfg.methods.end(), DecompositionMethod::semi_parametric) !=
      cfg.methods.end();

  struct ReplicateOut {
    bool ok = false;
    std::vector<ReplicationRow> rows;
  };
  std::vector<ReplicateOut> outputs(reps);

#pragma omp parallel for schedule(dynamic)
  for (int r = 0; r < reps; ++r) {
    Rng rng = Rng::stream(cfg.seed, 1000 + static_cast<std::uint64_t>(r));
    ReplicateOut& out = outputs[r];
    try {
      GeneratingMechanism mech = base_mech;
      if (cfg.redraw_mechanism) mech = draw_mechanism(cfg.base, rng);
      const DataSet d = generate_population(cfg.base, mech, rng);
      const AssignmentModel eta = fit_joint_multinomial(d);
      auto theta = std::make_shared<OutcomeParams>(cfg.base.outcome_kind == OutcomeKind::binary
                                                       ? fit_logistic_mixed(d)
                                                       : fit_linear_mixed(d));
      std::optional<MarginalModels> mm;
      if (want_semi) mm = fit_marginal_models(d, theta);

      auto push = [&](const VarianceComponents& comp) {
        for (int j = 0; j < 4; ++j) {
          if (!comp.has_surgeon_component && j == 2) continue;
          out.rows.push_back({r + 1, comp.method, j, comp.as_array()[j]});
        }
      };
      for (DecompositionMethod method : cfg.methods) {
        switch (method) {
          case DecompositionMethod::model_based:
            push(decompose_model_based(d, *theta, eta));
            break;
          case DecompositionMethod::three_way:
            push(decompose_three_way(d, *theta, eta));
            break;
          case DecompositionMethod::semi_parametric:
            push(decompose_semiparametric(d, *mm));
            break;
          case DecompositionMethod::hypothetical:
            push(decompose_hypothetical(d, *theta,
                                        TargetAssignment::uniform(d.hierarchy())));
            break;
        }
      }
      out.ok = true;
    } catch (const std::exception&) {
      out.ok = false;
    }
  }

  for (int r = 0; r < reps; ++r) {
    if (!outputs[r].ok) {
      ++result.failures;
      continue;
    }
    for (const auto& row : outputs[r].rows) result.rows.push_back(row);
  }
  if (reps > 0 && static_cast<double>(result.failures) > cfg.max_failure_fraction * reps) {
    throw ConvergenceError("replication run aborted: " + std::to_string(result.failures) +
                           " of " + std::to_string(reps) + " replicates failed");
  }

  // Summaries per (method, component).
  for (DecompositionMethod method : cfg.methods) {
    for (int j = 0; j < 4; ++j) {
      std::vector<double> values;
      for (const auto& row : result.rows) {
        if (row.method == method && row.component == j) values.push_back(row.estimate);
      }
      if (values.empty()) continue;
      ComponentSummary s;
      s.method = method;
      s.component = j;
      s.mean = pairwise_mean(values);
      s.sd = values.size() > 1 ? std::sqrt(sample_variance(values)) : 0.0;
      const double half = 1.959963984540054 * s.sd / std::sqrt(static_cast<double>(values.size()));
      s.mean_ci_low = s.mean - half;
      s.mean_ci_high = s.mean + half;
      std::sort(values.begin(), values.end());
      s.q025 = quantile_sorted(values, 0.025);
      s.q975 = quantile_sorted(values, 0.975);
      result.summaries.push_back(s);
    }
  }
  return result;
}

}  // namespace vardecomp

#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "vardecomp/decompose.hpp"
#include "vardecomp/rng.hpp"
#include "vardecomp/types.hpp"

namespace vardecomp {

// Synthetic-population configuration. Defaults follow the generating
// mechanism of the study design: X1 ~ N(0,1), X2 ~ Bernoulli(0.5), assignment
// intercepts N(0, 0.25) and slopes N(0, 0.5), hospital and surgeon effects
// N(0, 2), outcome mean a_Z + c_ZS + X1 + 2 X2 with Logistic(0,1) noise,
// binary outcomes by thresholding at 0.
struct SimConfig {
  int n = 2000;
  int m = 5;
  int q = 25;  // total surgeons, split as evenly as possible
  std::uint64_t seed = 1;
  double hospital_effect_sd = std::sqrt(2.0);
  double surgeon_effect_sd = std::sqrt(2.0);
  double assign_intercept_sd = 0.5;
  double assign_coef_sd = std::sqrt(0.5);
  Eigen::Vector2d beta{1.0, 2.0};
  OutcomeKind outcome_kind = OutcomeKind::binary;

  void validate() const;
  Hierarchy make_hierarchy() const;
};

// Drawn ground-truth parameters for one simulated world.
struct GeneratingMechanism {
  Hierarchy hierarchy;
  Eigen::VectorXd hospital_effects;  // length m
  Eigen::VectorXd surgeon_effects;   // length q, flattened cells
  Eigen::MatrixXd assign_coef;       // (q-1) x (p+1), joint multinomial
  Eigen::Vector2d beta;
  OutcomeKind outcome_kind = OutcomeKind::binary;

  // True cell means / conditional variances at a covariate point.
  double true_mu(int cell, const Eigen::VectorXd& x) const;
  double true_cond_var(int cell, const Eigen::VectorXd& x) const;
  void cell_probs_into(const Eigen::VectorXd& x, std::span<double> out) const;
};

GeneratingMechanism draw_mechanism(const SimConfig& cfg, Rng& rng);

DataSet generate_population(const SimConfig& cfg, const GeneratingMechanism& mech, Rng& rng);

// Convenience: mechanism and data drawn from cfg.seed.
std::pair<DataSet, GeneratingMechanism> generate_population(const SimConfig& cfg);

struct TruthComponents {
  std::array<double, 4> value{};
  std::array<double, 4> mc_se{};
  long n_mc = 0;
};

// True components under the mechanism: Monte Carlo over X with exact inner
// sums over cells. Reports the Monte Carlo standard error of each value.
TruthComponents true_components(const GeneratingMechanism& mech, long n_mc, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Replication harness
// ---------------------------------------------------------------------------

struct ReplicationConfig {
  SimConfig base;
  int replications = 200;
  std::vector<DecompositionMethod> methods{DecompositionMethod::model_based};
  // Acceptance default holds the mechanism fixed across replicates so the
  // truth is a single value; redrawing it per replicate is available for
  // unconditional studies (no single truth is reported then).
  bool redraw_mechanism = false;
  long truth_mc = 200000;
  std::uint64_t seed = 1;
  double max_failure_fraction = 0.10;
};

inline constexpr std::array<const char*, 4> kComponentNames = {
    "case_mix", "between_hospital", "between_surgeon", "residual"};

struct ReplicationRow {
  int replicate = 0;
  DecompositionMethod method = DecompositionMethod::model_based;
  int component = 0;  // index into kComponentNames
  double estimate = 0.0;
};

struct ComponentSummary {
  DecompositionMethod method = DecompositionMethod::model_based;
  int component = 0;
  double mean = 0.0;
  double sd = 0.0;
  double q025 = 0.0;
  double q975 = 0.0;
  double mean_ci_low = 0.0;   // Monte Carlo CI of the mean
  double mean_ci_high = 0.0;
};

struct ReplicationResult {
  std::vector<ReplicationRow> rows;
  std::vector<ComponentSummary> summaries;
  std::optional<TruthComponents> truth;
  int replications_run = 0;
  int failures = 0;

  std::string rows_to_csv() const;  // replicate,method,component,estimate
};

ReplicationResult run_replications(const ReplicationConfig& cfg);

}  // namespace vardecomp

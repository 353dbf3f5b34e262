#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <optional>
#include <vector>

#include "vardecomp/decompose.hpp"

namespace vardecomp {

// Posterior draws of the four components, one row per replicate.
struct ComponentDraws {
  Eigen::MatrixXd draws;  // R x 4
  std::vector<std::uint8_t> subtraction_negative;  // per-row flag
  std::uint64_t seed = 0;

  std::string to_csv() const;  // replicate,omega1,omega2,omega3,omega4
};

struct IntervalSummary {
  double point = 0.0;
  double lower = 0.0;
  double upper = 0.0;
  double mean = 0.0;
  double sd = 0.0;
};

struct ComponentIntervals {
  std::array<IntervalSummary, 4> component;
  double level = 0.95;
};

// Draws from MVN(eta_hat, vcov) through a symmetric eigen square root;
// negative eigenvalues are floored at 0 (with a warning flag available to
// callers via the return). Reproducible given the seed.
std::vector<Eigen::VectorXd> sample_eta(const AssignmentModel& eta, int count,
                                        std::uint64_t seed);

struct BootstrapOptions {
  // Redraw hospital/surgeon effects from N(0, tau2)/N(0, kappa2) per
  // replicate (generative reading); false holds them at their predictions.
  bool redraw_effects = true;
  double max_failure_fraction = 0.2;
  OutcomeFitOptions fit;
};

struct BootstrapResult {
  std::vector<std::optional<OutcomeParams>> replicates;  // nullopt = failed refit
  int failures = 0;
};

// Parametric bootstrap: simulate outcomes from the fitted model at each
// record's (z, s, x), refit, return the refitted parameter sets.
BootstrapResult bootstrap_theta(const DataSet& d, const OutcomeParams& theta, int count,
                                std::uint64_t seed, const BootstrapOptions& opts = {});

struct PosteriorOptions {
  double level = 0.95;
  ResidualMode residual_mode = ResidualMode::model_based;
  BootstrapOptions bootstrap;
};

struct PosteriorResult {
  ComponentDraws draws;
  ComponentIntervals intervals;
  VarianceComponents point;
  int failed_replicates = 0;
  bool vcov_floored = false;
};

// Pairs bootstrap theta draw r with independent normal eta draw r and
// recomputes the model-based decomposition per pair.
PosteriorResult component_posterior(const DataSet& d, const OutcomeParams& theta,
                                    const AssignmentModel& eta, int count, std::uint64_t seed,
                                    const PosteriorOptions& opts = {});

}  // namespace vardecomp

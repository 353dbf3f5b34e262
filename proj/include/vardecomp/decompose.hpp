#pragma once

#include <Eigen/Dense>
#include <array>
#include <functional>
#include <optional>
#include <span>
#include <string>

#include "vardecomp/assignment.hpp"
#include "vardecomp/outcome.hpp"
#include "vardecomp/types.hpp"

namespace vardecomp {

enum class DecompositionMethod { model_based, semi_parametric, three_way, hypothetical };
enum class ResidualMode { by_subtraction, model_based };

std::string to_string(DecompositionMethod method);
std::string to_string(ResidualMode mode);

// Four-way split of the outcome variance: patient case-mix, between-hospital,
// within-hospital between-surgeon, and residual. The three-way variant folds
// the surgeon share into the residual and keeps between_surgeon at 0.
struct VarianceComponents {
  double case_mix = 0.0;
  double between_hospital = 0.0;
  double between_surgeon = 0.0;
  double residual = 0.0;
  DecompositionMethod method = DecompositionMethod::model_based;
  ResidualMode residual_mode = ResidualMode::model_based;
  bool has_surgeon_component = true;

  double total() const { return case_mix + between_hospital + between_surgeon + residual; }
  std::array<double, 4> as_array() const {
    return {case_mix, between_hospital, between_surgeon, residual};
  }
};

// Hypothetical assignment probabilities: analyst-chosen e~(a;x) over hospitals
// and g~(b;a,x) over surgeons within a hospital, positive on observed cells.
class TargetAssignment {
 public:
  enum class Kind { observed, volume_preserving, uniform, custom };

  static TargetAssignment uniform(const Hierarchy& hierarchy);
  // e~(a;x) = P(Z=a), g~(b;a,x) = P(S=b | Z=a): equalizes patient mix while
  // retaining the observed volumes.
  static TargetAssignment volume_preserving(const DataSet& d);
  // The fitted assignment mechanism itself; reproduces the observed-variance
  // decomposition.
  static TargetAssignment observed(const AssignmentModel& model);
  static TargetAssignment custom(
      const Hierarchy& hierarchy,
      std::function<void(const Eigen::VectorXd&, std::span<double>)> hospital_fn,
      std::function<void(int, const Eigen::VectorXd&, std::span<double>)> surgeon_fn);

  Kind kind() const { return kind_; }
  const Hierarchy& hierarchy() const { return hierarchy_; }
  void hospital_probs_into(const Eigen::VectorXd& x, std::span<double> out) const;
  void surgeon_probs_into(int hospital, const Eigen::VectorXd& x, std::span<double> out) const;
  // Joint cell probabilities e~ * g~; throws if any observed cell gets 0.
  void cell_probs_into(const Eigen::VectorXd& x, std::span<double> out) const;

 private:
  TargetAssignment(Kind kind, Hierarchy hierarchy) : kind_(kind), hierarchy_(std::move(hierarchy)) {}
  Kind kind_;
  Hierarchy hierarchy_;
  std::function<void(const Eigen::VectorXd&, std::span<double>)> hospital_fn_;
  std::function<void(int, const Eigen::VectorXd&, std::span<double>)> surgeon_fn_;
};

// ---------------------------------------------------------------------------
// Evaluation grid: anything that can produce, for evaluation point i, the
// cell means mu(z,s|x_i), joint cell probabilities, and conditional
// variances. Implementations exist for fitted models, hypothetical targets,
// and exact discrete instances (the weighted-support hook used by the oracle
// equivalence tests).
// ---------------------------------------------------------------------------

class CellGrid {
 public:
  virtual ~CellGrid() = default;
  virtual const Hierarchy& hierarchy() const = 0;
  virtual int points() const = 0;
  // Weights sum to 1. equal_weights() grids additionally use the n/(n-1)
  // sample correction for the case-mix component.
  virtual bool equal_weights() const = 0;
  virtual double weight(int i) const = 0;
  virtual void fill(int i, std::span<double> mu, std::span<double> cell_prob,
                    std::span<double> cond_var) const = 0;
};

// Four-way evaluation over a grid. Per-point terms are computed into buffers
// (parallel over points) and reduced with pairwise summation, so the result
// is identical for any thread count. empirical_variance is required when
// residual = by_subtraction.
VarianceComponents decompose_grid(const CellGrid& grid, ResidualMode residual_mode,
                                  std::optional<double> empirical_var = std::nullopt);

// Straightforward single-pass implementation kept as the reference for the
// parallel kernel; agrees with decompose_grid to float accumulation error.
VarianceComponents decompose_grid_reference(const CellGrid& grid, ResidualMode residual_mode,
                                            std::optional<double> empirical_var = std::nullopt);

// ---------------------------------------------------------------------------
// The estimators
// ---------------------------------------------------------------------------

VarianceComponents decompose_model_based(const DataSet& d, const OutcomeParams& theta,
                                         const AssignmentModel& eta,
                                         ResidualMode residual_mode = ResidualMode::model_based);

VarianceComponents decompose_semiparametric(const DataSet& d, const MarginalModels& mm,
                                            ResidualMode residual_mode = ResidualMode::by_subtraction);

// Core of the semi-parametric path, exposed so prediction vectors can be
// supplied directly.
VarianceComponents decompose_semiparametric_from_predictions(
    const DataSet& d, const Eigen::VectorXd& pred_x, const Eigen::VectorXd& pred_zx,
    const Eigen::VectorXd& pred_szx, ResidualMode residual_mode = ResidualMode::by_subtraction,
    const Eigen::VectorXd* cond_var_szx = nullptr);

// Hospital-only legacy decomposition; between_surgeon is reported as 0 and
// the residual holds everything below the hospital level.
VarianceComponents decompose_three_way(const DataSet& d, const OutcomeParams& theta,
                                       const AssignmentModel& eta,
                                       ResidualMode residual_mode = ResidualMode::by_subtraction);

VarianceComponents decompose_hypothetical(const DataSet& d, const OutcomeParams& theta,
                                          const TargetAssignment& target);

// (tau2 + kappa2) / (tau2 + kappa2 + sigma2); identity link only.
double icc_summary(const OutcomeParams& theta);

}  // namespace vardecomp

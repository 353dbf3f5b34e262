#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "vardecomp/types.hpp"

namespace vardecomp {

struct MultinomialFitOptions {
  double gradient_tol = 1e-8;       // max-norm of the score
  int max_iterations = 200;
  double ridge = 0.0;               // optional stabilizer, off by default
  double separation_threshold = 30.0;
};

// Fitted assignment mechanism: the joint multinomial over cells, or the
// nested variant (hospital-level model plus one surgeon-level model per
// hospital). Either form exposes the probabilities
//   e(z; x) = P(Z = z | x)   and   g(s; z, x) = P(S = s | Z = z, x),
// with the reference category pinned to the first cell. Immutable once
// fitted; shareable across threads.
class AssignmentModel {
 public:
  enum class Kind { joint, nested };

  AssignmentModel(Kind kind, Hierarchy hierarchy, int covariate_dim);

  Kind kind() const { return kind_; }
  const Hierarchy& hierarchy() const { return hierarchy_; }
  int covariate_dim() const { return p_; }
  int parameter_count() const;  // (q-1)(p+1) for either kind

  // Joint cell probabilities P(Z=z, S=s | x), flattened cell order.
  Eigen::VectorXd cell_probs(const Eigen::VectorXd& x) const;
  void cell_probs_into(const Eigen::VectorXd& x, std::span<double> out) const;

  Eigen::VectorXd hospital_probs(const Eigen::VectorXd& x) const;
  void hospital_probs_into(const Eigen::VectorXd& x, std::span<double> out) const;

  Eigen::VectorXd surgeon_probs(int hospital, const Eigen::VectorXd& x) const;
  void surgeon_probs_into(int hospital, const Eigen::VectorXd& x, std::span<double> out) const;

  // Flattened free parameters, cell-major then (intercept, x1..xp). For the
  // nested kind: hospital block first, then surgeon blocks by hospital.
  Eigen::VectorXd flatten() const;
  AssignmentModel with_parameters(const Eigen::VectorXd& packed) const;

  const Eigen::MatrixXd& vcov() const { return vcov_; }
  const FitMeta& fit_meta() const { return meta_; }

  // Coefficient blocks; rows ordered as in flatten().
  const Eigen::MatrixXd& joint_coef() const { return joint_coef_; }
  const Eigen::MatrixXd& hospital_coef() const { return hospital_coef_; }
  const std::vector<Eigen::MatrixXd>& surgeon_coef() const { return surgeon_coef_; }

  // Internal wiring used by the fitters.
  void set_joint_coef(Eigen::MatrixXd coef) { joint_coef_ = std::move(coef); }
  void set_nested_coef(Eigen::MatrixXd hospital, std::vector<Eigen::MatrixXd> surgeon);
  void set_vcov(Eigen::MatrixXd vcov) { vcov_ = std::move(vcov); }
  void set_fit_meta(FitMeta meta) { meta_ = std::move(meta); }

 private:
  Kind kind_;
  Hierarchy hierarchy_;
  int p_;
  Eigen::MatrixXd joint_coef_;                 // (q-1) x (p+1)
  Eigen::MatrixXd hospital_coef_;              // (m-1) x (p+1)
  std::vector<Eigen::MatrixXd> surgeon_coef_;  // per hospital, (h_z-1) x (p+1)
  Eigen::MatrixXd vcov_;
  FitMeta meta_;
};

// Maximum-likelihood joint multinomial over all q cells (reference = first
// cell). Throws DataError if any cell is unobserved, ConvergenceError on
// non-convergence or complete separation.
AssignmentModel fit_joint_multinomial(const DataSet& d, const MultinomialFitOptions& opts = {});

// Hospital-level multinomial for e(z;x) plus a surgeon-level multinomial per
// hospital for g(s;z,x); vcov is block-diagonal across sub-models.
AssignmentModel fit_nested_multinomial(const DataSet& d, const MultinomialFitOptions& opts = {});

}  // namespace vardecomp

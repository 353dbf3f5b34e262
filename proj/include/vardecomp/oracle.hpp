#pragma once

#include <Eigen/Dense>
#include <string>

#include "vardecomp/decompose.hpp"
#include "vardecomp/types.hpp"

namespace vardecomp {

// Fully discrete instance: covariate support points with probabilities plus
// exact per-cell means, assignment probabilities and conditional variances.
// Small by construction; consumed directly, no data and no fitting involved.
struct DiscreteInstance {
  Hierarchy hierarchy;
  Eigen::MatrixXd x_points;   // support x cells of the covariate space
  Eigen::VectorXd x_probs;    // sums to 1
  Eigen::MatrixXd mu;         // support points x cells
  Eigen::MatrixXd assign;     // support points x cells, rows sum to 1
  Eigen::MatrixXd cond_var;   // support points x cells, nonnegative

  void validate() const;  // throws DataError on broken invariants
};

DiscreteInstance load_instance(const std::string& path);

// Exact evaluation of the four-way decomposition by summation over the
// support and the cells. Independent code path from the estimator kernels.
VarianceComponents enumerate_decomposition(const DiscreteInstance& inst);

// Exact evaluation under a hypothetical target assignment.
VarianceComponents enumerate_hypothetical(const DiscreteInstance& inst,
                                          const TargetAssignment& target);

// Directly enumerated marginal variance V[Y] = E[Y^2] - E[Y]^2; the
// decomposition must add up to this.
double enumerate_marginal_variance(const DiscreteInstance& inst);

// Runs the estimator kernel on the instance's exact tables through the
// weighted-support hook (population divisors). Used to pin the estimator
// algebra against the enumeration.
VarianceComponents decompose_instance_via_estimator(const DiscreteInstance& inst);

}  // namespace vardecomp

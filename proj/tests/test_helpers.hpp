#pragma once

#include <Eigen/Dense>
#include <vector>

#include "vardecomp/types.hpp"

namespace vardecomp::testing {

// Small in-memory dataset builder for unit tests.
inline DataSet make_dataset(const std::vector<int>& surgeons_per_hospital,
                            const std::vector<double>& y, const std::vector<int>& hospital,
                            const std::vector<int>& surgeon,
                            const std::vector<std::vector<double>>& x, OutcomeKind kind) {
  const Eigen::Index n = static_cast<Eigen::Index>(y.size());
  const int p = x.empty() ? 0 : static_cast<int>(x.front().size());
  Eigen::VectorXd yv(n);
  Eigen::MatrixXd xm(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    yv[i] = y[i];
    for (int j = 0; j < p; ++j) xm(i, j) = x[i][j];
  }
  std::vector<std::string> names;
  for (int j = 0; j < p; ++j) names.push_back("x" + std::to_string(j + 1));
  return DataSet(Hierarchy(surgeons_per_hospital), std::move(yv), std::move(xm), hospital,
                 surgeon, std::move(names), kind);
}

}  // namespace vardecomp::testing

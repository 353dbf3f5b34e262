#include "vardecomp/oracle.hpp"

#include <cmath>
#include <fstream>
#include <functional>
#include <vector>

#include <json.hpp>

#include "vardecomp/errors.hpp"

namespace vardecomp {

void DiscreteInstance::validate() const {
  const int q = hierarchy.cells();
  const Eigen::Index k = x_probs.size();
  if (k < 1) throw DataError("instance needs at least one support point");
  if (x_points.rows() != k || mu.rows() != k || assign.rows() != k || cond_var.rows() != k) {
    throw DataError("instance tables must have one row per support point");
  }
  if (mu.cols() != q || assign.cols() != q || cond_var.cols() != q) {
    throw DataError("instance tables must have one column per cell");
  }
  double total = 0.0;
  for (Eigen::Index j = 0; j < k; ++j) {
    if (x_probs[j] <= 0.0) throw DataError("support probabilities must be positive");
    total += x_probs[j];
    double row = 0.0;
    for (int c = 0; c < q; ++c) {
      if (assign(j, c) < 0.0) throw DataError("assignment probabilities must be nonnegative");
      if (cond_var(j, c) < 0.0) throw DataError("conditional variances must be nonnegative");
      row += assign(j, c);
    }
    if (std::abs(row - 1.0) > 1e-9) {
      throw DataError("assignment rows must sum to 1 (support point " + std::to_string(j) + ")");
    }
  }
  if (std::abs(total - 1.0) > 1e-9) throw DataError("support probabilities must sum to 1");
}

DiscreteInstance load_instance(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open instance file '" + path + "'");
  nlohmann::json doc;
  try {
    in >> doc;
  } catch (const nlohmann::json::exception& err) {
    throw DataError("instance JSON parse failure: " + std::string(err.what()));
  }
  DiscreteInstance inst;
  try {
    const std::vector<int> counts = doc.at("surgeons_per_hospital").get<std::vector<int>>();
    inst.hierarchy = Hierarchy(counts);
    const auto probs = doc.at("x_probs").get<std::vector<double>>();
    const Eigen::Index k = static_cast<Eigen::Index>(probs.size());
    inst.x_probs = Eigen::Map<const Eigen::VectorXd>(probs.data(), k);

    auto read_matrix = [&](const char* key, Eigen::Index cols) {
      const auto rows = doc.at(key).get<std::vector<std::vector<double>>>();
      if (static_cast<Eigen::Index>(rows.size()) != k) {
        throw DataError(std::string("instance field '") + key + "' has wrong row count");
      }
      Eigen::MatrixXd m(k, cols);
      for (Eigen::Index j = 0; j < k; ++j) {
        if (static_cast<Eigen::Index>(rows[j].size()) != cols) {
          throw DataError(std::string("instance field '") + key + "' has a ragged row");
        }
        for (Eigen::Index c = 0; c < cols; ++c) m(j, c) = rows[j][c];
      }
      return m;
    };

    const int q = inst.hierarchy.cells();
    if (doc.contains("x_points")) {
      const auto pts = doc.at("x_points").get<std::vector<std::vector<double>>>();
      const Eigen::Index p = pts.empty() ? 0 : static_cast<Eigen::Index>(pts.front().size());
      inst.x_points = read_matrix("x_points", p);
    } else {
      inst.x_points = Eigen::MatrixXd::Zero(k, 0);
    }
    inst.mu = read_matrix("mu", q);
    inst.assign = read_matrix("assign", q);
    if (doc.contains("cond_var")) {
      inst.cond_var = read_matrix("cond_var", q);
    } else if (doc.value("binary", false)) {
      inst.cond_var = (inst.mu.array() * (1.0 - inst.mu.array())).matrix();
    } else {
      throw DataError("instance needs cond_var or binary=true");
    }
  } catch (const nlohmann::json::exception& err) {
    throw DataError("instance JSON schema error: " + std::string(err.what()));
  }
  inst.validate();
  return inst;
}

// ---------------------------------------------------------------------------
// Exact enumeration. Written in the centered textbook form, independent of
// the estimator kernels it is used to check.
// ---------------------------------------------------------------------------

namespace {

VarianceComponents enumerate_with_weights(
    const DiscreteInstance& inst,
    const std::function<void(Eigen::Index, std::vector<double>&, std::vector<std::vector<double>>&)>&
        weights_at) {
  inst.validate();
  const Hierarchy& hier = inst.hierarchy;
  const int m = hier.hospitals();
  const Eigen::Index k = inst.x_probs.size();

  std::vector<double> e(m);
  std::vector<std::vector<double>> g(m);
  for (int z = 0; z < m; ++z) g[z].resize(hier.surgeons_in(z));

  // Hospital mean accumulated as deviations from the first cell so equal
  // within-hospital means give a zero spread identically.
  auto hospital_mean = [&](Eigen::Index j, int z) {
    const double mu_ref = inst.mu(j, hier.cell_index(z, 0));
    double dev = 0.0;
    for (int s = 0; s < hier.surgeons_in(z); ++s) {
      dev += (inst.mu(j, hier.cell_index(z, s)) - mu_ref) * g[z][s];
    }
    return mu_ref + dev;
  };

  // First pass: the grand mean of the double-weighted cell means.
  std::vector<double> point_mean(k);
  double grand = 0.0;
  for (Eigen::Index j = 0; j < k; ++j) {
    weights_at(j, e, g);
    const double h_ref = hospital_mean(j, 0);
    double dev = 0.0;
    for (int z = 0; z < m; ++z) dev += (hospital_mean(j, z) - h_ref) * e[z];
    point_mean[j] = h_ref + dev;
    grand += inst.x_probs[j] * point_mean[j];
  }

  VarianceComponents out;
  for (Eigen::Index j = 0; j < k; ++j) {
    weights_at(j, e, g);
    const double px = inst.x_probs[j];
    out.case_mix += px * (point_mean[j] - grand) * (point_mean[j] - grand);
    for (int z = 0; z < m; ++z) {
      const double hz = hospital_mean(j, z);
      out.between_hospital += px * e[z] * (hz - point_mean[j]) * (hz - point_mean[j]);
      for (int s = 0; s < hier.surgeons_in(z); ++s) {
        const int c = hier.cell_index(z, s);
        const double dev = inst.mu(j, c) - hz;
        out.between_surgeon += px * e[z] * g[z][s] * dev * dev;
        out.residual += px * e[z] * g[z][s] * inst.cond_var(j, c);
      }
    }
  }
  out.residual_mode = ResidualMode::model_based;
  return out;
}

}  // namespace

VarianceComponents enumerate_decomposition(const DiscreteInstance& inst) {
  const Hierarchy& hier = inst.hierarchy;
  auto weights_at = [&](Eigen::Index j, std::vector<double>& e,
                        std::vector<std::vector<double>>& g) {
    for (int z = 0; z < hier.hospitals(); ++z) {
      double ez = 0.0;
      for (int s = 0; s < hier.surgeons_in(z); ++s) ez += inst.assign(j, hier.cell_index(z, s));
      e[z] = ez;
      for (int s = 0; s < hier.surgeons_in(z); ++s) {
        g[z][s] = ez > 0.0 ? inst.assign(j, hier.cell_index(z, s)) / ez : 0.0;
      }
    }
  };
  VarianceComponents out = enumerate_with_weights(inst, weights_at);
  out.method = DecompositionMethod::model_based;
  return out;
}

VarianceComponents enumerate_hypothetical(const DiscreteInstance& inst,
                                          const TargetAssignment& target) {
  const Hierarchy& hier = inst.hierarchy;
  if (!hier.same_shape(target.hierarchy())) {
    throw DataError("target assignment hierarchy does not match the instance");
  }
  auto weights_at = [&](Eigen::Index j, std::vector<double>& e,
                        std::vector<std::vector<double>>& g) {
    const Eigen::VectorXd x = inst.x_points.row(j);
    target.hospital_probs_into(x, e);
    for (int z = 0; z < hier.hospitals(); ++z) {
      target.surgeon_probs_into(z, x, std::span<double>(g[z].data(), g[z].size()));
      for (int s = 0; s < hier.surgeons_in(z); ++s) {
        if (!(e[z] * g[z][s] > 0.0)) {
          throw DataError("target assignment probability is zero on an instance cell");
        }
      }
    }
  };
  VarianceComponents out = enumerate_with_weights(inst, weights_at);
  out.method = DecompositionMethod::hypothetical;
  return out;
}

double enumerate_marginal_variance(const DiscreteInstance& inst) {
  inst.validate();
  const int q = inst.hierarchy.cells();
  double ey = 0.0, ey2 = 0.0;
  for (Eigen::Index j = 0; j < inst.x_probs.size(); ++j) {
    for (int c = 0; c < q; ++c) {
      const double w = inst.x_probs[j] * inst.assign(j, c);
      ey += w * inst.mu(j, c);
      ey2 += w * (inst.cond_var(j, c) + inst.mu(j, c) * inst.mu(j, c));
    }
  }
  return ey2 - ey * ey;
}

// ---------------------------------------------------------------------------
// Estimator-path adapter
// ---------------------------------------------------------------------------

namespace {

class InstanceGrid final : public CellGrid {
 public:
  explicit InstanceGrid(const DiscreteInstance& inst) : inst_(inst) { inst.validate(); }

  const Hierarchy& hierarchy() const override { return inst_.hierarchy; }
  int points() const override { return static_cast<int>(inst_.x_probs.size()); }
  bool equal_weights() const override { return false; }  // population divisors
  double weight(int i) const override { return inst_.x_probs[i]; }

  void fill(int i, std::span<double> mu, std::span<double> cellp,
            std::span<double> cv) const override {
    for (int c = 0; c < inst_.mu.cols(); ++c) {
      mu[c] = inst_.mu(i, c);
      cellp[c] = inst_.assign(i, c);
      cv[c] = inst_.cond_var(i, c);
    }
  }

 private:
  const DiscreteInstance& inst_;
};

}  // namespace

VarianceComponents decompose_instance_via_estimator(const DiscreteInstance& inst) {
  const InstanceGrid grid(inst);
  VarianceComponents out = decompose_grid(grid, ResidualMode::model_based);
  out.method = DecompositionMethod::model_based;
  return out;
}

}  // namespace vardecomp

#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "vardecomp/errors.hpp"

namespace vardecomp {

// Nested cluster index: hospitals 0..m-1, each with its own surgeons
// 0..h_z-1. A (hospital, surgeon) pair is a cell; cells are flattened in
// lexicographic order and never crossed. External ids are 1-based, internal
// indices 0-based throughout.
class Hierarchy {
 public:
  Hierarchy() = default;

  explicit Hierarchy(std::vector<int> surgeons_per_hospital)
      : counts_(std::move(surgeons_per_hospital)) {
    if (counts_.empty()) throw DataError("hierarchy needs at least one hospital");
    offsets_.reserve(counts_.size());
    int q = 0;
    for (std::size_t z = 0; z < counts_.size(); ++z) {
      if (counts_[z] < 1) throw DataError("hierarchy needs at least one surgeon per hospital");
      offsets_.push_back(q);
      for (int s = 0; s < counts_[z]; ++s) cell_owner_.push_back(static_cast<int>(z));
      q += counts_[z];
    }
    q_ = q;
  }

  int hospitals() const { return static_cast<int>(counts_.size()); }
  int surgeons_in(int hospital) const { return counts_[hospital]; }
  // Total surgeon count q; equals the number of cells.
  int cells() const { return q_; }
  int cell_index(int hospital, int surgeon) const { return offsets_[hospital] + surgeon; }
  int cell_hospital(int cell) const { return cell_owner_[cell]; }
  int cell_surgeon(int cell) const { return cell - offsets_[cell_owner_[cell]]; }
  int hospital_offset(int hospital) const { return offsets_[hospital]; }
  const std::vector<int>& surgeons_per_hospital() const { return counts_; }

  bool valid_cell(int hospital, int surgeon) const {
    return hospital >= 0 && hospital < hospitals() && surgeon >= 0 &&
           surgeon < counts_[hospital];
  }

  bool same_shape(const Hierarchy& other) const { return counts_ == other.counts_; }

 private:
  std::vector<int> counts_;
  std::vector<int> offsets_;
  std::vector<int> cell_owner_;
  int q_ = 0;
};

enum class OutcomeKind { continuous, binary };

struct PatientRecord {
  double y = 0.0;
  int hospital = 0;  // 0-based
  int surgeon = 0;   // 0-based within hospital
  Eigen::VectorXd x;
};

// Immutable patient-level data. Safe for shared read-only access across
// parallel workers.
class DataSet {
 public:
  DataSet(Hierarchy hierarchy, Eigen::VectorXd y, Eigen::MatrixXd x,
          std::vector<int> hospital, std::vector<int> surgeon,
          std::vector<std::string> covariate_names, OutcomeKind kind);

  const Hierarchy& hierarchy() const { return hierarchy_; }
  Eigen::Index size() const { return y_.size(); }
  int covariate_dim() const { return static_cast<int>(x_.cols()); }
  OutcomeKind outcome_kind() const { return kind_; }

  const Eigen::VectorXd& y() const { return y_; }
  const Eigen::MatrixXd& x() const { return x_; }
  int hospital_of(Eigen::Index i) const { return hospital_[i]; }
  int surgeon_of(Eigen::Index i) const { return surgeon_[i]; }
  int cell_of(Eigen::Index i) const { return cell_[i]; }
  const std::vector<std::string>& covariate_names() const { return covariate_names_; }

  PatientRecord record(Eigen::Index i) const {
    return PatientRecord{y_[i], hospital_[i], surgeon_[i], x_.row(i).transpose()};
  }

  // Original file labels for dense internal ids (identity when constructed
  // in memory).
  const std::vector<long>& hospital_labels() const { return hospital_labels_; }
  const std::vector<long>& surgeon_labels() const { return surgeon_labels_; }
  void set_labels(std::vector<long> hospital_labels, std::vector<long> surgeon_labels);

  DataSet with_outcome(Eigen::VectorXd new_y, OutcomeKind kind) const;

 private:
  Hierarchy hierarchy_;
  Eigen::VectorXd y_;
  Eigen::MatrixXd x_;
  std::vector<int> hospital_;
  std::vector<int> surgeon_;
  std::vector<int> cell_;
  std::vector<std::string> covariate_names_;
  OutcomeKind kind_;
  std::vector<long> hospital_labels_;   // dense id -> original label
  std::vector<long> surgeon_labels_;    // flattened cell -> original label
};

struct FitMeta {
  double log_likelihood = 0.0;
  int iterations = 0;
  bool converged = false;
  std::vector<std::string> warnings;
};

}  // namespace vardecomp

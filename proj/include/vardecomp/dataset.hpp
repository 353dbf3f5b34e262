#pragma once

#include <optional>
#include <string>
#include <vector>

#include "vardecomp/types.hpp"

namespace vardecomp {

// Column mapping for delimited input. Covariates default to every header
// column not claimed by id/hospital/surgeon/y, in file order.
struct LoadSchema {
  std::string id_column = "id";
  std::string hospital_column = "hospital";
  std::string surgeon_column = "surgeon";
  std::string y_column = "y";
  std::vector<std::string> covariate_columns;   // empty = auto
  std::optional<OutcomeKind> outcome_kind;      // unset = infer from y values
};

// Reads a CSV with header `id,hospital,surgeon,y,x1,...,xp`. Hospital and
// surgeon labels must be positive integers; they are relabeled to contiguous
// 1..m / 1..h_z (ascending label order) with the original labels retained.
DataSet load_dataset(const std::string& path, const LoadSchema& schema = {});

// Writes the CSV form read back by load_dataset. Floats use 17 significant
// digits so a write/load round trip reproduces identical values.
void write_dataset(const std::string& path, const DataSet& d);

struct PositivityCell {
  int hospital = 0;  // 1-based for reporting
  int surgeon = 0;
  long count = 0;
  std::vector<std::string> flags;
};

struct PositivityReport {
  std::vector<PositivityCell> cells;
  // Indices of covariates detected as two-valued, with their observed levels.
  std::vector<int> binary_covariates;
  std::vector<std::pair<double, double>> binary_levels;

  long total_count() const;
  bool has_flags() const;
  std::string to_csv() const;  // hospital,surgeon,count,flags
};

// Per-cell patient counts and, for each detected two-valued covariate, the
// per-stratum counts. Cells missing an observed stratum are flagged, as are
// cells with fewer than 2 patients. Reporting only; never an error.
PositivityReport positivity_report(const DataSet& d);

// Sample variance of the outcome with divisor n-1.
double empirical_variance(const DataSet& d);

}  // namespace vardecomp

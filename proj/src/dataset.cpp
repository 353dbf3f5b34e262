#include "vardecomp/dataset.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "vardecomp/math.hpp"

namespace vardecomp {

// ---------------------------------------------------------------------------
// DataSet
// ---------------------------------------------------------------------------

DataSet::DataSet(Hierarchy hierarchy, Eigen::VectorXd y, Eigen::MatrixXd x,
                 std::vector<int> hospital, std::vector<int> surgeon,
                 std::vector<std::string> covariate_names, OutcomeKind kind)
    : hierarchy_(std::move(hierarchy)),
      y_(std::move(y)),
      x_(std::move(x)),
      hospital_(std::move(hospital)),
      surgeon_(std::move(surgeon)),
      covariate_names_(std::move(covariate_names)),
      kind_(kind) {
  const Eigen::Index n = y_.size();
  if (n < 1) throw DataError("dataset must contain at least one record");
  if (x_.rows() != n || static_cast<Eigen::Index>(hospital_.size()) != n ||
      static_cast<Eigen::Index>(surgeon_.size()) != n) {
    throw DataError("dataset column lengths disagree");
  }
  if (static_cast<int>(covariate_names_.size()) != x_.cols()) {
    throw DataError("covariate name count does not match covariate columns");
  }
  cell_.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    if (!hierarchy_.valid_cell(hospital_[i], surgeon_[i])) {
      throw DataError("record references a (hospital, surgeon) pair outside the hierarchy");
    }
    cell_[i] = hierarchy_.cell_index(hospital_[i], surgeon_[i]);
    if (!std::isfinite(y_[i])) throw DataError("outcome contains a non-finite value");
    for (int j = 0; j < x_.cols(); ++j) {
      if (!std::isfinite(x_(i, j))) throw DataError("covariates contain a non-finite value");
    }
    if (kind_ == OutcomeKind::binary && y_[i] != 0.0 && y_[i] != 1.0) {
      throw DataError("outcome out of range: binary outcomes must be 0 or 1");
    }
  }
  hospital_labels_.resize(hierarchy_.hospitals());
  for (int z = 0; z < hierarchy_.hospitals(); ++z) hospital_labels_[z] = z + 1;
  surgeon_labels_.resize(hierarchy_.cells());
  for (int c = 0; c < hierarchy_.cells(); ++c) surgeon_labels_[c] = hierarchy_.cell_surgeon(c) + 1;
}

void DataSet::set_labels(std::vector<long> hospital_labels, std::vector<long> surgeon_labels) {
  if (static_cast<int>(hospital_labels.size()) != hierarchy_.hospitals() ||
      static_cast<int>(surgeon_labels.size()) != hierarchy_.cells()) {
    throw DataError("label table size does not match hierarchy");
  }
  hospital_labels_ = std::move(hospital_labels);
  surgeon_labels_ = std::move(surgeon_labels);
}

DataSet DataSet::with_outcome(Eigen::VectorXd new_y, OutcomeKind kind) const {
  DataSet out(hierarchy_, std::move(new_y), x_, hospital_, surgeon_, covariate_names_, kind);
  out.hospital_labels_ = hospital_labels_;
  out.surgeon_labels_ = surgeon_labels_;
  return out;
}

// ---------------------------------------------------------------------------
// CSV ingestion
// ---------------------------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur.push_back(ch);
    }
  }
  fields.push_back(cur);
  return fields;
}

std::string trim(const std::string& s) {
  auto b = s.find_first_not_of(" \t");
  auto e = s.find_last_not_of(" \t");
  if (b == std::string::npos) return "";
  return s.substr(b, e - b + 1);
}

double parse_double(const std::string& field, const std::string& what, std::size_t line_no) {
  const std::string t = trim(field);
  double value = 0.0;
  const char* begin = t.data();
  const char* end = begin + t.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end) {
    throw DataError("parse failure at line " + std::to_string(line_no) + ": bad " + what +
                    " value '" + field + "'");
  }
  return value;
}

long parse_positive_int(const std::string& field, const std::string& what, std::size_t line_no) {
  const std::string t = trim(field);
  long value = 0;
  const char* begin = t.data();
  const char* end = begin + t.size();
  auto [ptr, ec] = std::from_chars(begin, end, value);
  if (ec != std::errc() || ptr != end || value < 1) {
    throw DataError("parse failure at line " + std::to_string(line_no) + ": " + what +
                    " ids must be contiguous positive integers, got '" + field + "'");
  }
  return value;
}

}  // namespace

DataSet load_dataset(const std::string& path, const LoadSchema& schema) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open dataset file '" + path + "'");

  std::string header_line;
  if (!std::getline(in, header_line)) throw DataError("dataset file is empty: " + path);
  const std::vector<std::string> header = split_csv_line(header_line);

  auto column_of = [&](const std::string& name) -> int {
    for (std::size_t j = 0; j < header.size(); ++j) {
      if (trim(header[j]) == name) return static_cast<int>(j);
    }
    return -1;
  };

  const int hosp_col = column_of(schema.hospital_column);
  const int surg_col = column_of(schema.surgeon_column);
  const int y_col = column_of(schema.y_column);
  if (hosp_col < 0) throw DataError("unknown column: '" + schema.hospital_column + "' not in header");
  if (surg_col < 0) throw DataError("unknown column: '" + schema.surgeon_column + "' not in header");
  if (y_col < 0) throw DataError("unknown column: '" + schema.y_column + "' not in header");
  const int id_col = column_of(schema.id_column);  // optional

  std::vector<int> x_cols;
  std::vector<std::string> covariate_names;
  if (schema.covariate_columns.empty()) {
    for (std::size_t j = 0; j < header.size(); ++j) {
      const int jj = static_cast<int>(j);
      if (jj == hosp_col || jj == surg_col || jj == y_col || jj == id_col) continue;
      x_cols.push_back(jj);
      covariate_names.push_back(trim(header[j]));
    }
  } else {
    for (const std::string& name : schema.covariate_columns) {
      const int jj = column_of(name);
      if (jj < 0) throw DataError("unknown column: '" + name + "' not in header");
      x_cols.push_back(jj);
      covariate_names.push_back(name);
    }
  }
  const int p = static_cast<int>(x_cols.size());

  std::vector<double> y_raw;
  std::vector<double> x_raw;
  std::vector<long> hosp_raw;
  std::vector<long> surg_raw;
  std::string line;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const std::vector<std::string> f = split_csv_line(line);
    if (f.size() != header.size()) {
      throw DataError("parse failure at line " + std::to_string(line_no) +
                      ": expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(f.size()));
    }
    hosp_raw.push_back(parse_positive_int(f[hosp_col], "hospital", line_no));
    surg_raw.push_back(parse_positive_int(f[surg_col], "surgeon", line_no));
    y_raw.push_back(parse_double(f[y_col], "outcome", line_no));
    for (int jj : x_cols) x_raw.push_back(parse_double(f[jj], "covariate", line_no));
  }
  const Eigen::Index n = static_cast<Eigen::Index>(y_raw.size());
  if (n < 1) throw DataError("dataset has a header but no records: " + path);

  OutcomeKind kind;
  if (schema.outcome_kind) {
    kind = *schema.outcome_kind;
    if (kind == OutcomeKind::binary) {
      for (double v : y_raw) {
        if (v != 0.0 && v != 1.0) throw DataError("outcome out of range: binary outcomes must be 0 or 1");
      }
    }
  } else {
    bool all01 = true;
    for (double v : y_raw) all01 = all01 && (v == 0.0 || v == 1.0);
    kind = all01 ? OutcomeKind::binary : OutcomeKind::continuous;
  }

  // Relabel hospitals to dense 1..m in ascending label order, and surgeons to
  // dense 1..h_z within each hospital. Original labels are retained.
  std::map<long, int> hosp_map;
  for (long lbl : hosp_raw) hosp_map.emplace(lbl, 0);
  int next = 0;
  for (auto& [lbl, idx] : hosp_map) idx = next++;
  const int m = static_cast<int>(hosp_map.size());

  std::vector<std::map<long, int>> surg_map(m);
  for (Eigen::Index i = 0; i < n; ++i) {
    surg_map[hosp_map.at(hosp_raw[i])].emplace(surg_raw[i], 0);
  }
  std::vector<int> counts(m);
  for (int z = 0; z < m; ++z) {
    int s_next = 0;
    for (auto& [lbl, idx] : surg_map[z]) idx = s_next++;
    counts[z] = s_next;
  }

  Hierarchy hierarchy(counts);
  std::vector<int> hospital(n), surgeon(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    hospital[i] = hosp_map.at(hosp_raw[i]);
    surgeon[i] = surg_map[hospital[i]].at(surg_raw[i]);
  }

  Eigen::VectorXd y = Eigen::Map<Eigen::VectorXd>(y_raw.data(), n);
  Eigen::MatrixXd x(n, p);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < p; ++j) x(i, j) = x_raw[static_cast<std::size_t>(i) * p + j];
  }

  DataSet d(hierarchy, std::move(y), std::move(x), std::move(hospital), std::move(surgeon),
            std::move(covariate_names), kind);

  std::vector<long> hosp_labels(m);
  for (const auto& [lbl, idx] : hosp_map) hosp_labels[idx] = lbl;
  std::vector<long> surg_labels(hierarchy.cells());
  for (int z = 0; z < m; ++z) {
    for (const auto& [lbl, idx] : surg_map[z]) surg_labels[hierarchy.cell_index(z, idx)] = lbl;
  }
  d.set_labels(std::move(hosp_labels), std::move(surg_labels));
  return d;
}

void write_dataset(const std::string& path, const DataSet& d) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write dataset file '" + path + "'");
  out << "id,hospital,surgeon,y";
  for (const std::string& name : d.covariate_names()) out << ',' << name;
  out << '\n';
  char buf[64];
  auto fmt = [&buf](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    out << (i + 1) << ',' << d.hospital_labels()[d.hospital_of(i)] << ','
        << d.surgeon_labels()[d.cell_of(i)] << ',' << fmt(d.y()[i]);
    for (int j = 0; j < d.covariate_dim(); ++j) out << ',' << fmt(d.x()(i, j));
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Positivity diagnostics
// ---------------------------------------------------------------------------

long PositivityReport::total_count() const {
  long total = 0;
  for (const auto& c : cells) total += c.count;
  return total;
}

bool PositivityReport::has_flags() const {
  for (const auto& c : cells) {
    if (!c.flags.empty()) return true;
  }
  return false;
}

std::string PositivityReport::to_csv() const {
  std::ostringstream out;
  out << "hospital,surgeon,count,flags\n";
  for (const auto& c : cells) {
    out << c.hospital << ',' << c.surgeon << ',' << c.count << ',';
    for (std::size_t k = 0; k < c.flags.size(); ++k) {
      if (k > 0) out << ';';
      out << c.flags[k];
    }
    out << '\n';
  }
  return out.str();
}

PositivityReport positivity_report(const DataSet& d) {
  const Hierarchy& hier = d.hierarchy();
  const int q = hier.cells();
  const int p = d.covariate_dim();

  PositivityReport report;
  for (int j = 0; j < p; ++j) {
    std::set<double> values;
    for (Eigen::Index i = 0; i < d.size() && values.size() <= 2; ++i) values.insert(d.x()(i, j));
    if (values.size() == 2) {
      report.binary_covariates.push_back(j);
      auto it = values.begin();
      const double lo = *it++;
      report.binary_levels.emplace_back(lo, *it);
    }
  }

  std::vector<long> counts(q, 0);
  // stratum_counts[cell][covariate k][level 0/1]
  std::vector<std::vector<std::array<long, 2>>> strata(
      q, std::vector<std::array<long, 2>>(report.binary_covariates.size(), {0, 0}));
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    const int c = d.cell_of(i);
    ++counts[c];
    for (std::size_t k = 0; k < report.binary_covariates.size(); ++k) {
      const double v = d.x()(i, report.binary_covariates[k]);
      strata[c][k][v == report.binary_levels[k].first ? 0 : 1]++;
    }
  }

  char buf[64];
  for (int c = 0; c < q; ++c) {
    PositivityCell cell;
    cell.hospital = hier.cell_hospital(c) + 1;
    cell.surgeon = hier.cell_surgeon(c) + 1;
    cell.count = counts[c];
    if (counts[c] < 2) cell.flags.push_back("low_count");
    for (std::size_t k = 0; k < report.binary_covariates.size(); ++k) {
      const std::string name = d.covariate_names()[report.binary_covariates[k]];
      for (int level = 0; level < 2; ++level) {
        if (strata[c][k][level] == 0) {
          const double value =
              level == 0 ? report.binary_levels[k].first : report.binary_levels[k].second;
          std::snprintf(buf, sizeof(buf), "%s=%g", name.c_str(), value);
          cell.flags.emplace_back(buf);
        }
      }
    }
    report.cells.push_back(std::move(cell));
  }
  return report;
}

double empirical_variance(const DataSet& d) {
  if (d.size() < 2) throw DataError("empirical_variance requires at least 2 records");
  return sample_variance(std::span<const double>(d.y().data(), d.y().size()));
}

}  // namespace vardecomp

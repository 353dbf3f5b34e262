#include "vardecomp/serialize.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "vardecomp/errors.hpp"

namespace vardecomp {

namespace {

void escape_into(const std::string& s, std::string& out) {
  out.push_back('"');
  for (char c : s) {
    switch (c) {
      case '"': out += "\\\""; break;
      case '\\': out += "\\\\"; break;
      case '\n': out += "\\n"; break;
      case '\r': out += "\\r"; break;
      case '\t': out += "\\t"; break;
      default:
        if (static_cast<unsigned char>(c) < 0x20) {
          char buf[8];
          std::snprintf(buf, sizeof(buf), "\\u%04x", c);
          out += buf;
        } else {
          out.push_back(c);
        }
    }
  }
  out.push_back('"');
}

void dump_node(const nlohmann::ordered_json& node, int indent, int depth, std::string& out) {
  const std::string pad(static_cast<std::size_t>(indent) * depth, ' ');
  const std::string pad_in(static_cast<std::size_t>(indent) * (depth + 1), ' ');
  char buf[64];
  switch (node.type()) {
    case nlohmann::json::value_t::object: {
      if (node.empty()) {
        out += "{}";
        return;
      }
      out += "{\n";
      bool first = true;
      for (auto it = node.begin(); it != node.end(); ++it) {
        if (!first) out += ",\n";
        first = false;
        out += pad_in;
        escape_into(it.key(), out);
        out += ": ";
        dump_node(it.value(), indent, depth + 1, out);
      }
      out += "\n" + pad + "}";
      return;
    }
    case nlohmann::json::value_t::array: {
      if (node.empty()) {
        out += "[]";
        return;
      }
      out += "[\n";
      bool first = true;
      for (const auto& item : node) {
        if (!first) out += ",\n";
        first = false;
        out += pad_in;
        dump_node(item, indent, depth + 1, out);
      }
      out += "\n" + pad + "]";
      return;
    }
    case nlohmann::json::value_t::string:
      escape_into(node.get_ref<const std::string&>(), out);
      return;
    case nlohmann::json::value_t::boolean:
      out += node.get<bool>() ? "true" : "false";
      return;
    case nlohmann::json::value_t::number_integer:
      std::snprintf(buf, sizeof(buf), "%lld", static_cast<long long>(node.get<std::int64_t>()));
      out += buf;
      return;
    case nlohmann::json::value_t::number_unsigned:
      std::snprintf(buf, sizeof(buf), "%llu",
                    static_cast<unsigned long long>(node.get<std::uint64_t>()));
      out += buf;
      return;
    case nlohmann::json::value_t::number_float: {
      const double v = node.get<double>();
      if (std::isnan(v)) {
        out += "null";
      } else {
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        out += buf;
      }
      return;
    }
    case nlohmann::json::value_t::null:
    default:
      out += "null";
      return;
  }
}

}  // namespace

std::string dump_json17(const nlohmann::ordered_json& doc, int indent) {
  std::string out;
  dump_node(doc, indent, 0, out);
  out.push_back('\n');
  return out;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write file '" + path + "'");
  out << content;
}

// ---------------------------------------------------------------------------

nlohmann::ordered_json json_of(const VarianceComponents& comp) {
  nlohmann::ordered_json doc;
  doc["method"] = to_string(comp.method);
  doc["residual_mode"] = to_string(comp.residual_mode);
  doc["case_mix"] = comp.case_mix;
  doc["between_hospital"] = comp.between_hospital;
  if (comp.has_surgeon_component) {
    doc["between_surgeon"] = comp.between_surgeon;
  } else {
    doc["between_surgeon"] = 0.0;
    doc["surgeon_component_defined"] = false;
  }
  doc["residual"] = comp.residual;
  const double total = comp.total();
  doc["total"] = total;
  nlohmann::ordered_json shares;
  const std::array<const char*, 4> names = {"case_mix", "between_hospital", "between_surgeon",
                                            "residual"};
  const std::array<double, 4> values = comp.as_array();
  for (int j = 0; j < 4; ++j) {
    shares[names[j]] = total != 0.0 ? values[j] / total : 0.0;
  }
  doc["shares"] = shares;
  return doc;
}

nlohmann::ordered_json json_of(const ComponentIntervals& intervals) {
  nlohmann::ordered_json doc;
  doc["level"] = intervals.level;
  const std::array<const char*, 4> names = {"case_mix", "between_hospital", "between_surgeon",
                                            "residual"};
  for (int j = 0; j < 4; ++j) {
    const IntervalSummary& s = intervals.component[j];
    nlohmann::ordered_json entry;
    entry["point"] = s.point;
    entry["lower"] = s.lower;
    entry["upper"] = s.upper;
    entry["mean"] = s.mean;
    entry["sd"] = s.sd;
    doc[names[j]] = entry;
  }
  return doc;
}

nlohmann::ordered_json json_of(const TruthComponents& truth) {
  nlohmann::ordered_json doc;
  const std::array<const char*, 4> names = {"case_mix", "between_hospital", "between_surgeon",
                                            "residual"};
  for (int j = 0; j < 4; ++j) {
    nlohmann::ordered_json entry;
    entry["value"] = truth.value[j];
    entry["mc_se"] = truth.mc_se[j];
    doc[names[j]] = entry;
  }
  doc["n_mc"] = truth.n_mc;
  return doc;
}

nlohmann::ordered_json json_of(const OutcomeParams& params) {
  nlohmann::ordered_json doc;
  doc["link"] = params.link == Link::logit ? "logit" : "identity";
  doc["alpha0"] = params.alpha0;
  doc["beta"] = std::vector<double>(params.beta.data(), params.beta.data() + params.beta.size());
  doc["tau2"] = params.tau2;
  doc["kappa2"] = params.kappa2;
  if (params.link == Link::identity) doc["sigma2"] = params.sigma2;
  doc["tau2_boundary"] = params.tau2_boundary;
  doc["kappa2_boundary"] = params.kappa2_boundary;
  nlohmann::ordered_json hospitals = nlohmann::ordered_json::array();
  for (int z = 0; z < params.hierarchy.hospitals(); ++z) {
    nlohmann::ordered_json entry;
    entry["hospital"] = z + 1;
    entry["effect"] = params.hospital_effects[z];
    hospitals.push_back(entry);
  }
  doc["hospital_effects"] = hospitals;
  nlohmann::ordered_json surgeons = nlohmann::ordered_json::array();
  for (int c = 0; c < params.hierarchy.cells(); ++c) {
    nlohmann::ordered_json entry;
    entry["hospital"] = params.hierarchy.cell_hospital(c) + 1;
    entry["surgeon"] = params.hierarchy.cell_surgeon(c) + 1;
    entry["effect"] = params.surgeon_effects[c];
    surgeons.push_back(entry);
  }
  doc["surgeon_effects"] = surgeons;
  nlohmann::ordered_json meta;
  meta["log_likelihood"] = params.fit_meta.log_likelihood;
  meta["iterations"] = params.fit_meta.iterations;
  meta["converged"] = params.fit_meta.converged;
  meta["warnings"] = params.fit_meta.warnings;
  doc["fit_meta"] = meta;
  return doc;
}

nlohmann::ordered_json json_of(const AssignmentModel& model) {
  nlohmann::ordered_json doc;
  doc["kind"] = model.kind() == AssignmentModel::Kind::joint ? "joint" : "nested";
  const Hierarchy& hier = model.hierarchy();
  doc["surgeons_per_hospital"] = hier.surgeons_per_hospital();
  doc["parameter_order"] = "cell (hospital, surgeon) major; intercept then x1..xp minor";

  auto block_json = [&](const Eigen::MatrixXd& coef, auto cell_of_row) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (Eigen::Index r = 0; r < coef.rows(); ++r) {
      nlohmann::ordered_json entry = cell_of_row(static_cast<int>(r));
      entry["psi"] = coef(r, 0);
      std::vector<double> phi(coef.cols() - 1);
      for (Eigen::Index t = 1; t < coef.cols(); ++t) phi[t - 1] = coef(r, t);
      entry["phi"] = phi;
      arr.push_back(entry);
    }
    return arr;
  };

  if (model.kind() == AssignmentModel::Kind::joint) {
    doc["cells"] = block_json(model.joint_coef(), [&](int r) {
      nlohmann::ordered_json e;
      e["hospital"] = hier.cell_hospital(r + 1) + 1;
      e["surgeon"] = hier.cell_surgeon(r + 1) + 1;
      return e;
    });
  } else {
    doc["hospital_model"] = block_json(model.hospital_coef(), [&](int r) {
      nlohmann::ordered_json e;
      e["hospital"] = r + 2;
      return e;
    });
    nlohmann::ordered_json surg = nlohmann::ordered_json::array();
    for (int z = 0; z < hier.hospitals(); ++z) {
      nlohmann::ordered_json entry;
      entry["hospital"] = z + 1;
      entry["surgeons"] = block_json(model.surgeon_coef()[z], [&](int r) {
        nlohmann::ordered_json e;
        e["surgeon"] = r + 2;
        return e;
      });
      surg.push_back(entry);
    }
    doc["surgeon_models"] = surg;
  }

  const Eigen::MatrixXd& v = model.vcov();
  std::vector<double> flat;
  flat.reserve(v.size());
  for (Eigen::Index r = 0; r < v.rows(); ++r) {
    for (Eigen::Index c = 0; c < v.cols(); ++c) flat.push_back(v(r, c));
  }
  doc["vcov_dim"] = static_cast<int>(v.rows());
  doc["vcov"] = flat;
  nlohmann::ordered_json meta;
  meta["log_likelihood"] = model.fit_meta().log_likelihood;
  meta["iterations"] = model.fit_meta().iterations;
  meta["converged"] = model.fit_meta().converged;
  meta["warnings"] = model.fit_meta().warnings;
  doc["fit_meta"] = meta;
  return doc;
}

nlohmann::ordered_json json_of(const ReplicationResult& result) {
  nlohmann::ordered_json doc;
  doc["replications"] = result.replications_run;
  doc["failures"] = result.failures;
  nlohmann::ordered_json summaries = nlohmann::ordered_json::array();
  for (const ComponentSummary& s : result.summaries) {
    nlohmann::ordered_json entry;
    entry["method"] = to_string(s.method);
    entry["component"] = kComponentNames[s.component];
    entry["mean"] = s.mean;
    entry["sd"] = s.sd;
    entry["q025"] = s.q025;
    entry["q975"] = s.q975;
    entry["mean_ci_low"] = s.mean_ci_low;
    entry["mean_ci_high"] = s.mean_ci_high;
    summaries.push_back(entry);
  }
  doc["summaries"] = summaries;
  if (result.truth) {
    doc["truth"] = json_of(*result.truth);
  } else {
    doc["truth"] = nullptr;
  }
  return doc;
}

std::string components_table(const std::vector<VarianceComponents>& blocks) {
  std::ostringstream out;
  char line[256];
  std::snprintf(line, sizeof(line), "%-14s %12s %12s %12s %12s %12s  %s\n", "method",
                "case_mix", "hospital", "surgeon", "residual", "total", "residual_mode");
  out << line;
  for (const VarianceComponents& c : blocks) {
    std::snprintf(line, sizeof(line), "%-14s %12.6f %12.6f %12.6f %12.6f %12.6f  %s\n",
                  to_string(c.method).c_str(), c.case_mix, c.between_hospital, c.between_surgeon,
                  c.residual, c.total(), to_string(c.residual_mode).c_str());
    out << line;
  }
  return out.str();
}

}  // namespace vardecomp

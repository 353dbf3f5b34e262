#pragma once

#include <json.hpp>
#include <string>

#include "vardecomp/assignment.hpp"
#include "vardecomp/decompose.hpp"
#include "vardecomp/outcome.hpp"
#include "vardecomp/simulation.hpp"
#include "vardecomp/uncertainty.hpp"

namespace vardecomp {

// Serializes an ordered JSON tree with every float printed at 17 significant
// digits, so equal values always produce byte-identical files.
std::string dump_json17(const nlohmann::ordered_json& doc, int indent = 2);

nlohmann::ordered_json json_of(const VarianceComponents& comp);
nlohmann::ordered_json json_of(const ComponentIntervals& intervals);
nlohmann::ordered_json json_of(const TruthComponents& truth);
nlohmann::ordered_json json_of(const OutcomeParams& params);
nlohmann::ordered_json json_of(const AssignmentModel& model);
nlohmann::ordered_json json_of(const ReplicationResult& result);

void write_text_file(const std::string& path, const std::string& content);

// Stable-width human-readable component table.
std::string components_table(const std::vector<VarianceComponents>& blocks);

}  // namespace vardecomp

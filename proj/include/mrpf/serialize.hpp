#pragma once

#include <filesystem>
#include <string>

#include <json.hpp>

#include "mrpf/pipeline.hpp"

namespace mrpf {

inline constexpr const char* kRunFormatVersion = "1";

// Compact layer notation used in configs and checkpoint headers:
// "dense IN OUT", "conv IN OUT K", "relu N".
std::string layer_spec_to_string(const LayerSpec& spec);
LayerSpec layer_spec_from_string(const std::string& text);

// Flat config keys, one per field; unknown keys are rejected. Missing keys
// keep their defaults.
nlohmann::json run_config_to_json(const RunConfig& cfg);
RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

nlohmann::json mrs_report_to_json(const MrsReport& report);
MrsReport mrs_report_from_json(const nlohmann::json& j);

nlohmann::json pruning_plan_to_json(const PruningPlan& plan);
PruningPlan pruning_plan_from_json(const nlohmann::json& j);

nlohmann::json run_record_to_json(const RunRecord& record);
RunRecord run_record_from_json(const nlohmann::json& j);

// Checkpoint: <prefix>.json header (format version, precision, layer specs)
// plus <prefix>.bin holding every weight and bias as concatenated MRPT
// records in layer order.
void save_network(const std::filesystem::path& prefix, const Network& net);
Network load_network(const std::filesystem::path& prefix);

/// Everything a finished run directory holds.
struct LoadedRun {
    RunRecord record;
    Network original;
    Network pruned;
    Network final_net;
};

/// Writes manifest.json, record.json, mrs.json, plan.json and the available
/// checkpoints into dir. Null networks are skipped and the manifest is marked
/// incomplete (partial artifacts from a failed stage).
void persist_run(const std::filesystem::path& dir, const RunRecord& record, const Network* original,
                 const Network* pruned, const Network* final_net);

/// Strict inverse of persist_run for complete runs: format-version mismatches
/// and corrupt or truncated files raise IoError naming the offending file.
LoadedRun load_run(const std::filesystem::path& dir);

/// Record-only load for inspection of partial run directories.
RunRecord load_run_record(const std::filesystem::path& dir);

}  // namespace mrpf

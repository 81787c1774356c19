#pragma once

// Dataset files are JSON lines: metadata, then the treatment catalog, then
// one {"x", "t", "y"} object per unit. Ground truth and the propensity model
// live in a separate file so trainers only ever read observed data.

#include "grd/simulation.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <iosfwd>

namespace grd {

constexpr int kDatasetSchemaVersion = 1;

nlohmann::json to_json(const SimConfig& cfg);
SimConfig sim_config_from_json(const nlohmann::json& j, SimConfig base);

void write_dataset(std::ostream& os, const Dataset& data, const nlohmann::json& metadata);
/// Fills `metadata` (if non-null) with the first line.
Dataset read_dataset(std::istream& is, nlohmann::json* metadata = nullptr);

nlohmann::json truth_to_json(const GroundTruth& truth, const PropensityModel& pm);
void truth_from_json(const nlohmann::json& j, GroundTruth& truth, PropensityModel& pm);

/// Writes in_sample.jsonl, out_sample.jsonl and truth.json into `dir`.
void write_benchmark(const Benchmark& b, const std::filesystem::path& dir);

}  // namespace grd

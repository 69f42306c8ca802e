#pragma once

#include <map>
#include <string>
#include <vector>

#include "dtsurv/data_model.hpp"
#include "dtsurv/network.hpp"
#include "dtsurv/train.hpp"

namespace dtsurv {

inline constexpr const char* kToolVersion = "dtsurv 0.1.0";

struct RunSettings {
    ModelConfig model;
    TrainConfig train;
};

// Applies one "key=value" setting; keys mirror the config field names
// (d_model, n_heads, ..., epochs, lambda_m, ...). Unknown keys are config
// errors so typos fail instead of silently using a default.
void apply_setting(RunSettings& s, const std::string& key, const std::string& value,
                   const std::string& where);

// Key=value lines; blank lines and lines starting with '#' are skipped.
RunSettings parse_settings(const std::string& text, const std::string& where);

// Same line format with comma-separated candidate lists, e.g.
// "lambda_v=0.001,0.01,0.1". Keys are restricted to the sweepable set.
SearchSpace parse_grid(const std::string& text, const std::string& where);

// Every field of both configs as sorted key=value text (the manifest's
// config snapshot; parse_settings round-trips it).
std::map<std::string, std::string> settings_snapshot(const RunSettings& s);

// On-disk dataset bundle under a path prefix:
//   <prefix>_static.csv, <prefix>_dynamic.csv (when dynamic), <prefix>_meta.json
void save_bundle(const Dataset& ds, const std::string& prefix);
Dataset load_bundle(const std::string& prefix);

struct RunManifest {
    std::string command;
    std::string version = kToolVersion;
    std::uint64_t seed = 0;
    std::map<std::string, std::string> config;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    double wall_seconds = 0.0;  // the one field two identical runs may differ in
};

void write_manifest(const RunManifest& m, const std::string& path);

}  // namespace dtsurv

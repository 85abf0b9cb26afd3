#pragma once

#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "met/model.hpp"
#include "met/preprocess.hpp"
#include "met/train.hpp"

namespace met {

/// Everything a CLI run can be configured with. Class count and feature width
/// are not listed: they come from the data.
struct RunConfig {
    PreprocessConfig preprocess;
    ModelConfig model;
    TrainConfig train;
};

/// One settable key, e.g. "model.d_t".
struct ConfigKey {
    std::string name;
    std::string provenance;  // empty when the value is an implementation default
    std::string help;
    std::function<nlohmann::json(const RunConfig&)> get;
    std::function<void(RunConfig&, const nlohmann::json&)> set;
};

const std::vector<ConfigKey>& config_keys();

/// Nested {"preprocess": {...}, "model": {...}, "train": {...}} form.
nlohmann::json to_json(const RunConfig& cfg);
/// Overlays `j` onto `base`. Unknown sections or keys and mistyped values
/// raise ConfigError.
RunConfig apply_json(RunConfig base, const nlohmann::json& j);
/// Sets one dotted key from a JSON value.
void set_key(RunConfig& cfg, const std::string& name, const nlohmann::json& value);

/// "key  default  provenance  help" lines for every key.
std::string describe_keys(const RunConfig& defaults = {});

nlohmann::json section_json(const RunConfig& cfg, const std::string& section);

}  // namespace met

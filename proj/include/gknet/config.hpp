#pragma once

// JSON (de)serialisation of the configuration structs. Unknown keys are
// rejected with ConfigError; missing keys keep their defaults.

#include <filesystem>
#include <json.hpp>

#include "gknet/data.hpp"
#include "gknet/metrics.hpp"
#include "gknet/model.hpp"
#include "gknet/trainer.hpp"

namespace gknet {

using json = nlohmann::json;

void to_json(json& j, const TransformerConfig& c);
void from_json(const json& j, TransformerConfig& c);
void to_json(json& j, const NetworkConfig& c);
void from_json(const json& j, NetworkConfig& c);
void to_json(json& j, const SynthesisConfig& c);
void from_json(const json& j, SynthesisConfig& c);
void to_json(json& j, const LossConfig& c);
void from_json(const json& j, LossConfig& c);
// The network section is kept separate; TrainConfig::network is not serialised here.
void to_json(json& j, const TrainConfig& c);
void from_json(const json& j, TrainConfig& c);

// Top-level file: {"network": {...}, "train": {...}, "synthesis": {...}}.
struct ConfigFile {
  NetworkConfig network = NetworkConfig::desk();
  TrainConfig train = TrainConfig::desk();
  SynthesisConfig synthesis;
};

ConfigFile parse_config(const json& j, ConfigFile base = {});
ConfigFile load_config_file(const std::filesystem::path& path, ConfigFile base = {});
json to_json(const ConfigFile& c);

}  // namespace gknet

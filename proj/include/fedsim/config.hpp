#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedsim/engine.hpp"
#include "fedsim/partition.hpp"
#include "fedsim/tasks.hpp"

namespace fedsim {

// The run-config document. Unknown keys are rejected with their full path;
// every seed is explicit (defaults come from root_seed, never the clock).
struct DataConfig {
  TaskKind task = TaskKind::TextClassification;
  std::string path;  // load a dataset manifest instead of generating
  SyntheticTCConfig tc;
  TaggingConfig st;
};

struct ModelConfig {
  std::size_t feature_dim = 256;
  std::vector<std::string> freeze;
};

struct PartitionConfig {
  PartitionSpec spec;
  std::string path;  // load a partition file instead of generating
};

struct RunConfigFile {
  std::uint64_t root_seed = 0;
  std::string log_path;
  DataConfig data;
  ModelConfig model;
  PartitionConfig partition;
  RoundConfig federation;
};

// Parses and fully validates; throws ConfigError with the offending key path.
RunConfigFile parse_config(const std::string& text);

// Resolved config (defaults filled) as canonical JSON; reparses to an equal
// config.
std::string serialize_config(const RunConfigFile& cfg);

// `--section.key value` style overrides applied to the JSON document before
// parsing.
std::string apply_overrides(
    const std::string& text,
    const std::vector<std::pair<std::string, std::string>>& overrides);

// Materializes the dataset (generate or load) and partition per the config.
Dataset realize_dataset(const RunConfigFile& cfg);
PartitionResult realize_partition(const RunConfigFile& cfg, const Dataset& ds);
TaskBinding realize_binding(const RunConfigFile& cfg, const Dataset& ds);

}  // namespace fedsim

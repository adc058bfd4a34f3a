#pragma once

// Experiment configuration read from a JSON file. Keys mirror the field
// names of the library types; unknown keys are rejected.
//
//   {
//     "seed": 1,
//     "generator": { "num_clients": 240, ..., "seed": 20221 },
//     "dataset_path": "data.txt",
//     "architecture": { "model_dim": 24, "hidden_dim": 32, "num_blocks": 3 },
//     "federated": { "rounds": 100, ..., "server": { "kind": "adam", "lr": 0.01 },
//                    "dropout": { "rates": 0.2, "scheme": "PCPR" },
//                    "aggregation": "coverage_mean" },
//     "central": { "steps": 1500, "batch_size": 32, "lr": 0.003 },
//     "holdout_domain": 2,
//     "target_error": 0.15,
//     "checkpoint": "run/checkpoint.bin",
//     "ablate": { "base_rate": 0.2, "extra": [0.2] },
//     "submodels": { "samples": 50, "rate": 0.5 },
//     "size_report": { "rates": [0.1, 0.2, 0.3, 0.4] }
//   }
//
// Omitted keys take the standard task's values.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"

#include "feddrop/feddrop.hpp"

namespace feddrop::cli {

struct ArchitectureSpec {
  std::size_t model_dim = 0;
  std::size_t hidden_dim = 0;
  std::size_t num_blocks = 0;
  // When set, model_dim/hidden_dim/num_blocks (and the data dimensions) come
  // from make_table3_arch(ff_fraction, total_params).
  std::optional<double> ff_fraction;
  std::size_t total_params = 100000;
};

struct AblateSpec {
  double base_rate = 0.0;
  std::vector<double> extra;
};

struct SubModelSpec {
  std::size_t samples = 50;
  double rate = 0.5;
};

struct RunConfig {
  std::uint64_t seed = 1;
  GeneratorConfig generator;
  std::optional<std::filesystem::path> dataset_path;
  ArchitectureSpec architecture;
  FederatedConfig federated;
  bool rates_explicit = false;  // dropout rates given as a list
  CentralConfig central;
  std::size_t holdout_domain = standard::kHoldoutDomain;
  double target_error = 0.15;
  std::optional<std::filesystem::path> checkpoint;
  AblateSpec ablate;
  SubModelSpec submodels;
  std::vector<double> size_report_rates{0.1, 0.2, 0.3, 0.4};

  static RunConfig defaults();
};

// Throws ConfigError on unknown keys or mistyped values.
RunConfig parse_run_config(const nlohmann::json& doc);
RunConfig load_run_config(const std::filesystem::path& path);

// Model architecture for data of the given dimensions.
Architecture resolve_architecture(const RunConfig& config, std::size_t input_dim,
                                  std::size_t num_classes);

// Replaces the run seed and every seed derived from it.
void apply_seed(RunConfig& config, std::uint64_t seed);

// Dropout rates expanded to one per block.
DropoutConfig resolve_dropout(const RunConfig& config, std::size_t num_blocks);

}  // namespace feddrop::cli

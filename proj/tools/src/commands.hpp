#pragma once

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <span>

#include "feddrop/feddrop.hpp"
#include "run_config.hpp"

namespace feddrop::cli {

struct Invocation {
  RunConfig config;
  std::filesystem::path out_dir;
  std::size_t threads = 1;
};

// Output file names inside the --out directory.
inline constexpr const char* kDatasetFile = "dataset.txt";
inline constexpr const char* kMetricsFile = "metrics.csv";
inline constexpr const char* kSummaryFile = "summary.json";
inline constexpr const char* kCheckpointFile = "checkpoint.bin";
inline constexpr const char* kAblateFile = "ablate.json";
inline constexpr const char* kSubModelsFile = "submodels.json";
inline constexpr const char* kSizeReportFile = "size_report.json";

// The dataset the config describes: read from dataset_path when given,
// generated otherwise.
FederatedDataset load_dataset(const RunConfig& config);

void write_metrics_header(std::ostream& out);
void write_metrics_row(std::ostream& out, const RoundRecord& record);

// Each command writes its files into out_dir and a short report to `log`.
// Failures throw feddrop::Error.
void cmd_generate_data(const Invocation& run, std::ostream& log);
void cmd_train(const Invocation& run, std::ostream& log);
void cmd_adapt(const Invocation& run, std::ostream& log);
void cmd_ablate(const Invocation& run, std::ostream& log);
void cmd_submodels(const Invocation& run, std::ostream& log);
void cmd_size_report(const Invocation& run, std::ostream& log);

}  // namespace feddrop::cli

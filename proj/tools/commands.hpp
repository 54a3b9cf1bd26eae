#pragma once

#include <string>
#include <vector>

#include "gaitstage/data.hpp"
#include "log.hpp"
#include "run_config.hpp"

namespace gaitstage::cli {

// parse -> attach -> impute -> normalize over every walk file in data_dir;
// corrupt files and unknown subjects are skipped with warnings
struct IngestResult {
  std::vector<WalkRecord> walks;
  std::vector<ManifestRow> manifest;
  std::vector<std::string> warnings;
  std::array<std::size_t, kClassCount> class_walk_counts{};
};

IngestResult ingest_walks(const RunConfig& config, const Logger& log);

int cmd_ingest(const RunConfig& config, const Logger& log);
int cmd_crossval(const RunConfig& config, const Logger& log);
int cmd_ablate(const RunConfig& config, const Logger& log);
int cmd_predict(const RunConfig& config, const Logger& log, const std::string& checkpoint_path,
                const std::string& walk_path);

}  // namespace gaitstage::cli

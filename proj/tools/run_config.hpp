#pragma once

#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "gaitstage/evaluation.hpp"
#include "gaitstage/model.hpp"
#include "gaitstage/training.hpp"

namespace gaitstage::cli {

// One structured config file drives every command; overrides address fields
// by dotted key path (e.g. --set train.batch_size=64). All randomness fans
// out from the single top-level seed.
struct RunConfig {
  std::uint64_t seed = 42;
  int verbosity = 1;
  std::string data_dir = "data";
  std::string demographics;  // defaults to <data_dir>/demographics.txt
  std::string output_dir = "out";
  ModelConfig model;
  TrainConfig train;
  CrossValidationConfig cv;

  std::string demographics_path() const {
    return demographics.empty() ? data_dir + "/demographics.txt" : demographics;
  }

  nlohmann::json to_json() const;
};

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides);

// parses "dotted.key=value" and applies it onto the raw json document
void apply_override(nlohmann::json& doc, const std::string& assignment);

}  // namespace gaitstage::cli

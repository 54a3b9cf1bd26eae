#include "run_config.hpp"

#include <fstream>

#include "gaitstage/errors.hpp"

namespace gaitstage::cli {

namespace {

template <class T>
void read_field(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

RunConfig from_json(const nlohmann::json& j) {
  RunConfig c;
  read_field(j, "seed", c.seed);
  read_field(j, "verbosity", c.verbosity);
  if (j.contains("data")) {
    const auto& d = j.at("data");
    read_field(d, "dir", c.data_dir);
    read_field(d, "demographics", c.demographics);
  }
  if (j.contains("output")) read_field(j.at("output"), "dir", c.output_dir);
  if (j.contains("model")) {
    const auto& m = j.at("model");
    read_field(m, "sensor_count", c.model.sensor_count);
    read_field(m, "segment_length", c.model.segment_length);
    read_field(m, "conv_blocks", c.model.conv_blocks);
    read_field(m, "temporal_blocks", c.model.temporal_blocks);
    read_field(m, "spatial_blocks", c.model.spatial_blocks);
    read_field(m, "head_count", c.model.head_count);
    read_field(m, "reduced_dim", c.model.reduced_dim);
    read_field(m, "classifier_hidden", c.model.classifier_hidden);
    read_field(m, "class_count", c.model.class_count);
    read_field(m, "dropout_rate", c.model.dropout_rate);
    if (m.contains("ablation")) {
      c.model.ablation = ablation_from_string(m.at("ablation").get<std::string>());
    }
  }
  if (j.contains("train")) {
    const auto& t = j.at("train");
    read_field(t, "batch_size", c.train.batch_size);
    read_field(t, "max_epochs", c.train.max_epochs);
    read_field(t, "dropout_rate", c.train.dropout_rate);
    read_field(t, "patience", c.train.patience);
  }
  if (j.contains("cv")) {
    const auto& v = j.at("cv");
    read_field(v, "folds", c.cv.folds);
    read_field(v, "workers", c.cv.workers);
    read_field(v, "validation_fraction", c.cv.validation_fraction);
  }
  // single top-level seed fans out to every consumer
  c.train.seed = c.seed;
  c.cv.seed = c.seed;
  return c;
}

}  // namespace

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j;
  j["seed"] = seed;
  j["verbosity"] = verbosity;
  j["data"] = {{"dir", data_dir}, {"demographics", demographics_path()}};
  j["output"] = {{"dir", output_dir}};
  j["model"] = nlohmann::json::parse(model_config_to_json(model));
  j["train"] = {{"batch_size", train.batch_size},
                {"max_epochs", train.max_epochs},
                {"dropout_rate", train.dropout_rate},
                {"patience", train.patience}};
  j["cv"] = {{"folds", cv.folds},
             {"workers", cv.workers},
             {"validation_fraction", cv.validation_fraction}};
  return j;
}

void apply_override(nlohmann::json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw InputError("override must look like key.path=value, got '" + assignment + "'");
  }
  std::string pointer = "/" + assignment.substr(0, eq);
  for (auto& ch : pointer) {
    if (ch == '.') ch = '/';
  }
  const std::string raw = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(raw);
  } catch (const nlohmann::json::parse_error&) {
    value = raw;  // unquoted strings
  }
  try {
    doc[nlohmann::json::json_pointer(pointer)] = value;
  } catch (const nlohmann::json::exception& e) {
    throw InputError("cannot apply override '" + assignment + "': " + e.what());
  }
}

RunConfig load_run_config(const std::string& path, const std::vector<std::string>& overrides) {
  nlohmann::json doc = nlohmann::json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open config file: " + path);
    try {
      in >> doc;
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError("config file " + path + " is not valid JSON: " + e.what());
    }
  }
  for (const auto& o : overrides) apply_override(doc, o);
  try {
    return from_json(doc);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("config error: " + std::string(e.what()));
  }
}

}  // namespace gaitstage::cli

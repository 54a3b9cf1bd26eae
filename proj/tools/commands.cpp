#include "commands.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "gaitstage/errors.hpp"
#include "gaitstage/evaluation.hpp"
#include "gaitstage/model.hpp"
#include "gaitstage/training.hpp"

namespace fs = std::filesystem;

namespace gaitstage::cli {

namespace {

// published reference walk distribution for the full H&Y-staged corpus
constexpr std::array<std::size_t, kClassCount> kReferenceWalkCounts{90, 110, 73, 27};

void echo_config(const RunConfig& config) {
  fs::create_directories(config.output_dir);
  std::ofstream out(config.output_dir + "/config_resolved.json", std::ios::trunc);
  if (!out) throw InputError("cannot write resolved config into " + config.output_dir);
  out << config.to_json().dump(2) << '\n';
}

std::string fold_file(const std::string& dir, const char* stem, std::size_t fold,
                      const char* ext) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%s_fold%02zu.%s", stem, fold + 1, ext);
  return dir + "/" + buf;
}

void write_crossval_outputs(const RunConfig& config, const CrossValidationResult& result,
                            const std::string& suffix = "") {
  const std::string& dir = config.output_dir;
  write_report(result.segment_report, dir + "/report_segment" + suffix + ".csv",
               ReportFormat::delimited);
  write_report(result.segment_report, dir + "/report_segment" + suffix + ".json",
               ReportFormat::structured);
  write_report(result.walk_report, dir + "/report_walk" + suffix + ".csv",
               ReportFormat::delimited);
  write_report(result.walk_report, dir + "/report_walk" + suffix + ".json",
               ReportFormat::structured);
  write_confusion_csv(result.segment_report.confusion,
                      dir + "/confusion_segment" + suffix + ".csv");
  write_confusion_csv(result.walk_report.confusion, dir + "/confusion_walk" + suffix + ".csv");
}

}  // namespace

IngestResult ingest_walks(const RunConfig& config, const Logger& log) {
  if (!fs::is_directory(config.data_dir)) {
    throw InputError("data directory not found: " + config.data_dir);
  }
  const Demographics demographics = parse_demographics(config.demographics_path());

  std::vector<std::string> paths;
  for (const auto& entry : fs::directory_iterator(config.data_dir)) {
    if (!entry.is_regular_file()) continue;
    const std::string name = entry.path().filename().string();
    if (entry.path().extension() == ".txt" && name.size() > 4 &&
        (name.rfind("Ga", 0) == 0 || name.rfind("Ju", 0) == 0 || name.rfind("Si", 0) == 0)) {
      paths.push_back(entry.path().string());
    }
  }
  std::sort(paths.begin(), paths.end());

  IngestResult result;
  for (const std::string& path : paths) {
    WalkRecord record;
    try {
      record = parse_vgrf_file(path);
    } catch (const InputError& e) {
      result.warnings.push_back(std::string("skipped ") + path + ": " + e.what());
      log.warn(result.warnings.back());
      continue;
    }
    std::string warning;
    if (!attach_severity(record, demographics, &warning)) {
      result.warnings.push_back(warning);
      log.warn(warning);
      continue;
    }
    const std::size_t imputed = impute_missing(record);
    if (imputed > 0) {
      log.debug(path + ": imputed " + std::to_string(imputed) + " missing values");
    }
    normalize(record);

    std::string seg_warning;
    const auto segments =
        segment_walk(record, config.model.segment_length, 0.5, &seg_warning);
    if (!seg_warning.empty()) {
      result.warnings.push_back(seg_warning);
      log.warn(seg_warning);
    }
    ManifestRow row;
    row.subject_id = record.subject_id;
    row.walk_id = record.walk_id;
    row.length = record.length();
    row.segment_count = segments.size();
    row.label = static_cast<int>(*record.severity);
    result.manifest.push_back(row);
    result.class_walk_counts[static_cast<std::size_t>(row.label)]++;
    result.walks.push_back(std::move(record));
  }
  if (result.walks.empty()) {
    throw InputError("no walk files found in " + config.data_dir);
  }
  return result;
}

int cmd_ingest(const RunConfig& config, const Logger& log) {
  echo_config(config);
  const IngestResult result = ingest_walks(config, log);
  write_manifest(result.manifest, config.output_dir + "/manifest.csv");
  log.info("ingested " + std::to_string(result.walks.size()) + " walks from " +
           config.data_dir);

  // realized class distribution next to the published reference counts
  std::printf("class distribution (walks): realized vs reference\n");
  for (std::size_t c = 0; c < kClassCount; ++c) {
    std::printf("  %-10s %6zu  vs %6zu\n", class_name(static_cast<int>(c)).c_str(),
                result.class_walk_counts[c], kReferenceWalkCounts[c]);
  }
  std::printf("manifest written to %s/manifest.csv (%zu walks, %zu warnings)\n",
              config.output_dir.c_str(), result.manifest.size(), result.warnings.size());
  return 0;
}

int cmd_crossval(const RunConfig& config, const Logger& log) {
  echo_config(config);
  const IngestResult ingest = ingest_walks(config, log);
  log.info("cross-validating " + std::to_string(ingest.walks.size()) + " walks, k=" +
           std::to_string(config.cv.folds) + ", variant " + to_string(config.model.ablation));
  const CrossValidationResult result =
      cross_validate(ingest.walks, config.model, config.train, config.cv,
                     [&](const std::string& msg) { log.info(msg); });
  for (const auto& w : result.warnings) log.warn(w);

  write_crossval_outputs(config, result);
  for (std::size_t fold = 0; fold < result.histories.size(); ++fold) {
    write_history_csv(result.histories[fold],
                      fold_file(config.output_dir, "history", fold, "csv"));
    save_checkpoint(result.fold_models[fold],
                    fold_file(config.output_dir, "checkpoint", fold, "bin"));
  }
  std::printf("walk-level accuracy:    %.4f\n", result.walk_report.accuracy);
  std::printf("segment-level accuracy: %.4f\n", result.segment_report.accuracy);
  std::printf("reports written to %s\n", config.output_dir.c_str());
  return 0;
}

int cmd_ablate(const RunConfig& config, const Logger& log) {
  echo_config(config);
  const IngestResult ingest = ingest_walks(config, log);
  const std::array<Ablation, 5> order{Ablation::a, Ablation::b, Ablation::c, Ablation::d,
                                      Ablation::full};
  std::ofstream summary(config.output_dir + "/ablation_summary.csv", std::ios::trunc);
  if (!summary) throw InputError("cannot write ablation summary into " + config.output_dir);
  summary << "variant,weighted_precision,weighted_recall,weighted_f1,accuracy\n";
  for (const Ablation variant : order) {
    const ModelConfig variant_config = apply_ablation(config.model, variant);
    log.info("ablation variant " + to_string(variant) + " starting");
    CrossValidationResult result;
    try {
      result = cross_validate(ingest.walks, variant_config, config.train, config.cv,
                              [&](const std::string& msg) {
                                log.info("[" + to_string(variant) + "] " + msg);
                              });
    } catch (const DivergenceError& e) {
      throw DivergenceError("variant " + to_string(variant) + ": " + e.what(), e.epoch,
                            e.batch);
    }
    for (const auto& w : result.warnings) log.warn("[" + to_string(variant) + "] " + w);
    const EvaluationReport& walk = result.walk_report;
    char line[160];
    std::snprintf(line, sizeof(line), "%s,%.6f,%.6f,%.6f,%.6f\n",
                  to_string(variant).c_str(), walk.weighted_precision, walk.weighted_recall,
                  walk.weighted_f1, walk.accuracy);
    summary << line;
    summary.flush();
    write_report(walk, config.output_dir + "/report_walk_" + to_string(variant) + ".csv",
                 ReportFormat::delimited);
    write_report(walk, config.output_dir + "/report_walk_" + to_string(variant) + ".json",
                 ReportFormat::structured);
    std::printf("variant %-4s accuracy %.4f\n", to_string(variant).c_str(), walk.accuracy);
  }
  std::printf("ablation summary written to %s/ablation_summary.csv\n",
              config.output_dir.c_str());
  return 0;
}

int cmd_predict(const RunConfig& config, const Logger& log, const std::string& checkpoint_path,
                const std::string& walk_path) {
  echo_config(config);
  const HybridModel model = load_checkpoint(checkpoint_path);
  if (model.config.sensor_count != kSensorCount) {
    throw PreconditionError("checkpoint was built for sensor_count " +
                            std::to_string(model.config.sensor_count) +
                            ", walk files carry " + std::to_string(kSensorCount) +
                            " channels");
  }
  WalkRecord record = parse_vgrf_file(walk_path);
  impute_missing(record);
  normalize(record);
  record.severity = Severity::healthy;  // label placeholder; unused for prediction
  if (record.length() < model.config.segment_length) {
    throw PreconditionError("walk too short: " + std::to_string(record.length()) +
                            " samples, need at least " +
                            std::to_string(model.config.segment_length));
  }
  const auto segments = segment_walk(record, model.config.segment_length, 0.5);
  const Predictions preds = predict(model, segments, config.train.batch_size);
  const int voted = majority_vote(preds.classes, preds.probabilities);

  std::vector<std::size_t> votes(model.config.class_count, 0);
  for (int c : preds.classes) votes[static_cast<std::size_t>(c)]++;
  log.info("predicted over " + std::to_string(segments.size()) + " segments of " + walk_path);
  std::printf("walk: %s_%s (%zu segments)\n", record.subject_id.c_str(),
              record.walk_id.c_str(), segments.size());
  std::printf("predicted stage: %s\n", class_name(voted).c_str());
  std::printf("vote shares:\n");
  for (std::size_t c = 0; c < votes.size(); ++c) {
    std::printf("  %-10s %5.1f%% (%zu/%zu)\n", class_name(static_cast<int>(c)).c_str(),
                100.0 * static_cast<double>(votes[c]) / static_cast<double>(segments.size()),
                votes[c], segments.size());
  }
  return 0;
}

}  // namespace gaitstage::cli

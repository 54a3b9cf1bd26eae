#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gaitstage/data.hpp"
#include "gaitstage/model.hpp"
#include "gaitstage/training.hpp"

namespace gaitstage {

struct ConfusionMatrix {
  std::size_t class_count = 0;
  std::vector<std::int64_t> counts;  // row-major; rows true class, cols predicted

  ConfusionMatrix() = default;
  explicit ConfusionMatrix(std::size_t classes)
      : class_count(classes), counts(classes * classes, 0) {}

  void add(int truth, int predicted, std::int64_t n = 1);
  std::int64_t at(std::size_t truth, std::size_t predicted) const {
    return counts[truth * class_count + predicted];
  }
  std::int64_t total() const;
  std::int64_t trace() const;
  std::int64_t row_sum(std::size_t truth) const;
  std::int64_t col_sum(std::size_t predicted) const;
  ConfusionMatrix& operator+=(const ConfusionMatrix& other);
};

struct ClassMetrics {
  std::int64_t support = 0;
  double precision = 0, recall = 0, f1 = 0;
  // zero-denominator cases report 0 with the matching flag cleared
  bool precision_defined = true, recall_defined = true, f1_defined = true;
};

struct EvaluationReport {
  std::string level;  // "segment" or "walk"
  ConfusionMatrix confusion;
  std::vector<ClassMetrics> per_class;
  double accuracy = 0;
  double macro_precision = 0, macro_recall = 0, macro_f1 = 0;
  double weighted_precision = 0, weighted_recall = 0, weighted_f1 = 0;
  std::vector<double> fold_accuracies;
};

// one-vs-rest precision/recall/F1 per class plus macro/weighted averages
EvaluationReport compute_metrics(const ConfusionMatrix& cm);

// Modal predicted class; ties broken by the larger summed probability over
// the tied classes, remaining ties by the lower class index.
int majority_vote(const std::vector<int>& predictions,
                  const std::vector<std::vector<double>>& probabilities);

enum class ReportFormat { delimited, structured };

void write_report(const EvaluationReport& report, const std::string& path,
                  ReportFormat format);
EvaluationReport read_report(const std::string& path);  // structured format only
void write_confusion_csv(const ConfusionMatrix& cm, const std::string& path);

struct CrossValidationConfig {
  std::size_t folds = 10;
  std::uint64_t seed = 42;
  std::size_t workers = 1;
  double validation_fraction = 0.1;  // of training-portion subjects, per class
};

struct CrossValidationResult {
  EvaluationReport segment_report;
  EvaluationReport walk_report;
  std::vector<TrainingHistory> histories;   // one per fold
  std::vector<HybridModel> fold_models;     // best-validation weights per fold
  FoldPlan plan;
  std::vector<std::string> warnings;
};

using LogFn = std::function<void(const std::string&)>;

// Subject-level k-fold cross-validation: trains on the other folds' subjects
// (with an inner stratified validation split), predicts every test segment,
// majority-votes per walk and pools both confusion matrices across folds.
// Walks must be labeled, imputed and normalized.
CrossValidationResult cross_validate(const std::vector<WalkRecord>& walks,
                                     const ModelConfig& model_config,
                                     const TrainConfig& train_config,
                                     const CrossValidationConfig& cv_config,
                                     const LogFn& log = {});

}  // namespace gaitstage

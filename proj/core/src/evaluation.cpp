#include "gaitstage/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "gaitstage/errors.hpp"
#include "gaitstage/rng.hpp"

namespace gaitstage {

void ConfusionMatrix::add(int truth, int predicted, std::int64_t n) {
  if (truth < 0 || predicted < 0 || static_cast<std::size_t>(truth) >= class_count ||
      static_cast<std::size_t>(predicted) >= class_count) {
    throw std::invalid_argument("confusion matrix index out of range");
  }
  counts[static_cast<std::size_t>(truth) * class_count + static_cast<std::size_t>(predicted)] +=
      n;
}

std::int64_t ConfusionMatrix::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::int64_t{0});
}

std::int64_t ConfusionMatrix::trace() const {
  std::int64_t t = 0;
  for (std::size_t c = 0; c < class_count; ++c) t += at(c, c);
  return t;
}

std::int64_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::int64_t t = 0;
  for (std::size_t c = 0; c < class_count; ++c) t += at(truth, c);
  return t;
}

std::int64_t ConfusionMatrix::col_sum(std::size_t predicted) const {
  std::int64_t t = 0;
  for (std::size_t r = 0; r < class_count; ++r) t += at(r, predicted);
  return t;
}

ConfusionMatrix& ConfusionMatrix::operator+=(const ConfusionMatrix& other) {
  if (class_count == 0) {
    *this = other;
    return *this;
  }
  if (other.class_count != class_count) {
    throw std::invalid_argument("confusion matrix class counts differ");
  }
  for (std::size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
  return *this;
}

EvaluationReport compute_metrics(const ConfusionMatrix& cm) {
  const std::int64_t total = cm.total();
  if (cm.class_count == 0 || total == 0) {
    throw std::invalid_argument("compute_metrics: empty confusion matrix");
  }
  EvaluationReport report;
  report.confusion = cm;
  report.per_class.resize(cm.class_count);
  double weighted_pr = 0, weighted_re = 0, weighted_f1 = 0;
  double macro_pr = 0, macro_re = 0, macro_f1 = 0;
  for (std::size_t c = 0; c < cm.class_count; ++c) {
    ClassMetrics& m = report.per_class[c];
    const std::int64_t tp = cm.at(c, c);
    const std::int64_t fp = cm.col_sum(c) - tp;
    const std::int64_t fn = cm.row_sum(c) - tp;
    m.support = tp + fn;
    if (tp + fp > 0) {
      m.precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
    } else {
      m.precision_defined = false;
    }
    if (tp + fn > 0) {
      m.recall = static_cast<double>(tp) / static_cast<double>(tp + fn);
    } else {
      m.recall_defined = false;
    }
    if (m.precision + m.recall > 0.0) {
      m.f1 = 2.0 * m.precision * m.recall / (m.precision + m.recall);
    } else {
      m.f1_defined = false;
    }
    macro_pr += m.precision;
    macro_re += m.recall;
    macro_f1 += m.f1;
    const double w = static_cast<double>(m.support);
    weighted_pr += w * m.precision;
    weighted_re += w * m.recall;
    weighted_f1 += w * m.f1;
  }
  const double classes = static_cast<double>(cm.class_count);
  report.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  report.macro_precision = macro_pr / classes;
  report.macro_recall = macro_re / classes;
  report.macro_f1 = macro_f1 / classes;
  report.weighted_precision = weighted_pr / static_cast<double>(total);
  report.weighted_recall = weighted_re / static_cast<double>(total);
  report.weighted_f1 = weighted_f1 / static_cast<double>(total);
  return report;
}

int majority_vote(const std::vector<int>& predictions,
                  const std::vector<std::vector<double>>& probabilities) {
  if (predictions.empty()) throw std::invalid_argument("majority_vote: empty prediction list");
  if (!probabilities.empty() && probabilities.size() != predictions.size()) {
    throw std::invalid_argument("majority_vote: probability list size mismatch");
  }
  std::map<int, std::size_t> votes;
  for (int p : predictions) votes[p]++;
  std::size_t top = 0;
  for (const auto& [cls, n] : votes) top = std::max(top, n);
  std::vector<int> tied;
  for (const auto& [cls, n] : votes) {
    if (n == top) tied.push_back(cls);
  }
  if (tied.size() == 1 || probabilities.empty()) return tied.front();
  // summed softmax probability across all segments decides among tied classes
  double best_mass = -1.0;
  int winner = tied.front();
  for (int cls : tied) {
    double mass = 0.0;
    for (const auto& row : probabilities) mass += row[static_cast<std::size_t>(cls)];
    if (mass > best_mass) {  // strict: ties keep the lower class index
      best_mass = mass;
      winner = cls;
    }
  }
  return winner;
}

// ---------------------------------------------------------------------------
// report files

namespace {

std::string fmt6(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::string metric_flags(const ClassMetrics& m) {
  std::vector<std::string> flags;
  if (!m.precision_defined) flags.push_back("precision_undefined");
  if (!m.recall_defined) flags.push_back("recall_undefined");
  if (!m.f1_defined) flags.push_back("f1_undefined");
  std::string out;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (i) out += '|';
    out += flags[i];
  }
  return out;
}

}  // namespace

void write_report(const EvaluationReport& report, const std::string& path,
                  ReportFormat format) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write report: " + path);
  if (format == ReportFormat::delimited) {
    out << "label,support,precision,recall,f1,accuracy,flags\n";
    std::int64_t total = 0;
    for (const auto& m : report.per_class) total += m.support;
    for (std::size_t c = 0; c < report.per_class.size(); ++c) {
      const ClassMetrics& m = report.per_class[c];
      out << class_name(static_cast<int>(c)) << ',' << m.support << ',' << fmt6(m.precision)
          << ',' << fmt6(m.recall) << ',' << fmt6(m.f1) << ',' << fmt6(report.accuracy) << ','
          << metric_flags(m) << '\n';
    }
    out << "macro_avg," << total << ',' << fmt6(report.macro_precision) << ','
        << fmt6(report.macro_recall) << ',' << fmt6(report.macro_f1) << ','
        << fmt6(report.accuracy) << ",\n";
    out << "weighted_avg," << total << ',' << fmt6(report.weighted_precision) << ','
        << fmt6(report.weighted_recall) << ',' << fmt6(report.weighted_f1) << ','
        << fmt6(report.accuracy) << ",\n";
    return;
  }
  nlohmann::json j;
  j["level"] = report.level;
  j["accuracy"] = report.accuracy;
  j["macro"] = {{"precision", report.macro_precision},
                {"recall", report.macro_recall},
                {"f1", report.macro_f1}};
  j["weighted"] = {{"precision", report.weighted_precision},
                   {"recall", report.weighted_recall},
                   {"f1", report.weighted_f1}};
  j["fold_accuracies"] = report.fold_accuracies;
  j["confusion"] = {{"class_count", report.confusion.class_count},
                    {"counts", report.confusion.counts}};
  nlohmann::json classes = nlohmann::json::array();
  for (std::size_t c = 0; c < report.per_class.size(); ++c) {
    const ClassMetrics& m = report.per_class[c];
    classes.push_back({{"label", class_name(static_cast<int>(c))},
                       {"support", m.support},
                       {"precision", m.precision},
                       {"recall", m.recall},
                       {"f1", m.f1},
                       {"precision_defined", m.precision_defined},
                       {"recall_defined", m.recall_defined},
                       {"f1_defined", m.f1_defined}});
  }
  j["per_class"] = classes;
  out << j.dump(2) << '\n';
}

EvaluationReport read_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open report: " + path);
  nlohmann::json j;
  in >> j;
  EvaluationReport report;
  report.level = j.at("level").get<std::string>();
  report.accuracy = j.at("accuracy").get<double>();
  report.macro_precision = j.at("macro").at("precision").get<double>();
  report.macro_recall = j.at("macro").at("recall").get<double>();
  report.macro_f1 = j.at("macro").at("f1").get<double>();
  report.weighted_precision = j.at("weighted").at("precision").get<double>();
  report.weighted_recall = j.at("weighted").at("recall").get<double>();
  report.weighted_f1 = j.at("weighted").at("f1").get<double>();
  report.fold_accuracies = j.at("fold_accuracies").get<std::vector<double>>();
  report.confusion.class_count = j.at("confusion").at("class_count").get<std::size_t>();
  report.confusion.counts = j.at("confusion").at("counts").get<std::vector<std::int64_t>>();
  for (const auto& c : j.at("per_class")) {
    ClassMetrics m;
    m.support = c.at("support").get<std::int64_t>();
    m.precision = c.at("precision").get<double>();
    m.recall = c.at("recall").get<double>();
    m.f1 = c.at("f1").get<double>();
    m.precision_defined = c.at("precision_defined").get<bool>();
    m.recall_defined = c.at("recall_defined").get<bool>();
    m.f1_defined = c.at("f1_defined").get<bool>();
    report.per_class.push_back(m);
  }
  return report;
}

void write_confusion_csv(const ConfusionMatrix& cm, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write confusion matrix: " + path);
  for (std::size_t r = 0; r < cm.class_count; ++r) {
    for (std::size_t c = 0; c < cm.class_count; ++c) {
      if (c) out << ',';
      out << cm.at(r, c);
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// cross-validation

namespace {

struct FoldOutcome {
  ConfusionMatrix segment_cm;
  ConfusionMatrix walk_cm;
  double segment_accuracy = 0;
  double walk_accuracy = 0;
  TrainingHistory history;
  HybridModel model;
  std::vector<std::string> warnings;
};

struct SubjectData {
  SubjectInfo info;
  std::vector<Segment> segments;  // all walks, in walk order
};

}  // namespace

CrossValidationResult cross_validate(const std::vector<WalkRecord>& walks,
                                     const ModelConfig& model_config,
                                     const TrainConfig& train_config,
                                     const CrossValidationConfig& cv_config,
                                     const LogFn& log) {
  if (model_config.sensor_count != kSensorCount) {
    throw InputError("cross_validate: model sensor_count must be " +
                     std::to_string(kSensorCount) + " to match walk records");
  }
  auto say = [&](const std::string& msg) {
    if (log) log(msg);
  };

  CrossValidationResult result;

  // subject roster and per-subject segments
  std::map<std::string, SubjectData> subjects;
  for (const WalkRecord& walk : walks) {
    if (!walk.severity || !walk.normalized) {
      throw PreconditionError("cross_validate: walk " + walk.subject_id + "_" + walk.walk_id +
                              " is not labeled and normalized");
    }
    auto& entry = subjects[walk.subject_id];
    if (entry.info.id.empty()) {
      entry.info = SubjectInfo{walk.subject_id, walk.cohort, *walk.severity};
    } else if (entry.info.severity != *walk.severity) {
      result.warnings.push_back("subject " + walk.subject_id +
                                " has inconsistent severity across walks; using first seen");
    }
    std::string warning;
    auto segs = segment_walk(walk, model_config.segment_length, 0.5, &warning);
    if (!warning.empty()) result.warnings.push_back(warning);
    for (auto& s : segs) entry.segments.push_back(std::move(s));
  }
  std::vector<SubjectInfo> roster;
  roster.reserve(subjects.size());
  for (const auto& [id, data] : subjects) roster.push_back(data.info);

  result.plan = stratified_folds(roster, cv_config.folds, cv_config.seed);
  const std::size_t k = cv_config.folds;

  auto run_fold = [&](std::size_t fold) -> FoldOutcome {
    FoldOutcome outcome;
    outcome.segment_cm = ConfusionMatrix(model_config.class_count);
    outcome.walk_cm = ConfusionMatrix(model_config.class_count);

    std::unordered_set<std::string> test_ids(result.plan.folds[fold].begin(),
                                             result.plan.folds[fold].end());
    // inner validation split: a stratified slice of the training subjects
    std::array<std::vector<std::string>, kClassCount> train_by_class;
    for (const auto& [id, data] : subjects) {
      if (!test_ids.count(id)) {
        train_by_class[static_cast<std::size_t>(data.info.severity)].push_back(id);
      }
    }
    Rng val_rng(derive_seed(cv_config.seed, seed_salt::valsplit, fold));
    std::unordered_set<std::string> val_ids;
    for (auto& ids : train_by_class) {
      std::sort(ids.begin(), ids.end());
      val_rng.shuffle(ids);
      std::size_t take = static_cast<std::size_t>(
          static_cast<double>(ids.size()) * cv_config.validation_fraction);
      if (take == 0 && ids.size() >= 2) take = 1;
      for (std::size_t i = 0; i < take; ++i) val_ids.insert(ids[i]);
    }
    if (val_ids.empty()) {
      // tiny rosters: promote one subject from the largest class so the
      // monitored validation split exists
      std::size_t best = kClassCount;
      for (std::size_t cls = 0; cls < kClassCount; ++cls) {
        if (train_by_class[cls].empty()) continue;
        if (best == kClassCount ||
            train_by_class[cls].size() > train_by_class[best].size()) {
          best = cls;
        }
      }
      std::size_t total_train = 0;
      for (const auto& ids : train_by_class) total_train += ids.size();
      if (best < kClassCount && total_train >= 2) {
        val_ids.insert(train_by_class[best].front());
        outcome.warnings.push_back("fold " + std::to_string(fold + 1) +
                                   ": training roster too small for a stratified "
                                   "validation slice; held out one subject");
      }
    }

    std::vector<Segment> train_segments, val_segments;
    for (const auto& [id, data] : subjects) {
      if (test_ids.count(id)) continue;
      auto& dst = val_ids.count(id) ? val_segments : train_segments;
      dst.insert(dst.end(), data.segments.begin(), data.segments.end());
    }
    std::array<bool, kClassCount> seen{};
    for (const Segment& s : train_segments) seen[static_cast<std::size_t>(s.label)] = true;
    for (std::size_t c = 0; c < model_config.class_count && c < kClassCount; ++c) {
      if (!seen[c]) {
        outcome.warnings.push_back("fold " + std::to_string(fold + 1) + ": class " +
                                   class_name(static_cast<int>(c)) +
                                   " absent from training data");
      }
    }

    HybridModel model =
        build_model(model_config, derive_seed(cv_config.seed, seed_salt::fold_rng, fold));
    TrainConfig fold_train = train_config;
    fold_train.seed = derive_seed(train_config.seed, seed_salt::fold_rng, fold);
    outcome.history = fit(model, train_segments, val_segments, fold_train);

    // per-walk prediction over the fold's test subjects
    std::int64_t seg_hits = 0, seg_total = 0, walk_hits = 0, walk_total = 0;
    for (const auto& id : result.plan.folds[fold]) {
      const SubjectData& data = subjects.at(id);
      if (data.segments.empty()) {
        outcome.warnings.push_back("fold " + std::to_string(fold + 1) + ": subject " + id +
                                   " has no segments; skipped");
        continue;
      }
      const Predictions preds = predict(model, data.segments, train_config.batch_size);
      // group by walk
      std::map<std::string, std::pair<std::vector<int>, std::vector<std::vector<double>>>>
          by_walk;
      for (std::size_t i = 0; i < data.segments.size(); ++i) {
        auto& bucket = by_walk[data.segments[i].walk_id];
        bucket.first.push_back(preds.classes[i]);
        bucket.second.push_back(preds.probabilities[i]);
        outcome.segment_cm.add(data.segments[i].label, preds.classes[i]);
        seg_total++;
        if (preds.classes[i] == data.segments[i].label) seg_hits++;
      }
      const int truth = static_cast<int>(data.info.severity);
      for (const auto& [walk_id, bucket] : by_walk) {
        const int voted = majority_vote(bucket.first, bucket.second);
        outcome.walk_cm.add(truth, voted);
        walk_total++;
        if (voted == truth) walk_hits++;
      }
    }
    outcome.segment_accuracy =
        seg_total ? static_cast<double>(seg_hits) / static_cast<double>(seg_total) : 0.0;
    outcome.walk_accuracy =
        walk_total ? static_cast<double>(walk_hits) / static_cast<double>(walk_total) : 0.0;
    outcome.model = std::move(model);
    return outcome;
  };

  std::vector<FoldOutcome> outcomes(k);
  const std::size_t workers = std::max<std::size_t>(1, std::min(cv_config.workers, k));
  if (workers == 1) {
    for (std::size_t fold = 0; fold < k; ++fold) {
      say("fold " + std::to_string(fold + 1) + "/" + std::to_string(k) + " training");
      outcomes[fold] = run_fold(fold);
    }
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&]() {
        while (true) {
          const std::size_t fold = next.fetch_add(1);
          if (fold >= k) return;
          outcomes[fold] = run_fold(fold);
        }
      });
    }
    for (auto& t : pool) t.join();
  }

  // deterministic ordered merge by fold index
  ConfusionMatrix segment_cm(model_config.class_count);
  ConfusionMatrix walk_cm(model_config.class_count);
  for (std::size_t fold = 0; fold < k; ++fold) {
    FoldOutcome& o = outcomes[fold];
    segment_cm += o.segment_cm;
    walk_cm += o.walk_cm;
    result.histories.push_back(std::move(o.history));
    result.fold_models.push_back(std::move(o.model));
    for (auto& w : o.warnings) result.warnings.push_back(std::move(w));
    say("fold " + std::to_string(fold + 1) + "/" + std::to_string(k) + " walk accuracy " +
        fmt6(o.walk_accuracy));
  }
  result.segment_report = compute_metrics(segment_cm);
  result.segment_report.level = "segment";
  result.walk_report = compute_metrics(walk_cm);
  result.walk_report.level = "walk";
  for (const FoldOutcome& o : outcomes) {
    result.segment_report.fold_accuracies.push_back(o.segment_accuracy);
    result.walk_report.fold_accuracies.push_back(o.walk_accuracy);
  }
  return result;
}

}  // namespace gaitstage

#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "gaitstage/tensor.hpp"

namespace gaitstage {

inline constexpr std::size_t kSensorCount = 18;
inline constexpr std::size_t kClassCount = 4;
inline constexpr std::size_t kDefaultSegmentLength = 100;

enum class Study { ga, ju, si };
enum class Cohort { control, parkinson };
// class indices: 0 healthy, 1 H&Y 2, 2 H&Y 2.5, 3 H&Y 3
enum class Severity { healthy = 0, stage2 = 1, stage2_5 = 2, stage3 = 3 };

std::string to_string(Study study);
std::string to_string(Cohort cohort);
std::string class_name(int label);

struct WalkRecord {
  std::string subject_id;  // e.g. "GaPt07"
  std::string walk_id;     // e.g. "02"
  Study study = Study::ga;
  Cohort cohort = Cohort::control;
  std::optional<Severity> severity;
  std::vector<double> time;
  std::array<std::vector<double>, kSensorCount> channels;
  bool imputed = false;
  bool normalized = false;

  std::size_t length() const { return time.size(); }
};

// One p-column window of a walk; the model input unit.
struct Segment {
  std::vector<double> values;  // row-major (sensor, time), kSensorCount x length
  std::size_t length = 0;
  int label = 0;
  std::string subject_id;
  std::string walk_id;
  std::size_t start_offset = 0;
};

struct Demographics {
  struct Row {
    Cohort cohort = Cohort::control;
    double hoehn_yahr = 0.0;
  };
  std::unordered_map<std::string, Row> by_subject;
};

// Header line then rows of: subject_id, group (control|parkinson), H&Y value
// ('-' allowed for controls); comma- or whitespace-delimited.
Demographics parse_demographics(const std::string& path);

// Whitespace-delimited numeric text, 19 columns (time then 18 VGRF channels);
// identity parsed from the file-name convention <Study><Co|Pt><nn>_<ww>.txt.
WalkRecord parse_vgrf_file(const std::string& path);

// True when a severity class was attached; false (with *warning filled) when
// the subject is unknown or its H&Y value has no class.
bool attach_severity(WalkRecord& record, const Demographics& demographics,
                     std::string* warning = nullptr);

// Non-finite entries become 0.0; returns the number of imputed cells.
std::size_t impute_missing(WalkRecord& record);

// Per-channel z-score over the whole walk; zero-variance channels become
// all-zero. Idempotent.
void normalize(WalkRecord& record);

// Windows of p samples starting at multiples of p*(1-overlap); incomplete
// tail dropped. Walks shorter than p yield an empty list with *warning set.
std::vector<Segment> segment_walk(const WalkRecord& record,
                                  std::size_t p = kDefaultSegmentLength,
                                  double overlap = 0.5, std::string* warning = nullptr);

std::size_t segment_count_for_length(std::size_t walk_length, std::size_t p,
                                     std::size_t stride);

struct SubjectInfo {
  std::string id;
  Cohort cohort = Cohort::control;
  Severity severity = Severity::healthy;
};

struct FoldPlan {
  std::vector<std::vector<std::string>> folds;  // disjoint subject-id sets
  std::vector<std::array<std::size_t, kClassCount>> class_tallies;
};

// Subject-level assignment, stratified by severity class; per fold, each
// class count differs from the others by at most one and cohort totals stay
// within one subject of the global proportion.
FoldPlan stratified_folds(const std::vector<SubjectInfo>& subjects, std::size_t k,
                          std::uint64_t seed);

// batch assembly: (indices.size(), kSensorCount, p) input plus labels
Tensor make_batch(const std::vector<Segment>& segments, std::span<const std::size_t> indices);
std::vector<int> make_labels(const std::vector<Segment>& segments,
                             std::span<const std::size_t> indices);

struct ManifestRow {
  std::string subject_id;
  std::string walk_id;
  std::size_t length = 0;
  std::size_t segment_count = 0;
  int label = 0;
};

void write_manifest(const std::vector<ManifestRow>& rows, const std::string& path);

}  // namespace gaitstage

#include "gaitstage/data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "gaitstage/errors.hpp"
#include "gaitstage/rng.hpp"

namespace gaitstage {

std::string to_string(Study study) {
  switch (study) {
    case Study::ga: return "Ga";
    case Study::ju: return "Ju";
    case Study::si: return "Si";
  }
  return "Ga";
}

std::string to_string(Cohort cohort) {
  return cohort == Cohort::control ? "control" : "parkinson";
}

std::string class_name(int label) {
  switch (label) {
    case 0: return "healthy";
    case 1: return "stage2";
    case 2: return "stage2_5";
    case 3: return "stage3";
  }
  return "class" + std::to_string(label);
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',' || c == '\t' || c == ' ' || c == '\r') {
      if (!cur.empty()) {
        fields.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(c);
    }
  }
  if (!cur.empty()) fields.push_back(cur);
  return fields;
}

bool parse_double(const std::string& s, double& out) {
  const char* begin = s.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  return end == begin + s.size() && end != begin;
}

std::string lower(std::string s) {
  for (char& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

Demographics parse_demographics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open demographics file: " + path);
  Demographics demo;
  std::string line;
  std::size_t line_no = 0;
  bool header_skipped = false;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_fields(line);
    if (fields.empty()) continue;
    if (!header_skipped) {
      header_skipped = true;
      continue;
    }
    if (fields.size() < 2) {
      throw InputError(path + ":" + std::to_string(line_no) +
                       ": expected subject_id, group[, H&Y], got " +
                       std::to_string(fields.size()) + " fields");
    }
    Demographics::Row row;
    const std::string group = lower(fields[1]);
    if (group == "control" || group == "co") {
      row.cohort = Cohort::control;
    } else if (group == "parkinson" || group == "pt" || group == "pd") {
      row.cohort = Cohort::parkinson;
    } else {
      throw InputError(path + ":" + std::to_string(line_no) + ": unknown group '" + fields[1] +
                       "'");
    }
    if (fields.size() >= 3 && fields[2] != "-") {
      if (!parse_double(fields[2], row.hoehn_yahr)) {
        throw InputError(path + ":" + std::to_string(line_no) + ": bad H&Y value '" +
                         fields[2] + "'");
      }
    }
    demo.by_subject[fields[0]] = row;
  }
  if (!header_skipped) throw InputError("demographics file is empty: " + path);
  return demo;
}

WalkRecord parse_vgrf_file(const std::string& path) {
  const std::string name = std::filesystem::path(path).filename().string();
  // <Ga|Ju|Si><Co|Pt><digits>_<digits>[.txt]
  WalkRecord record;
  std::size_t pos = 0;
  auto fail_name = [&]() -> InputError {
    return InputError("file name '" + name +
                      "' does not match the walk naming convention "
                      "(e.g. GaPt07_02.txt)");
  };
  if (name.size() >= 2) {
    const std::string study = name.substr(0, 2);
    if (study == "Ga") record.study = Study::ga;
    else if (study == "Ju") record.study = Study::ju;
    else if (study == "Si") record.study = Study::si;
    else throw fail_name();
  } else {
    throw fail_name();
  }
  pos = 2;
  if (name.size() < pos + 2) throw fail_name();
  const std::string cohort = name.substr(pos, 2);
  if (cohort == "Co") record.cohort = Cohort::control;
  else if (cohort == "Pt") record.cohort = Cohort::parkinson;
  else throw fail_name();
  pos += 2;
  std::size_t digits = 0;
  while (pos + digits < name.size() &&
         std::isdigit(static_cast<unsigned char>(name[pos + digits]))) {
    ++digits;
  }
  if (digits == 0) throw fail_name();
  record.subject_id = name.substr(0, pos + digits);
  pos += digits;
  if (pos >= name.size() || name[pos] != '_') throw fail_name();
  ++pos;
  digits = 0;
  while (pos + digits < name.size() &&
         std::isdigit(static_cast<unsigned char>(name[pos + digits]))) {
    ++digits;
  }
  if (digits == 0) throw fail_name();
  record.walk_id = name.substr(pos, digits);
  pos += digits;
  if (pos != name.size() && name.substr(pos) != ".txt") throw fail_name();

  std::ifstream in(path);
  if (!in) throw InputError("cannot open walk file: " + path);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto fields = split_fields(line);
    if (fields.empty()) continue;
    if (fields.size() != kSensorCount + 1) {
      throw InputError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(kSensorCount + 1) + " columns, got " +
                       std::to_string(fields.size()));
    }
    double v;
    if (!parse_double(fields[0], v)) {
      throw InputError(path + ":" + std::to_string(line_no) + ": non-numeric value '" +
                       fields[0] + "'");
    }
    record.time.push_back(v);
    for (std::size_t c = 0; c < kSensorCount; ++c) {
      if (!parse_double(fields[c + 1], v)) {
        throw InputError(path + ":" + std::to_string(line_no) + ": non-numeric value '" +
                         fields[c + 1] + "'");
      }
      record.channels[c].push_back(v);
    }
  }
  if (record.time.empty()) throw InputError("walk file has no data rows: " + path);
  return record;
}

bool attach_severity(WalkRecord& record, const Demographics& demographics,
                     std::string* warning) {
  const auto it = demographics.by_subject.find(record.subject_id);
  if (it == demographics.by_subject.end()) {
    if (warning) {
      *warning = "subject " + record.subject_id + " missing from demographics; walk " +
                 record.walk_id + " excluded";
    }
    return false;
  }
  if (it->second.cohort != record.cohort) {
    if (warning) {
      *warning = "subject " + record.subject_id + " cohort mismatch between file name and " +
                 "demographics; walk excluded";
    }
    return false;
  }
  if (record.cohort == Cohort::control) {
    record.severity = Severity::healthy;
    return true;
  }
  const double hy = it->second.hoehn_yahr;
  if (hy == 2.0) record.severity = Severity::stage2;
  else if (hy == 2.5) record.severity = Severity::stage2_5;
  else if (hy == 3.0) record.severity = Severity::stage3;
  else {
    if (warning) {
      std::ostringstream os;
      os << "subject " << record.subject_id << " has H&Y " << hy
         << " outside the staged range {2, 2.5, 3}; walk excluded";
      *warning = os.str();
    }
    return false;
  }
  return true;
}

std::size_t impute_missing(WalkRecord& record) {
  std::size_t count = 0;
  for (auto& channel : record.channels) {
    for (double& v : channel) {
      if (!std::isfinite(v)) {
        v = 0.0;
        ++count;
      }
    }
  }
  record.imputed = true;
  return count;
}

void normalize(WalkRecord& record) {
  if (!record.imputed) {
    throw std::logic_error("normalize called before impute_missing for subject " +
                           record.subject_id);
  }
  for (auto& channel : record.channels) {
    const std::size_t n = channel.size();
    if (n == 0) continue;
    double mean = 0.0;
    for (double v : channel) mean += v;
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (double v : channel) {
      const double d = v - mean;
      var += d * d;
    }
    var /= static_cast<double>(n);
    if (var == 0.0) {
      std::fill(channel.begin(), channel.end(), 0.0);
      continue;
    }
    const double inv_sd = 1.0 / std::sqrt(var);
    for (double& v : channel) v = (v - mean) * inv_sd;
  }
  record.normalized = true;
}

std::size_t segment_count_for_length(std::size_t walk_length, std::size_t p,
                                     std::size_t stride) {
  if (walk_length < p) return 0;
  return (walk_length - p) / stride + 1;
}

std::vector<Segment> segment_walk(const WalkRecord& record, std::size_t p, double overlap,
                                  std::string* warning) {
  if (!record.severity) {
    throw std::logic_error("segment_walk requires an attached severity label (subject " +
                           record.subject_id + ")");
  }
  if (p == 0) throw std::invalid_argument("segment_walk: p must be >= 1");
  const double stride_f = static_cast<double>(p) * (1.0 - overlap);
  const auto stride = static_cast<std::size_t>(stride_f);
  if (stride == 0 || static_cast<double>(stride) != stride_f) {
    throw std::invalid_argument("segment_walk: p*(1-overlap) must be a positive integer");
  }
  const std::size_t length = record.length();
  if (length < p) {
    if (warning) {
      *warning = "walk " + record.subject_id + "_" + record.walk_id + " has " +
                 std::to_string(length) + " samples, shorter than segment length " +
                 std::to_string(p) + "; no segments produced";
    }
    return {};
  }
  const std::size_t count = segment_count_for_length(length, p, stride);
  std::vector<Segment> segments;
  segments.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    Segment seg;
    seg.length = p;
    seg.label = static_cast<int>(*record.severity);
    seg.subject_id = record.subject_id;
    seg.walk_id = record.walk_id;
    seg.start_offset = i * stride;
    seg.values.resize(kSensorCount * p);
    for (std::size_t c = 0; c < kSensorCount; ++c) {
      const double* src = record.channels[c].data() + seg.start_offset;
      std::copy(src, src + p, seg.values.begin() + static_cast<std::ptrdiff_t>(c * p));
    }
    segments.push_back(std::move(seg));
  }
  return segments;
}

FoldPlan stratified_folds(const std::vector<SubjectInfo>& subjects, std::size_t k,
                          std::uint64_t seed) {
  if (k < 2) throw std::invalid_argument("stratified_folds: k must be >= 2");
  std::array<std::vector<std::string>, kClassCount> by_class;
  std::size_t controls = 0, patients = 0;
  for (const auto& s : subjects) {
    by_class[static_cast<std::size_t>(s.severity)].push_back(s.id);
    (s.cohort == Cohort::control ? controls : patients)++;
  }
  if (controls < k || patients < k) {
    throw PreconditionError("stratified_folds: need at least " + std::to_string(k) +
                            " subjects per cohort, got " + std::to_string(patients) +
                            " parkinson and " + std::to_string(controls) + " control");
  }
  FoldPlan plan;
  plan.folds.assign(k, {});
  plan.class_tallies.assign(k, {});
  Rng rng(derive_seed(seed, seed_salt::folds));
  // Deal each class round-robin from a cursor that advances by the class
  // remainder, so the leftover subjects spread across different folds and
  // every fold's cohort total stays within one subject of every other's.
  std::size_t cursor = 0;
  for (std::size_t cls = 0; cls < kClassCount; ++cls) {
    auto& ids = by_class[cls];
    std::sort(ids.begin(), ids.end());  // seed-independent base order
    rng.shuffle(ids);
    for (std::size_t i = 0; i < ids.size(); ++i) {
      const std::size_t fold = (cursor + i) % k;
      plan.folds[fold].push_back(ids[i]);
      plan.class_tallies[fold][cls]++;
    }
    cursor = (cursor + ids.size()) % k;
  }
  for (auto& fold : plan.folds) std::sort(fold.begin(), fold.end());
  return plan;
}

Tensor make_batch(const std::vector<Segment>& segments, std::span<const std::size_t> indices) {
  if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
  const std::size_t p = segments[indices[0]].length;
  std::vector<double> values(indices.size() * kSensorCount * p);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Segment& seg = segments[indices[i]];
    if (seg.length != p) throw std::invalid_argument("make_batch: mixed segment lengths");
    std::copy(seg.values.begin(), seg.values.end(),
              values.begin() + static_cast<std::ptrdiff_t>(i * kSensorCount * p));
  }
  return Tensor(Shape{indices.size(), kSensorCount, p}, std::move(values));
}

std::vector<int> make_labels(const std::vector<Segment>& segments,
                             std::span<const std::size_t> indices) {
  std::vector<int> labels(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) labels[i] = segments[indices[i]].label;
  return labels;
}

void write_manifest(const std::vector<ManifestRow>& rows, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write manifest: " + path);
  out << "subject_id,walk_id,length,segment_count,label\n";
  for (const auto& r : rows) {
    out << r.subject_id << ',' << r.walk_id << ',' << r.length << ',' << r.segment_count << ','
        << class_name(r.label) << '\n';
  }
}

}  // namespace gaitstage

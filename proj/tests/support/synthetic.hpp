#pragma once

// Synthetic walk and segment generators shared by the data/evaluation/CLI
// tests. Class signal is a per-class mean offset on every channel so small
// models can separate the classes quickly.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "gaitstage/data.hpp"
#include "gaitstage/rng.hpp"

namespace synthetic {

using gaitstage::Cohort;
using gaitstage::Severity;
using gaitstage::WalkRecord;

// centered per-class mean offsets, matching the zero-mean scale the real
// pipeline produces after z-normalization
inline double class_offset(int label, std::size_t class_count) {
  return 1.5 * (static_cast<double>(label) -
                0.5 * static_cast<double>(class_count - 1));
}

inline WalkRecord make_walk(const std::string& subject_id, const std::string& walk_id,
                            Cohort cohort, Severity severity, std::size_t length,
                            std::uint64_t seed) {
  WalkRecord walk;
  walk.subject_id = subject_id;
  walk.walk_id = walk_id;
  walk.cohort = cohort;
  walk.severity = severity;
  walk.time.resize(length);
  gaitstage::Rng rng(seed);
  // class signal lives in the oscillation frequency so it survives
  // per-channel z-normalization
  const double frequency = 0.22 + 0.09 * static_cast<double>(severity);
  for (std::size_t i = 0; i < length; ++i) walk.time[i] = 0.01 * static_cast<double>(i);
  for (std::size_t c = 0; c < gaitstage::kSensorCount; ++c) {
    auto& channel = walk.channels[c];
    channel.resize(length);
    const double phase = 0.3 * static_cast<double>(c);
    for (std::size_t i = 0; i < length; ++i) {
      channel[i] = 400.0 + 80.0 * std::sin(frequency * static_cast<double>(i) + phase) +
                   8.0 * rng.normal();
    }
  }
  walk.imputed = true;  // generator emits finite values only
  return walk;
}

inline std::vector<gaitstage::Segment> make_separable_segments(
    std::size_t per_class, std::size_t class_count, std::size_t p,
    const std::string& subject_prefix, std::uint64_t seed) {
  std::vector<gaitstage::Segment> segments;
  gaitstage::Rng rng(seed);
  for (std::size_t cls = 0; cls < class_count; ++cls) {
    for (std::size_t i = 0; i < per_class; ++i) {
      gaitstage::Segment seg;
      seg.length = p;
      seg.label = static_cast<int>(cls);
      seg.subject_id = subject_prefix + std::to_string(cls) + "_" + std::to_string(i);
      seg.walk_id = "01";
      seg.start_offset = 0;
      seg.values.resize(gaitstage::kSensorCount * p);
      const double offset = class_offset(static_cast<int>(cls), class_count);
      for (double& v : seg.values) v = offset + 0.3 * rng.normal();
      segments.push_back(std::move(seg));
    }
  }
  return segments;
}

// writes the 19-column whitespace-delimited walk format
inline void write_walk_file(const WalkRecord& walk, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  char buf[32];
  for (std::size_t i = 0; i < walk.length(); ++i) {
    std::snprintf(buf, sizeof(buf), "%.2f", walk.time[i]);
    out << buf;
    for (const auto& channel : walk.channels) {
      std::snprintf(buf, sizeof(buf), "%.4f", channel[i]);
      out << '\t' << buf;
    }
    out << '\n';
  }
}

// A small labeled roster on disk: walk files plus a demographics table.
// Subjects per class: healthy controls GaCo01.., patients at H&Y 2/2.5/3.
struct ToyDataset {
  std::filesystem::path dir;
  std::filesystem::path demographics;
};

inline ToyDataset write_toy_dataset(const std::filesystem::path& dir,
                                    std::size_t subjects_per_class,
                                    std::size_t walks_per_subject, std::size_t walk_length,
                                    std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::ofstream demo(dir / "demographics.txt", std::ios::trunc);
  demo << "subject_id group hoehn_yahr\n";
  const struct {
    Severity severity;
    Cohort cohort;
    const char* code;
    const char* hy;
  } classes[] = {
      {Severity::healthy, Cohort::control, "Co", "-"},
      {Severity::stage2, Cohort::parkinson, "Pt", "2"},
      {Severity::stage2_5, Cohort::parkinson, "Pt", "2.5"},
      {Severity::stage3, Cohort::parkinson, "Pt", "3"},
  };
  std::uint64_t salt = 0;
  for (std::size_t cls = 0; cls < 4; ++cls) {
    for (std::size_t s = 0; s < subjects_per_class; ++s) {
      char id[32];
      std::snprintf(id, sizeof(id), "Ga%s%02zu", classes[cls].code, cls * 20 + s + 1);
      demo << id << ' ' << (classes[cls].cohort == Cohort::control ? "control" : "parkinson")
           << ' ' << classes[cls].hy << '\n';
      for (std::size_t w = 0; w < walks_per_subject; ++w) {
        char walk_id[8];
        std::snprintf(walk_id, sizeof(walk_id), "%02zu", w + 1);
        const WalkRecord walk =
            make_walk(id, walk_id, classes[cls].cohort, classes[cls].severity, walk_length,
                      gaitstage::derive_seed(seed, 0x746f79, salt++));
        write_walk_file(walk, (dir / (std::string(id) + "_" + walk_id + ".txt")).string());
      }
    }
  }
  return ToyDataset{dir, dir / "demographics.txt"};
}

}  // namespace synthetic

// SPDX-License-Identifier: Apache-2.0
//
// Dataset index. A dataset directory holds
//   manifest.csv      video_id,split,label,class,frame_count,feature_path
//   gt_intervals.csv  video_id,start,end,class   (test split only, end exclusive)
// plus one feature file per video at feature_path (relative to the directory).

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace varkit {

inline constexpr const char* kNormalClassName = "NONE";
inline constexpr const char* kManifestFileName = "manifest.csv";
inline constexpr const char* kIntervalsFileName = "gt_intervals.csv";

enum class Split { kTrain, kTest };
enum class Label { kNormal, kAnomalous };

/// Frames [start, end) carry anomaly `class_name`.
struct Interval {
  std::int64_t start = 0;
  std::int64_t end = 0;
  std::string class_name;
};

struct VideoEntry {
  std::string video_id;
  Split split = Split::kTrain;
  Label label = Label::kNormal;
  std::string class_name = kNormalClassName;
  std::int64_t frame_count = 0;
  std::string feature_path;
  std::vector<Interval> gt_intervals;

  [[nodiscard]] bool anomalous() const { return label == Label::kAnomalous; }
};

struct VideoManifest {
  std::filesystem::path base_dir;
  std::vector<VideoEntry> videos;

  /// Throws DataError naming the first violated invariant.
  void validate() const;
  [[nodiscard]] const VideoEntry* find(const std::string& video_id) const;
  [[nodiscard]] std::vector<const VideoEntry*> split(Split s) const;
  /// Sorted anomalous class names of the training split.
  [[nodiscard]] std::vector<std::string> training_classes() const;
  [[nodiscard]] std::filesystem::path feature_file(const VideoEntry& e) const { return base_dir / e.feature_path; }
};

VideoManifest read_manifest(const std::filesystem::path& dir);
void write_manifest(const VideoManifest& manifest, const std::filesystem::path& dir);

/// Per-frame ground truth: -1 for normal frames, otherwise the index of the
/// interval's class in `classes`. Throws DataError for unknown classes.
std::vector<int> frame_labels(const VideoEntry& entry, const std::vector<std::string>& classes);

std::string to_string(Split s);
std::string to_string(Label l);

}  // namespace varkit

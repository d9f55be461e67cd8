// SPDX-License-Identifier: Apache-2.0
//
// Synthetic dataset with planted anomalies.
//
// Construction: a hidden normality center c0 ~ N(0, center_scale^2 I). For each
// class, e_k is the toy text encoder's output (at initialization) for the
// prompt [0 ... 0, class tokens]; the hidden class directions u_k are the
// Gram-Schmidt orthonormalization of (e_k - c0), so that a freshly
// initialized prompt direction already points roughly along its class.
// Normal frames are c0 + N(0, noise_std^2 I). Anomalous videos plant 1..3
// disjoint intervals (one per equal zone of the video) whose frames are
// additionally shifted by anomaly_shift * u_k.

#pragma once

#include "varkit/autograd.hpp"
#include "varkit/encoders.hpp"
#include "varkit/manifest.hpp"

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace varkit {

struct SynthConfig {
  std::size_t num_classes = 3;
  std::size_t feature_dim = 32;
  std::size_t n_train_normal = 30;
  std::size_t n_train_anomalous = 30;
  std::size_t n_test_normal = 10;
  std::size_t n_test_anomalous = 10;
  std::int64_t min_frames = 32;
  std::int64_t max_frames = 128;
  double anomaly_shift = 4.0;
  double noise_std = 1.0;
  double center_scale = 0.05;
  std::int64_t min_intervals = 1;
  std::int64_t max_intervals = 3;
  std::int64_t min_interval_frames = 4;
  /// Upper bound on an interval's length as a fraction of its zone.
  double max_interval_fraction = 0.5;
  /// Must match the model's encoder settings for the direction correlation.
  std::size_t num_context_vectors = 8;
  std::uint64_t encoder_seed = 0;

  void validate() const;
};

/// Built-in anomaly class vocabulary; the first `n` names are used.
std::vector<std::string> synth_class_names(std::size_t n);

struct SynthDataset {
  VideoManifest manifest;
  std::map<std::string, ag::Matrix> features;
  /// Per-frame planted labels (-1 normal, else class index) for every video,
  /// including training videos whose intervals are not written out.
  std::map<std::string, std::vector<int>> frame_labels;
  std::vector<std::string> class_names;
  ag::RowVector center;
  ag::Matrix directions;  // (C, D), orthonormal rows
};

SynthDataset synthesize_dataset(const SynthConfig& config, std::uint64_t seed);

/// Writes feature files under `out_dir/features`, the manifest and the
/// test-split intervals. Sets `dataset.manifest.base_dir`.
void write_dataset(SynthDataset& dataset, const std::filesystem::path& out_dir);

}  // namespace varkit

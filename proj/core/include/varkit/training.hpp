// SPDX-License-Identifier: Apache-2.0
//
// Training loop, checkpoints and evaluation.

#pragma once

#include "varkit/aggregation.hpp"
#include "varkit/config.hpp"
#include "varkit/encoders.hpp"
#include "varkit/feature_space.hpp"
#include "varkit/losses.hpp"
#include "varkit/manifest.hpp"
#include "varkit/metrics.hpp"
#include "varkit/mil.hpp"
#include "varkit/temporal.hpp"

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace varkit {

/// Linear warmup from 0 over round(warmup_fraction * total_steps) steps, then
/// cosine decay reaching 0 at total_steps.
double lr_at(std::int64_t step, std::int64_t total_steps, const TrainConfig& config);

/// Everything needed to score frames.
struct Model {
  std::vector<std::string> class_names;
  ContextBank bank;
  ToyTextEncoder text;
  NormalityPrototype prototype;
  ProjectionNormalizer normalizer;
  TemporalModel temporal;

  /// Context vectors, text projection and temporal parameters, prefixed
  /// "context.", "text." and "temporal.".
  [[nodiscard]] std::vector<NamedParameter> trainable() const;
  [[nodiscard]] DirectionBank directions() const;
};

/// Decoupled-weight-decay Adam with a global gradient-norm clip.
class AdamW {
 public:
  AdamW() = default;
  explicit AdamW(const OptimizerConfig& config) : config_(config) {}

  /// Applies one update to every parameter with a gradient; returns the
  /// pre-clip global gradient norm.
  double step(std::vector<NamedParameter>& params, double lr);

  [[nodiscard]] std::int64_t steps() const { return t_; }
  [[nodiscard]] const std::map<std::string, ag::Matrix>& first_moments() const { return m_; }
  [[nodiscard]] const std::map<std::string, ag::Matrix>& second_moments() const { return v_; }
  void restore(std::int64_t t, std::map<std::string, ag::Matrix> m, std::map<std::string, ag::Matrix> v);

 private:
  OptimizerConfig config_;
  std::int64_t t_ = 0;
  std::map<std::string, ag::Matrix> m_;
  std::map<std::string, ag::Matrix> v_;
};

struct TrainState {
  RunConfig config;
  Model model;
  AdamW optimizer;
  std::int64_t step = 0;
  std::int64_t epoch = 0;  // completed epochs
  std::int64_t total_steps = 0;  // schedule length
  std::mt19937_64 rng;
};

struct TrainingVideo {
  std::string video_id;
  bool anomalous = false;
  std::size_t class_index = 0;
  ag::Matrix features;  // re-centred, (frame_count, D)
};

struct TrainingSet {
  std::vector<TrainingVideo> videos;
  std::vector<std::size_t> normal;
  std::vector<std::size_t> anomalous;
};

/// Fresh model and optimizer. The class list is the sorted set of training
/// anomaly classes; the prototype is the mean over training normal frames.
TrainState initialize(const RunConfig& config, const VideoManifest& manifest, const FrameFeatureStore& store);

/// Re-centred training videos with their class indices.
TrainingSet build_training_set(const Model& model, const VideoManifest& manifest, const FrameFeatureStore& store);

/// One training video's bag for a step.
struct StepVideo {
  std::size_t video = 0;  // index into TrainingSet::videos
  ag::Matrix bag;         // (S * F, D), re-centred
};

/// What a step did, for inspection and tests.
struct StepTrace {
  /// Selection always reads Selector segment likelihoods.
  bool selection_from_selector = true;
  std::vector<Selection> selections;  // one per video, batch order
  std::vector<std::size_t> selected_class;
  double lr = 0.0;
  double grad_norm = 0.0;
};

/// Bags for every batch of one epoch, drawn from the state's rng.
std::vector<std::vector<StepVideo>> draw_epoch(TrainState& state, const TrainingSet& data);

/// Forward, loss, backward and one optimizer update. The batch holds the
/// normal videos first. Throws NumericalError naming a non-finite term,
/// leaving parameters untouched.
LossReport train_step(TrainState& state, const TrainingSet& data, const std::vector<StepVideo>& batch,
                      StepTrace* trace = nullptr);

[[nodiscard]] std::int64_t total_steps(const RunConfig& config, const TrainingSet& data);

struct LogRow {
  std::int64_t epoch = 0;
  std::int64_t step = 0;
  double lr = 0.0;
  LossReport report;
};

std::string log_header();
std::string format_log_row(const LogRow& row);

struct FitOptions {
  /// Checkpoints go to out_dir/checkpoint_epoch_NNNN.vkc when non-empty.
  std::filesystem::path checkpoint_dir;
  std::function<void(const LogRow&)> on_step;
  std::function<void(const TrainState&)> on_epoch;
};

/// Runs the remaining epochs (state.epoch .. config.train.epochs). Returns the
/// per-step log.
std::vector<LogRow> fit(TrainState& state, const TrainingSet& data, const FitOptions& options = {});

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
/// Throws DataError on a missing, corrupted or incompatible file.
TrainState load_checkpoint(const std::filesystem::path& path);

/// Per-frame scores of a full video, trimmed to its frame count.
using FrameScorer = std::function<ScoreGrid(const VideoEntry&, const ag::Matrix& raw_features)>;

/// J-pass inference in eval mode with cached directions; no rng involved.
ScoreGrid score_video(const Model& model, const BagSpec& spec, const ag::Matrix& raw_features);

/// Scores every test video and builds the frame-level report. Throws
/// DataError when the test split is empty or an anomalous test video has no
/// ground-truth intervals.
EvaluationReport evaluate(const FrameScorer& scorer, const std::vector<std::string>& class_names,
                          const VideoManifest& manifest, const FrameFeatureStore& store);
EvaluationReport evaluate(const Model& model, const BagSpec& spec, const VideoManifest& manifest,
                          const FrameFeatureStore& store);

}  // namespace varkit

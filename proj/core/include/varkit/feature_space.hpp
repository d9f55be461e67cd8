// SPDX-License-Identifier: Apache-2.0
//
// Re-centred feature geometry and the frame-level Selector: features are
// shifted so the mean normal frame sits at the origin, each anomaly class
// owns a direction, and a frame's class likelihood is its batch-normalized
// component along that direction.

#pragma once

#include "varkit/autograd.hpp"
#include "varkit/encoders.hpp"

#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace varkit {

struct NormalityPrototype {
  ag::RowVector mean;
  std::size_t n_frames = 0;

  [[nodiscard]] std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
};

/// Streaming mean over frames (incremental update, one pass).
class PrototypeAccumulator {
 public:
  void add(const ag::RowVector& frame);
  void add_rows(const ag::Matrix& frames);
  /// Throws ConfigError when no frame was added.
  [[nodiscard]] NormalityPrototype finish() const;

 private:
  ag::RowVector mean_;
  std::size_t count_ = 0;
};

NormalityPrototype compute_prototype(std::span<const ag::Matrix> normal_videos);

ag::RowVector recenter(const ag::RowVector& raw, const NormalityPrototype& proto);
ag::Matrix recenter_rows(const ag::Matrix& raw, const NormalityPrototype& proto);

/// Stores the prototype as a one-frame feature file.
void export_prototype(const NormalityPrototype& proto, const std::filesystem::path& path);

inline constexpr double kMinDirectionNorm = 1e-8;

struct DirectionBank {
  /// (C, D); row c = E_T([t_ctx, t_c]) - m.
  ag::Var directions;
  std::vector<std::string> class_names;

  [[nodiscard]] std::size_t num_classes() const { return static_cast<std::size_t>(directions.rows()); }
};

/// Throws NumericalError when a row norm falls below kMinDirectionNorm.
DirectionBank compute_directions(const ContextBank& bank, const TextEncoderAdapter& adapter,
                                 const NormalityPrototype& proto);

enum class Mode { kTrain, kEval };

/// Batch normalization without affine parameters, one channel per class.
struct ProjectionNormalizer {
  ag::RowVector running_mean;
  ag::RowVector running_var;
  double eps = 1e-5;
  double momentum = 0.1;

  static ProjectionNormalizer create(std::size_t num_classes, double eps = 1e-5, double momentum = 0.1);
};

/// Raw projections x . d_c / |d_c| for every frame row and class: (B_f, C).
ag::Var raw_projection(const ag::Var& x, const DirectionBank& dirs);

/// Normalized projections. Train mode uses in-batch population statistics
/// (requires B_f >= 2) and updates the running statistics; eval mode uses the
/// running statistics.
ag::Var project(const ag::Var& x, const DirectionBank& dirs, ProjectionNormalizer& normalizer, Mode mode);

/// Frame likelihoods S(x): (B_f, C).
ag::Var selector_frame(const ag::Var& x, const DirectionBank& dirs, ProjectionNormalizer& normalizer, Mode mode);

/// Segment likelihoods: sums over consecutive groups of `frames_per_segment`
/// rows. Throws ShapeError for ragged input.
ag::Var selector_segment(const ag::Var& frame_likelihoods, ag::Index frames_per_segment);

}  // namespace varkit

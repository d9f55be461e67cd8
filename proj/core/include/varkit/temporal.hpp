// SPDX-License-Identifier: Apache-2.0
//
// Axial transformer scoring every frame of a bag. Bags are stacked row-wise:
// n_bags * S * F rows, row index (b * S + s) * F + f. Each layer runs a
// pre-norm residual block (attention + feed-forward) along the frame axis
// inside every segment, then one along the segment axis at every frame
// position.

#pragma once

#include "varkit/autograd.hpp"
#include "varkit/encoders.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace varkit {

enum class TemporalInput {
  kFeatures,             // D channels
  kFeaturesAndSelector,  // D + C channels
  kSelector,             // C channels
};

std::string to_string(TemporalInput t);
TemporalInput temporal_input_from_string(const std::string& s);

struct AxialConfig {
  std::size_t embed_dim = 256;
  std::size_t num_layers = 1;
  std::size_t num_heads = 8;
  std::size_t ff_multiplier = 4;
  // Rows of each learned positional table; S and F must not exceed it, so
  // the parameter count does not depend on the bag shape.
  std::size_t max_positions = 64;
  TemporalInput input = TemporalInput::kFeatures;
  double dropout = 0.1;
  double layer_norm_eps = 1e-5;
  bool frame_axis = true;
  bool segment_axis = true;

  void validate() const;
  [[nodiscard]] std::size_t input_dim(std::size_t feature_dim, std::size_t num_classes) const;
};

/// Concatenates the channels selected by `config.input`. `selector` may be
/// undefined when the source does not need it.
ag::Var build_temporal_input(const ag::Var& features, const ag::Var& selector, const AxialConfig& config);

class TemporalModel {
 public:
  TemporalModel() = default;
  TemporalModel(const AxialConfig& config, std::size_t input_dim, ag::Index segments, ag::Index frames,
                std::uint64_t seed);

  /// `bags` is (n_bags * S * F, input_dim); returns per-frame probabilities
  /// (n_bags * S * F, 1). Dropout is active only when `train` is set and an
  /// rng is supplied.
  [[nodiscard]] ag::Var forward(const ag::Var& bags, ag::Index n_bags, bool train = false,
                                std::mt19937_64* rng = nullptr) const;

  [[nodiscard]] const std::vector<NamedParameter>& parameters() const { return params_; }
  [[nodiscard]] std::size_t parameter_count() const;
  [[nodiscard]] const AxialConfig& config() const { return config_; }
  [[nodiscard]] std::size_t input_dim() const { return input_dim_; }
  [[nodiscard]] ag::Index segments() const { return segments_; }
  [[nodiscard]] ag::Index frames() const { return frames_; }
  [[nodiscard]] ag::Var& param(const std::string& name);
  [[nodiscard]] const ag::Var& param(const std::string& name) const;

 private:
  ag::Var residual_block(const ag::Var& h, const std::string& prefix, const ag::RowGroups& groups, bool train,
                         std::mt19937_64* rng) const;
  ag::Var linear(const ag::Var& x, const std::string& name) const;
  ag::Var dropout(const ag::Var& x, bool train, std::mt19937_64* rng) const;

  AxialConfig config_;
  std::size_t input_dim_ = 0;
  ag::Index segments_ = 0;
  ag::Index frames_ = 0;
  std::vector<NamedParameter> params_;
};

/// Row groups for one axis of `n_bags` stacked (S, F) grids.
ag::RowGroups frame_axis_groups(ag::Index n_bags, ag::Index segments, ag::Index frames);
ag::RowGroups segment_axis_groups(ag::Index n_bags, ag::Index segments, ag::Index frames);

}  // namespace varkit

// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: every tunable of a training run, the named profiles and
// the JSON document form used by the command-line tool.

#pragma once

#include "varkit/data.hpp"
#include "varkit/encoders.hpp"
#include "varkit/losses.hpp"
#include "varkit/synth.hpp"
#include "varkit/temporal.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace varkit {

struct SelectorConfig {
  double mask_ratio = 0.7;
  double bn_momentum = 0.1;
  double bn_eps = 1e-5;

  void validate() const;
};

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-8;
  double weight_decay = 0.2;
  /// Global gradient-norm bound; 0 disables clipping.
  double clip_norm = 1.0;

  void validate() const;
};

struct TrainConfig {
  double learning_rate = 1e-3;
  std::int64_t epochs = 30;
  double warmup_fraction = 0.1;
  OptimizerConfig optimizer;
  /// Write a checkpoint every N epochs; 0 writes only the final one.
  std::int64_t checkpoint_every = 0;

  void validate() const;
};

struct DataConfig {
  std::string data_dir;
  std::string out_dir;
};

struct RunConfig {
  std::string profile = "synth";
  std::uint64_t seed = 0;
  EncoderConfig encoder;
  BagSpec bag;
  SelectorConfig selector;
  AxialConfig axial;
  LossWeights losses;
  TrainConfig train;
  SynthConfig synth;
  DataConfig data;

  /// Throws ConfigError on the first invalid field.
  void validate() const;
};

[[nodiscard]] std::vector<std::string> profile_names();

/// Complete configuration for a named profile: shanghaitech, ucf, xd or synth.
RunConfig profile_config(const std::string& name);

/// Serializes every field.
std::string to_json_string(const RunConfig& config);

/// Applies the keys present in `text` on top of `base`. Unknown keys and
/// ill-typed values raise ConfigError naming the key.
RunConfig parse_config(const std::string& text, const RunConfig& base);

/// Reads a config file. When the document names a profile (and no explicit
/// `profile_override` is given), that profile's defaults form the base.
RunConfig load_config(const std::filesystem::path& path, const std::string& profile_override = {});

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace varkit

// SPDX-License-Identifier: Apache-2.0
//
// Bag formation. Training bags sample S segments of F consecutive frames, one
// from each of S equal blocks of the loop-padded video. Inference covers a
// video of any length with J = ceil(n / (S F)) passes whose (S, F) grids tile
// the padded video exactly once.

#pragma once

#include "varkit/autograd.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace varkit {

struct BagSpec {
  std::int64_t segments = 32;  // S
  std::int64_t frames = 16;    // F
  std::int64_t k = 3;          // K
  std::int64_t batch = 64;     // B

  void validate() const;
  [[nodiscard]] std::int64_t frames_per_bag() const { return segments * frames; }
};

/// Source frame for each padded position: padded[i] = original[i mod n].
std::vector<std::int64_t> loop_pad_indices(std::int64_t frame_count, std::int64_t padded_length);

struct TrainingBag {
  ag::Matrix features;                // (S * F, D)
  std::vector<std::int64_t> sources;  // source frame of each row
};

/// Pads to at least S*F frames, splits into S blocks of floor(len / S) frames
/// (the tail remainder is unused) and draws a uniform start in each block.
std::vector<std::int64_t> training_bag_indices(std::int64_t frame_count, const BagSpec& spec, std::mt19937_64& rng);
TrainingBag make_training_bag(const ag::Matrix& features, const BagSpec& spec, std::mt19937_64& rng);

struct InferencePlan {
  std::int64_t frame_count = 0;
  std::int64_t passes = 0;  // J
  std::int64_t padded_length = 0;
  /// Per pass, the S*F padded indices in bag row order.
  std::vector<std::vector<std::int64_t>> padded_indices;

  [[nodiscard]] std::int64_t source_frame(std::int64_t padded) const { return padded % frame_count; }
};

/// Pass j takes frames [b J F + j F, b J F + (j + 1) F) of every block b.
InferencePlan make_inference_plan(std::int64_t frame_count, const BagSpec& spec);

/// Indices into the caller's video list.
struct Batch {
  std::vector<std::size_t> normal;
  std::vector<std::size_t> anomalous;
};

/// Each batch holds B/2 normal and B/2 anomalous videos. An epoch lasts
/// ceil(max(n_normal, n_anomalous) / (B/2)) batches; each population is drawn
/// without replacement from a fresh shuffle and reshuffled when exhausted, so
/// the smaller one is recycled.
class BalancedBatcher {
 public:
  BalancedBatcher(std::vector<std::size_t> normal, std::vector<std::size_t> anomalous, std::int64_t batch_size);

  [[nodiscard]] std::vector<Batch> epoch(std::mt19937_64& rng) const;
  [[nodiscard]] std::int64_t batches_per_epoch() const;

 private:
  std::vector<std::size_t> normal_;
  std::vector<std::size_t> anomalous_;
  std::int64_t half_;
};

}  // namespace varkit

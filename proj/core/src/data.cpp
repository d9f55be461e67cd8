// SPDX-License-Identifier: Apache-2.0

#include "varkit/data.hpp"

#include "varkit/error.hpp"

#include <algorithm>
#include <string>

namespace varkit {

void BagSpec::validate() const {
  if (segments <= 0 || frames <= 0 || k <= 0 || batch <= 0) throw ConfigError("bag: S, F, K and B must be positive");
  if (batch % 2 != 0) throw ConfigError("bag: batch size B must be even, got " + std::to_string(batch));
  if (2 * k > segments) throw ConfigError("bag: 2K exceeds the number of segments");
}

std::vector<std::int64_t> loop_pad_indices(std::int64_t frame_count, std::int64_t padded_length) {
  if (frame_count <= 0) throw ConfigError("loop padding: empty video");
  std::vector<std::int64_t> idx(static_cast<std::size_t>(padded_length));
  for (std::int64_t i = 0; i < padded_length; ++i) idx[static_cast<std::size_t>(i)] = i % frame_count;
  return idx;
}

std::vector<std::int64_t> training_bag_indices(std::int64_t frame_count, const BagSpec& spec, std::mt19937_64& rng) {
  if (frame_count <= 0) throw ConfigError("training bag: empty video");
  const std::int64_t length = std::max(frame_count, spec.frames_per_bag());
  const std::int64_t block = length / spec.segments;
  std::vector<std::int64_t> out;
  out.reserve(static_cast<std::size_t>(spec.frames_per_bag()));
  for (std::int64_t s = 0; s < spec.segments; ++s) {
    std::uniform_int_distribution<std::int64_t> start_dist(0, block - spec.frames);
    const std::int64_t start = s * block + start_dist(rng);
    for (std::int64_t f = 0; f < spec.frames; ++f) out.push_back((start + f) % frame_count);
  }
  return out;
}

TrainingBag make_training_bag(const ag::Matrix& features, const BagSpec& spec, std::mt19937_64& rng) {
  TrainingBag bag;
  bag.sources = training_bag_indices(features.rows(), spec, rng);
  bag.features.resize(static_cast<ag::Index>(bag.sources.size()), features.cols());
  for (std::size_t i = 0; i < bag.sources.size(); ++i) {
    bag.features.row(static_cast<ag::Index>(i)) = features.row(bag.sources[i]);
  }
  return bag;
}

InferencePlan make_inference_plan(std::int64_t frame_count, const BagSpec& spec) {
  if (frame_count <= 0) throw ConfigError("inference plan: frame_count must be positive");
  InferencePlan plan;
  plan.frame_count = frame_count;
  const std::int64_t per_bag = spec.frames_per_bag();
  plan.passes = (frame_count + per_bag - 1) / per_bag;
  plan.padded_length = plan.passes * per_bag;
  const std::int64_t block = plan.passes * spec.frames;
  for (std::int64_t j = 0; j < plan.passes; ++j) {
    std::vector<std::int64_t> idx;
    idx.reserve(static_cast<std::size_t>(per_bag));
    for (std::int64_t b = 0; b < spec.segments; ++b) {
      for (std::int64_t f = 0; f < spec.frames; ++f) idx.push_back(b * block + j * spec.frames + f);
    }
    plan.padded_indices.push_back(std::move(idx));
  }
  return plan;
}

BalancedBatcher::BalancedBatcher(std::vector<std::size_t> normal, std::vector<std::size_t> anomalous,
                                 std::int64_t batch_size)
    : normal_(std::move(normal)), anomalous_(std::move(anomalous)), half_(batch_size / 2) {
  if (batch_size <= 0 || batch_size % 2 != 0) throw ConfigError("balanced batches: B must be positive and even");
  if (normal_.empty()) throw ConfigError("balanced batches: no normal videos");
  if (anomalous_.empty()) throw ConfigError("balanced batches: no anomalous videos");
}

std::int64_t BalancedBatcher::batches_per_epoch() const {
  const auto larger = static_cast<std::int64_t>(std::max(normal_.size(), anomalous_.size()));
  return (larger + half_ - 1) / half_;
}

namespace {

// Draws `count` items, reshuffling the population each time it is exhausted.
std::vector<std::size_t> draw_cycled(const std::vector<std::size_t>& population, std::int64_t count,
                                     std::mt19937_64& rng) {
  std::vector<std::size_t> out;
  out.reserve(static_cast<std::size_t>(count));
  std::vector<std::size_t> deck;
  std::size_t pos = 0;
  while (static_cast<std::int64_t>(out.size()) < count) {
    if (pos == deck.size()) {
      deck = population;
      std::shuffle(deck.begin(), deck.end(), rng);
      pos = 0;
    }
    out.push_back(deck[pos++]);
  }
  return out;
}

}  // namespace

std::vector<Batch> BalancedBatcher::epoch(std::mt19937_64& rng) const {
  const std::int64_t n_batches = batches_per_epoch();
  const auto normal = draw_cycled(normal_, n_batches * half_, rng);
  const auto anomalous = draw_cycled(anomalous_, n_batches * half_, rng);
  std::vector<Batch> out(static_cast<std::size_t>(n_batches));
  for (std::int64_t b = 0; b < n_batches; ++b) {
    auto& batch = out[static_cast<std::size_t>(b)];
    batch.normal.assign(normal.begin() + b * half_, normal.begin() + (b + 1) * half_);
    batch.anomalous.assign(anomalous.begin() + b * half_, anomalous.begin() + (b + 1) * half_);
  }
  return out;
}

}  // namespace varkit

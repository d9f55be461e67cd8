// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

namespace varkit {

/// Top-K and bottom-K segments among the eligible ones.
struct Selection {
  std::vector<std::int64_t> top;     // descending likelihood
  std::vector<std::int64_t> bottom;  // ascending likelihood, disjoint from top
  std::vector<bool> eligible;
};

/// Number of segments masked for a given ratio: floor(ratio * segments).
std::int64_t masked_count(std::int64_t segments, double ratio);

/// Masks exactly floor(ratio * segments) segments drawn uniformly without
/// replacement; true marks an eligible segment. Throws ConfigError when fewer
/// than 2K segments stay eligible.
std::vector<bool> random_mask(std::int64_t segments, double ratio, std::int64_t k, std::mt19937_64& rng);

/// Selects top-K then bottom-K from the remaining eligible segments. Ties go
/// to the lower index. An empty mask means every segment is eligible.
Selection select_segments(std::span<const double> likelihoods, std::int64_t k, std::vector<bool> eligible = {});

}  // namespace varkit

// SPDX-License-Identifier: Apache-2.0

#include "varkit/mil.hpp"

#include "varkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace varkit {

std::int64_t masked_count(std::int64_t segments, double ratio) {
  if (!(ratio >= 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must be in [0, 1)");
  // Guard against 0.7 * 10 = 6.9999999.
  return static_cast<std::int64_t>(std::floor(ratio * static_cast<double>(segments) + 1e-9));
}

std::vector<bool> random_mask(std::int64_t segments, double ratio, std::int64_t k, std::mt19937_64& rng) {
  if (segments <= 0 || k <= 0) throw ConfigError("random_mask: segments and K must be positive");
  const std::int64_t masked = masked_count(segments, ratio);
  if (segments - masked < 2 * k) {
    throw ConfigError("random_mask: S=" + std::to_string(segments) + ", ratio=" + std::to_string(ratio) +
                      ", K=" + std::to_string(k) + " leaves " + std::to_string(segments - masked) +
                      " eligible segments, need 2K=" + std::to_string(2 * k));
  }
  std::vector<std::int64_t> order(static_cast<std::size_t>(segments));
  std::iota(order.begin(), order.end(), 0);
  // Partial Fisher-Yates: the first `masked` positions form a uniform sample.
  for (std::int64_t i = 0; i < masked; ++i) {
    std::uniform_int_distribution<std::int64_t> pick(i, segments - 1);
    std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(pick(rng))]);
  }
  std::vector<bool> eligible(static_cast<std::size_t>(segments), true);
  for (std::int64_t i = 0; i < masked; ++i) eligible[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])] = false;
  return eligible;
}

Selection select_segments(std::span<const double> likelihoods, std::int64_t k, std::vector<bool> eligible) {
  const auto n = static_cast<std::int64_t>(likelihoods.size());
  if (k <= 0) throw ConfigError("select: K must be positive");
  if (eligible.empty()) eligible.assign(likelihoods.size(), true);
  if (eligible.size() != likelihoods.size()) throw ShapeError("select: mask length differs from likelihood count");

  std::vector<std::int64_t> pool;
  for (std::int64_t i = 0; i < n; ++i) {
    if (eligible[static_cast<std::size_t>(i)]) pool.push_back(i);
  }
  if (static_cast<std::int64_t>(pool.size()) < 2 * k) {
    throw ConfigError("select: " + std::to_string(pool.size()) + " eligible segments, need 2K=" + std::to_string(2 * k));
  }

  auto at = [&](std::int64_t i) { return likelihoods[static_cast<std::size_t>(i)]; };
  Selection sel;
  sel.eligible = std::move(eligible);

  std::partial_sort(pool.begin(), pool.begin() + k, pool.end(), [&](std::int64_t a, std::int64_t b) {
    return at(a) > at(b) || (at(a) == at(b) && a < b);
  });
  sel.top.assign(pool.begin(), pool.begin() + k);

  std::vector<std::int64_t> rest(pool.begin() + k, pool.end());
  std::partial_sort(rest.begin(), rest.begin() + k, rest.end(), [&](std::int64_t a, std::int64_t b) {
    return at(a) < at(b) || (at(a) == at(b) && a < b);
  });
  sel.bottom.assign(rest.begin(), rest.begin() + k);
  return sel;
}

}  // namespace varkit

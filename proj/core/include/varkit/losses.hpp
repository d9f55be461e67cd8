// SPDX-License-Identifier: Apache-2.0
//
// Training objectives. Every loss takes its inputs as column vectors (or the
// full segment grid for the normal-video direction loss) and returns a 1x1
// differentiable scalar.

#pragma once

#include "varkit/autograd.hpp"

#include <array>
#include <cstddef>
#include <string_view>
#include <vector>

namespace varkit {

inline constexpr double kLogFloor = 1e-8;

enum class SmoothnessForm {
  kSquared,  // sum (p[i] - p[i-1])^2
  kPrinted,  // sum (p[i] - p[i-1]), telescopes to p[last] - p[first]
};

enum class LossTerm : std::size_t {
  kAnomalousDir,        // -sum S(V+)_c / (K F)
  kAnomalousTop,        // -sum log p_{A,c} over V+ / (K F)
  kAnomalousBottom,     // -sum log p_N over V- / (K F)
  kNormalDir,           // sum S(S_i)_c over all segments and classes / (S F C)
  kNormalTop,           // -sum log p_N over normal V+ / (K F)
  kSparsity,            // mean p_A
  kSmoothness,          // consecutive differences of p_A
  kAnomalousBottomDir,  // ablation: +sum S(V-)_c / (K F)
  kNormalTopDir,        // ablation: +sum S(normal V+) / (K F)
};
inline constexpr std::size_t kNumLossTerms = 9;

std::string_view loss_term_name(LossTerm t);

struct LossWeights {
  double lambda_sparsity = 8e-3;
  double lambda_smoothness = 8e-4;
  std::array<bool, kNumLossTerms> enabled = {true, true, true, true, true, true, true, false, false};
  SmoothnessForm smoothness_form = SmoothnessForm::kSquared;

  void validate() const;
  [[nodiscard]] bool is_enabled(LossTerm t) const { return enabled[static_cast<std::size_t>(t)]; }
  void set_enabled(LossTerm t, bool on) { enabled[static_cast<std::size_t>(t)] = on; }
  /// Coefficient of a term in the total (1 for the supervised terms).
  [[nodiscard]] double weight(LossTerm t) const;
};

ag::Var loss_anomalous_dir(const ag::Var& top_segment_likelihoods, ag::Index frames_per_segment);
ag::Var loss_anomalous_top(const ag::Var& top_joint_probs, ag::Index k, ag::Index frames_per_segment);
ag::Var loss_anomalous_bottom(const ag::Var& bottom_normal_probs, ag::Index k, ag::Index frames_per_segment);
ag::Var loss_normal_dir(const ag::Var& segment_likelihoods, ag::Index frames_per_segment);
ag::Var loss_normal_top(const ag::Var& top_normal_probs, ag::Index k, ag::Index frames_per_segment);
ag::Var loss_sparsity(const ag::Var& p_anomaly);
ag::Var loss_smoothness(const ag::Var& p_anomaly, SmoothnessForm form = SmoothnessForm::kSquared);
ag::Var loss_anomalous_bottom_dir(const ag::Var& bottom_segment_likelihoods, ag::Index frames_per_segment);
ag::Var loss_normal_top_dir(const ag::Var& top_segment_likelihoods, ag::Index frames_per_segment);

struct LossReport {
  std::array<double, kNumLossTerms> terms{};
  double total = 0.0;

  [[nodiscard]] double term(LossTerm t) const { return terms[static_cast<std::size_t>(t)]; }
};

/// Per-video term values gathered over a batch; each term is averaged over the
/// videos that produced it.
class LossTerms {
 public:
  void add(LossTerm t, ag::Var value);
  [[nodiscard]] const std::vector<ag::Var>& values(LossTerm t) const { return values_[static_cast<std::size_t>(t)]; }

 private:
  std::array<std::vector<ag::Var>, kNumLossTerms> values_;
};

struct TotalLoss {
  ag::Var total;
  LossReport report;
};

/// Weighted sum of the enabled, video-averaged terms. Every term value is
/// reported whether or not it is enabled. Throws NumericalError naming the
/// first non-finite term.
TotalLoss total_loss(const LossTerms& terms, const LossWeights& weights);

}  // namespace varkit

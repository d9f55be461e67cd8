// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "varkit/autograd.hpp"

#include <optional>

namespace varkit {

/// Per-frame probability family. Rows are frames; C = number of classes.
struct ScoreGrid {
  ag::Matrix p_anomaly;  // (n, 1)
  ag::Matrix p_normal;   // (n, 1)
  ag::Matrix p_cond;     // (n, C), rows on the simplex
  ag::Matrix p_joint;    // (n, C)
};

/// Differentiable counterpart used during training.
struct ScoreVars {
  ag::Var p_anomaly;
  ag::Var p_normal;
  ag::Var p_cond;
  ag::Var p_joint;
};

/// p_N = 1 - p_A, p_{c|A} = softmax(S(x)), p_{A,c} = p_A * p_{c|A}.
ScoreVars aggregate(const ag::Var& p_anomaly, const ag::Var& frame_likelihoods);
ScoreGrid aggregate(const ag::Matrix& p_anomaly, const ag::Matrix& frame_likelihoods);

inline constexpr double kReportThreshold = 0.5;

/// argmax_c p_joint for a frame whose p_A exceeds `threshold`.
std::optional<ag::Index> predicted_class(const ScoreGrid& grid, ag::Index frame, double threshold = kReportThreshold);

}  // namespace varkit

// SPDX-License-Identifier: Apache-2.0

#include "varkit/aggregation.hpp"

#include "varkit/error.hpp"

namespace varkit {

ScoreVars aggregate(const ag::Var& p_anomaly, const ag::Var& frame_likelihoods) {
  if (p_anomaly.cols() != 1 || p_anomaly.rows() != frame_likelihoods.rows()) {
    throw ShapeError("aggregate: p_A is (" + std::to_string(p_anomaly.rows()) + "x" +
                     std::to_string(p_anomaly.cols()) + ") for " + std::to_string(frame_likelihoods.rows()) +
                     " frames");
  }
  if (!frame_likelihoods.value().allFinite()) throw NumericalError("aggregate: non-finite Selector likelihoods");
  ScoreVars out;
  out.p_anomaly = p_anomaly;
  out.p_normal = ag::affine(p_anomaly, -1.0, 1.0);
  out.p_cond = ag::softmax_rows(frame_likelihoods);
  out.p_joint = ag::mul_col(out.p_cond, p_anomaly);
  return out;
}

ScoreGrid aggregate(const ag::Matrix& p_anomaly, const ag::Matrix& frame_likelihoods) {
  ScoreVars v = aggregate(ag::Var(p_anomaly), ag::Var(frame_likelihoods));
  return {v.p_anomaly.value(), v.p_normal.value(), v.p_cond.value(), v.p_joint.value()};
}

std::optional<ag::Index> predicted_class(const ScoreGrid& grid, ag::Index frame, double threshold) {
  if (!(grid.p_anomaly(frame, 0) > threshold)) return std::nullopt;
  ag::Index best = 0;
  grid.p_joint.row(frame).maxCoeff(&best);
  return best;
}

}  // namespace varkit

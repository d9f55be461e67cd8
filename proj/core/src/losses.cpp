// SPDX-License-Identifier: Apache-2.0

#include "varkit/losses.hpp"

#include "varkit/error.hpp"

#include <cmath>
#include <string>

namespace varkit {

namespace {

void require_column(const ag::Var& v, ag::Index expected, const char* what) {
  if (v.cols() != 1 || (expected >= 0 && v.rows() != expected)) {
    throw ShapeError(std::string(what) + ": expected (" + std::to_string(expected) + "x1), got (" +
                     std::to_string(v.rows()) + "x" + std::to_string(v.cols()) + ")");
  }
}

void require_positive(ag::Index k, ag::Index f, const char* what) {
  if (k <= 0 || f <= 0) throw ConfigError(std::string(what) + ": K and F must be positive");
}

void require_probabilities(const ag::Var& p, const char* what) {
  for (ag::Index i = 0; i < p.value().size(); ++i) {
    const double x = p.value().data()[i];
    if (!std::isfinite(x) || x < 0.0 || x > 1.0) {
      throw NumericalError(std::string(what) + ": invalid probability " + std::to_string(x));
    }
  }
}

// -mean(log(max(p, floor))) over K*F frames.
ag::Var negative_log_mean(const ag::Var& probs, ag::Index k, ag::Index f, const char* what) {
  require_positive(k, f, what);
  require_column(probs, k * f, what);
  require_probabilities(probs, what);
  return ag::scale(ag::sum(ag::log_clamped(probs, kLogFloor)), -1.0 / static_cast<double>(k * f));
}

ag::Var segment_sum_over_kf(const ag::Var& seg, ag::Index f, double sign, const char* what) {
  if (seg.rows() == 0) throw ConfigError(std::string(what) + ": K must be positive");
  require_column(seg, -1, what);
  if (f <= 0) throw ConfigError(std::string(what) + ": F must be positive");
  return ag::scale(ag::sum(seg), sign / static_cast<double>(seg.rows() * f));
}

}  // namespace

std::string_view loss_term_name(LossTerm t) {
  switch (t) {
    case LossTerm::kAnomalousDir:
      return "A_dir";
    case LossTerm::kAnomalousTop:
      return "A_plus";
    case LossTerm::kAnomalousBottom:
      return "A_minus";
    case LossTerm::kNormalDir:
      return "N_dir";
    case LossTerm::kNormalTop:
      return "N_plus";
    case LossTerm::kSparsity:
      return "sparsity";
    case LossTerm::kSmoothness:
      return "smoothness";
    case LossTerm::kAnomalousBottomDir:
      return "A_minus_dir";
    case LossTerm::kNormalTopDir:
      return "N_plus_dir";
  }
  return "?";
}

void LossWeights::validate() const {
  if (!(lambda_sparsity >= 0.0) || !(lambda_smoothness >= 0.0)) throw ConfigError("loss weights must be >= 0");
}

double LossWeights::weight(LossTerm t) const {
  if (t == LossTerm::kSparsity) return lambda_sparsity;
  if (t == LossTerm::kSmoothness) return lambda_smoothness;
  return 1.0;
}

ag::Var loss_anomalous_dir(const ag::Var& top_segment_likelihoods, ag::Index frames_per_segment) {
  return segment_sum_over_kf(top_segment_likelihoods, frames_per_segment, -1.0, "loss_A_dir");
}

ag::Var loss_anomalous_top(const ag::Var& top_joint_probs, ag::Index k, ag::Index frames_per_segment) {
  return negative_log_mean(top_joint_probs, k, frames_per_segment, "loss_A_plus");
}

ag::Var loss_anomalous_bottom(const ag::Var& bottom_normal_probs, ag::Index k, ag::Index frames_per_segment) {
  return negative_log_mean(bottom_normal_probs, k, frames_per_segment, "loss_A_minus");
}

ag::Var loss_normal_dir(const ag::Var& segment_likelihoods, ag::Index frames_per_segment) {
  if (segment_likelihoods.rows() == 0 || segment_likelihoods.cols() == 0) throw ConfigError("loss_N_dir: empty grid");
  if (frames_per_segment <= 0) throw ConfigError("loss_N_dir: F must be positive");
  const double denom = static_cast<double>(segment_likelihoods.rows() * frames_per_segment * segment_likelihoods.cols());
  return ag::scale(ag::sum(segment_likelihoods), 1.0 / denom);
}

ag::Var loss_normal_top(const ag::Var& top_normal_probs, ag::Index k, ag::Index frames_per_segment) {
  return negative_log_mean(top_normal_probs, k, frames_per_segment, "loss_N_plus");
}

ag::Var loss_sparsity(const ag::Var& p_anomaly) {
  require_column(p_anomaly, -1, "loss_sparsity");
  if (p_anomaly.rows() == 0) throw ConfigError("loss_sparsity: no frames");
  return ag::mean(p_anomaly);
}

ag::Var loss_smoothness(const ag::Var& p_anomaly, SmoothnessForm form) {
  require_column(p_anomaly, -1, "loss_smoothness");
  const ag::Index n = p_anomaly.rows();
  if (n < 2) return ag::Var(ag::Matrix::Zero(1, 1));
  ag::Var diff = ag::sub(ag::slice_rows(p_anomaly, 1, n - 1), ag::slice_rows(p_anomaly, 0, n - 1));
  return form == SmoothnessForm::kSquared ? ag::sum(ag::square(diff)) : ag::sum(diff);
}

ag::Var loss_anomalous_bottom_dir(const ag::Var& bottom_segment_likelihoods, ag::Index frames_per_segment) {
  return segment_sum_over_kf(bottom_segment_likelihoods, frames_per_segment, 1.0, "loss_A_minus_dir");
}

ag::Var loss_normal_top_dir(const ag::Var& top_segment_likelihoods, ag::Index frames_per_segment) {
  return segment_sum_over_kf(top_segment_likelihoods, frames_per_segment, 1.0, "loss_N_plus_dir");
}

void LossTerms::add(LossTerm t, ag::Var value) {
  if (value.rows() != 1 || value.cols() != 1) throw ShapeError("loss term must be a scalar");
  values_[static_cast<std::size_t>(t)].push_back(std::move(value));
}

TotalLoss total_loss(const LossTerms& terms, const LossWeights& weights) {
  weights.validate();
  TotalLoss out;
  ag::Var total(ag::Matrix::Zero(1, 1));
  for (std::size_t i = 0; i < kNumLossTerms; ++i) {
    const auto t = static_cast<LossTerm>(i);
    const auto& vals = terms.values(t);
    if (vals.empty()) continue;
    ag::Var avg = ag::scale(ag::sum(ag::concat_rows(vals)), 1.0 / static_cast<double>(vals.size()));
    const double v = avg.item();
    if (!std::isfinite(v)) throw NumericalError("non-finite loss term " + std::string(loss_term_name(t)));
    out.report.terms[i] = v;
    if (weights.is_enabled(t)) total = ag::add(total, ag::scale(avg, weights.weight(t)));
  }
  out.total = total;
  out.report.total = total.item();
  return out;
}

}  // namespace varkit

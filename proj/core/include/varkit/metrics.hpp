// SPDX-License-Identifier: Apache-2.0
//
// Frame-level evaluation: ROC-AUC and average precision for detection, and
// their one-vs-rest per-class means for recognition.

#pragma once

#include "varkit/autograd.hpp"

#include <map>
#include <span>
#include <string>
#include <vector>

namespace varkit {

/// Normalized Mann-Whitney U with ties counted half. Labels are 0/1; both
/// values must occur.
double roc_auc(std::span<const double> scores, std::span<const int> labels);

/// sum_k (R_k - R_{k-1}) P_k over descending score thresholds, tied scores
/// forming one threshold. Requires at least one positive.
double average_precision(std::span<const double> scores, std::span<const int> labels);

struct ClassMetrics {
  double auc = 0.0;
  double ap = 0.0;
  std::size_t positive_frames = 0;
};

struct EvaluationReport {
  double auc = 0.0;
  double ap = 0.0;
  double mauc = 0.0;
  double map_score = 0.0;
  std::size_t frames = 0;
  std::size_t anomalous_frames = 0;
  std::map<std::string, ClassMetrics> per_class;

  /// Key-value header followed by a per-class table.
  [[nodiscard]] std::string to_text() const;
};

/// Frame-aligned evaluation. `gt` holds -1 for normal frames and a class
/// index otherwise; `p_joint` is (n, C). Classes without positive frames are
/// left out of mAUC/mAP.
EvaluationReport var_report(const ag::Matrix& p_joint, std::span<const double> p_anomaly, std::span<const int> gt,
                            const std::vector<std::string>& class_names);

/// Parses the output of EvaluationReport::to_text.
EvaluationReport parse_report(const std::string& text);

}  // namespace varkit

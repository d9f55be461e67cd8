// SPDX-License-Identifier: Apache-2.0

#include "varkit/metrics.hpp"

#include "varkit/error.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

namespace varkit {

namespace {

void check_inputs(std::span<const double> scores, std::span<const int> labels, const char* what) {
  if (scores.size() != labels.size()) throw ShapeError(std::string(what) + ": scores and labels differ in length");
  for (double s : scores) {
    if (!std::isfinite(s)) throw NumericalError(std::string(what) + ": non-finite score");
  }
  for (int l : labels) {
    if (l != 0 && l != 1) throw DataError(std::string(what) + ": labels must be 0 or 1");
  }
}

std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double roc_auc(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels, "roc_auc");
  const auto order = descending_order(scores);
  double pos = 0.0;
  double neg = 0.0;
  for (int l : labels) (l == 1 ? pos : neg) += 1.0;
  if (pos == 0.0 || neg == 0.0) throw DataError("roc_auc: labels contain a single class");

  // Walk tie groups from the highest score: each positive beats every
  // negative ranked strictly below it and ties half with same-score ones.
  double wins = 0.0;
  double neg_below = neg;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    double p = 0.0;
    double n = 0.0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? p : n) += 1.0;
      ++j;
    }
    neg_below -= n;
    wins += p * (neg_below + 0.5 * n);
    i = j;
  }
  return wins / (pos * neg);
}

double average_precision(std::span<const double> scores, std::span<const int> labels) {
  check_inputs(scores, labels, "average_precision");
  const auto order = descending_order(scores);
  const double pos = static_cast<double>(std::count(labels.begin(), labels.end(), 1));
  if (pos == 0.0) throw DataError("average_precision: no positive labels");
  double tp = 0.0;
  double fp = 0.0;
  double prev_recall = 0.0;
  double ap = 0.0;
  std::size_t i = 0;
  while (i < order.size()) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      (labels[order[j]] == 1 ? tp : fp) += 1.0;
      ++j;
    }
    const double recall = tp / pos;
    ap += (recall - prev_recall) * (tp / (tp + fp));
    prev_recall = recall;
    i = j;
  }
  return ap;
}

EvaluationReport var_report(const ag::Matrix& p_joint, std::span<const double> p_anomaly, std::span<const int> gt,
                            const std::vector<std::string>& class_names) {
  const auto n = gt.size();
  if (p_anomaly.size() != n || static_cast<std::size_t>(p_joint.rows()) != n) {
    throw ShapeError("var_report: predictions and ground truth are not frame-aligned");
  }
  if (static_cast<std::size_t>(p_joint.cols()) != class_names.size()) {
    throw ShapeError("var_report: p_joint has " + std::to_string(p_joint.cols()) + " columns for " +
                     std::to_string(class_names.size()) + " classes");
  }
  for (int g : gt) {
    if (g < -1 || g >= static_cast<int>(class_names.size())) {
      throw DataError("var_report: ground-truth class index " + std::to_string(g) + " not in the model's class list");
    }
  }

  EvaluationReport rep;
  rep.frames = n;
  std::vector<int> binary(n);
  for (std::size_t i = 0; i < n; ++i) binary[i] = gt[i] >= 0 ? 1 : 0;
  rep.anomalous_frames = static_cast<std::size_t>(std::count(binary.begin(), binary.end(), 1));
  rep.auc = roc_auc(p_anomaly, binary);
  rep.ap = average_precision(p_anomaly, binary);

  double auc_sum = 0.0;
  double ap_sum = 0.0;
  std::size_t present = 0;
  std::vector<double> column(n);
  std::vector<int> one_vs_rest(n);
  for (std::size_t c = 0; c < class_names.size(); ++c) {
    std::size_t positives = 0;
    for (std::size_t i = 0; i < n; ++i) {
      column[i] = p_joint(static_cast<ag::Index>(i), static_cast<ag::Index>(c));
      one_vs_rest[i] = gt[i] == static_cast<int>(c) ? 1 : 0;
      positives += static_cast<std::size_t>(one_vs_rest[i]);
    }
    if (positives == 0) continue;
    ClassMetrics m;
    m.positive_frames = positives;
    m.auc = roc_auc(column, one_vs_rest);
    m.ap = average_precision(column, one_vs_rest);
    auc_sum += m.auc;
    ap_sum += m.ap;
    ++present;
    rep.per_class.emplace(class_names[c], m);
  }
  if (present > 0) {
    rep.mauc = auc_sum / static_cast<double>(present);
    rep.map_score = ap_sum / static_cast<double>(present);
  }
  return rep;
}

std::string EvaluationReport::to_text() const {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "auc=" << auc << '\n';
  out << "mauc=" << mauc << '\n';
  out << "ap=" << ap << '\n';
  out << "map=" << map_score << '\n';
  out << "frames=" << frames << '\n';
  out << "anomalous_frames=" << anomalous_frames << '\n';
  out << "classes=" << per_class.size() << '\n';
  out << "\nclass,auc,ap,positive_frames\n";
  for (const auto& [name, m] : per_class) out << name << ',' << m.auc << ',' << m.ap << ',' << m.positive_frames << '\n';
  return out.str();
}

EvaluationReport parse_report(const std::string& text) {
  EvaluationReport rep;
  std::istringstream in(text);
  std::string line;
  bool table = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line == "class,auc,ap,positive_frames") {
      table = true;
      continue;
    }
    if (!table) {
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw DataError("report: malformed line '" + line + "'");
      const std::string key = line.substr(0, eq);
      const std::string val = line.substr(eq + 1);
      if (key == "auc") rep.auc = std::stod(val);
      else if (key == "mauc") rep.mauc = std::stod(val);
      else if (key == "ap") rep.ap = std::stod(val);
      else if (key == "map") rep.map_score = std::stod(val);
      else if (key == "frames") rep.frames = std::stoul(val);
      else if (key == "anomalous_frames") rep.anomalous_frames = std::stoul(val);
    } else {
      std::istringstream row(line);
      std::string name, auc, ap, pos;
      if (!std::getline(row, name, ',') || !std::getline(row, auc, ',') || !std::getline(row, ap, ',') ||
          !std::getline(row, pos)) {
        throw DataError("report: malformed class row '" + line + "'");
      }
      rep.per_class[name] = ClassMetrics{std::stod(auc), std::stod(ap), std::stoul(pos)};
    }
  }
  return rep;
}

}  // namespace varkit

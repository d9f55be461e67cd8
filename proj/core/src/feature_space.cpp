// SPDX-License-Identifier: Apache-2.0

#include "varkit/feature_space.hpp"

#include "varkit/binary_io.hpp"
#include "varkit/error.hpp"

namespace varkit {

void PrototypeAccumulator::add(const ag::RowVector& frame) {
  if (count_ == 0) {
    mean_ = ag::RowVector::Zero(frame.size());
  } else if (frame.size() != mean_.size()) {
    throw ShapeError("prototype: frame dim " + std::to_string(frame.size()) + " != " + std::to_string(mean_.size()));
  }
  ++count_;
  mean_ += (frame - mean_) / static_cast<double>(count_);
}

void PrototypeAccumulator::add_rows(const ag::Matrix& frames) {
  for (ag::Index r = 0; r < frames.rows(); ++r) add(frames.row(r));
}

NormalityPrototype PrototypeAccumulator::finish() const {
  if (count_ == 0) throw ConfigError("prototype: empty normal frame stream");
  return {mean_, count_};
}

NormalityPrototype compute_prototype(std::span<const ag::Matrix> normal_videos) {
  PrototypeAccumulator acc;
  for (const auto& v : normal_videos) acc.add_rows(v);
  return acc.finish();
}

ag::RowVector recenter(const ag::RowVector& raw, const NormalityPrototype& proto) {
  if (raw.size() != proto.mean.size()) throw ShapeError("recenter: dimension mismatch");
  return raw - proto.mean;
}

ag::Matrix recenter_rows(const ag::Matrix& raw, const NormalityPrototype& proto) {
  if (raw.cols() != proto.mean.size()) throw ShapeError("recenter: dimension mismatch");
  return raw.rowwise() - proto.mean;
}

void export_prototype(const NormalityPrototype& proto, const std::filesystem::path& path) {
  io::write_feature_file(path, ag::Matrix(proto.mean));
}

DirectionBank compute_directions(const ContextBank& bank, const TextEncoderAdapter& adapter,
                                 const NormalityPrototype& proto) {
  if (adapter.output_dim() != proto.dim()) {
    throw ShapeError("compute_directions: adapter output " + std::to_string(adapter.output_dim()) +
                     " != prototype dim " + std::to_string(proto.dim()));
  }
  std::vector<ag::Var> rows;
  rows.reserve(bank.num_classes());
  const ag::Var m(ag::Matrix(proto.mean));
  for (std::size_t c = 0; c < bank.num_classes(); ++c) {
    ag::Var d = ag::sub(encode_prompt(bank, c, adapter), m);
    if (d.value().norm() < kMinDirectionNorm) {
      throw NumericalError("zero direction for class '" + bank.class_names[c] +
                           "': prompt embedding coincides with the normality prototype");
    }
    rows.push_back(std::move(d));
  }
  return {ag::concat_rows(rows), bank.class_names};
}

ProjectionNormalizer ProjectionNormalizer::create(std::size_t num_classes, double eps, double momentum) {
  if (!(eps > 0.0)) throw ConfigError("normalizer eps must be positive");
  if (!(momentum > 0.0 && momentum < 1.0)) throw ConfigError("normalizer momentum must be in (0, 1)");
  const auto c = static_cast<ag::Index>(num_classes);
  return {ag::RowVector::Zero(c), ag::RowVector::Ones(c), eps, momentum};
}

ag::Var raw_projection(const ag::Var& x, const DirectionBank& dirs) {
  if (x.cols() != dirs.directions.cols()) {
    throw ShapeError("project: feature dim " + std::to_string(x.cols()) + " != direction dim " +
                     std::to_string(dirs.directions.cols()));
  }
  const auto norms = dirs.directions.value().rowwise().norm();
  for (ag::Index c = 0; c < norms.size(); ++c) {
    if (norms(c) < kMinDirectionNorm) throw NumericalError("project: zero-norm direction " + std::to_string(c));
  }
  return ag::matmul(x, ag::transpose(ag::normalize_rows(dirs.directions)));
}

ag::Var project(const ag::Var& x, const DirectionBank& dirs, ProjectionNormalizer& normalizer, Mode mode) {
  if (normalizer.running_mean.size() != dirs.directions.rows()) {
    throw ShapeError("project: normalizer has " + std::to_string(normalizer.running_mean.size()) + " channels for " +
                     std::to_string(dirs.directions.rows()) + " directions");
  }
  ag::Var raw = raw_projection(x, dirs);
  if (mode == Mode::kEval) {
    return ag::standardize_cols(raw, normalizer.running_mean, normalizer.running_var, normalizer.eps);
  }
  if (x.rows() < 2) throw ConfigError("project: train mode needs at least 2 frames, got " + std::to_string(x.rows()));
  ag::ColumnStats stats;
  ag::Var out = ag::batch_norm_train(raw, normalizer.eps, &stats);
  const double m = normalizer.momentum;
  normalizer.running_mean = (1.0 - m) * normalizer.running_mean + m * stats.mean;
  normalizer.running_var = (1.0 - m) * normalizer.running_var + m * stats.var;
  return out;
}

ag::Var selector_frame(const ag::Var& x, const DirectionBank& dirs, ProjectionNormalizer& normalizer, Mode mode) {
  return project(x, dirs, normalizer, mode);
}

ag::Var selector_segment(const ag::Var& frame_likelihoods, ag::Index frames_per_segment) {
  return ag::group_sum_rows(frame_likelihoods, frames_per_segment);
}

}  // namespace varkit

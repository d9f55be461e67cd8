// SPDX-License-Identifier: Apache-2.0

#include "varkit/temporal.hpp"

#include "varkit/error.hpp"

#include <algorithm>
#include <cmath>

namespace varkit {

std::string to_string(TemporalInput t) {
  switch (t) {
    case TemporalInput::kFeatures:
      return "D";
    case TemporalInput::kFeaturesAndSelector:
      return "D+C";
    case TemporalInput::kSelector:
      return "C";
  }
  return "D";
}

TemporalInput temporal_input_from_string(const std::string& s) {
  if (s == "D") return TemporalInput::kFeatures;
  if (s == "D+C") return TemporalInput::kFeaturesAndSelector;
  if (s == "C") return TemporalInput::kSelector;
  throw ConfigError("temporal input source must be one of D, D+C, C; got '" + s + "'");
}

void AxialConfig::validate() const {
  if (embed_dim == 0 || num_layers == 0 || num_heads == 0 || ff_multiplier == 0 || max_positions == 0) {
    throw ConfigError("axial: embed_dim, num_layers, num_heads, ff_multiplier and max_positions must be positive");
  }
  if (embed_dim % num_heads != 0) {
    throw ConfigError("axial: embed_dim " + std::to_string(embed_dim) + " not divisible by num_heads " +
                      std::to_string(num_heads));
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("axial: dropout must be in [0, 1)");
  if (!(layer_norm_eps > 0.0)) throw ConfigError("axial: layer_norm_eps must be positive");
}

std::size_t AxialConfig::input_dim(std::size_t feature_dim, std::size_t num_classes) const {
  switch (input) {
    case TemporalInput::kFeatures:
      return feature_dim;
    case TemporalInput::kFeaturesAndSelector:
      return feature_dim + num_classes;
    case TemporalInput::kSelector:
      return num_classes;
  }
  return feature_dim;
}

ag::Var build_temporal_input(const ag::Var& features, const ag::Var& selector, const AxialConfig& config) {
  const bool needs_selector = config.input != TemporalInput::kFeatures;
  if (needs_selector && !selector.defined()) {
    throw ConfigError("temporal input '" + to_string(config.input) + "' requires Selector output");
  }
  if (needs_selector && selector.rows() != features.rows()) {
    throw ShapeError("temporal input: feature and Selector row counts differ");
  }
  switch (config.input) {
    case TemporalInput::kFeatures:
      return features;
    case TemporalInput::kFeaturesAndSelector:
      return ag::concat_cols(features, selector);
    case TemporalInput::kSelector:
      return selector;
  }
  return features;
}

ag::RowGroups frame_axis_groups(ag::Index n_bags, ag::Index segments, ag::Index frames) {
  ag::RowGroups groups;
  groups.reserve(static_cast<std::size_t>(n_bags * segments));
  for (ag::Index b = 0; b < n_bags; ++b) {
    for (ag::Index s = 0; s < segments; ++s) {
      std::vector<ag::Index> g(static_cast<std::size_t>(frames));
      for (ag::Index f = 0; f < frames; ++f) g[static_cast<std::size_t>(f)] = (b * segments + s) * frames + f;
      groups.push_back(std::move(g));
    }
  }
  return groups;
}

ag::RowGroups segment_axis_groups(ag::Index n_bags, ag::Index segments, ag::Index frames) {
  ag::RowGroups groups;
  groups.reserve(static_cast<std::size_t>(n_bags * frames));
  for (ag::Index b = 0; b < n_bags; ++b) {
    for (ag::Index f = 0; f < frames; ++f) {
      std::vector<ag::Index> g(static_cast<std::size_t>(segments));
      for (ag::Index s = 0; s < segments; ++s) g[static_cast<std::size_t>(s)] = (b * segments + s) * frames + f;
      groups.push_back(std::move(g));
    }
  }
  return groups;
}

namespace {

ag::Matrix gaussian(ag::Index rows, ag::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  ag::Matrix m(rows, cols);
  for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace

TemporalModel::TemporalModel(const AxialConfig& config, std::size_t input_dim, ag::Index segments, ag::Index frames,
                             std::uint64_t seed)
    : config_(config), input_dim_(input_dim), segments_(segments), frames_(frames) {
  config_.validate();
  if (input_dim == 0 || segments <= 0 || frames <= 0) throw ConfigError("temporal: empty input shape");
  const auto max_pos = static_cast<ag::Index>(config_.max_positions);
  if (segments > max_pos || frames > max_pos) {
    throw ConfigError("temporal: S and F must not exceed axial.max_positions (" + std::to_string(max_pos) + ")");
  }
  std::mt19937_64 rng(seed);
  const auto e = static_cast<ag::Index>(config_.embed_dim);
  const auto hidden = static_cast<ag::Index>(config_.embed_dim * config_.ff_multiplier);
  auto add = [&](std::string name, ag::Matrix m) { params_.push_back({std::move(name), ag::Var(std::move(m), true)}); };
  auto add_linear = [&](const std::string& name, ag::Index in, ag::Index out) {
    add(name + ".weight", gaussian(in, out, 1.0 / std::sqrt(static_cast<double>(in)), rng));
    add(name + ".bias", ag::Matrix::Zero(1, out));
  };
  auto add_norm = [&](const std::string& name) {
    add(name + ".gamma", ag::Matrix::Ones(1, e));
    add(name + ".beta", ag::Matrix::Zero(1, e));
  };

  add_linear("input", static_cast<ag::Index>(input_dim), e);
  add("pos.segment", gaussian(max_pos, e, 0.02, rng));
  add("pos.frame", gaussian(max_pos, e, 0.02, rng));
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    for (const char* axis : {"frame", "segment"}) {
      const std::string p = "layer" + std::to_string(l) + "." + axis;
      add_norm(p + ".norm1");
      add_linear(p + ".query", e, e);
      add_linear(p + ".key", e, e);
      add_linear(p + ".value", e, e);
      add_linear(p + ".out", e, e);
      add_norm(p + ".norm2");
      add_linear(p + ".ff1", e, hidden);
      add_linear(p + ".ff2", hidden, e);
    }
  }
  // Zero head: every frame starts at probability 0.5.
  add("head.weight", ag::Matrix::Zero(e, 1));
  add("head.bias", ag::Matrix::Zero(1, 1));
}

ag::Var& TemporalModel::param(const std::string& name) {
  for (auto& p : params_) {
    if (p.name == name) return p.var;
  }
  throw ConfigError("temporal: unknown parameter '" + name + "'");
}

const ag::Var& TemporalModel::param(const std::string& name) const {
  return const_cast<TemporalModel*>(this)->param(name);
}

std::size_t TemporalModel::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += static_cast<std::size_t>(p.var.value().size());
  return n;
}

ag::Var TemporalModel::linear(const ag::Var& x, const std::string& name) const {
  return ag::add_row(ag::matmul(x, param(name + ".weight")), param(name + ".bias"));
}

ag::Var TemporalModel::dropout(const ag::Var& x, bool train, std::mt19937_64* rng) const {
  if (!train || rng == nullptr || config_.dropout <= 0.0) return x;
  const double keep = 1.0 - config_.dropout;
  std::bernoulli_distribution bern(keep);
  ag::Matrix mask(x.rows(), x.cols());
  for (ag::Index i = 0; i < mask.size(); ++i) mask.data()[i] = bern(*rng) ? 1.0 / keep : 0.0;
  return ag::mul_const(x, mask);
}

ag::Var TemporalModel::residual_block(const ag::Var& h, const std::string& prefix, const ag::RowGroups& groups,
                                      bool train, std::mt19937_64* rng) const {
  const double eps = config_.layer_norm_eps;
  ag::Var a = ag::layer_norm_rows(h, param(prefix + ".norm1.gamma"), param(prefix + ".norm1.beta"), eps);
  ag::Var att = ag::grouped_attention(linear(a, prefix + ".query"), linear(a, prefix + ".key"),
                                      linear(a, prefix + ".value"), groups, static_cast<int>(config_.num_heads));
  ag::Var x = ag::add(h, dropout(linear(att, prefix + ".out"), train, rng));
  ag::Var f = ag::layer_norm_rows(x, param(prefix + ".norm2.gamma"), param(prefix + ".norm2.beta"), eps);
  f = linear(ag::gelu(linear(f, prefix + ".ff1")), prefix + ".ff2");
  return ag::add(x, dropout(f, train, rng));
}

ag::Var TemporalModel::forward(const ag::Var& bags, ag::Index n_bags, bool train, std::mt19937_64* rng) const {
  if (params_.empty()) throw ConfigError("temporal: model not initialized");
  if (n_bags <= 0 || bags.rows() != n_bags * segments_ * frames_) {
    throw ShapeError("temporal: expected " + std::to_string(n_bags * segments_ * frames_) + " rows, got " +
                     std::to_string(bags.rows()));
  }
  if (static_cast<std::size_t>(bags.cols()) != input_dim_) {
    throw ShapeError("temporal: expected input width " + std::to_string(input_dim_) + ", got " +
                     std::to_string(bags.cols()));
  }
  const ag::Index n = bags.rows();
  std::vector<ag::Index> seg_idx(static_cast<std::size_t>(n));
  std::vector<ag::Index> frame_idx(static_cast<std::size_t>(n));
  for (ag::Index r = 0; r < n; ++r) {
    frame_idx[static_cast<std::size_t>(r)] = r % frames_;
    seg_idx[static_cast<std::size_t>(r)] = (r / frames_) % segments_;
  }
  ag::Var h = linear(bags, "input");
  h = ag::add(h, ag::gather_rows(param("pos.segment"), seg_idx));
  h = ag::add(h, ag::gather_rows(param("pos.frame"), frame_idx));

  const auto frame_groups = frame_axis_groups(n_bags, segments_, frames_);
  const auto segment_groups = segment_axis_groups(n_bags, segments_, frames_);
  for (std::size_t l = 0; l < config_.num_layers; ++l) {
    const std::string p = "layer" + std::to_string(l);
    if (config_.frame_axis) h = residual_block(h, p + ".frame", frame_groups, train, rng);
    if (config_.segment_axis) h = residual_block(h, p + ".segment", segment_groups, train, rng);
  }
  ag::Var out = ag::sigmoid(linear(h, "head"));
  if (!out.value().allFinite()) throw NumericalError("temporal: non-finite activations");
  return out;
}

}  // namespace varkit

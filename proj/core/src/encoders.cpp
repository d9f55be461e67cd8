// SPDX-License-Identifier: Apache-2.0

#include "varkit/encoders.hpp"

#include "varkit/binary_io.hpp"
#include "varkit/error.hpp"

#include <random>
#include <sstream>

namespace varkit {

namespace {

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char ch : s) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  return h;
}

ag::Matrix gaussian(ag::Index rows, ag::Index cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  ag::Matrix m(rows, cols);
  for (ag::Index i = 0; i < m.size(); ++i) m.data()[i] = dist(rng);
  return m;
}

}  // namespace

void EncoderConfig::validate() const {
  if (feature_dim == 0) throw ConfigError("encoder.feature_dim must be positive");
  if (num_context_vectors == 0) throw ConfigError("encoder.num_context_vectors must be positive");
  if (!(context_init_std >= 0.0)) throw ConfigError("encoder.context_init_std must be non-negative");
}

const ag::Var& ContextBank::context_for(std::size_t class_index) const {
  if (class_index >= num_classes()) {
    throw ConfigError("class index " + std::to_string(class_index) + " out of range for " +
                      std::to_string(num_classes()) + " classes");
  }
  return contexts.size() == 1 ? contexts.front() : contexts[class_index];
}

std::vector<NamedParameter> ContextBank::parameters() const {
  std::vector<NamedParameter> out;
  for (std::size_t i = 0; i < contexts.size(); ++i) out.push_back({"context." + std::to_string(i), contexts[i]});
  return out;
}

ag::Matrix class_token_embeddings(const std::string& class_name, std::size_t token_dim, std::uint64_t seed) {
  std::istringstream words(class_name);
  std::vector<std::string> tokens;
  for (std::string w; words >> w;) tokens.push_back(w);
  if (tokens.empty()) throw ConfigError("class name '" + class_name + "' has no words");
  ag::Matrix out(static_cast<ag::Index>(tokens.size()), static_cast<ag::Index>(token_dim));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    std::mt19937_64 rng(fnv1a(tokens[i]) ^ (seed * 0x9E3779B97F4A7C15ULL));
    out.row(static_cast<ag::Index>(i)) = gaussian(1, static_cast<ag::Index>(token_dim), 1.0, rng);
  }
  return out;
}

ContextBank init_context_bank(const EncoderConfig& config, const std::vector<std::string>& class_names,
                              std::uint64_t seed) {
  config.validate();
  if (class_names.empty()) throw ConfigError("init_context_bank: no classes");
  const auto td = static_cast<ag::Index>(config.resolved_token_dim());
  const auto n_ctx = static_cast<ag::Index>(config.num_context_vectors);
  ContextBank bank;
  bank.class_names = class_names;
  std::mt19937_64 rng(seed);
  const std::size_t n_seq = config.context_sharing == ContextSharing::kShared ? 1 : class_names.size();
  for (std::size_t i = 0; i < n_seq; ++i) {
    bank.contexts.emplace_back(gaussian(n_ctx, td, config.context_init_std, rng), true);
  }
  for (const auto& name : class_names) {
    bank.class_tokens.push_back(class_token_embeddings(name, config.resolved_token_dim(), config.encoder_seed));
  }
  return bank;
}

ToyTextEncoder::ToyTextEncoder(std::size_t token_dim, std::size_t output_dim, std::uint64_t seed) {
  if (token_dim == 0 || output_dim == 0) throw ConfigError("ToyTextEncoder: dimensions must be positive");
  std::mt19937_64 rng(seed ^ 0xC0FFEEULL);
  const auto td = static_cast<ag::Index>(token_dim);
  const auto od = static_cast<ag::Index>(output_dim);
  mixing_ = gaussian(td, td, 1.0 / std::sqrt(static_cast<double>(token_dim)), rng);
  ag::Matrix proj = token_dim == output_dim ? ag::Matrix(ag::Matrix::Identity(td, od))
                                            : gaussian(td, od, 1.0 / std::sqrt(static_cast<double>(token_dim)), rng);
  projection_ = ag::Var(std::move(proj), true);
  projection_bias_ = ag::Var(ag::Matrix::Zero(1, od), true);
}

ToyTextEncoder::ToyTextEncoder(ag::Matrix mixing, ag::Matrix projection, ag::Matrix projection_bias)
    : mixing_(std::move(mixing)),
      projection_(std::move(projection), true),
      projection_bias_(std::move(projection_bias), true) {
  if (mixing_.rows() != mixing_.cols() || projection_.rows() != mixing_.rows() ||
      projection_bias_.rows() != 1 || projection_bias_.cols() != projection_.cols()) {
    throw ShapeError("ToyTextEncoder: inconsistent parameter shapes");
  }
}

ag::Var ToyTextEncoder::encode(const ag::Var& tokens, std::size_t /*class_index*/) const {
  if (tokens.cols() != mixing_.rows()) {
    throw ShapeError("ToyTextEncoder: token width " + std::to_string(tokens.cols()) + " != token_dim " +
                     std::to_string(mixing_.rows()));
  }
  ag::Var mixed = ag::tanh(ag::matmul(tokens, ag::Var(mixing_)));
  ag::Var pooled = ag::mean_rows(mixed);
  return ag::add(ag::matmul(pooled, projection_), projection_bias_);
}

std::vector<NamedParameter> ToyTextEncoder::parameters() const {
  return {{"text.projection", projection_}, {"text.projection_bias", projection_bias_}};
}

ag::Matrix ToyTextEncoder::mix_token(const ag::Matrix& token) const { return (token * mixing_).array().tanh(); }

ExportedTextEncoder::ExportedTextEncoder(ag::Matrix class_hidden, std::size_t output_dim)
    : hidden_(std::move(class_hidden)) {
  const auto td = hidden_.cols();
  const auto od = static_cast<ag::Index>(output_dim);
  if (td == 0 || od == 0) throw ConfigError("ExportedTextEncoder: dimensions must be positive");
  ag::Matrix proj = td == od ? ag::Matrix(ag::Matrix::Identity(td, od)) : ag::Matrix(ag::Matrix::Zero(td, od));
  projection_ = ag::Var(std::move(proj), true);
  projection_bias_ = ag::Var(ag::Matrix::Zero(1, od), true);
}

ag::Var ExportedTextEncoder::encode(const ag::Var& tokens, std::size_t class_index) const {
  if (tokens.cols() != hidden_.cols()) throw ShapeError("ExportedTextEncoder: token width mismatch");
  if (static_cast<ag::Index>(class_index) >= hidden_.rows()) throw ConfigError("ExportedTextEncoder: unknown class");
  ag::Var h(ag::Matrix(hidden_.row(static_cast<ag::Index>(class_index))));
  return ag::add(ag::matmul(h, projection_), projection_bias_);
}

std::vector<NamedParameter> ExportedTextEncoder::parameters() const {
  return {{"text.projection", projection_}, {"text.projection_bias", projection_bias_}};
}

ag::Var encode_prompt(const ContextBank& bank, std::size_t class_index, const TextEncoderAdapter& adapter) {
  const ag::Var& ctx = bank.context_for(class_index);
  const ag::Matrix& cls = bank.class_tokens.at(class_index);
  if (static_cast<std::size_t>(ctx.cols()) != adapter.token_dim() ||
      static_cast<std::size_t>(cls.cols()) != adapter.token_dim()) {
    throw ShapeError("encode_prompt: bank token width " + std::to_string(ctx.cols()) + " != adapter token_dim " +
                     std::to_string(adapter.token_dim()));
  }
  const ag::Var parts[] = {ctx, ag::Var(cls)};
  return adapter.encode(ag::concat_rows(parts), class_index);
}

ag::Matrix load_features(const VideoManifest& manifest, const VideoEntry& entry, std::size_t expected_dim) {
  const auto path = manifest.feature_file(entry);
  if (!std::filesystem::exists(path)) {
    throw DataError("video '" + entry.video_id + "': missing feature file " + path.string());
  }
  ag::Matrix m = io::read_feature_file(path);
  if (m.rows() != entry.frame_count) {
    throw DataError("video '" + entry.video_id + "': shape mismatch, manifest declares " +
                    std::to_string(entry.frame_count) + " frames but file holds " + std::to_string(m.rows()));
  }
  if (expected_dim != 0 && static_cast<std::size_t>(m.cols()) != expected_dim) {
    throw DataError("video '" + entry.video_id + "': shape mismatch, feature dim " + std::to_string(m.cols()) +
                    " != expected " + std::to_string(expected_dim));
  }
  return m;
}

FrameFeatureStore::FrameFeatureStore(const VideoManifest& manifest, const std::vector<const VideoEntry*>& entries,
                                     std::size_t expected_dim) {
  for (const auto* e : entries) features_.emplace(e->video_id, load_features(manifest, *e, expected_dim));
}

void FrameFeatureStore::insert(const std::string& video_id, ag::Matrix features) {
  features_[video_id] = std::move(features);
}

const ag::Matrix& FrameFeatureStore::get(const std::string& video_id) const {
  auto it = features_.find(video_id);
  if (it == features_.end()) throw DataError("no features loaded for video '" + video_id + "'");
  return it->second;
}

}  // namespace varkit

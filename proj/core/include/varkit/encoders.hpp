// SPDX-License-Identifier: Apache-2.0
//
// Encoder boundary. Image features arrive precomputed on disk; text prompts
// are encoded by an adapter whose only trainable stage is the final
// token_dim -> D projection.

#pragma once

#include "varkit/autograd.hpp"
#include "varkit/manifest.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace varkit {

enum class ContextSharing { kPerClass, kShared };

struct EncoderConfig {
  std::size_t feature_dim = 512;
  /// 0 means "same as feature_dim".
  std::size_t token_dim = 0;
  std::size_t num_context_vectors = 8;
  ContextSharing context_sharing = ContextSharing::kPerClass;
  double context_init_std = 0.02;
  /// Seeds the frozen mixing stage of the toy encoder and the word hashing.
  std::uint64_t encoder_seed = 0;

  void validate() const;
  [[nodiscard]] std::size_t resolved_token_dim() const { return token_dim == 0 ? feature_dim : token_dim; }
};

struct NamedParameter {
  std::string name;
  ag::Var var;
};

/// Learnable context vectors plus frozen class-token sequences.
struct ContextBank {
  std::vector<std::string> class_names;
  /// One (num_context_vectors, token_dim) leaf per class, or a single shared one.
  std::vector<ag::Var> contexts;
  /// (num_words, token_dim) per class; frozen.
  std::vector<ag::Matrix> class_tokens;

  [[nodiscard]] std::size_t num_classes() const { return class_names.size(); }
  [[nodiscard]] const ag::Var& context_for(std::size_t class_index) const;
  [[nodiscard]] std::vector<NamedParameter> parameters() const;
};

/// Deterministic stand-in for a tokenizer: every whitespace-separated word of
/// `class_name` maps to a seeded N(0, 1) vector.
ag::Matrix class_token_embeddings(const std::string& class_name, std::size_t token_dim, std::uint64_t seed);

/// Contexts ~ N(0, context_init_std^2), reproducible from `seed`.
ContextBank init_context_bank(const EncoderConfig& config, const std::vector<std::string>& class_names,
                              std::uint64_t seed);

/// Differentiable map from a token sequence to a D-dim embedding.
class TextEncoderAdapter {
 public:
  virtual ~TextEncoderAdapter() = default;
  [[nodiscard]] virtual std::size_t token_dim() const = 0;
  [[nodiscard]] virtual std::size_t output_dim() const = 0;
  /// `tokens` is (sequence_length, token_dim); returns (1, output_dim).
  [[nodiscard]] virtual ag::Var encode(const ag::Var& tokens, std::size_t class_index) const = 0;
  /// Parameters of the final projection, the only trainable stage.
  [[nodiscard]] virtual std::vector<NamedParameter> parameters() const = 0;
};

/// Frozen tanh token-mixing stage, mean pooling over the sequence, then a
/// trainable affine projection:
///   out = mean_i tanh(t_i * mixing) * projection + projection_bias
class ToyTextEncoder final : public TextEncoderAdapter {
 public:
  /// mixing ~ N(0, 1/token_dim) from `seed`; projection starts at identity
  /// when token_dim == output_dim, else N(0, 1/token_dim).
  ToyTextEncoder() = default;
  ToyTextEncoder(std::size_t token_dim, std::size_t output_dim, std::uint64_t seed);
  ToyTextEncoder(ag::Matrix mixing, ag::Matrix projection, ag::Matrix projection_bias);

  [[nodiscard]] std::size_t token_dim() const override { return static_cast<std::size_t>(mixing_.rows()); }
  [[nodiscard]] std::size_t output_dim() const override { return static_cast<std::size_t>(projection_.cols()); }
  [[nodiscard]] ag::Var encode(const ag::Var& tokens, std::size_t class_index) const override;
  [[nodiscard]] std::vector<NamedParameter> parameters() const override;

  /// The frozen per-token stage applied to a single (1, token_dim) token.
  [[nodiscard]] ag::Matrix mix_token(const ag::Matrix& token) const;
  [[nodiscard]] const ag::Matrix& mixing() const { return mixing_; }
  [[nodiscard]] const ag::Var& projection() const { return projection_; }
  [[nodiscard]] const ag::Var& projection_bias() const { return projection_bias_; }

 private:
  ag::Matrix mixing_;
  ag::Var projection_;
  ag::Var projection_bias_;
};

/// Adapter over prompt embeddings exported from an external text encoder:
/// one pre-projection (token_dim) vector per class. Token inputs are ignored,
/// so context vectors receive no gradient through it; the final projection
/// remains trainable.
class ExportedTextEncoder final : public TextEncoderAdapter {
 public:
  ExportedTextEncoder(ag::Matrix class_hidden, std::size_t output_dim);

  [[nodiscard]] std::size_t token_dim() const override { return static_cast<std::size_t>(hidden_.cols()); }
  [[nodiscard]] std::size_t output_dim() const override { return static_cast<std::size_t>(projection_.cols()); }
  [[nodiscard]] ag::Var encode(const ag::Var& tokens, std::size_t class_index) const override;
  [[nodiscard]] std::vector<NamedParameter> parameters() const override;

 private:
  ag::Matrix hidden_;
  ag::Var projection_;
  ag::Var projection_bias_;
};

/// E_T([t_ctx, t_c]) for one class: (1, D).
ag::Var encode_prompt(const ContextBank& bank, std::size_t class_index, const TextEncoderAdapter& adapter);

/// Raw (frame_count, D) features of one manifest entry; no re-centring.
ag::Matrix load_features(const VideoManifest& manifest, const VideoEntry& entry, std::size_t expected_dim = 0);

/// Raw features of a set of videos, loaded once and then read-only.
class FrameFeatureStore {
 public:
  FrameFeatureStore() = default;
  FrameFeatureStore(const VideoManifest& manifest, const std::vector<const VideoEntry*>& entries,
                    std::size_t expected_dim = 0);

  void insert(const std::string& video_id, ag::Matrix features);
  [[nodiscard]] const ag::Matrix& get(const std::string& video_id) const;
  [[nodiscard]] bool contains(const std::string& video_id) const { return features_.contains(video_id); }
  [[nodiscard]] std::size_t size() const { return features_.size(); }

 private:
  std::map<std::string, ag::Matrix> features_;
};

}  // namespace varkit

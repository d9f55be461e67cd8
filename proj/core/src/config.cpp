// SPDX-License-Identifier: Apache-2.0

#include "varkit/config.hpp"

#include "varkit/error.hpp"
#include "varkit/mil.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace varkit {

using nlohmann::json;

void SelectorConfig::validate() const {
  if (!(mask_ratio >= 0.0 && mask_ratio < 1.0)) throw ConfigError("selector.mask_ratio must be in [0, 1)");
  if (!(bn_momentum > 0.0 && bn_momentum < 1.0)) throw ConfigError("selector.bn_momentum must be in (0, 1)");
  if (!(bn_eps > 0.0)) throw ConfigError("selector.bn_eps must be positive");
}

void OptimizerConfig::validate() const {
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw ConfigError("train.beta1 and train.beta2 must be in [0, 1)");
  }
  if (!(eps > 0.0)) throw ConfigError("train.eps must be positive");
  if (!(weight_decay >= 0.0)) throw ConfigError("train.weight_decay must be >= 0");
  if (!(clip_norm >= 0.0)) throw ConfigError("train.clip_norm must be >= 0");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate must be positive");
  if (epochs < 0) throw ConfigError("train.epochs must be >= 0");
  if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("train.warmup_fraction must be in [0, 1)");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every must be >= 0");
  optimizer.validate();
}

void RunConfig::validate() const {
  const auto names = profile_names();
  if (std::find(names.begin(), names.end(), profile) == names.end()) {
    throw ConfigError("unknown profile '" + profile + "'");
  }
  encoder.validate();
  bag.validate();
  selector.validate();
  axial.validate();
  losses.validate();
  train.validate();
  if (static_cast<std::size_t>(bag.segments) > axial.max_positions ||
      static_cast<std::size_t>(bag.frames) > axial.max_positions) {
    throw ConfigError("bag.segments and bag.frames must not exceed axial.max_positions");
  }
  // Fails early instead of at the first training step.
  const std::int64_t eligible = bag.segments - masked_count(bag.segments, selector.mask_ratio);
  if (eligible < 2 * bag.k) {
    throw ConfigError("selector.mask_ratio " + std::to_string(selector.mask_ratio) + " leaves " +
                      std::to_string(eligible) + " of S=" + std::to_string(bag.segments) +
                      " segments eligible, fewer than 2K=" + std::to_string(2 * bag.k));
  }
}

std::vector<std::string> profile_names() { return {"shanghaitech", "ucf", "xd", "synth"}; }

RunConfig profile_config(const std::string& name) {
  RunConfig c;
  c.profile = name;
  if (name == "synth") {
    c.encoder.feature_dim = 32;
    c.bag = BagSpec{8, 4, 2, 8};
    c.selector.mask_ratio = 0.5;
    c.axial.embed_dim = 64;
    c.axial.num_layers = 1;
    c.train.learning_rate = 1e-3;
    c.train.epochs = 30;
    c.seed = 1;
    return c;
  }
  c.encoder.feature_dim = 512;
  c.bag = BagSpec{32, 16, 3, 64};
  if (name == "shanghaitech") {
    c.train.learning_rate = 5e-4;
    c.train.epochs = 100;
    c.axial.embed_dim = 256;
    c.axial.num_layers = 2;
    c.axial.input = TemporalInput::kFeaturesAndSelector;
  } else if (name == "ucf") {
    c.train.learning_rate = 1e-5;
    c.train.epochs = 50;
    c.axial.embed_dim = 256;
    c.axial.num_layers = 1;
  } else if (name == "xd") {
    c.train.learning_rate = 5e-6;
    c.train.epochs = 50;
    c.axial.embed_dim = 128;
    c.axial.num_layers = 1;
  } else {
    throw ConfigError("unknown profile '" + name + "'");
  }
  return c;
}

namespace {

std::string dotted(const std::string& pointer) {
  std::string out = pointer.substr(pointer.empty() ? 0 : 1);
  std::replace(out.begin(), out.end(), '/', '.');
  return out;
}

// Walks every field once; the same table drives writing, reading and the
// known-key check.
class Writer {
 public:
  json doc = json::object();

  template <typename T>
  void field(const char* path, const T& value) {
    doc[json::json_pointer(path)] = value;
  }
  void text(const char* path, std::string value) { doc[json::json_pointer(path)] = std::move(value); }
};

class Reader {
 public:
  explicit Reader(const json& doc) : doc_(doc) {}

  void field(const char* path, std::size_t& value) { read_unsigned(path, value); }
  void field(const char* path, std::int64_t& value) {
    if (const json* j = find(path)) {
      if (!j->is_number_integer()) type_error(path, "an integer");
      value = j->get<std::int64_t>();
    }
  }
  void field(const char* path, double& value) {
    if (const json* j = find(path)) {
      if (!j->is_number()) type_error(path, "a number");
      value = j->get<double>();
    }
  }
  void field(const char* path, bool& value) {
    if (const json* j = find(path)) {
      if (!j->is_boolean()) type_error(path, "a boolean");
      value = j->get<bool>();
    }
  }
  void field(const char* path, std::string& value) {
    if (const json* j = find(path)) {
      if (!j->is_string()) type_error(path, "a string");
      value = j->get<std::string>();
    }
  }
  /// Returns true when the key was present.
  bool text(const char* path, std::string& value) {
    const json* j = find(path);
    if (j == nullptr) return false;
    if (!j->is_string()) type_error(path, "a string");
    value = j->get<std::string>();
    return true;
  }

 private:
  template <typename U>
  void read_unsigned(const char* path, U& value) {
    if (const json* j = find(path)) {
      if (!j->is_number_integer() || (j->is_number_integer() && !j->is_number_unsigned() && j->get<std::int64_t>() < 0)) {
        type_error(path, "a non-negative integer");
      }
      value = j->get<U>();
    }
  }
  const json* find(const char* path) const {
    const json::json_pointer ptr(path);
    return doc_.contains(ptr) ? &doc_.at(ptr) : nullptr;
  }
  [[noreturn]] static void type_error(const char* path, const char* expected) {
    throw ConfigError("config key '" + dotted(path) + "' must be " + expected);
  }
  const json& doc_;
};

class KeyCollector {
 public:
  std::set<std::string> keys;
  template <typename T>
  void field(const char* path, const T&) {
    keys.insert(path);
  }
  bool text(const char* path, const std::string&) {
    keys.insert(path);
    return false;
  }
};

std::string sharing_name(ContextSharing s) { return s == ContextSharing::kShared ? "shared" : "per_class"; }
ContextSharing sharing_from(const std::string& s) {
  if (s == "per_class") return ContextSharing::kPerClass;
  if (s == "shared") return ContextSharing::kShared;
  throw ConfigError("config key 'encoder.context_sharing' must be 'per_class' or 'shared', got '" + s + "'");
}
std::string smoothness_name(SmoothnessForm f) { return f == SmoothnessForm::kPrinted ? "printed" : "squared"; }
SmoothnessForm smoothness_from(const std::string& s) {
  if (s == "squared") return SmoothnessForm::kSquared;
  if (s == "printed") return SmoothnessForm::kPrinted;
  throw ConfigError("config key 'losses.smoothness_form' must be 'squared' or 'printed', got '" + s + "'");
}

const char* const kEnablePaths[kNumLossTerms] = {
    "/losses/enable/A_dir",    "/losses/enable/A_plus",     "/losses/enable/A_minus",
    "/losses/enable/N_dir",    "/losses/enable/N_plus",     "/losses/enable/sparsity",
    "/losses/enable/smoothness", "/losses/enable/A_minus_dir", "/losses/enable/N_plus_dir",
};

template <typename V, typename C>
void visit_plain(V& v, C& c) {
  v.field("/seed", c.seed);
  v.field("/encoder/feature_dim", c.encoder.feature_dim);
  v.field("/encoder/token_dim", c.encoder.token_dim);
  v.field("/encoder/num_context_vectors", c.encoder.num_context_vectors);
  v.field("/encoder/context_init_std", c.encoder.context_init_std);
  v.field("/encoder/encoder_seed", c.encoder.encoder_seed);
  v.field("/bag/segments", c.bag.segments);
  v.field("/bag/frames", c.bag.frames);
  v.field("/bag/k", c.bag.k);
  v.field("/bag/batch", c.bag.batch);
  v.field("/selector/mask_ratio", c.selector.mask_ratio);
  v.field("/selector/bn_momentum", c.selector.bn_momentum);
  v.field("/selector/bn_eps", c.selector.bn_eps);
  v.field("/axial/embed_dim", c.axial.embed_dim);
  v.field("/axial/num_layers", c.axial.num_layers);
  v.field("/axial/num_heads", c.axial.num_heads);
  v.field("/axial/ff_multiplier", c.axial.ff_multiplier);
  v.field("/axial/max_positions", c.axial.max_positions);
  v.field("/axial/dropout", c.axial.dropout);
  v.field("/axial/layer_norm_eps", c.axial.layer_norm_eps);
  v.field("/axial/frame_axis", c.axial.frame_axis);
  v.field("/axial/segment_axis", c.axial.segment_axis);
  v.field("/losses/lambda_sparsity", c.losses.lambda_sparsity);
  v.field("/losses/lambda_smoothness", c.losses.lambda_smoothness);
  for (std::size_t t = 0; t < kNumLossTerms; ++t) v.field(kEnablePaths[t], c.losses.enabled[t]);
  v.field("/train/learning_rate", c.train.learning_rate);
  v.field("/train/epochs", c.train.epochs);
  v.field("/train/warmup_fraction", c.train.warmup_fraction);
  v.field("/train/beta1", c.train.optimizer.beta1);
  v.field("/train/beta2", c.train.optimizer.beta2);
  v.field("/train/eps", c.train.optimizer.eps);
  v.field("/train/weight_decay", c.train.optimizer.weight_decay);
  v.field("/train/clip_norm", c.train.optimizer.clip_norm);
  v.field("/train/checkpoint_every", c.train.checkpoint_every);
  v.field("/synth/num_classes", c.synth.num_classes);
  v.field("/synth/feature_dim", c.synth.feature_dim);
  v.field("/synth/n_train_normal", c.synth.n_train_normal);
  v.field("/synth/n_train_anomalous", c.synth.n_train_anomalous);
  v.field("/synth/n_test_normal", c.synth.n_test_normal);
  v.field("/synth/n_test_anomalous", c.synth.n_test_anomalous);
  v.field("/synth/min_frames", c.synth.min_frames);
  v.field("/synth/max_frames", c.synth.max_frames);
  v.field("/synth/anomaly_shift", c.synth.anomaly_shift);
  v.field("/synth/noise_std", c.synth.noise_std);
  v.field("/synth/center_scale", c.synth.center_scale);
  v.field("/synth/min_intervals", c.synth.min_intervals);
  v.field("/synth/max_intervals", c.synth.max_intervals);
  v.field("/synth/min_interval_frames", c.synth.min_interval_frames);
  v.field("/synth/max_interval_fraction", c.synth.max_interval_fraction);
  v.field("/synth/num_context_vectors", c.synth.num_context_vectors);
  v.field("/synth/encoder_seed", c.synth.encoder_seed);
  v.field("/data/data_dir", c.data.data_dir);
  v.field("/data/out_dir", c.data.out_dir);
}

std::set<std::string> known_keys() {
  KeyCollector k;
  RunConfig c;
  visit_plain(k, c);
  k.keys.insert({"/profile", "/encoder/context_sharing", "/axial/input", "/losses/smoothness_form"});
  return k.keys;
}

void reject_unknown_keys(const json& doc) {
  if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
  static const std::set<std::string> known = known_keys();
  const json flat = doc.flatten();
  for (const auto& [key, value] : flat.items()) {
    if (known.contains(key)) continue;
    // Empty sections flatten to a null leaf.
    const bool section = value.is_null() && std::any_of(known.begin(), known.end(), [&](const std::string& k) {
                           return k.rfind(key + "/", 0) == 0;
                         });
    if (section || key.empty()) continue;
    throw ConfigError("unknown config key '" + dotted(key) + "'");
  }
}

}  // namespace

std::string to_json_string(const RunConfig& config) {
  Writer w;
  w.text("/profile", config.profile);
  visit_plain(w, config);
  w.text("/encoder/context_sharing", sharing_name(config.encoder.context_sharing));
  w.text("/axial/input", to_string(config.axial.input));
  w.text("/losses/smoothness_form", smoothness_name(config.losses.smoothness_form));
  return w.doc.dump(2) + "\n";
}

RunConfig parse_config(const std::string& text, const RunConfig& base) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  reject_unknown_keys(doc);
  RunConfig c = base;
  Reader r(doc);
  r.text("/profile", c.profile);
  visit_plain(r, c);
  std::string s;
  if (r.text("/encoder/context_sharing", s)) c.encoder.context_sharing = sharing_from(s);
  if (r.text("/axial/input", s)) c.axial.input = temporal_input_from_string(s);
  if (r.text("/losses/smoothness_form", s)) c.losses.smoothness_form = smoothness_from(s);
  return c;
}

RunConfig load_config(const std::filesystem::path& path, const std::string& profile_override) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  const std::string text = buf.str();

  std::string profile = profile_override;
  if (profile.empty()) {
    json doc;
    try {
      doc = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("config is not valid JSON: ") + e.what());
    }
    if (doc.is_object() && doc.contains("profile") && doc["profile"].is_string()) {
      profile = doc["profile"].get<std::string>();
    } else {
      profile = "synth";
    }
  }
  RunConfig c = parse_config(text, profile_config(profile));
  c.profile = profile;
  return c;
}

bool operator==(const RunConfig& a, const RunConfig& b) { return to_json_string(a) == to_json_string(b); }

}  // namespace varkit

// SPDX-License-Identifier: Apache-2.0

#include "varkit/synth.hpp"

#include "varkit/binary_io.hpp"
#include "varkit/error.hpp"

#include <cstdio>
#include <random>

namespace varkit {

namespace {

const char* const kClassVocabulary[] = {
    "abuse",   "arrest",         "arson",   "assault",  "burglary",    "explosion", "fighting",
    "road accidents", "robbery", "shooting", "shoplifting", "stealing", "vandalism",
};

std::string make_id(const char* prefix, std::size_t i) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%s_%03zu", prefix, i);
  return buf;
}

}  // namespace

void SynthConfig::validate() const {
  if (num_classes == 0) throw ConfigError("synth: num_classes must be >= 1");
  if (num_classes > std::size(kClassVocabulary)) throw ConfigError("synth: too many classes for the vocabulary");
  if (feature_dim < num_classes) throw ConfigError("synth: feature_dim must be >= num_classes");
  if (!(anomaly_shift >= 0.0)) throw ConfigError("synth: anomaly_shift must be >= 0");
  if (!(noise_std >= 0.0) || !(center_scale >= 0.0)) throw ConfigError("synth: noise_std and center_scale must be >= 0");
  if (min_frames <= 0 || max_frames < min_frames) throw ConfigError("synth: need 0 < min_frames <= max_frames");
  if (min_intervals <= 0 || max_intervals < min_intervals) {
    throw ConfigError("synth: need 0 < min_intervals <= max_intervals");
  }
  if (min_interval_frames <= 0) throw ConfigError("synth: min_interval_frames must be positive");
  if (!(max_interval_fraction > 0.0 && max_interval_fraction <= 1.0)) {
    throw ConfigError("synth: max_interval_fraction must be in (0, 1]");
  }
  if (min_frames / max_intervals < min_interval_frames) {
    throw ConfigError("synth: infeasible interval rules, " + std::to_string(max_intervals) + " intervals of >= " +
                      std::to_string(min_interval_frames) + " frames do not fit in " + std::to_string(min_frames) +
                      " frames");
  }
  if (n_train_normal + n_train_anomalous == 0) throw ConfigError("synth: empty training split");
}

std::vector<std::string> synth_class_names(std::size_t n) {
  if (n > std::size(kClassVocabulary)) throw ConfigError("synth: too many classes for the vocabulary");
  return {kClassVocabulary, kClassVocabulary + n};
}

SynthDataset synthesize_dataset(const SynthConfig& config, std::uint64_t seed) {
  config.validate();
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> std_normal(0.0, 1.0);
  const auto d = static_cast<ag::Index>(config.feature_dim);
  const auto c_count = config.num_classes;

  SynthDataset ds;
  ds.class_names = synth_class_names(c_count);
  ds.center = ag::RowVector(d);
  for (ag::Index i = 0; i < d; ++i) ds.center(i) = config.center_scale * std_normal(rng);

  // Hidden directions aligned with the untrained prompt embeddings.
  const ToyTextEncoder encoder(config.feature_dim, config.feature_dim, config.encoder_seed);
  ds.directions = ag::Matrix(static_cast<ag::Index>(c_count), d);
  for (std::size_t c = 0; c < c_count; ++c) {
    const ag::Matrix cls = class_token_embeddings(ds.class_names[c], config.feature_dim, config.encoder_seed);
    ag::Matrix tokens = ag::Matrix::Zero(static_cast<ag::Index>(config.num_context_vectors) + cls.rows(), d);
    tokens.bottomRows(cls.rows()) = cls;
    ag::RowVector v = encoder.encode(ag::Var(tokens), c).value().row(0) - ds.center;
    for (std::size_t p = 0; p < c; ++p) {
      const auto prev = ds.directions.row(static_cast<ag::Index>(p));
      v -= v.dot(prev) * prev;
    }
    const double norm = v.norm();
    if (norm < 1e-8) throw NumericalError("synth: degenerate class direction for '" + ds.class_names[c] + "'");
    ds.directions.row(static_cast<ag::Index>(c)) = v / norm;
  }

  std::uniform_int_distribution<std::int64_t> length_dist(config.min_frames, config.max_frames);
  std::uniform_int_distribution<std::int64_t> count_dist(config.min_intervals, config.max_intervals);

  auto make_video = [&](const std::string& id, Split split, bool anomalous, std::size_t class_index) {
    VideoEntry e;
    e.video_id = id;
    e.split = split;
    e.label = anomalous ? Label::kAnomalous : Label::kNormal;
    e.class_name = anomalous ? ds.class_names[class_index] : kNormalClassName;
    e.frame_count = length_dist(rng);
    e.feature_path = "features/" + id + ".afv";

    ag::Matrix x(e.frame_count, d);
    for (ag::Index r = 0; r < x.rows(); ++r) {
      for (ag::Index j = 0; j < d; ++j) x(r, j) = ds.center(j) + config.noise_std * std_normal(rng);
    }
    std::vector<int> labels(static_cast<std::size_t>(e.frame_count), -1);
    if (anomalous) {
      const std::int64_t n_iv = count_dist(rng);
      const std::int64_t zone = e.frame_count / n_iv;
      const std::int64_t max_len =
          std::max(config.min_interval_frames, static_cast<std::int64_t>(config.max_interval_fraction * zone));
      std::uniform_int_distribution<std::int64_t> len_dist(config.min_interval_frames, max_len);
      const auto dir = ds.directions.row(static_cast<ag::Index>(class_index));
      for (std::int64_t z = 0; z < n_iv; ++z) {
        const std::int64_t len = len_dist(rng);
        std::uniform_int_distribution<std::int64_t> off_dist(0, zone - len);
        const std::int64_t start = z * zone + off_dist(rng);
        for (std::int64_t f = start; f < start + len; ++f) {
          x.row(f) += config.anomaly_shift * dir;
          labels[static_cast<std::size_t>(f)] = static_cast<int>(class_index);
        }
        if (split == Split::kTest) e.gt_intervals.push_back(Interval{start, start + len, e.class_name});
      }
    }
    // Stored at the precision of the feature file format.
    x = x.cast<float>().cast<double>();
    ds.features.emplace(id, std::move(x));
    ds.frame_labels.emplace(id, std::move(labels));
    ds.manifest.videos.push_back(std::move(e));
  };

  for (std::size_t i = 0; i < config.n_train_normal; ++i) make_video(make_id("train_normal", i), Split::kTrain, false, 0);
  for (std::size_t i = 0; i < config.n_train_anomalous; ++i) {
    make_video(make_id("train_anomalous", i), Split::kTrain, true, i % c_count);
  }
  for (std::size_t i = 0; i < config.n_test_normal; ++i) make_video(make_id("test_normal", i), Split::kTest, false, 0);
  for (std::size_t i = 0; i < config.n_test_anomalous; ++i) {
    make_video(make_id("test_anomalous", i), Split::kTest, true, i % c_count);
  }
  ds.manifest.validate();
  return ds;
}

void write_dataset(SynthDataset& dataset, const std::filesystem::path& out_dir) {
  std::error_code ec;
  std::filesystem::create_directories(out_dir / "features", ec);
  if (ec) throw DataError("cannot create " + (out_dir / "features").string() + ": " + ec.message());
  dataset.manifest.base_dir = out_dir;
  for (const auto& v : dataset.manifest.videos) {
    io::write_feature_file(out_dir / v.feature_path, dataset.features.at(v.video_id));
  }
  write_manifest(dataset.manifest, out_dir);
}

}  // namespace varkit

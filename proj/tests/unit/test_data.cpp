// SPDX-License-Identifier: Apache-2.0

#include "test_util.hpp"

#include "varkit/binary_io.hpp"
#include "varkit/data.hpp"
#include "varkit/error.hpp"
#include "varkit/manifest.hpp"
#include "varkit/synth.hpp"

#include <gtest/gtest.h>

#include <fstream>
#include <map>
#include <numeric>
#include <set>

namespace varkit {
namespace {

using ag::Matrix;
using test::random_matrix;

BagSpec spec(std::int64_t s, std::int64_t f, std::int64_t k = 1, std::int64_t b = 4) { return {s, f, k, b}; }

TEST(LoopPad, RepeatsFromTheStart) {
  const auto idx = loop_pad_indices(10, 32);
  ASSERT_EQ(idx.size(), 32u);
  for (std::int64_t i = 0; i < 32; ++i) EXPECT_EQ(idx[static_cast<std::size_t>(i)], i % 10);
  EXPECT_THROW((void)loop_pad_indices(0, 4), ConfigError);
}

TEST(TrainingBag, ShortVideoExample) {
  // len 10, S=2, F=16: padded to 32, two blocks of 16, start forced to 0.
  std::mt19937_64 rng(3);
  const auto idx = training_bag_indices(10, spec(2, 16), rng);
  std::vector<std::int64_t> expected;
  for (std::int64_t i = 0; i < 32; ++i) expected.push_back(i % 10);
  EXPECT_EQ(idx, expected);
}

TEST(TrainingBag, ExactLengthIsContiguousReshape) {
  const Matrix x = random_matrix(12, 3, 1);
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::mt19937_64 rng(seed);
    const auto bag = make_training_bag(x, spec(3, 4), rng);
    EXPECT_EQ(bag.features, x);
    std::vector<std::int64_t> iota(12);
    std::iota(iota.begin(), iota.end(), 0);
    EXPECT_EQ(bag.sources, iota);
  }
}

TEST(TrainingBag, SameSeedSameBag) {
  const Matrix x = random_matrix(100, 3, 1);
  std::mt19937_64 a(5), b(5);
  const auto ba = make_training_bag(x, spec(4, 4), a);
  const auto bb = make_training_bag(x, spec(4, 4), b);
  EXPECT_EQ(ba.sources, bb.sources);
  EXPECT_EQ(ba.features, bb.features);
}

TEST(TrainingBag, SegmentsComeFromDisjointBlocks) {
  std::mt19937_64 rng(9);
  for (std::int64_t len = 1; len <= 300; ++len) {
    const BagSpec sp = spec(4, 5);
    const auto idx = training_bag_indices(len, sp, rng);
    ASSERT_EQ(static_cast<std::int64_t>(idx.size()), 20);
    const std::int64_t padded = std::max<std::int64_t>(len, 20);
    const std::int64_t block = padded / 4;
    // Reconstruct padded positions: each segment is F consecutive padded
    // frames inside its own block.
    for (std::int64_t s = 0; s < 4; ++s) {
      const std::int64_t first = idx[static_cast<std::size_t>(s * 5)];
      bool found = false;
      for (std::int64_t start = s * block; start + 5 <= (s + 1) * block; ++start) {
        bool match = true;
        for (std::int64_t f = 0; f < 5 && match; ++f) {
          match = idx[static_cast<std::size_t>(s * 5 + f)] == (start + f) % len;
        }
        found = found || match;
      }
      EXPECT_TRUE(found) << "len " << len << " segment " << s << " first " << first;
      // Without padding the sources increase strictly within a segment.
      if (len >= 20) {
        for (std::int64_t f = 1; f < 5; ++f) {
          EXPECT_EQ(idx[static_cast<std::size_t>(s * 5 + f)], idx[static_cast<std::size_t>(s * 5 + f - 1)] + 1);
        }
      }
    }
  }
}

TEST(TrainingBag, StartsCoverTheWholeBlock) {
  std::mt19937_64 rng(2);
  std::set<std::int64_t> starts;
  for (int t = 0; t < 2000; ++t) starts.insert(training_bag_indices(40, spec(2, 4), rng)[0]);
  // Block length 20, F 4: starts 0..16.
  EXPECT_EQ(starts.size(), 17u);
  EXPECT_EQ(*starts.begin(), 0);
  EXPECT_EQ(*starts.rbegin(), 16);
}

TEST(InferencePlan, FortyFramesExample) {
  const auto plan = make_inference_plan(40, spec(2, 16));
  EXPECT_EQ(plan.passes, 2);
  EXPECT_EQ(plan.padded_length, 64);
  std::vector<std::int64_t> pass0, pass1;
  for (std::int64_t i = 0; i < 16; ++i) pass0.push_back(i);
  for (std::int64_t i = 32; i < 48; ++i) pass0.push_back(i);
  for (std::int64_t i = 16; i < 32; ++i) pass1.push_back(i);
  for (std::int64_t i = 48; i < 64; ++i) pass1.push_back(i);
  EXPECT_EQ(plan.padded_indices[0], pass0);
  EXPECT_EQ(plan.padded_indices[1], pass1);
  EXPECT_EQ(plan.source_frame(45), 5);
}

TEST(InferencePlan, ExactLengthIsOnePass) {
  const auto plan = make_inference_plan(32, spec(2, 16));
  EXPECT_EQ(plan.passes, 1);
  std::vector<std::int64_t> iota(32);
  std::iota(iota.begin(), iota.end(), 0);
  EXPECT_EQ(plan.padded_indices[0], iota);
  EXPECT_THROW((void)make_inference_plan(0, spec(2, 16)), ConfigError);
}

TEST(InferencePlan, CoversEveryPaddedFrameOnce) {
  const BagSpec sp = spec(32, 16, 3, 64);
  for (std::int64_t n = 1; n <= 500; ++n) {
    const auto plan = make_inference_plan(n, sp);
    ASSERT_EQ(plan.passes, (n + 511) / 512);
    ASSERT_EQ(plan.padded_length, plan.passes * 512);
    std::vector<int> count(static_cast<std::size_t>(plan.padded_length), 0);
    for (const auto& pass : plan.padded_indices) {
      ASSERT_EQ(pass.size(), 512u);
      for (auto i : pass) ++count[static_cast<std::size_t>(i)];
    }
    ASSERT_TRUE(std::all_of(count.begin(), count.end(), [](int c) { return c == 1; })) << "n=" << n;
  }
}

TEST(BalancedBatcher, EqualPopulations) {
  std::vector<std::size_t> normal(10), anomalous(10);
  std::iota(normal.begin(), normal.end(), 0);
  std::iota(anomalous.begin(), anomalous.end(), 10);
  const BalancedBatcher batcher(normal, anomalous, 4);
  std::mt19937_64 rng(1);
  const auto batches = batcher.epoch(rng);
  ASSERT_EQ(batches.size(), 5u);
  std::multiset<std::size_t> seen;
  for (const auto& b : batches) {
    EXPECT_EQ(b.normal.size(), 2u);
    EXPECT_EQ(b.anomalous.size(), 2u);
    for (auto i : b.normal) EXPECT_LT(i, 10u);
    for (auto i : b.anomalous) EXPECT_GE(i, 10u);
    seen.insert(b.normal.begin(), b.normal.end());
    seen.insert(b.anomalous.begin(), b.anomalous.end());
  }
  for (std::size_t i = 0; i < 20; ++i) EXPECT_EQ(seen.count(i), 1u);
}

TEST(BalancedBatcher, SmallerPopulationIsRecycled) {
  std::vector<std::size_t> normal(10), anomalous{100, 101, 102};
  std::iota(normal.begin(), normal.end(), 0);
  const BalancedBatcher batcher(normal, anomalous, 4);
  std::mt19937_64 rng(2);
  const auto batches = batcher.epoch(rng);
  ASSERT_EQ(batches.size(), 5u);
  std::map<std::size_t, int> normal_count, anomalous_count;
  for (const auto& b : batches) {
    ASSERT_EQ(b.normal.size(), 2u);
    ASSERT_EQ(b.anomalous.size(), 2u);
    for (auto i : b.normal) ++normal_count[i];
    for (auto i : b.anomalous) ++anomalous_count[i];
  }
  EXPECT_EQ(normal_count.size(), 10u);
  for (const auto& [i, c] : normal_count) EXPECT_EQ(c, 1);
  // 10 draws from a deck of 3 reshuffled on exhaustion: counts 3 or 4.
  int total = 0;
  for (const auto& [i, c] : anomalous_count) {
    EXPECT_GE(c, 3);
    EXPECT_LE(c, 4);
    total += c;
  }
  EXPECT_EQ(total, 10);
}

TEST(BalancedBatcher, SameSeedSameSequenceAndErrors) {
  const BalancedBatcher batcher({0, 1, 2, 3}, {4, 5, 6}, 2);
  std::mt19937_64 a(3), b(3);
  const auto ea = batcher.epoch(a);
  const auto eb = batcher.epoch(b);
  ASSERT_EQ(ea.size(), eb.size());
  for (std::size_t i = 0; i < ea.size(); ++i) {
    EXPECT_EQ(ea[i].normal, eb[i].normal);
    EXPECT_EQ(ea[i].anomalous, eb[i].anomalous);
  }
  EXPECT_THROW(BalancedBatcher({}, {1}, 2), ConfigError);
  EXPECT_THROW(BalancedBatcher({0}, {}, 2), ConfigError);
  EXPECT_THROW(BalancedBatcher({0}, {1}, 3), ConfigError);
}

TEST(BagSpec, Validation) {
  EXPECT_NO_THROW(spec(8, 4, 2, 8).validate());
  EXPECT_THROW(spec(8, 4, 2, 7).validate(), ConfigError);
  EXPECT_THROW(spec(0, 4, 2, 8).validate(), ConfigError);
  EXPECT_THROW(spec(3, 4, 2, 8).validate(), ConfigError);
}

TEST(Synth, PlantedLabelsMatchWrittenIntervals) {
  SynthConfig c;
  test::TempDir dir("synth");
  auto ds = synthesize_dataset(c, 1);
  write_dataset(ds, dir.path());
  const auto manifest = read_manifest(dir.path());
  ASSERT_EQ(manifest.videos.size(), 80u);
  EXPECT_EQ(manifest.training_classes(), ds.class_names);
  std::size_t anomalous_frames = 0;
  for (const auto& e : manifest.videos) {
    const auto& planted = ds.frame_labels.at(e.video_id);
    ASSERT_EQ(static_cast<std::int64_t>(planted.size()), e.frame_count);
    if (e.split == Split::kTest) {
      EXPECT_EQ(frame_labels(e, ds.class_names), planted) << e.video_id;
    } else {
      EXPECT_TRUE(e.gt_intervals.empty());
    }
    const int expected_class =
        e.anomalous() ? static_cast<int>(std::find(ds.class_names.begin(), ds.class_names.end(), e.class_name) -
                                         ds.class_names.begin())
                      : -1;
    std::size_t count = 0;
    for (int l : planted) {
      if (l >= 0) {
        EXPECT_EQ(l, expected_class);
        ++count;
      }
    }
    EXPECT_EQ(count > 0, e.anomalous()) << e.video_id;
    anomalous_frames += count;
    EXPECT_EQ(load_features(manifest, e, c.feature_dim), ds.features.at(e.video_id));
  }
  EXPECT_GT(anomalous_frames, 0u);
}

TEST(Synth, NoiselessFramesSitOnTheirTargets) {
  SynthConfig c;
  c.noise_std = 0.0;
  const auto ds = synthesize_dataset(c, 4);
  // Rows are orthonormal.
  EXPECT_LT((ds.directions * ds.directions.transpose() - Matrix::Identity(3, 3)).norm(), 1e-12);
  for (const auto& [id, x] : ds.features) {
    const auto& labels = ds.frame_labels.at(id);
    for (ag::Index i = 0; i < x.rows(); ++i) {
      ag::RowVector target = ds.center;
      const int l = labels[static_cast<std::size_t>(i)];
      if (l >= 0) target += c.anomaly_shift * ds.directions.row(l);
      // Features are stored at float precision.
      EXPECT_LT((x.row(i) - target).cwiseAbs().maxCoeff(), 1e-5);
    }
  }
}

TEST(Synth, ZeroShiftMakesAnomaliesInvisible) {
  SynthConfig c;
  c.noise_std = 0.0;
  c.anomaly_shift = 0.0;
  const auto ds = synthesize_dataset(c, 4);
  for (const auto& [id, x] : ds.features) {
    EXPECT_LT((x.rowwise() - ds.center).cwiseAbs().maxCoeff(), 1e-6) << id;
  }
}

TEST(Synth, SameSeedSameData) {
  const auto a = synthesize_dataset(SynthConfig{}, 7);
  const auto b = synthesize_dataset(SynthConfig{}, 7);
  EXPECT_EQ(a.features, b.features);
  EXPECT_EQ(a.frame_labels, b.frame_labels);
  const auto c = synthesize_dataset(SynthConfig{}, 8);
  EXPECT_NE(a.features.begin()->second, c.features.begin()->second);
}

TEST(Synth, InfeasibleRulesAreRejected) {
  SynthConfig c;
  c.min_frames = 8;
  c.max_frames = 8;
  c.min_interval_frames = 8;
  EXPECT_THROW((void)synthesize_dataset(c, 1), ConfigError);
  c = SynthConfig{};
  c.num_classes = 0;
  EXPECT_THROW((void)synthesize_dataset(c, 1), ConfigError);
}

VideoManifest sample_manifest() {
  VideoManifest m;
  VideoEntry a;
  a.video_id = "n0";
  a.frame_count = 20;
  a.feature_path = "features/n0.afv";
  VideoEntry b;
  b.video_id = "a0";
  b.split = Split::kTest;
  b.label = Label::kAnomalous;
  b.class_name = "Road Accident";
  b.frame_count = 30;
  b.feature_path = "features/a0.afv";
  b.gt_intervals = {{2, 5, "Road Accident"}, {10, 12, "Road Accident"}};
  m.videos = {a, b};
  return m;
}

TEST(Manifest, RoundTripAndLookups) {
  test::TempDir dir("manifest");
  const auto m = sample_manifest();
  write_manifest(m, dir.path());
  const auto back = read_manifest(dir.path());
  ASSERT_EQ(back.videos.size(), 2u);
  const auto* a0 = back.find("a0");
  ASSERT_NE(a0, nullptr);
  EXPECT_EQ(a0->class_name, "Road Accident");
  ASSERT_EQ(a0->gt_intervals.size(), 2u);
  EXPECT_EQ(a0->gt_intervals[1].start, 10);
  EXPECT_EQ(a0->gt_intervals[1].end, 12);
  EXPECT_EQ(back.find("zz"), nullptr);
  EXPECT_EQ(back.split(Split::kTrain).size(), 1u);
  const auto labels = frame_labels(*a0, {"Fire", "Road Accident"});
  for (int i = 0; i < 30; ++i) {
    const bool inside = (i >= 2 && i < 5) || (i >= 10 && i < 12);
    EXPECT_EQ(labels[static_cast<std::size_t>(i)], inside ? 1 : -1);
  }
  EXPECT_THROW((void)frame_labels(*a0, {"Fire"}), DataError);
}

TEST(Manifest, InvariantViolationsAreRejected) {
  auto m = sample_manifest();
  m.videos[1].gt_intervals.push_back({25, 31, "Road Accident"});
  EXPECT_THROW(m.validate(), DataError);
  m = sample_manifest();
  m.videos[0].class_name = "Fire";
  EXPECT_THROW(m.validate(), DataError);
  m = sample_manifest();
  m.videos[0].gt_intervals = {{0, 1, "NONE"}};
  EXPECT_THROW(m.validate(), DataError);
  m = sample_manifest();
  m.videos[1].video_id = "n0";
  EXPECT_THROW(m.validate(), DataError);
  test::TempDir dir("manifest");
  EXPECT_THROW((void)read_manifest(dir.path()), DataError);
  std::ofstream(dir.path() / "manifest.csv") << "wrong,header\n";
  EXPECT_THROW((void)read_manifest(dir.path()), DataError);
}

TEST(RecordFile, RoundTripAndCorruption) {
  test::TempDir dir("records");
  io::RecordFile f;
  const Matrix m = random_matrix(3, 4, 1);
  f.put_matrix("m", m);
  f.put_i64("ints", {1, -2, 3});
  f.put_bytes("text", "hello");
  f.save(dir.path() / "r.bin");
  const auto back = io::RecordFile::load(dir.path() / "r.bin");
  EXPECT_EQ(back.get_matrix("m"), m);
  EXPECT_EQ(back.get_i64("ints"), (std::vector<std::int64_t>{1, -2, 3}));
  EXPECT_EQ(back.get_bytes("text"), "hello");
  EXPECT_THROW((void)back.get_matrix("missing"), DataError);
  EXPECT_THROW((void)back.get_i64("m"), DataError);

  // Flip one payload byte.
  std::fstream raw(dir.path() / "r.bin", std::ios::in | std::ios::out | std::ios::binary);
  raw.seekg(-3, std::ios::end);
  char c = 0;
  raw.read(&c, 1);
  raw.seekp(-3, std::ios::end);
  c = static_cast<char>(c ^ 0x5A);
  raw.write(&c, 1);
  raw.close();
  EXPECT_THROW((void)io::RecordFile::load(dir.path() / "r.bin"), DataError);
}

TEST(FeatureFile, RoundTripAtFloatPrecision) {
  test::TempDir dir("features");
  const Matrix m = random_matrix(5, 7, 2);
  io::write_feature_file(dir.path() / "f.afv", m);
  const Matrix back = io::read_feature_file(dir.path() / "f.afv");
  EXPECT_EQ(back, m.cast<float>().cast<double>());
  std::ofstream(dir.path() / "bad.afv", std::ios::binary) << "NOPE0000000000000000";
  EXPECT_THROW((void)io::read_feature_file(dir.path() / "bad.afv"), DataError);
}

}  // namespace
}  // namespace varkit

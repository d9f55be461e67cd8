// SPDX-License-Identifier: Apache-2.0

#include "test_util.hpp"

#include "varkit/error.hpp"
#include "varkit/temporal.hpp"

#include <gtest/gtest.h>

#include <set>

namespace varkit {
namespace {

using ag::Matrix;
using ag::Var;
using test::random_matrix;

AxialConfig small_axial(std::size_t embed = 8, std::size_t heads = 2) {
  AxialConfig c;
  c.embed_dim = embed;
  c.num_heads = heads;
  c.ff_multiplier = 2;
  c.dropout = 0.0;
  return c;
}

// Random head so outputs move away from 0.5.
void randomize_head(TemporalModel& m, std::uint64_t seed) {
  m.param("head.weight").mutable_value() = random_matrix(m.param("head.weight").rows(), 1, seed);
  m.param("head.bias").mutable_value() = random_matrix(1, 1, seed + 1);
}

TEST(Temporal, OutputShapeAndRange) {
  TemporalModel m(small_axial(), 5, 4, 3, 1);
  randomize_head(m, 2);
  const Matrix out = m.forward(Var(random_matrix(2 * 4 * 3, 5, 3, 2.0)), 2).value();
  ASSERT_EQ(out.rows(), 24);
  ASSERT_EQ(out.cols(), 1);
  EXPECT_GT(out.minCoeff(), 0.0);
  EXPECT_LT(out.maxCoeff(), 1.0);
  EXPECT_GT(out.maxCoeff() - out.minCoeff(), 1e-3);
}

TEST(Temporal, ZeroHeadGivesOneHalf) {
  const TemporalModel m(small_axial(), 5, 4, 3, 1);
  const Matrix out = m.forward(Var(random_matrix(12, 5, 3)), 1).value();
  EXPECT_EQ(out, Matrix::Constant(12, 1, 0.5));
}

TEST(Temporal, RepeatedForwardIsBitIdentical) {
  TemporalModel a(small_axial(), 5, 4, 3, 9);
  TemporalModel b(small_axial(), 5, 4, 3, 9);
  randomize_head(a, 2);
  randomize_head(b, 2);
  const Var x(random_matrix(12, 5, 3));
  EXPECT_EQ(a.forward(x, 1).value(), a.forward(x, 1).value());
  EXPECT_EQ(a.forward(x, 1).value(), b.forward(x, 1).value());
}

TEST(Temporal, DropoutIsInactiveWithoutRngOrTrainFlag) {
  AxialConfig c = small_axial();
  c.dropout = 0.5;
  TemporalModel m(c, 5, 4, 3, 9);
  randomize_head(m, 2);
  const Var x(random_matrix(12, 5, 3));
  std::mt19937_64 rng(1);
  EXPECT_EQ(m.forward(x, 1, false, &rng).value(), m.forward(x, 1).value());
  EXPECT_NE(m.forward(x, 1, true, &rng).value(), m.forward(x, 1).value());
}

TEST(Temporal, ShapeErrors) {
  const TemporalModel m(small_axial(), 5, 4, 3, 1);
  EXPECT_THROW((void)m.forward(Var(random_matrix(11, 5, 3)), 1), ShapeError);
  EXPECT_THROW((void)m.forward(Var(random_matrix(12, 6, 3)), 1), ShapeError);
  EXPECT_THROW((void)TemporalModel().forward(Var(random_matrix(12, 5, 3)), 1), ConfigError);
}

TEST(Temporal, ConfigValidation) {
  AxialConfig c = small_axial(10, 3);
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_axial();
  c.dropout = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = small_axial();
  c.max_positions = 4;
  EXPECT_THROW(TemporalModel(c, 5, 5, 3, 1), ConfigError);
  EXPECT_EQ(temporal_input_from_string("D+C"), TemporalInput::kFeaturesAndSelector);
  EXPECT_THROW((void)temporal_input_from_string("E"), ConfigError);
}

TEST(Temporal, InputGradientMatchesFiniteDifferences) {
  // One bag of S=2 segments, F=3 frames, 4 channels.
  TemporalModel m(small_axial(), 4, 2, 3, 5);
  randomize_head(m, 6);
  const double err = test::gradient_check([&](const Var& x) { return test::weighted_sum(m.forward(x, 1)); },
                                          random_matrix(6, 4, 7));
  EXPECT_LT(err, 1e-4);
}

TEST(Temporal, ParameterGradientsMatchFiniteDifferences) {
  TemporalModel m(small_axial(), 4, 2, 3, 5);
  randomize_head(m, 6);
  const Var x(random_matrix(12, 4, 7));
  for (const char* name : {"layer0.segment.query.weight", "layer0.frame.ff1.weight", "pos.frame", "head.weight"}) {
    Var& p = m.param(name);
    const Matrix original = p.value();
    const double err = test::gradient_check(
        [&](const Var& v) {
          Var saved = p;
          p = v;
          Var out = test::weighted_sum(m.forward(x, 2));
          p = saved;
          return out;
        },
        original);
    EXPECT_LT(err, 1e-4) << name;
  }
}

TEST(Temporal, ParameterCountDoesNotDependOnBagShape) {
  AxialConfig c;  // default width
  const TemporalModel small(c, 32, 2, 3, 1);
  const TemporalModel full_shape(c, 32, 32, 16, 1);
  EXPECT_EQ(small.parameter_count(), full_shape.parameter_count());
  std::size_t total = 0;
  std::set<std::string> names;
  for (const auto& p : full_shape.parameters()) {
    total += static_cast<std::size_t>(p.var.value().size());
    names.insert(p.name);
  }
  EXPECT_EQ(total, full_shape.parameter_count());
  EXPECT_EQ(names.size(), full_shape.parameters().size());
  // Doubling the layers roughly doubles the per-layer cost.
  c.num_layers = 2;
  const TemporalModel deeper(c, 32, 32, 16, 1);
  EXPECT_GT(deeper.parameter_count(), full_shape.parameter_count());
}

TEST(Temporal, FrameAxisIsLocalToEachSegment) {
  AxialConfig c = small_axial();
  c.segment_axis = false;
  TemporalModel m(c, 4, 3, 4, 2);
  randomize_head(m, 3);
  // Without segment positional terms, segments become exchangeable.
  m.param("pos.segment").mutable_value().setZero();
  const Matrix x = random_matrix(12, 4, 4);
  const Matrix out = m.forward(Var(x), 1).value();
  const std::vector<int> perm{2, 0, 1};
  Matrix xp(12, 4);
  for (int s = 0; s < 3; ++s) xp.middleRows(s * 4, 4) = x.middleRows(perm[static_cast<std::size_t>(s)] * 4, 4);
  const Matrix outp = m.forward(Var(xp), 1).value();
  for (int s = 0; s < 3; ++s) {
    EXPECT_LT((outp.middleRows(s * 4, 4) - out.middleRows(perm[static_cast<std::size_t>(s)] * 4, 4)).norm(), 1e-12);
  }
  // Changing segment 2 leaves segment 0 untouched.
  Matrix x2 = x;
  x2.middleRows(8, 4) = random_matrix(4, 4, 5);
  EXPECT_EQ(m.forward(Var(x2), 1).value().topRows(4), out.topRows(4));
}

TEST(Temporal, SegmentAxisMixesSegments) {
  TemporalModel m(small_axial(), 4, 3, 4, 2);
  randomize_head(m, 3);
  const Matrix x = random_matrix(12, 4, 4);
  Matrix x2 = x;
  x2.middleRows(8, 4) = random_matrix(4, 4, 5);
  EXPECT_GT((m.forward(Var(x2), 1).value().topRows(4) - m.forward(Var(x), 1).value().topRows(4)).norm(), 1e-9);
}

TEST(Temporal, BagsInABatchAreIndependent) {
  TemporalModel m(small_axial(), 4, 2, 3, 2);
  randomize_head(m, 3);
  const Matrix a = random_matrix(6, 4, 1);
  const Matrix b = random_matrix(6, 4, 2);
  Matrix ab(12, 4);
  ab << a, b;
  const Matrix out = m.forward(Var(ab), 2).value();
  EXPECT_LT((out.topRows(6) - m.forward(Var(a), 1).value()).norm(), 1e-13);
  EXPECT_LT((out.bottomRows(6) - m.forward(Var(b), 1).value()).norm(), 1e-13);
}

TEST(TemporalInput, SourcesAreConcatenatedPerConfig) {
  const Var f(random_matrix(6, 4, 1));
  const Var s(random_matrix(6, 3, 2));
  AxialConfig c;
  c.input = TemporalInput::kFeatures;
  EXPECT_EQ(build_temporal_input(f, Var(), c).value(), f.value());
  EXPECT_EQ(c.input_dim(4, 3), 4u);
  c.input = TemporalInput::kFeaturesAndSelector;
  const Matrix both = build_temporal_input(f, s, c).value();
  EXPECT_EQ(both.cols(), 7);
  EXPECT_EQ(both.leftCols(4), f.value());
  EXPECT_EQ(both.rightCols(3), s.value());
  EXPECT_EQ(c.input_dim(4, 3), 7u);
  c.input = TemporalInput::kSelector;
  EXPECT_EQ(build_temporal_input(f, s, c).value(), s.value());
  EXPECT_EQ(c.input_dim(4, 3), 3u);
}

TEST(TemporalInput, MissingOrMismatchedSelectorIsAnError) {
  const Var f(random_matrix(6, 4, 1));
  AxialConfig c;
  c.input = TemporalInput::kFeaturesAndSelector;
  EXPECT_THROW((void)build_temporal_input(f, Var(), c), ConfigError);
  EXPECT_THROW((void)build_temporal_input(f, Var(random_matrix(5, 3, 2)), c), ShapeError);
}

TEST(TemporalGroups, EachAxisTilesTheGrid) {
  const auto frames = frame_axis_groups(2, 3, 4);
  const auto segments = segment_axis_groups(2, 3, 4);
  ASSERT_EQ(frames.size(), 6u);
  ASSERT_EQ(segments.size(), 8u);
  std::multiset<ag::Index> seen_f, seen_s;
  for (const auto& g : frames) {
    ASSERT_EQ(g.size(), 4u);
    for (std::size_t i = 1; i < g.size(); ++i) EXPECT_EQ(g[i], g[i - 1] + 1);
    seen_f.insert(g.begin(), g.end());
  }
  for (const auto& g : segments) {
    ASSERT_EQ(g.size(), 3u);
    for (std::size_t i = 1; i < g.size(); ++i) EXPECT_EQ(g[i], g[i - 1] + 4);
    seen_s.insert(g.begin(), g.end());
  }
  for (ag::Index r = 0; r < 24; ++r) {
    EXPECT_EQ(seen_f.count(r), 1u);
    EXPECT_EQ(seen_s.count(r), 1u);
  }
}

}  // namespace
}  // namespace varkit

// SPDX-License-Identifier: Apache-2.0

#include "test_util.hpp"

#include "varkit/binary_io.hpp"
#include "varkit/error.hpp"
#include "varkit/feature_space.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace varkit {
namespace {

using ag::Matrix;
using ag::RowVector;
using ag::Var;
using test::random_matrix;

DirectionBank bank_of(const Matrix& rows) {
  DirectionBank b;
  b.directions = Var(rows);
  for (ag::Index i = 0; i < rows.rows(); ++i) b.class_names.push_back("c" + std::to_string(i));
  return b;
}

TEST(Prototype, SingleFrameIsItsOwnMean) {
  const Matrix f = random_matrix(1, 5, 1);
  const Matrix videos[] = {f};
  const auto p = compute_prototype(videos);
  EXPECT_EQ(p.n_frames, 1u);
  EXPECT_LT((p.mean - f.row(0)).norm(), 1e-15);
}

TEST(Prototype, ArithmeticMean) {
  Matrix a(1, 2), b(1, 2);
  a << 1, 0;
  b << 0, 1;
  const Matrix videos[] = {a, b};
  const auto p = compute_prototype(videos);
  EXPECT_EQ(p.n_frames, 2u);
  EXPECT_DOUBLE_EQ(p.mean(0), 0.5);
  EXPECT_DOUBLE_EQ(p.mean(1), 0.5);
}

TEST(Prototype, StreamingMatchesTwoPassMean) {
  const Matrix frames = random_matrix(10000, 8, 3, 2.0).array() + 5.0;
  std::vector<Matrix> videos;
  for (int v = 0; v < 10; ++v) videos.push_back(frames.middleRows(v * 1000, 1000));
  const auto p = compute_prototype(videos);
  EXPECT_EQ(p.n_frames, 10000u);
  for (int d = 0; d < 8; ++d) {
    double sum = 0.0;
    for (int i = 0; i < 10000; ++i) sum += frames(i, d);
    const double mean = sum / 10000.0;
    double resid = 0.0;
    for (int i = 0; i < 10000; ++i) resid += frames(i, d) - mean;
    EXPECT_NEAR(p.mean(d), mean + resid / 10000.0, 1e-10);
  }
}

TEST(Prototype, EmptyStreamIsAnError) {
  EXPECT_THROW((void)PrototypeAccumulator().finish(), ConfigError);
  PrototypeAccumulator acc;
  acc.add(RowVector::Ones(3));
  EXPECT_THROW(acc.add(RowVector::Ones(4)), ShapeError);
}

TEST(Prototype, ExportsAsOneFrameFeatureFile) {
  test::TempDir dir("proto");
  NormalityPrototype p{RowVector::LinSpaced(4, 0.0, 1.5), 10};
  export_prototype(p, dir.path() / "m.afv");
  const Matrix back = io::read_feature_file(dir.path() / "m.afv");
  ASSERT_EQ(back.rows(), 1);
  EXPECT_LT((back.row(0) - p.mean).norm(), 1e-6);
}

TEST(Recenter, PrototypeMapsToOrigin) {
  const NormalityPrototype p{random_matrix(1, 6, 1).row(0), 3};
  EXPECT_EQ(recenter(p.mean, p).norm(), 0.0);
  const RowVector u = random_matrix(1, 6, 2).row(0);
  EXPECT_LT((recenter(p.mean + u, p) - u).norm(), 1e-14);
  EXPECT_THROW((void)recenter(RowVector::Ones(5), p), ShapeError);
  EXPECT_THROW((void)recenter_rows(Matrix::Ones(2, 5), p), ShapeError);
}

TEST(Recenter, SharedShiftCancels) {
  const Matrix raw = random_matrix(7, 4, 3);
  const NormalityPrototype p{random_matrix(1, 4, 4).row(0), 7};
  const RowVector t = random_matrix(1, 4, 5, 10.0).row(0);
  const NormalityPrototype shifted{p.mean + t, 7};
  EXPECT_LT((recenter_rows(raw.rowwise() + t, shifted) - recenter_rows(raw, p)).norm(), 1e-12);
}

TEST(Directions, PromptEqualToPrototypeIsAnError) {
  EncoderConfig c;
  c.feature_dim = 4;
  c.num_context_vectors = 2;
  const auto bank = init_context_bank(c, {"a", "b"}, 1);
  const ToyTextEncoder enc(4, 4, 2);
  const NormalityPrototype p{encode_prompt(bank, 0, enc).value().row(0), 1};
  EXPECT_THROW((void)compute_directions(bank, enc, p), NumericalError);
}

TEST(Directions, ZeroPrototypeGivesRawPrompts) {
  EncoderConfig c;
  c.feature_dim = 4;
  c.num_context_vectors = 2;
  const auto bank = init_context_bank(c, {"a", "b", "c"}, 1);
  const ToyTextEncoder enc(4, 4, 2);
  const auto dirs = compute_directions(bank, enc, NormalityPrototype{RowVector::Zero(4), 1});
  ASSERT_EQ(dirs.num_classes(), 3u);
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_TRUE(dirs.directions.value().row(static_cast<ag::Index>(k)) == encode_prompt(bank, k, enc).value());
  }
  EXPECT_EQ(dirs.class_names, bank.class_names);
}

TEST(Directions, MatchRecomputationAndCarryGradients) {
  EncoderConfig c;
  c.feature_dim = 5;
  c.num_context_vectors = 3;
  const auto bank = init_context_bank(c, {"a", "b", "c"}, 4);
  const ToyTextEncoder enc(5, 5, 6);
  const NormalityPrototype p{random_matrix(1, 5, 7).row(0), 10};
  const auto dirs = compute_directions(bank, enc, p);
  for (std::size_t k = 0; k < 3; ++k) {
    const auto& ctx = bank.contexts[k].value();
    const auto& words = bank.class_tokens[k];
    Matrix tokens(ctx.rows() + words.rows(), 5);
    tokens << ctx, words;
    const Matrix pooled = (tokens * enc.mixing()).array().tanh().colwise().mean();
    const Matrix expected = (pooled * enc.projection().value()).rowwise() - p.mean;
    EXPECT_LT((dirs.directions.value().row(static_cast<ag::Index>(k)) - expected).norm(), 1e-13);
  }
  ag::backward(ag::sum(dirs.directions));
  EXPECT_GT(bank.contexts[1].grad().norm(), 0.0);
  EXPECT_GT(enc.projection().grad().norm(), 0.0);
}

TEST(Project, RawProjectionIsUnitDirectionComponent) {
  Matrix x(1, 2);
  x << 3, 4;
  Matrix d(1, 2);
  d << 2, 0;
  EXPECT_DOUBLE_EQ(raw_projection(Var(x), bank_of(d)).item(), 3.0);
  d << 1, 0;
  EXPECT_DOUBLE_EQ(raw_projection(Var(x), bank_of(d)).item(), 3.0);
}

TEST(Project, TrainModeStandardizesColumn) {
  Matrix x(3, 1);
  x << 1, 2, 3;
  auto norm = ProjectionNormalizer::create(1);
  const Matrix out = project(Var(x), bank_of(Matrix::Ones(1, 1)), norm, Mode::kTrain).value();
  const double sd = std::sqrt(2.0 / 3.0 + 1e-5);
  EXPECT_NEAR(out(0, 0), -1.0 / sd, 1e-12);
  EXPECT_NEAR(out(1, 0), 0.0, 1e-12);
  EXPECT_NEAR(out(2, 0), 1.0 / sd, 1e-12);
  EXPECT_NEAR(out(2, 0), 1.22474, 1e-5);
}

TEST(Project, ConstantColumnMapsToZero) {
  const Matrix x = Matrix::Constant(3, 1, 4.2);
  auto norm = ProjectionNormalizer::create(1);
  const Matrix out = project(Var(x), bank_of(Matrix::Ones(1, 1)), norm, Mode::kTrain).value();
  EXPECT_LT(out.cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Project, ErrorCases) {
  auto norm = ProjectionNormalizer::create(1);
  EXPECT_THROW((void)project(Var(Matrix::Ones(1, 2)), bank_of(Matrix::Ones(1, 2)), norm, Mode::kTrain), ConfigError);
  EXPECT_THROW((void)project(Var(Matrix::Ones(3, 2)), bank_of(Matrix::Zero(1, 2)), norm, Mode::kTrain),
               NumericalError);
  EXPECT_THROW((void)project(Var(Matrix::Ones(3, 3)), bank_of(Matrix::Ones(1, 2)), norm, Mode::kEval), ShapeError);
  EXPECT_THROW((void)project(Var(Matrix::Ones(3, 2)), bank_of(Matrix::Ones(2, 2)), norm, Mode::kEval), ShapeError);
  EXPECT_NO_THROW((void)project(Var(Matrix::Ones(1, 2)), bank_of(Matrix::Ones(1, 2)), norm, Mode::kEval));
}

TEST(Project, RunningStatisticsFollowEma) {
  const Matrix x = random_matrix(20, 3, 8);
  const auto dirs = bank_of(random_matrix(2, 3, 9));
  auto norm = ProjectionNormalizer::create(2);
  ASSERT_EQ(norm.running_mean, RowVector::Zero(2));
  ASSERT_EQ(norm.running_var, RowVector::Ones(2));
  (void)project(Var(x), dirs, norm, Mode::kTrain);
  const Matrix raw = raw_projection(Var(x), dirs).value();
  const RowVector mean = raw.colwise().mean();
  const RowVector var = (raw.rowwise() - mean).array().square().colwise().mean();
  EXPECT_LT((norm.running_mean - 0.1 * mean).norm(), 1e-14);
  EXPECT_LT((norm.running_var - (0.9 * RowVector::Ones(2) + 0.1 * var)).norm(), 1e-14);

  // Eval mode reads the running statistics and leaves them alone.
  const auto snapshot = norm;
  const Matrix eval = project(Var(x), dirs, norm, Mode::kEval).value();
  EXPECT_EQ(norm.running_mean, snapshot.running_mean);
  const Matrix expected =
      ((raw.rowwise() - norm.running_mean).array().rowwise() / (norm.running_var.array() + 1e-5).sqrt()).matrix();
  EXPECT_LT((eval - expected).norm(), 1e-12);
}

TEST(Project, NoAffineParameters) {
  const auto norm = ProjectionNormalizer::create(3);
  EXPECT_EQ(norm.running_mean.size(), 3);
  EXPECT_THROW((void)ProjectionNormalizer::create(2, 0.0), ConfigError);
  EXPECT_THROW((void)ProjectionNormalizer::create(2, 1e-5, 1.0), ConfigError);
}

TEST(SelectorFrame, SingleClassIsOneProjectColumn) {
  const Matrix x = random_matrix(6, 4, 1);
  const Matrix d = random_matrix(1, 4, 2);
  auto n1 = ProjectionNormalizer::create(1);
  auto n2 = ProjectionNormalizer::create(1);
  const Matrix s = selector_frame(Var(x), bank_of(d), n1, Mode::kTrain).value();
  EXPECT_EQ(s.cols(), 1);
  EXPECT_EQ(s, project(Var(x), bank_of(d), n2, Mode::kTrain).value());
}

TEST(SelectorFrame, PermutingDirectionsPermutesColumns) {
  const Matrix x = random_matrix(9, 5, 3);
  const Matrix d = random_matrix(3, 5, 4);
  const std::vector<int> perm{2, 0, 1};
  Matrix dp(3, 5);
  for (int i = 0; i < 3; ++i) dp.row(i) = d.row(perm[static_cast<std::size_t>(i)]);
  auto n1 = ProjectionNormalizer::create(3);
  auto n2 = ProjectionNormalizer::create(3);
  const Matrix a = selector_frame(Var(x), bank_of(d), n1, Mode::kTrain).value();
  const Matrix b = selector_frame(Var(x), bank_of(dp), n2, Mode::kTrain).value();
  ASSERT_EQ(a.rows(), 9);
  ASSERT_EQ(a.cols(), 3);
  for (int i = 0; i < 3; ++i) EXPECT_LT((b.col(i) - a.col(perm[static_cast<std::size_t>(i)])).norm(), 1e-12);
}

TEST(SelectorSegment, SumsFramesOfEachSegment) {
  Matrix f(3, 1);
  f << 0.5, -0.2, 0.7;
  EXPECT_NEAR(selector_segment(Var(f), 3).item(), 1.0, 1e-15);
  EXPECT_EQ(selector_segment(Var(Matrix::Zero(6, 2)), 3).value(), Matrix::Zero(2, 2));
  EXPECT_THROW((void)selector_segment(Var(Matrix::Zero(7, 2)), 3), ShapeError);
}

TEST(SelectorSegment, MatchesLoopSum) {
  // 4 segments of 16 frames, 3 classes.
  const Matrix f = random_matrix(64, 3, 5);
  const Matrix s = selector_segment(Var(f), 16).value();
  ASSERT_EQ(s.rows(), 4);
  for (int seg = 0; seg < 4; ++seg) {
    for (int c = 0; c < 3; ++c) {
      double sum = 0.0;
      for (int j = 0; j < 16; ++j) sum += f(seg * 16 + j, c);
      EXPECT_NEAR(s(seg, c), sum, 1e-12);
    }
  }
}

TEST(SelectorSegment, IsLinearOverHalves) {
  const Matrix f = random_matrix(32, 2, 6);
  const Matrix whole = selector_segment(Var(f), 16).value();
  const Matrix halves = selector_segment(Var(f), 8).value();
  for (int seg = 0; seg < 2; ++seg) {
    EXPECT_LT((whole.row(seg) - halves.row(2 * seg) - halves.row(2 * seg + 1)).norm(), 1e-12);
  }
}

TEST(SelectorProperties, PositiveRescalingOfDirectionsLeavesOutputUnchanged) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix x = random_matrix(12, 6, seed);
    const Matrix d = random_matrix(3, 6, seed + 100);
    Matrix scaled = d;
    for (int c = 0; c < 3; ++c) scaled.row(c) *= std::exp(static_cast<double>(c + seed % 5) - 3.0);
    EXPECT_LT((raw_projection(Var(x), bank_of(d)).value() - raw_projection(Var(x), bank_of(scaled)).value())
                  .cwiseAbs()
                  .maxCoeff(),
              1e-12);
    auto n1 = ProjectionNormalizer::create(3);
    auto n2 = ProjectionNormalizer::create(3);
    const Matrix a = project(Var(x), bank_of(d), n1, Mode::kTrain).value();
    const Matrix b = project(Var(x), bank_of(scaled), n2, Mode::kTrain).value();
    EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-6);
    EXPECT_LT((project(Var(x), bank_of(d), n1, Mode::kEval).value() -
               project(Var(x), bank_of(scaled), n2, Mode::kEval).value())
                  .cwiseAbs()
                  .maxCoeff(),
              1e-6);
  }
}

TEST(SelectorProperties, TrainModeColumnsAreStandardized) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const Matrix x = random_matrix(10 + static_cast<ag::Index>(seed), 4, seed, 3.0);
    auto norm = ProjectionNormalizer::create(2);
    const Matrix out = project(Var(x), bank_of(random_matrix(2, 4, seed + 50)), norm, Mode::kTrain).value();
    for (int c = 0; c < 2; ++c) {
      const double mean = out.col(c).mean();
      const double var = (out.col(c).array() - mean).square().mean();
      EXPECT_LT(std::abs(mean), 1e-4);
      EXPECT_NEAR(var, 1.0, 1e-3);
    }
  }
}

TEST(SelectorProperties, SharedTranslationLeavesOutputsUnchanged) {
  const Matrix raw = random_matrix(16, 5, 1);
  const NormalityPrototype p{random_matrix(1, 5, 2).row(0), 16};
  const RowVector t = random_matrix(1, 5, 3, 50.0).row(0);
  const NormalityPrototype shifted{p.mean + t, 16};
  const auto dirs = bank_of(random_matrix(3, 5, 4));
  auto n1 = ProjectionNormalizer::create(3);
  auto n2 = ProjectionNormalizer::create(3);
  const Matrix a = selector_frame(Var(recenter_rows(raw, p)), dirs, n1, Mode::kTrain).value();
  const Matrix b = selector_frame(Var(recenter_rows(raw.rowwise() + t, shifted)), dirs, n2, Mode::kTrain).value();
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-6);
  EXPECT_LT((selector_segment(Var(a), 4).value() - selector_segment(Var(b), 4).value()).cwiseAbs().maxCoeff(), 1e-6);
}

}  // namespace
}  // namespace varkit

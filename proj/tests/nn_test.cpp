#include <gtest/gtest.h>

#include <cmath>

#include "feddrop/feddrop.hpp"
#include "test_support.hpp"

namespace feddrop {
namespace {

using testing::finite_difference_grads;
using testing::max_relative_error;
using testing::random_batch;
using testing::random_tree;

TEST(InitParams, SameSeedIsBitIdentical) {
  const Architecture arch{4, 8, 16, 2, 3};
  EXPECT_EQ(init_params(arch, 42), init_params(arch, 42));
  EXPECT_NE(init_params(arch, 42), init_params(arch, 43));
}

TEST(InitParams, BiasesZeroAndWeightsWithinFanInScale) {
  const Architecture arch{4, 8, 16, 2, 3};
  const ParamTree p = init_params(arch, 7);
  for (double v : p.input_b) EXPECT_EQ(v, 0.0);
  for (double v : p.output_b) EXPECT_EQ(v, 0.0);
  for (const auto& block : p.blocks) {
    for (double v : block.b1) EXPECT_EQ(v, 0.0);
    for (double v : block.b2) EXPECT_EQ(v, 0.0);
    for (double v : block.w1.values) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(8.0));
    for (double v : block.w2.values) EXPECT_LE(std::abs(v), 1.0 / std::sqrt(16.0));
  }
  for (double v : p.input_w.values) EXPECT_LE(std::abs(v), 0.5);
}

TEST(InitParams, RejectsZeroDimension) {
  EXPECT_THROW(init_params({4, 0, 16, 2, 3}, 1), ConfigError);
  EXPECT_THROW(init_params({4, 8, 16, 0, 3}, 1), ConfigError);
}

TEST(ParamCount, MatchesClosedForm) {
  const Architecture arch{4, 8, 16, 2, 3};
  const std::size_t expected = (4 * 8 + 8) + 2 * (8 * 16 + 16 + 16 * 8 + 8) + (8 * 3 + 3);
  EXPECT_EQ(param_count(arch), expected);
  EXPECT_EQ(param_count(init_params(arch, 1)), expected);
}

TEST(ParamCount, DoublingBlocksAddsBlockParams) {
  Architecture arch{4, 8, 16, 3, 3};
  const std::size_t before = param_count(arch);
  arch.num_blocks *= 2;
  EXPECT_EQ(param_count(arch) - before, 3 * (8 * 16 * 2 + 16 + 8));
}

TEST(Forward, ZeroModelGivesZeroLogits) {
  const Architecture arch{3, 4, 5, 2, 3};
  Rng rng = make_stream(1, StreamTag::kData);
  const Batch batch = random_batch(6, 3, 3, rng);
  const auto out = forward(zeros(arch), batch.features);
  ASSERT_EQ(out.logits.rows, 6u);
  ASSERT_EQ(out.logits.cols, 3u);
  for (double v : out.logits.values) EXPECT_EQ(v, 0.0);
}

TEST(Forward, HandComputedTwoByTwo) {
  ParamTree p = zeros({2, 2, 2, 1, 2});
  p.input_w.values = {1, 0, 0, 1};
  p.blocks[0].w1.values = {1, 0, -1, 1};
  p.blocks[0].b1 = {0.5, 0.5};
  p.blocks[0].w2.values = {2, 0, 1, -1};
  p.blocks[0].b2 = {0.1, 0.2};
  p.output_w.values = {1, 2, 3, 4};
  p.output_b = {0, -1};
  Matrix x(1, 2);
  x.values = {1, 2};
  // h0 = (1, 2); pre = (-1, 2) + 0.5 = (-0.5, 2.5); relu = (0, 2.5)
  // ff = (2.5, -2.5) + (0.1, 0.2) = (2.6, -2.3); h1 = (3.6, -0.3)
  // logits = (3.6 - 0.9, 7.2 - 1.2) + (0, -1) = (2.7, 5.0)
  const auto out = forward(p, x);
  EXPECT_NEAR(out.logits(0, 0), 2.7, 1e-12);
  EXPECT_NEAR(out.logits(0, 1), 5.0, 1e-12);
}

TEST(Forward, BatchRowsAreIndependent) {
  const Architecture arch{5, 6, 7, 2, 4};
  Rng rng = make_stream(3, StreamTag::kData);
  const ParamTree p = random_tree(arch, rng, 0.5);
  const Batch batch = random_batch(8, 5, 4, rng);
  const Matrix all = forward(p, batch.features).logits;
  for (std::size_t i = 0; i < 8; ++i) {
    Matrix one(1, 5);
    std::copy(batch.features.row(i).begin(), batch.features.row(i).end(), one.values.begin());
    const Matrix single = forward(p, one).logits;
    for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(single(0, j), all(i, j));
  }
}

TEST(Forward, ZeroBlocksAreResidualIdentity) {
  const Architecture arch{3, 4, 6, 3, 2};
  Rng rng = make_stream(5, StreamTag::kData);
  ParamTree p = random_tree(arch, rng);
  for (auto& block : p.blocks) block = zeros(arch).blocks[0];
  const Batch batch = random_batch(5, 3, 2, rng);
  const auto out = forward(p, batch.features);
  for (std::size_t b = 0; b < arch.num_blocks; ++b)
    EXPECT_EQ(out.cache.block_in[b + 1], out.cache.block_in[0]);
}

TEST(Forward, RejectsFeatureWidthMismatch) {
  const ParamTree p = zeros({3, 4, 5, 1, 2});
  EXPECT_THROW(forward(p, Matrix(2, 4)), ShapeError);
}

TEST(Loss, UniformLogitsGiveLogC) {
  for (std::size_t classes : {2u, 3u, 7u}) {
    const ParamTree p = zeros({3, 4, 5, 1, classes});
    Rng rng = make_stream(classes, StreamTag::kData);
    const Batch batch = random_batch(9, 3, classes, rng);
    EXPECT_NEAR(loss_and_grads(p, batch).loss, std::log(static_cast<double>(classes)), 1e-12);
  }
}

TEST(Loss, DuplicatedBatchHasSameLoss) {
  const Architecture arch{3, 4, 5, 2, 3};
  Rng rng = make_stream(11, StreamTag::kData);
  const ParamTree p = random_tree(arch, rng, 0.7);
  const Batch batch = random_batch(6, 3, 3, rng);
  Batch twice;
  twice.features = Matrix(12, 3);
  for (std::size_t i = 0; i < 12; ++i) {
    std::copy(batch.features.row(i % 6).begin(), batch.features.row(i % 6).end(),
              twice.features.row(i).begin());
    twice.labels.push_back(batch.labels[i % 6]);
  }
  EXPECT_NEAR(loss_and_grads(p, twice).loss, loss_and_grads(p, batch).loss, 1e-12);
}

TEST(Loss, LabelOutOfRangeIsDataError) {
  const ParamTree p = zeros({2, 2, 2, 1, 3});
  Batch batch;
  batch.features = Matrix(1, 2);
  batch.labels = {3};
  EXPECT_THROW(loss_and_grads(p, batch), DataError);
}

// Analytic gradients against central differences on a 271-parameter model.
TEST(Gradients, MatchFiniteDifferences) {
  const Architecture arch{4, 6, 8, 2, 3};
  ASSERT_LE(param_count(arch), 1000u);
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng = make_stream(seed, StreamTag::kData, {17});
    const ParamTree p = random_tree(arch, rng, 0.6);
    const Batch batch = random_batch(7, 4, 3, rng);
    const Gradients analytic = loss_and_grads(p, batch).grads;
    const Gradients numeric = finite_difference_grads(p, batch, 1e-5);
    EXPECT_LT(max_relative_error(analytic, numeric), 1e-4) << "seed " << seed;
  }
}

TEST(Sgd, ZeroLearningRateIsIdentity) {
  const Architecture arch{3, 4, 5, 2, 3};
  Rng rng = make_stream(2, StreamTag::kData);
  const ParamTree p = random_tree(arch, rng);
  const ParamTree g = random_tree(arch, rng);
  EXPECT_EQ(sgd_step(p, g, 0.0), p);
}

TEST(Sgd, ScalarArithmetic) {
  const ParamTree p = filled_like(zeros({1, 1, 1, 1, 1}), 1.0);
  const ParamTree g = filled_like(p, 0.5);
  const ParamTree next = sgd_step(p, g, 0.1);
  for (auto span : arrays(next))
    for (double v : span) EXPECT_DOUBLE_EQ(v, 0.95);
}

TEST(Sgd, TwoStepsEqualOneSummedStep) {
  const Architecture arch{3, 4, 5, 2, 3};
  Rng rng = make_stream(8, StreamTag::kData);
  const ParamTree p = random_tree(arch, rng);
  const ParamTree g = random_tree(arch, rng);
  const ParamTree twice = sgd_step(sgd_step(p, g, 0.1), g, 0.1);
  const ParamTree once = sgd_step(p, g, 0.2);
  EXPECT_LT(testing::max_abs_difference(twice, once), 1e-14);
}

TEST(Sgd, ShapeMismatchThrows) {
  EXPECT_THROW(sgd_step(zeros({2, 2, 2, 1, 2}), zeros({2, 2, 3, 1, 2}), 0.1), ShapeError);
}

TEST(Adam, ZeroGradientFreshStateLeavesParams) {
  const Architecture arch{3, 4, 5, 2, 3};
  Rng rng = make_stream(4, StreamTag::kData);
  const ParamTree p = random_tree(arch, rng);
  auto [next, state] = adam_step(AdamState::fresh(p), p, filled_like(p, 0.0));
  EXPECT_EQ(next, p);
  EXPECT_EQ(state.step, 1u);
}

TEST(Adam, HandEvaluatedFirstTwoSteps) {
  // g = 1, lr = 0.1, defaults. Step 1: m = 0.1, v = 0.001, m_hat = 1,
  // v_hat = 1, update = 0.1 / (1 + 1e-8). Step 2: m = 0.19, v = 0.001999,
  // m_hat = 0.19 / 0.19 = 1, v_hat = 0.001999 / 0.001999 = 1, same update.
  const ParamTree p = filled_like(zeros({1, 1, 1, 1, 1}), 1.0);
  const ParamTree g = filled_like(p, 1.0);
  auto first = adam_step(AdamState::fresh(p, {.lr = 0.1}), p, g);
  const double step = 0.1 / (1.0 + 1e-8);
  for (auto span : arrays(first.params))
    for (double v : span) EXPECT_NEAR(v, 1.0 - step, 1e-15);
  for (auto span : arrays(first.state.first_moment))
    for (double v : span) EXPECT_NEAR(v, 0.1, 1e-15);
  auto second = adam_step(first.state, first.params, g);
  for (auto span : arrays(second.params))
    for (double v : span) EXPECT_NEAR(v, 1.0 - 2.0 * step, 1e-12);
  EXPECT_EQ(second.state.step, 2u);
}

TEST(Adam, IdenticalSequencesGiveIdenticalTrajectories) {
  const Architecture arch{3, 4, 5, 2, 3};
  Rng rng = make_stream(6, StreamTag::kData);
  const ParamTree p = random_tree(arch, rng);
  std::vector<ParamTree> grads;
  for (int i = 0; i < 5; ++i) grads.push_back(random_tree(arch, rng));
  auto run = [&] {
    AdamResult r{p, AdamState::fresh(p)};
    for (const auto& g : grads) r = adam_step(std::move(r.state), std::move(r.params), g);
    return r.params;
  };
  EXPECT_EQ(run(), run());
}

// One small SGD step on a client batch of the standard task should not
// raise the loss; curvature is allowed to break this for <= 1% of seeds.
TEST(Loss, SmallSgdStepDoesNotIncreaseLoss) {
  const auto dataset = generate(standard::generator());
  const Architecture arch = standard::architecture();
  int violations = 0;
  constexpr int kSeeds = 100;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const ParamTree p = init_params(arch, static_cast<std::uint64_t>(seed));
    const Batch batch = to_batch(dataset.clients[static_cast<std::size_t>(seed)].examples);
    const auto before = loss_and_grads(p, batch);
    const double after = loss(sgd_step(p, before.grads, 1e-3), batch);
    if (after > before.loss) ++violations;
  }
  EXPECT_LE(violations, 1);
}

TEST(Evaluate, ErrorCountsMisclassifications) {
  ParamTree p = zeros({1, 1, 1, 1, 2});
  p.input_w.values = {1.0};
  p.output_w.values = {-1.0, 1.0};  // positive x -> class 1
  Batch batch;
  batch.features = Matrix(4, 1);
  batch.features.values = {1.0, 2.0, -1.0, -3.0};
  batch.labels = {1, 0, 0, 1};
  EXPECT_DOUBLE_EQ(evaluate(p, batch).error, 0.5);
}

}  // namespace
}  // namespace feddrop

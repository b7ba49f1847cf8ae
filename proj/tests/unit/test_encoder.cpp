#include <gtest/gtest.h>

#include "extembed/chunking.hpp"
#include "extembed/encode.hpp"
#include "extembed/errors.hpp"
#include "helpers.hpp"

using namespace extembed;
using extembed::testing::bitwise_equal;
using extembed::testing::random_tokens;
using extembed::testing::tiny_model;

TEST(Encoder, InitIsDeterministic) {
  ModelConfig c;
  c.hidden_size = 32;
  c.init_seed = 7;
  c.vocab_size = 256;
  EXPECT_EQ(model_checksum(init_model(c)), model_checksum(init_model(c)));
  c.init_seed = 8;
  ModelConfig c7 = c;
  c7.init_seed = 7;
  EXPECT_NE(model_checksum(init_model(c)), model_checksum(init_model(c7)));
}

TEST(Encoder, InvalidDimensionsRejected) {
  ModelConfig c;
  c.hidden_size = 33;
  c.n_heads = 4;
  EXPECT_THROW(init_model(c), ConfigError);
  c.hidden_size = 12;
  c.n_heads = 4;  // head dim 3 is odd
  EXPECT_THROW(init_model(c), ConfigError);
}

TEST(Encoder, HeadDimension) {
  ModelConfig c;
  c.hidden_size = 64;
  c.n_heads = 4;
  EXPECT_NO_THROW(c.validate());
  EXPECT_EQ(c.head_dim(), 16u);
}

TEST(Encoder, InitBounds) {
  const Model m = tiny_model(PositionMode::Absolute, 16);
  const double bound = 1.0 / 4.0;
  EXPECT_LE(m.weights.token_embedding.cwiseAbs().maxCoeff(), bound);
  EXPECT_LE(m.weights.positions.values.cwiseAbs().maxCoeff(), bound);
  EXPECT_LE(m.weights.layers[0].wq.cwiseAbs().maxCoeff(), bound);
}

TEST(Encoder, ForwardIsDeterministic) {
  for (auto mode : {PositionMode::Absolute, PositionMode::Rotary}) {
    const Model m = tiny_model(mode);
    Rng rng(5);
    const auto t = random_tokens(10, 64, rng);
    const auto p = PositionAssignment::identity(mode, 10);
    const Matrix a = forward(m, t, p), b = forward(m, t, p);
    EXPECT_TRUE(a == b);
  }
}

TEST(Encoder, UnitScaleIsNeutral) {
  const Model m = tiny_model(PositionMode::Rotary);
  Rng rng(6);
  const auto t = random_tokens(8, 64, rng);
  const auto p = PositionAssignment::identity(PositionMode::Rotary, 8);
  EXPECT_TRUE(forward(m, t, p, 1.0) == forward(m, t, p));
  EXPECT_FALSE(forward(m, t, p, 1.5) == forward(m, t, p));
}

TEST(Encoder, RotaryPairedPermutationPermutesRows) {
  const Model m = tiny_model(PositionMode::Rotary, 16, 16, 64, 9);
  TokenSequence t{{3, 17, 42, 8}};
  PositionAssignment p = PositionAssignment::identity(PositionMode::Rotary, 4);
  const Matrix base = forward(m, t, p);

  TokenSequence ts = t;
  PositionAssignment ps = p;
  std::swap(ts.ids[1], ts.ids[3]);
  std::swap(ps.phases[1], ps.phases[3]);
  const Matrix swapped = forward(m, ts, ps);
  EXPECT_LT((swapped.row(1) - base.row(3)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((swapped.row(3) - base.row(1)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((swapped.row(0) - base.row(0)).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((swapped.row(2) - base.row(2)).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Encoder, AbsoluteIndexOutOfRange) {
  const Model m = tiny_model(PositionMode::Absolute, 16, 16);
  TokenSequence t{{1, 2}};
  PositionAssignment p;
  p.rows = {0, 16};
  EXPECT_THROW(forward(m, t, p), PositionError);
  p.rows = {0, 15};
  EXPECT_NO_THROW(forward(m, t, p));
}

TEST(Encoder, TokenOutsideVocabulary) {
  const Model m = tiny_model(PositionMode::Absolute, 16, 16, 64);
  TokenSequence t{{1, 64}};
  EXPECT_THROW(forward(m, t, PositionAssignment::identity(PositionMode::Absolute, 2)), ConfigError);
}

TEST(Encoder, EmptyInputRejected) {
  const Model m = tiny_model(PositionMode::Absolute);
  EXPECT_THROW(forward(m, TokenSequence{}, PositionAssignment{}), EmptyInputError);
}

TEST(Pooling, SingleRow) {
  Matrix h(1, 3);
  h << 3.0, 0.0, 4.0;
  const auto e = pool_and_normalize(h);
  EXPECT_NEAR(e.values[0], 0.6, 1e-15);
  EXPECT_NEAR(e.values[2], 0.8, 1e-15);
}

TEST(Pooling, DuplicateRowsMatchOneRow) {
  Matrix one(1, 3), two(2, 3);
  one << 1.0, -2.0, 0.5;
  two << 1.0, -2.0, 0.5, 1.0, -2.0, 0.5;
  EXPECT_TRUE(bitwise_equal(pool_and_normalize(one).values, pool_and_normalize(two).values));
}

TEST(Pooling, MaskedRowsIgnored) {
  Matrix h(3, 2);
  h << 1.0, 0.0, 100.0, 100.0, 1.0, 0.0;
  const auto e = pool_and_normalize(h, {true, false, true});
  EXPECT_NEAR(e.values[0], 1.0, 1e-15);
  EXPECT_THROW(pool_and_normalize(h, {false, false, false}), EmptyInputError);
}

TEST(Pooling, UnitNorm) {
  Rng rng(11);
  for (int t = 0; t < 50; ++t) {
    Matrix h(1 + rng.below(20), 8);
    for (Eigen::Index i = 0; i < h.size(); ++i) h.data()[i] = rng.uniform(-3, 3);
    EXPECT_NEAR(pool_and_normalize(h).values.norm(), 1.0, 1e-6);
  }
}

TEST(Encode, NoneMatchesPlainForward) {
  for (auto mode : {PositionMode::Absolute, PositionMode::Rotary}) {
    const Model m = tiny_model(mode, 16, 16);
    Rng rng(12);
    const auto t = random_tokens(16, 64, rng);
    ExtensionSpec spec;
    spec.original_context = 16;
    spec.target_context = 16;
    const auto plain = pool_and_normalize(forward(m, t, PositionAssignment::identity(mode, 16)));
    EXPECT_TRUE(bitwise_equal(encode(m, t, spec).values, plain.values));
  }
}

TEST(Encode, PcwAtOriginalLengthMatchesNone) {
  const Model m = tiny_model(PositionMode::Absolute, 16, 16);
  Rng rng(13);
  const auto t = random_tokens(16, 64, rng);
  ExtensionSpec none{.strategy = Strategy::None, .original_context = 16, .target_context = 16};
  ExtensionSpec pcw{.strategy = Strategy::PCW, .original_context = 16, .target_context = 64};
  EXPECT_TRUE(bitwise_equal(encode(m, t, pcw).values, encode(m, t, none).values));
}

TEST(Encode, PiOnShortInputMatchesNone) {
  for (auto mode : {PositionMode::Absolute, PositionMode::Rotary}) {
    const Model m = tiny_model(mode, 16, 16);
    Rng rng(14);
    for (std::size_t len : {1u, 5u, 16u}) {
      const auto t = random_tokens(len, 64, rng);
      ExtensionSpec none{.strategy = Strategy::None, .original_context = 16, .target_context = 16};
      ExtensionSpec pi{.strategy = Strategy::PI, .original_context = 16, .target_context = 128};
      EXPECT_TRUE(bitwise_equal(encode(m, t, pi).values, encode(m, t, none).values)) << "len " << len;
    }
  }
}

TEST(Encode, LongerThanTargetRejected) {
  const Model m = tiny_model(PositionMode::Rotary, 16, 16);
  Rng rng(15);
  ExtensionSpec none{.strategy = Strategy::None, .original_context = 16, .target_context = 64};
  EXPECT_THROW(encode(m, random_tokens(17, 64, rng), none), LengthError);
  ExtensionSpec ntk{.strategy = Strategy::NTK, .original_context = 16, .target_context = 64};
  EXPECT_NO_THROW(encode(m, random_tokens(64, 64, rng), ntk));
  EXPECT_THROW(encode(m, random_tokens(65, 64, rng), ntk), LengthError);
}

TEST(Encode, EveryStrategyGivesUnitVectors) {
  Rng rng(16);
  const Model ape = tiny_model(PositionMode::Absolute, 16, 16);
  const Model rope = tiny_model(PositionMode::Rotary, 16, 16);
  for (auto s : {Strategy::PCW, Strategy::GP, Strategy::RP, Strategy::PI}) {
    ExtensionSpec spec{.strategy = s, .original_context = 16, .target_context = 64};
    EXPECT_NEAR(encode(ape, random_tokens(50, 64, rng), spec).values.norm(), 1.0, 1e-6);
  }
  for (auto s : {Strategy::PCW, Strategy::GP, Strategy::RP, Strategy::PI, Strategy::NTK, Strategy::SE}) {
    ExtensionSpec spec{.strategy = s, .original_context = 16, .target_context = 64};
    EXPECT_NEAR(encode(rope, random_tokens(50, 64, rng), spec).values.norm(), 1.0, 1e-6);
  }
}

TEST(Encode, StrategyModeMismatch) {
  const Model ape = tiny_model(PositionMode::Absolute, 16, 16);
  ExtensionSpec se{.strategy = Strategy::SE, .original_context = 16, .target_context = 64};
  EXPECT_THROW(ExtendedEncoder(ape, se), ConfigError);
  const Model rope = tiny_model(PositionMode::Rotary, 16, 16);
  ExtensionSpec tuned{.strategy = Strategy::TunedPI, .original_context = 16, .target_context = 64};
  EXPECT_THROW(ExtendedEncoder(rope, tuned), ConfigError);
  ExtensionSpec wrong_lo{.strategy = Strategy::None, .original_context = 32, .target_context = 32};
  EXPECT_THROW(ExtendedEncoder(rope, wrong_lo), ConfigError);
}

TEST(Encode, SelfExtendWithWideWindowMatchesPlainAttention) {
  // g arbitrary with w >= the longest distance leaves relative positions unchanged.
  const Model m = tiny_model(PositionMode::Rotary, 16, 16);
  Rng rng(17);
  const auto t = random_tokens(12, 64, rng);
  PositionAssignment plain = PositionAssignment::identity(PositionMode::Rotary, 12);
  PositionAssignment se = plain;
  se.self_extend = SelfExtendWindow{5, 20};
  const Matrix a = forward(m, t, plain), b = forward(m, t, se);
  EXPECT_LT((a - b).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Backprop, EveryTensorMatchesFiniteDifferences) {
  for (auto mode : {PositionMode::Absolute, PositionMode::Rotary}) {
    Model m = tiny_model(mode, 8, 8, 16, 5, 2, 2);
    Rng rng(17);
    const auto tokens = random_tokens(6, 16, rng);
    const auto positions = PositionAssignment::identity(mode, 6);
    Vector c(8);
    for (auto& x : c) x = rng.uniform(-1, 1);
    const auto objective = [&](const Model& mm) { return c.dot(record_forward(mm, tokens, positions, 1.3).embedding.values); };

    const auto tape = record_forward(m, tokens, positions, 1.3);
    Weights grads = m.weights.zeros_like();
    backpropagate(m, tape, c, grads);

    std::vector<std::pair<std::string, const Matrix*>> analytic;
    grads.for_each_tensor([&](const std::string& name, const Matrix& g) { analytic.emplace_back(name, &g); });
    std::size_t k = 0;
    m.weights.for_each_tensor([&](const std::string& name, Matrix& w) {
      const Matrix& g = *analytic[k++].second;
      for (int probe = 0; probe < 6; ++probe) {
        const Eigen::Index r = name == "token_embedding"
                                   ? static_cast<Eigen::Index>(tokens.ids[rng.below(tokens.size())])
                                   : static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(w.rows())));
        const Eigen::Index col = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(w.cols())));
        const double keep = w(r, col);
        const double h = 1e-6;
        w(r, col) = keep + h;
        const double up = objective(m);
        w(r, col) = keep - h;
        const double down = objective(m);
        w(r, col) = keep;
        const double numeric = (up - down) / (2 * h);
        EXPECT_NEAR(g(r, col), numeric, 1e-6 + 1e-5 * std::abs(numeric))
            << to_string(mode) << " " << name << "(" << r << "," << col << ")";
      }
    });
  }
}

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "sinformer/adam.hpp"
#include "sinformer/grad_check.hpp"
#include "sinformer/ops.hpp"
#include "sinformer/rng.hpp"

using namespace sinformer;
using namespace sinformer::nn;
using TensorD = Tensor<double>;
using TapeD = Tape<double>;

namespace {

TensorD random_tensor(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> v(shape_size(shape));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return TensorD(std::move(shape), std::move(v), true);
}

// Weighted sum with fixed random weights, so gradients are not all-equal.
TensorD probe(TapeD& tape, const TensorD& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  std::vector<double> w(y.size());
  for (auto& x : w) x = rng.uniform(-1.0, 1.0);
  return sum(tape, mul(tape, y, TensorD(y.shape(), w)));
}

double check(const std::function<TensorD(TapeD&)>& f, std::vector<TensorD> params) {
  return grad_check<double>(f, params).max_rel_error;
}

}  // namespace

// ---- matmul ----------------------------------------------------------------

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  TapeD tape;
  auto y = matmul(tape, TensorD::matrix({{1, 0}, {0, 1}}), TensorD::matrix({{3, 4}, {5, 6}}));
  EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{3, 4, 5, 6}));
}

TEST(Matmul, RowTimesColumn) {
  TapeD tape;
  EXPECT_DOUBLE_EQ(matmul(tape, TensorD::matrix({{1, 2}}), TensorD::matrix({{3}, {4}})).item(), 11.0);
}

TEST(Matmul, ShapeMismatchNamesBothShapes) {
  TapeD tape;
  try {
    matmul(tape, TensorD::zeros({2, 3}), TensorD::zeros({2, 3}));
    FAIL();
  } catch (const DimensionError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("[2x3]"), std::string::npos);
  }
}

TEST(Matmul, GradientOfSumMatchesFiniteDifferences) {
  Rng rng(1);
  auto a = random_tensor(rng, {3, 4});
  auto b = random_tensor(rng, {4, 5});
  EXPECT_LT(check([&](TapeD& t) { return sum(t, matmul(t, a, b)); }, {a}), 1e-6);
  EXPECT_LT(check([&](TapeD& t) { return probe(t, matmul(t, a, b)); }, {a, b}), 1e-6);
}

TEST(BatchedMatmul, MatchesPerSegmentMatmul) {
  Rng rng(2);
  auto a = random_tensor(rng, {6, 4});
  auto b = random_tensor(rng, {6, 4});  // batch 2: A_i B_i^T is 3x3
  TapeD tape;
  auto y = batched_matmul(tape, a, b, 2, true);
  ASSERT_EQ(y.shape(), (Shape{6, 3}));
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t i = 0; i < 3; ++i)
      for (std::size_t j = 0; j < 3; ++j) {
        double acc = 0;
        for (std::size_t p = 0; p < 4; ++p) acc += a.at(s * 3 + i, p) * b.at(s * 3 + j, p);
        EXPECT_NEAR(y.at(s * 3 + i, j), acc, 1e-14);
      }
  auto c = random_tensor(rng, {6, 5});  // batch 2: [3x3] * [3x5]
  EXPECT_LT(check([&](TapeD& t) { return probe(t, batched_matmul(t, batched_matmul(t, a, b, 2, true), c, 2, false)); },
                  {a, b, c}),
            1e-6);
}

// ---- conv1d ----------------------------------------------------------------

TEST(Conv1d, StrideTwoPairsInputs) {
  TapeD tape;
  auto x = TensorD({4, 1}, {1, 2, 3, 4});
  auto k = TensorD({2, 1, 1}, {1, 1});
  auto y = conv1d(tape, x, k, TensorD::zeros({1}), 2, 0, 0);
  ASSERT_EQ(y.shape(), (Shape{2, 1}));
  EXPECT_DOUBLE_EQ(y[0], 3);
  EXPECT_DOUBLE_EQ(y[1], 7);
}

TEST(Conv1d, ZeroKernelGivesBias) {
  TapeD tape;
  Rng rng(3);
  auto x = random_tensor(rng, {6, 2});
  auto y = conv1d(tape, x, TensorD::zeros({3, 2, 4}), TensorD({4}, {0.5, -1, 2, 0}), 1, 1, 1);
  ASSERT_EQ(y.shape(), (Shape{6, 4}));
  for (std::size_t i = 0; i < 6; ++i) {
    EXPECT_DOUBLE_EQ(y.at(i, 0), 0.5);
    EXPECT_DOUBLE_EQ(y.at(i, 2), 2.0);
  }
}

TEST(Conv1d, KernelLargerThanPaddedInputThrows) {
  TapeD tape;
  EXPECT_THROW(conv1d(tape, TensorD::zeros({2, 1}), TensorD::zeros({4, 1, 1}), TensorD::zeros({1}), 1, 0, 1),
               DimensionError);
}

TEST(Conv1d, GradientCheck) {
  Rng rng(4);
  auto x = random_tensor(rng, {6, 2});
  auto k = random_tensor(rng, {3, 2, 3});
  auto b = random_tensor(rng, {3});
  EXPECT_LT(check([&](TapeD& t) { return probe(t, conv1d(t, x, k, b, 1, 0, 0)); }, {x, k, b}), 1e-6);
  // padded, strided, batched
  auto x2 = random_tensor(rng, {14, 2});
  EXPECT_LT(check([&](TapeD& t) { return probe(t, conv1d(t, x2, k, b, 2, 1, 2, 2)); }, {x2, k, b}), 1e-6);
}

TEST(DepthwiseConv1d, MatchesFullConvWithDiagonalKernel) {
  Rng rng(5);
  auto x = random_tensor(rng, {10, 3});
  auto w = random_tensor(rng, {2, 3});
  auto b = random_tensor(rng, {3});
  std::vector<double> full(2 * 3 * 3, 0.0);
  for (std::size_t t = 0; t < 2; ++t)
    for (std::size_t c = 0; c < 3; ++c) full[t * 9 + c * 3 + c] = w.at(t, c);
  TapeD tape;
  auto y0 = depthwise_conv1d(tape, x, w, b, 1, 0, 1, 2);
  auto y1 = conv1d(tape, x, TensorD({2, 3, 3}, full), b, 1, 0, 1, 2);
  ASSERT_EQ(y0.shape(), y1.shape());
  for (std::size_t i = 0; i < y0.size(); ++i) EXPECT_NEAR(y0[i], y1[i], 1e-14);
  EXPECT_LT(check([&](TapeD& t) { return probe(t, depthwise_conv1d(t, x, w, b, 2, 0, 0, 2)); }, {x, w, b}), 1e-6);
}

// ---- softmax ---------------------------------------------------------------

TEST(Softmax, ZerosGiveUniformRow) {
  TapeD tape;
  auto y = softmax_rows(tape, TensorD::zeros({1, 4}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.25);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  TapeD tape;
  auto y = softmax_rows(tape, TensorD::matrix({{1000, 0}}));
  EXPECT_NEAR(y[0], 1.0, 1e-300);
  EXPECT_GE(y[1], 0.0);
  EXPECT_LT(y[1], 1e-300);
}

TEST(Softmax, RejectsNonFinite) {
  TapeD tape;
  EXPECT_THROW(softmax_rows(tape, TensorD::matrix({{1, NAN}})), ContractError);
}

TEST(Softmax, GradientCheck) {
  Rng rng(6);
  auto m = random_tensor(rng, {3, 4}, -3, 3);
  EXPECT_LT(check([&](TapeD& t) { return probe(t, softmax_rows(t, m)); }, {m}), 1e-6);
}

// ---- layer norm ------------------------------------------------------------

TEST(LayerNorm, ConstantRowGoesToZero) {
  TapeD tape;
  auto y = layer_norm(tape, TensorD::full({1, 5}, 3.0), TensorD::full({5}, 1.0), TensorD::zeros({5}));
  for (double v : y.data()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(LayerNorm, UnitVarianceRowPassesThrough) {
  TapeD tape;
  auto y = layer_norm(tape, TensorD::matrix({{1, -1}}), TensorD::full({2}, 1.0), TensorD::zeros({2}), 1e-15);
  EXPECT_NEAR(y[0], 1.0, 1e-12);
  EXPECT_NEAR(y[1], -1.0, 1e-12);
}

TEST(LayerNorm, GradientCheck) {
  Rng rng(7);
  auto x = random_tensor(rng, {4, 8});
  auto g = random_tensor(rng, {8}, 0.5, 1.5);
  auto b = random_tensor(rng, {8});
  EXPECT_LT(check([&](TapeD& t) { return probe(t, layer_norm(t, x, g, b)); }, {x, g, b}), 1e-6);
}

TEST(LayerNorm, RejectsSingleFeature) {
  TapeD tape;
  EXPECT_THROW(layer_norm(tape, TensorD::zeros({3, 1}), TensorD::zeros({1}), TensorD::zeros({1})), DimensionError);
}

// ---- activations -----------------------------------------------------------

TEST(Activations, SymmetryPointsAndAsymptote) {
  TapeD tape;
  EXPECT_DOUBLE_EQ(gelu(tape, TensorD::scalar(0.0)).item(), 0.0);
  EXPECT_DOUBLE_EQ(sigmoid(tape, TensorD::scalar(0.0)).item(), 0.5);
  EXPECT_NEAR(gelu(tape, TensorD::scalar(10.0)).item(), 10.0, 1e-9);
  // Exact-erf form, not the tanh approximation: Phi(1) = 0.841344746068543.
  EXPECT_NEAR(gelu(tape, TensorD::scalar(1.0)).item(), 0.8413447460685429, 1e-15);
  EXPECT_DOUBLE_EQ(sigmoid(tape, TensorD::scalar(-800.0)).item(), 0.0);
  EXPECT_DOUBLE_EQ(sigmoid(tape, TensorD::scalar(800.0)).item(), 1.0);
}

TEST(Activations, GradientChecks) {
  Rng rng(8);
  auto x = random_tensor(rng, {3, 5}, -4, 4);
  EXPECT_LT(check([&](TapeD& t) { return probe(t, gelu(t, x)); }, {x}), 1e-6);
  EXPECT_LT(check([&](TapeD& t) { return probe(t, sigmoid(t, x)); }, {x}), 1e-6);
}

// ---- structural ops --------------------------------------------------------

TEST(StructuralOps, GradientChecks) {
  Rng rng(9);
  auto a = random_tensor(rng, {6, 3});
  auto b = random_tensor(rng, {6, 2});
  auto tok = random_tensor(rng, {5});
  const std::vector<std::uint8_t> mask{1, 0, 0, 1, 0, 1};
  EXPECT_LT(check([&](TapeD& t) {
              const TensorD parts[] = {a, b};
              auto c = concat_cols<double>(t, parts);
              auto r = replace_rows(t, c, mask, tok);
              return probe(t, segment_mean(t, slice_cols(t, r, 1, 3), 2));
            },
                  {a, b, tok}),
            1e-6);
  auto c = random_tensor(rng, {6, 3});
  auto bias = random_tensor(rng, {3});
  EXPECT_LT(check([&](TapeD& t) { return probe(t, add_row_bias(t, select_rows(t, mask, a, c), bias)); }, {a, c, bias}),
            1e-6);
}

// ---- backward --------------------------------------------------------------

TEST(Backward, SumGivesOnes) {
  auto w = TensorD::matrix({{1, 2}, {3, 4}}, true);
  TapeD tape;
  tape.backward(sum(tape, w));
  for (double g : w.grad()) EXPECT_DOUBLE_EQ(g, 1.0);
}

TEST(Backward, SquareGivesTwiceW) {
  auto w = TensorD::matrix({{1, 2}, {3, 4}}, true);
  TapeD tape;
  tape.backward(sum(tape, mul(tape, w, w)));
  EXPECT_EQ(std::vector<double>(w.grad().begin(), w.grad().end()), (std::vector<double>{2, 4, 6, 8}));
}

TEST(Backward, NonScalarLossIsContractError) {
  auto w = TensorD::matrix({{1, 2}}, true);
  TapeD tape;
  auto y = scale(tape, w, 2.0);
  EXPECT_THROW(tape.backward(y), ContractError);
  TapeD other;
  auto s = sum(other, w);
  EXPECT_THROW(tape.backward(s), ContractError);
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
  Rng rng(10);
  auto x = random_tensor(rng, {4, 6});
  auto w = random_tensor(rng, {6, 5});
  auto g = random_tensor(rng, {5}, 0.5, 1.5);
  auto b = random_tensor(rng, {5});
  auto f = [&](TapeD& t) { return probe(t, layer_norm(t, softmax_rows(t, matmul(t, x, w)), g, b)); };
  EXPECT_LT(check(f, {x, w, g, b}), 1e-5);
}

TEST(Backward, AccumulatesUntilReset) {
  auto w = TensorD::matrix({{1, 2}, {3, 4}}, true);
  TapeD tape;
  auto loss = sum(tape, mul(tape, w, w));
  tape.backward(loss);
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(w.grad()[3], 16.0);
  tape.zero_grad();
  tape.backward(loss);
  EXPECT_DOUBLE_EQ(w.grad()[3], 8.0);
}

TEST(Backward, VisitsEntriesInReverseExactlyOnce) {
  auto w = TensorD::matrix({{1, 2}, {3, 4}}, true);
  TapeD tape;
  auto loss = sum(tape, gelu(tape, matmul(tape, w, w)));
  tape.backward(loss);
  const auto& order = tape.last_visit_order();
  ASSERT_EQ(order.size(), tape.size());
  for (std::size_t i = 0; i < order.size(); ++i) EXPECT_EQ(order[i], tape.size() - 1 - i);
}

TEST(Backward, RepeatedPassIsBitIdentical) {
  Rng rng(12);
  auto x = random_tensor(rng, {5, 7});
  auto w = random_tensor(rng, {7, 7});
  TapeD tape;
  auto loss = probe(tape, softmax_rows(tape, gelu(tape, matmul(tape, x, w))));
  tape.backward(loss);
  const std::vector<double> first(w.grad().begin(), w.grad().end());
  tape.zero_grad();
  tape.backward(loss);
  EXPECT_EQ(first, std::vector<double>(w.grad().begin(), w.grad().end()));
}

TEST(Backward, InferenceTapeRecordsNothing) {
  auto w = TensorD::matrix({{1, 2}}, true);
  TapeD tape(TapeD::Mode::inference);
  auto y = sum(tape, w);
  EXPECT_EQ(tape.size(), 0u);
  EXPECT_FALSE(y.requires_grad());
}

// ---- invariants over random shapes -------------------------------------------

TEST(Invariants, EveryOpPassesGradCheckOnRandomShapes) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(1000 + seed);
    const std::size_t r = 3 + rng.below(6), k = 3 + rng.below(6), c = 3 + rng.below(6);
    auto a = random_tensor(rng, {r, k});
    auto b = random_tensor(rng, {k, c});
    auto g = random_tensor(rng, {c}, 0.5, 1.5);
    auto bias = random_tensor(rng, {c});
    auto kern = random_tensor(rng, {2, k, c});
    EXPECT_LT(check([&](TapeD& t) { return probe(t, matmul(t, a, b)); }, {a, b}), 1e-5) << seed;
    EXPECT_LT(check([&](TapeD& t) { return probe(t, softmax_rows(t, a)); }, {a}), 1e-5) << seed;
    EXPECT_LT(check([&](TapeD& t) { return probe(t, layer_norm(t, matmul(t, a, b), g, bias)); }, {a, b, g, bias}), 1e-5)
        << seed;
    EXPECT_LT(check([&](TapeD& t) { return probe(t, gelu(t, a)); }, {a}), 1e-5) << seed;
    EXPECT_LT(check([&](TapeD& t) { return probe(t, sigmoid(t, a)); }, {a}), 1e-5) << seed;
    EXPECT_LT(check([&](TapeD& t) { return probe(t, conv1d(t, a, kern, bias, 1, 0, 1)); }, {a, kern, bias}), 1e-5)
        << seed;
  }
}

TEST(Invariants, SoftmaxRowsAreDistributions) {
  Rng rng(13);
  for (int trial = 0; trial < 20; ++trial) {
    auto m = random_tensor(rng, {5, 9}, -30, 30);
    TapeD tape;
    auto y = softmax_rows(tape, m);
    for (std::size_t i = 0; i < 5; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 9; ++j) {
        EXPECT_GE(y.at(i, j), 0.0);
        EXPECT_LE(y.at(i, j), 1.0);
        s += y.at(i, j);
      }
      EXPECT_NEAR(s, 1.0, 1e-9);
    }
  }
}

TEST(Invariants, LayerNormRowsAreStandardized) {
  Rng rng(14);
  auto x = random_tensor(rng, {6, 16}, -5, 5);
  TapeD tape;
  auto y = layer_norm(tape, x, TensorD::full({16}, 1.0), TensorD::zeros({16}));
  for (std::size_t i = 0; i < 6; ++i) {
    double mu = 0, var = 0;
    for (std::size_t j = 0; j < 16; ++j) mu += y.at(i, j);
    mu /= 16;
    for (std::size_t j = 0; j < 16; ++j) var += (y.at(i, j) - mu) * (y.at(i, j) - mu);
    var /= 16;
    EXPECT_LT(std::abs(mu), 1e-9);
    EXPECT_NEAR(var, 1.0, 1e-4);  // eps = 1e-5 shrinks the variance slightly
  }
}

// ---- Adam ------------------------------------------------------------------

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
  std::vector<TensorD> params{TensorD::matrix({{1, -2}, {3, 4}}, true)};
  AdamState<double> st{std::span<const TensorD>(params)};
  adam_step<double>(params, st, 0.01);
  EXPECT_EQ(std::vector<double>(params[0].data().begin(), params[0].data().end()), (std::vector<double>{1, -2, 3, 4}));
  EXPECT_EQ(st.step, 1u);
}

TEST(Adam, FirstStepMovesByLearningRateAgainstGradient) {
  std::vector<TensorD> params{TensorD({3}, {0.0, 0.0, 0.0}, true)};
  params[0].grad()[0] = 0.3;
  params[0].grad()[1] = -7.0;
  params[0].grad()[2] = 1e3;
  AdamState<double> st{std::span<const TensorD>(params)};
  adam_step<double>(params, st, 0.05);
  EXPECT_NEAR(params[0][0], -0.05, 1e-8);
  EXPECT_NEAR(params[0][1], 0.05, 1e-8);
  EXPECT_NEAR(params[0][2], -0.05, 1e-8);
}

TEST(Adam, ConvergesOnQuadratic) {
  std::vector<TensorD> params{TensorD::scalar(0.0, true)};
  AdamState<double> st{std::span<const TensorD>(params)};
  for (int i = 0; i < 200; ++i) {
    params[0].zero_grad();
    TapeD tape;
    auto d = add(tape, params[0], TensorD::scalar(-3.0));
    tape.backward(mul(tape, d, d));
    adam_step<double>(params, st, 0.1);
  }
  EXPECT_LT(std::abs(params[0][0] - 3.0), 0.05);
}

TEST(Adam, ShapeMismatchIsContractError) {
  std::vector<TensorD> params{TensorD::zeros({2}, true)};
  AdamState<double> st{std::span<const TensorD>(params)};
  std::vector<TensorD> other{TensorD::zeros({3}, true)};
  EXPECT_THROW(adam_step<double>(other, st, 0.1), ContractError);
  EXPECT_THROW(adam_step<double>(params, st, 0.0), ContractError);
}

// ---- grad_check harness ----------------------------------------------------

TEST(GradCheck, LinearFunctionIsExact) {
  Rng rng(15);
  auto w = random_tensor(rng, {3, 3});
  auto c = TensorD({3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  EXPECT_LT(check([&](TapeD& t) { return sum(t, mul(t, w, c)); }, {w}), 1e-10);
}

TEST(GradCheck, DetectsCorruptedGradient) {
  Rng rng(16);
  std::vector<TensorD> params{random_tensor(rng, {3, 4})};
  auto b = random_tensor(rng, {4, 2});
  GradCheckOptions opt;
  opt.corrupt_tensor = 0;
  opt.corrupt_coord = 5;
  const auto r = grad_check<double>([&](TapeD& t) { return probe(t, matmul(t, params[0], b)); }, params, opt);
  EXPECT_GT(r.max_rel_error, 0.3);
  EXPECT_EQ(r.worst_tensor, 0u);
  EXPECT_EQ(r.worst_coord, 5u);
}

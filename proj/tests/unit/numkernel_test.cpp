#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

#include "contrastcat/numkernel/matrix.hpp"
#include "contrastcat/numkernel/ops.hpp"
#include "contrastcat/numkernel/tape.hpp"
#include "contrastcat/util/error.hpp"
#include "support.hpp"

namespace ccat {
namespace {

using nk::Matrix;
using nk::Tape;
using nk::Var;

// Builds a matrix-valued expression from variables; the checker reduces it
// to a scalar with a fixed random weighting so every output entry matters.
using Build = std::function<Var(Tape&, const std::vector<Var>&)>;

double weighted(const Matrix& out, const Matrix& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out.data()[i] * w.data()[i];
  return s;
}

// Norm-based relative error of the analytic gradient against central
// differences, per input, worst case.
double gradient_error(std::vector<Matrix> inputs, const Build& build, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Matrix w;
  auto eval = [&](const std::vector<Matrix>& xs) {
    Tape t;
    std::vector<Var> vs;
    for (const auto& x : xs) vs.push_back(t.constant(x));
    const Matrix& out = t.value(build(t, vs));
    if (w.empty()) w = test::random_matrix(rng, out.rows(), out.cols(), -1.0, 1.0);
    return weighted(out, w);
  };
  eval(inputs);

  Tape t;
  std::vector<Var> vs;
  for (const auto& x : inputs) vs.push_back(t.variable(x));
  const Var out = build(t, vs);
  const Var loss = nk::sum(t, nk::hadamard(t, out, t.constant(w)));
  t.backward(loss);

  const double h = 1e-5;
  double worst = 0.0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Matrix& analytic = t.grad(vs[k]);
    double diff = 0.0, na = 0.0, nn = 0.0;
    for (std::size_t e = 0; e < inputs[k].size(); ++e) {
      const double x0 = inputs[k].data()[e];
      inputs[k].data()[e] = x0 + h;
      const double fp = eval(inputs);
      inputs[k].data()[e] = x0 - h;
      const double fm = eval(inputs);
      inputs[k].data()[e] = x0;
      const double numeric = (fp - fm) / (2 * h);
      diff += std::pow(analytic.data()[e] - numeric, 2);
      na += std::pow(analytic.data()[e], 2);
      nn += numeric * numeric;
    }
    const double scale = std::max({std::sqrt(na), std::sqrt(nn), 1e-12});
    worst = std::max(worst, std::sqrt(diff) / scale);
  }
  return worst;
}

TEST(Matmul, IdentityLeavesMatrixUnchanged) {
  const Matrix m{{1.5, -2.0}, {0.25, 3.0}};
  EXPECT_EQ(nk::matmul(Matrix::identity(2), m), m);
}

TEST(Matmul, HandEvaluatedProduct) {
  EXPECT_EQ(nk::matmul(Matrix{{1, 2}, {3, 4}}, Matrix{{5}, {6}}), (Matrix{{17}, {39}}));
}

TEST(Matmul, ShapeErrorNamesBothShapes) {
  try {
    nk::matmul(Matrix(2, 3), Matrix(2, 3));
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("2x3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("2x3"), msg.rfind("2x3")) << "both operand shapes should appear: " << msg;
  }
}

TEST(Matmul, GradientOfSumMatchesHandValue) {
  Tape t;
  const Var a = t.variable(Matrix{{1, 1}});
  const Var b = t.constant(Matrix{{2}, {3}});
  t.backward(nk::sum(t, nk::matmul(t, a, b)));
  EXPECT_EQ(t.grad(a), (Matrix{{2, 3}}));
  const double err = gradient_error({Matrix{{1, 1}}, Matrix{{2}, {3}}},
                                    [](Tape& t, const std::vector<Var>& v) {
                                      return nk::sum(t, nk::matmul(t, v[0], v[1]));
                                    },
                                    1);
  EXPECT_LE(err, 1e-4);
}

TEST(Matmul, AssociativeWithIdentityOnRandomChains) {
  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const Matrix a = test::random_matrix(rng, 4, 4);
    const Matrix b = test::random_matrix(rng, 4, 4);
    const Matrix c = test::random_matrix(rng, 4, 4);
    const Matrix i4 = Matrix::identity(4);
    const Matrix left = nk::matmul(nk::matmul(nk::matmul(a, i4), b), c);
    const Matrix right = nk::matmul(a, nk::matmul(i4, nk::matmul(b, c)));
    EXPECT_LE(nk::max_abs(left - right), 1e-10);
  }
}

TEST(Softmax, SymmetricRowIsUniform) {
  const Matrix s = nk::softmax_rows(Matrix{{0, 0}}, 1.0);
  EXPECT_DOUBLE_EQ(s(0, 0), 0.5);
  EXPECT_DOUBLE_EQ(s(0, 1), 0.5);
}

TEST(Softmax, HandEvaluatedLogRow) {
  const Matrix s = nk::softmax_rows(Matrix{{std::log(1.0), std::log(3.0)}}, 1.0);
  EXPECT_NEAR(s(0, 0), 0.25, 1e-15);
  EXPECT_NEAR(s(0, 1), 0.75, 1e-15);
}

TEST(Softmax, LargeLogitsDoNotOverflow) {
  const Matrix s = nk::softmax_rows(Matrix{{1000, 0}}, 1.0);
  EXPECT_TRUE(s.all_finite());
  EXPECT_NEAR(s(0, 0), 1.0, 1e-15);
  EXPECT_NEAR(s(0, 1), 0.0, 1e-15);
}

TEST(Softmax, MaskedColumnsGetExactlyZero) {
  const bool mask[] = {true, false, true};
  const Matrix s = nk::softmax_rows(Matrix{{1, 5, 1}}, 1.0, mask);
  EXPECT_EQ(s(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(s(0, 0), 0.5);
}

TEST(Softmax, RowsAreStochasticOnRandomInputs) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix m = test::random_matrix(rng, 1 + trial % 7, 1 + trial % 11, -30, 30);
    const Matrix s = nk::softmax_rows(m, 0.5 + trial % 3);
    for (std::size_t r = 0; r < s.rows(); ++r) {
      double total = 0.0;
      for (double v : s.row(r)) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
        total += v;
      }
      EXPECT_NEAR(total, 1.0, 1e-12);
    }
  }
}

TEST(LayerNorm, ConstantRowMapsToZero) {
  const Matrix out = nk::layernorm(Matrix{{4, 4, 4}}, Matrix(1, 3, 1.0), Matrix(1, 3, 0.0), 1e-5);
  for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(LayerNorm, HandEvaluatedTwoEntryRow) {
  const Matrix out = nk::layernorm(Matrix{{1, 3}}, Matrix(1, 2, 1.0), Matrix(1, 2, 0.0), 1e-14);
  EXPECT_NEAR(out(0, 0), -1.0, 1e-12);
  EXPECT_NEAR(out(0, 1), 1.0, 1e-12);
}

TEST(Gelu, FixedPointsAndAsymptotes) {
  EXPECT_EQ(nk::gelu(0.0), 0.0);
  EXPECT_NEAR(nk::gelu(20.0), 20.0, 1e-12);
  EXPECT_NEAR(nk::gelu(-20.0), 0.0, 1e-12);
}

TEST(Gelu, ScalarDerivativeMatchesFiniteDifferences) {
  for (double x : {-2.0, -1.0, 0.0, 1.0, 2.0}) {
    const double h = 1e-5;
    const double numeric = (nk::gelu(x + h) - nk::gelu(x - h)) / (2 * h);
    EXPECT_LE(test::rel_err(nk::gelu_derivative(x), numeric), 1e-4) << "x=" << x;
  }
}

TEST(Tape, SumGradientIsAllOnes) {
  Tape t;
  const Var a = t.variable(Matrix{{1, -2, 3}, {4, 5, 6}});
  t.backward(nk::sum(t, a));
  EXPECT_EQ(t.grad(a), Matrix(2, 3, 1.0));
}

TEST(Tape, SumOfSquaresGradient) {
  Tape t;
  const Var a = t.variable(Matrix{{1, 2}});
  t.backward(nk::sum(t, nk::hadamard(t, a, a)));
  EXPECT_EQ(t.grad(a), (Matrix{{2, 4}}));
}

TEST(Tape, SecondBackwardIsStateError) {
  Tape t;
  const Var a = t.variable(Matrix{{1, 2}});
  const Var s = nk::sum(t, a);
  t.backward(s);
  EXPECT_THROW(t.backward(s), StateError);
  EXPECT_THROW(nk::sum(t, a), StateError);
}

TEST(Tape, BackwardRequiresScalar) {
  Tape t;
  const Var a = t.variable(Matrix{{1, 2}});
  EXPECT_THROW(t.backward(a), StateError);
}

TEST(Tape, UnreachedNodesGetZeroGradient) {
  Tape t;
  const Var a = t.variable(Matrix{{1, 2}});
  const Var b = t.variable(Matrix{{3}});
  t.backward(nk::sum(t, a));
  EXPECT_EQ(t.grad(b), Matrix(1, 1, 0.0));
}

struct OpCase {
  const char* name;
  std::vector<std::pair<int, int>> shapes;
  Build build;
};

class OpGradients : public ::testing::TestWithParam<OpCase> {};

TEST_P(OpGradients, MatchCentralDifferences) {
  const OpCase& c = GetParam();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    std::mt19937_64 rng(seed * 101);
    std::vector<Matrix> inputs;
    for (auto [r, cc] : c.shapes) inputs.push_back(test::random_matrix(rng, r, cc));
    EXPECT_LE(gradient_error(inputs, c.build, seed), 1e-4) << c.name << " seed " << seed;
  }
}

const bool kMask[] = {true, true, false, true};
const std::size_t kRows[] = {2, 0, 2, 3};

INSTANTIATE_TEST_SUITE_P(
    AllOps, OpGradients,
    ::testing::Values(
        OpCase{"matmul", {{3, 4}, {4, 2}},
               [](Tape& t, const std::vector<Var>& v) { return nk::matmul(t, v[0], v[1]); }},
        OpCase{"matmul_nt", {{3, 4}, {5, 4}},
               [](Tape& t, const std::vector<Var>& v) { return nk::matmul_nt(t, v[0], v[1]); }},
        OpCase{"add", {{3, 4}, {3, 4}},
               [](Tape& t, const std::vector<Var>& v) { return nk::add(t, v[0], v[1]); }},
        OpCase{"add_row", {{3, 4}, {1, 4}},
               [](Tape& t, const std::vector<Var>& v) { return nk::add_row(t, v[0], v[1]); }},
        OpCase{"hadamard", {{3, 4}, {3, 4}},
               [](Tape& t, const std::vector<Var>& v) { return nk::hadamard(t, v[0], v[1]); }},
        OpCase{"scale", {{3, 4}},
               [](Tape& t, const std::vector<Var>& v) { return nk::scale(t, v[0], -1.7); }},
        OpCase{"softmax_rows", {{3, 4}},
               [](Tape& t, const std::vector<Var>& v) { return nk::softmax_rows(t, v[0], 0.5); }},
        OpCase{"softmax_rows_masked", {{3, 4}},
               [](Tape& t, const std::vector<Var>& v) {
                 return nk::softmax_rows(t, v[0], 0.5, kMask);
               }},
        OpCase{"layernorm", {{3, 5}, {1, 5}, {1, 5}},
               [](Tape& t, const std::vector<Var>& v) {
                 return nk::layernorm(t, v[0], v[1], v[2], 1e-5);
               }},
        OpCase{"gelu", {{3, 4}},
               [](Tape& t, const std::vector<Var>& v) { return nk::gelu(t, v[0]); }},
        OpCase{"slice_cols", {{3, 6}},
               [](Tape& t, const std::vector<Var>& v) { return nk::slice_cols(t, v[0], 2, 3); }},
        OpCase{"concat_cols", {{3, 2}, {3, 3}},
               [](Tape& t, const std::vector<Var>& v) { return nk::concat_cols(t, v); }},
        OpCase{"gather_rows", {{5, 3}},
               [](Tape& t, const std::vector<Var>& v) { return nk::gather_rows(t, v[0], kRows); }},
        OpCase{"take_rows", {{4, 3}},
               [](Tape& t, const std::vector<Var>& v) { return nk::take_rows(t, v[0], 2); }},
        OpCase{"pick", {{3, 3}},
               [](Tape& t, const std::vector<Var>& v) { return nk::pick(t, v[0], 1, 2); }},
        OpCase{"softmax_row_vector", {{1, 4}},
               [](Tape& t, const std::vector<Var>& v) { return nk::softmax_row_vector(t, v[0]); }},
        OpCase{"cross_entropy", {{1, 4}},
               [](Tape& t, const std::vector<Var>& v) { return nk::cross_entropy(t, v[0], 2); }},
        OpCase{"composed_attention", {{4, 6}, {6, 6}, {6, 6}},
               [](Tape& t, const std::vector<Var>& v) {
                 const Var q = nk::matmul(t, v[0], v[1]);
                 const Var k = nk::matmul(t, v[0], v[2]);
                 const Var a = nk::softmax_rows(t, nk::matmul_nt(t, q, k), 0.4);
                 return nk::gelu(t, nk::matmul(t, a, v[0]));
               }}),
    [](const ::testing::TestParamInfo<OpCase>& info) { return std::string(info.param.name); });

}  // namespace
}  // namespace ccat

#include <gtest/gtest.h>

#include <cmath>

#include "attnapprox/harness.hpp"
#include "attnapprox/native_seq2seq.hpp"
#include "oracles.hpp"

using namespace attnapprox;

namespace {

Matrix run_colwise(const ColwiseSpec& spec, const Matrix& x) {
  AttentionStack s;
  s.heads.push_back(build_colwise(spec));
  return forward_stack(s, colwise_input(x));
}

}  // namespace

TEST(Colwise, RandomPositiveMixingIsExact) {
  CounterRng rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t d = 1 + rng.index(4), n = 2 + rng.index(6), dout = 1 + rng.index(3);
    const Matrix A = random_uniform(dout, d, -1, 1, rng);
    const Matrix B = random_uniform(n, n, 0.05, 2.0, rng);
    const Matrix x = random_uniform(d, n, -1, 1, rng);
    ColwiseSpec spec{A, B, 1.0};
    const double ax = norm(oracle::naive_matmul(A, x), NormKind::inf());
    spec.T = colwise_routing_T(spec.M(), n, ax, 1e-3);
    const ColwiseCheck c = check_colwise(run_colwise(spec, x), A, x, B);
    EXPECT_LE(c.first_cols_err, 1e-8);
    EXPECT_LE(c.padding_col, 1e-3);
    const Matrix ref = oracle::naive_matmul(oracle::naive_matmul(A, x), B);
    const Matrix out = run_colwise(spec, x);
    for (std::size_t i = 0; i < ref.rows(); ++i)
      for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(out(i, j), ref(i, j), 1e-8);
  }
}

TEST(Colwise, MeanMixing) {
  CounterRng rng(2);
  const std::size_t n = 4;
  const Matrix x = random_uniform(2, n, -1, 1, rng);
  ColwiseSpec spec{Matrix::identity(2), Matrix(n, n, 1.0 / n), 0.0};
  spec.T = colwise_routing_T(spec.M(), n, 1.0, 1e-6);
  const Matrix out = run_colwise(spec, x);
  for (std::size_t r = 0; r < 2; ++r) {
    double mean = 0;
    for (std::size_t j = 0; j < n; ++j) mean += x(r, j) / n;
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(out(r, j), mean, 1e-12);
  }
}

TEST(Colwise, SignedSplitReproducesIdentity) {
  CounterRng rng(3);
  const std::size_t n = 3;
  const Matrix x = random_uniform(2, n, -1, 1, rng);
  // explicit split I = (I + 0.5) - 0.5
  Matrix bp = Matrix::identity(n) + Matrix(n, n, 0.5);
  ColwiseSpec plus{Matrix::identity(2), bp, 0.0}, minus{Matrix::identity(2), Matrix(n, n, 0.5), 0.0};
  plus.T = colwise_routing_T(plus.M(), n, 1.0, 1e-9);
  minus.T = colwise_routing_T(minus.M(), n, 1.0, 1e-9);
  const Matrix diff = run_colwise(plus, x) - run_colwise(minus, x);
  EXPECT_LE(max_abs_diff(diff.block(0, 0, 2, n), x), 1e-8);
  // library split with the fixed 0.1 margin
  const AttentionStack s = build_colwise_stack(Matrix::identity(2), Matrix::identity(n), 1.0, 1e-9);
  const ColwiseCheck c = check_colwise(forward_stack(s, colwise_input(x)), Matrix::identity(2), x, Matrix::identity(n));
  EXPECT_LE(c.first_cols_err, 1e-8);
  EXPECT_LE(c.padding_col, 1e-9);
}

TEST(Colwise, ZeroInputGivesZero) {
  CounterRng rng(4);
  const Matrix B = random_uniform(3, 3, -1, 1, rng);
  const AttentionStack s = build_colwise_stack(random_uniform(2, 2, -1, 1, rng), B, 1.0, 1e-3);
  const Matrix out = forward_stack(s, colwise_input(Matrix(2, 3)));
  EXPECT_EQ(norm(out, NormKind::inf()), 0.0);
}

TEST(Colwise, PaddingColumnDecaysWithT) {
  CounterRng rng(5);
  const std::size_t n = 3;
  const Matrix A = random_uniform(2, 2, -1, 1, rng), B = random_uniform(n, n, 0.1, 1, rng);
  const Matrix x = random_uniform(2, n, -1, 1, rng);
  double prev = -1;
  for (double T = 0.5; T < 200; T *= 2) {
    const double pad = check_colwise(run_colwise({A, B, T}, x), A, x, B).padding_col;
    if (prev > 1e-250) {
      EXPECT_LE(pad, prev / 2.0);
    }
    prev = pad;
  }
}

TEST(Colwise, RejectsNonPositiveMixing) {
  ColwiseSpec spec{Matrix::identity(1), Matrix{{1.0, 0.0}, {0.5, 1.0}}, 1.0};
  EXPECT_THROW(build_colwise(spec), std::invalid_argument);
}

namespace {

// y_i = ReLU(x_{0,i}) with one unit per token.
ReluRowNet first_row_relu(std::size_t d, std::size_t n) {
  ReluRowNet net;
  net.N = 1;
  net.a = Matrix(n, 1, 1.0);
  for (std::size_t i = 0; i < n; ++i) {
    Matrix w(d, n);
    w(0, i) = 1.0;
    net.w.push_back(w);
  }
  return net;
}

}  // namespace

TEST(ThreeLayer, SingleUnitReluOfFirstRow) {
  const std::size_t d = 1, n = 3;
  const ThreeLayerModel m = build_three_layer_seq2seq({first_row_relu(d, n)}, ThreeLayerOptions{});
  CounterRng rng(6);
  for (int trial = 0; trial < 200; ++trial) {
    const Matrix x = random_uniform(d, n, -1, 1, rng);
    const Matrix y = m(x);
    ASSERT_EQ(y.rows(), 1u);
    ASSERT_EQ(y.cols(), n);
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y(0, i), oracle::clip(x(0, i), 0, 1e9), m.composed_budget());
  }
}

TEST(ThreeLayer, OppositeSignDuplicatesCancel) {
  const std::size_t d = 1, n = 3;
  ReluRowNet net;
  net.N = 2;
  net.a = Matrix(n, 2);
  CounterRng rng(7);
  for (std::size_t i = 0; i < n; ++i) {
    const Matrix w = random_uniform(d, n, -0.3, 0.3, rng);
    net.a(i, 0) = 1.0;
    net.a(i, 1) = -1.0;
    net.w.push_back(w);
    net.w.push_back(w);
  }
  const ThreeLayerModel m = build_three_layer_seq2seq({net}, ThreeLayerOptions{});
  for (int trial = 0; trial < 100; ++trial) {
    const Matrix y = m(random_uniform(d, n, -1, 1, rng));
    for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(y(0, i), 0.0, m.composed_budget());
  }
}

TEST(ThreeLayer, RandomNetsWithinComposedBudget) {
  CounterRng rng(8);
  for (int net_trial = 0; net_trial < 5; ++net_trial) {
    const std::size_t d = 1 + rng.index(2), n = 2 + rng.index(3), N = 1 + rng.index(3);
    std::vector<ReluRowNet> nets = {random_relu_row_net(d, n, N, rng), random_relu_row_net(d, n, N, rng)};
    const ThreeLayerModel m = build_three_layer_seq2seq(nets, ThreeLayerOptions{});
    for (int trial = 0; trial < 40; ++trial) {
      const Matrix x = random_uniform(d, n, -1, 1, rng);
      const Matrix ref = vstack({nets[0].evaluate(x), nets[1].evaluate(x)});
      EXPECT_LE(max_abs_diff(m(x), ref), m.composed_budget());
    }
  }
}

TEST(ThreeLayer, FittedMeanNet) {
  const std::size_t d = 1, n = 3;
  const auto mean = [](const Matrix& x) {
    double s = 0;
    for (double v : x.data()) s += v;
    return Matrix(1, x.cols(), s / static_cast<double>(x.data().size()));
  };
  const ReluRowNet net = fit_relu_row_net(mean, d, n, 2, 400, 1.0, 17);
  ThreeLayerOptions opt;
  opt.epsilon = 0.1;
  const ThreeLayerModel m = build_three_layer_seq2seq({net}, opt);
  CounterRng rng(9);
  double net_err = 0, model_err = 0;
  for (int s = 0; s < 200; ++s) {
    const Matrix x = random_uniform(d, n, -1, 1, rng);
    net_err = std::max(net_err, max_abs_diff(net.evaluate(x), mean(x)));
    model_err = std::max(model_err, max_abs_diff(m(x), mean(x)));
  }
  EXPECT_LE(model_err, 2.0 * net_err);
  EXPECT_LE(model_err, net_err + m.composed_budget());
}

TEST(ThreeLayer, SignSelectorFollowsHardmaxLimit) {
  CounterRng rng(10);
  std::size_t checked = 0;
  for (int inst = 0; inst < 100; ++inst) {
    const std::size_t d = 1, n = 2 + rng.index(3), N = 1 + rng.index(2);
    const ReluRowNet net = random_relu_row_net(d, n, N, rng);
    const ThreeLayerRow row = build_three_layer_row(net, ThreeLayerOptions{});
    const AttentionStack& l3 = row.net.layers[2];
    for (int s = 0; s < 10; ++s) {
      const Matrix x = random_uniform(d, n, -1, 1, rng);
      const Matrix z2 = forward_stack(row.net.layers[1], forward_stack(row.net.layers[0], x));
      std::size_t h = 0;
      for (std::size_t k = 0; k < N; ++k) {
        for (int sg : {1, -1}) {
          bool any = false;
          for (std::size_t r = 0; r < n; ++r) any = any || (net.a(r, k) < 0 ? -1 : 1) == sg;
          if (!any) continue;
          const Matrix sc = head_scores(l3.heads[h++], z2);
          for (std::size_t r = 0; r < n; ++r) {
            const double pre = net.pre_activation(r, k, x) * std::abs(net.a(r, k));
            if (std::abs(pre) < 0.02) continue;
            const bool match = (net.a(r, k) < 0 ? -1 : 1) == sg;
            std::size_t best = 0;
            for (std::size_t c = 1; c <= n; ++c)
              if (sc(c, r) > sc(best, r)) best = c;
            EXPECT_EQ(best == r, match && pre > 0.0);
            EXPECT_EQ(best == n, !(match && pre > 0.0));
            ++checked;
          }
        }
      }
    }
  }
  EXPECT_GE(checked, 1000u);
}

TEST(ThreeLayer, GuardOnHiddenUnits) {
  CounterRng rng(11);
  const ReluRowNet big = random_relu_row_net(1, 4, 129, rng);
  EXPECT_THROW(build_three_layer_seq2seq({big}, ThreeLayerOptions{}), std::invalid_argument);
}

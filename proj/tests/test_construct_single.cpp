#include <gtest/gtest.h>

#include <cmath>

#include "attnapprox/construct_single.hpp"
#include "oracles.hpp"

using namespace attnapprox;

namespace {

std::vector<TruncatedLinearModel> random_models(std::size_t n, std::size_t d, double a, double b, CounterRng& rng) {
  std::vector<TruncatedLinearModel> task;
  for (std::size_t i = 0; i < n; ++i) {
    TruncatedLinearModel m{std::vector<double>(d), rng.uniform(-1, 1), a, b};
    for (double& w : m.w) w = rng.uniform(-1, 1);
    task.push_back(m);
  }
  return task;
}

// Oracle error of one output column, accepting either anchor at an exact tie.
double oracle_column_error(const Matrix& out, std::size_t col, double u, double a, double b, std::size_t row) {
  const double target = oracle::clip(u, a, b);
  double e = 0.0;
  for (std::size_t r = 0; r < out.rows(); ++r) e = std::max(e, std::abs(out(r, col) - (r == row ? target : 0.0)));
  return e;
}

}  // namespace

TEST(ChooseParameters, WorkedExample) {
  const ParameterChoice c = choose_parameters(8, -1, 1, 0.125);
  EXPECT_EQ(c.p, 32u);
  EXPECT_NEAR(c.beta, 512.0 * (std::log(30.0) + std::log(16.0)), 1e-9);
  EXPECT_NEAR(c.beta, 3161.1, 0.5);
  EXPECT_NEAR(c.epsilon0, 0.0625, 1e-15);
}

TEST(ChooseParameters, FloorCaseAndHalving) {
  EXPECT_EQ(choose_parameters(8, -1, 1, 10.0).p, 9u);
  const auto c1 = choose_parameters(4, 0, 1, 0.01), c2 = choose_parameters(4, 0, 1, 0.005);
  EXPECT_EQ(c2.p, 2 * c1.p);
}

TEST(ChooseParameters, BetaMatchesTwoMaxBudget) {
  const auto c = choose_parameters(5, -2, 3, 0.05);
  const auto g = make_grid(-2, 3, c.p);
  EXPECT_NEAR(c.beta, selection_beta(g, c.epsilon0), 1e-9 * c.beta);
}

TEST(ChooseParameters, InvalidInputs) {
  EXPECT_THROW(choose_parameters(4, 1, 1, 0.1), std::invalid_argument);
  EXPECT_THROW(choose_parameters(4, 0, 1, 0.0), std::invalid_argument);
}

TEST(SingleHead, TwoTokenExample) {
  std::vector<TruncatedLinearModel> task = {{{1.0}, 0.0, 0.0, 1.0}, {{1.0}, 0.0, 0.0, 1.0}};
  const auto plan = make_single_head_plan(task, 16, 0.01);
  const Matrix out = forward_stack(build_single_head(plan), Matrix{{0.5, 0.25}});
  ASSERT_EQ(out.rows(), 1u);
  ASSERT_EQ(out.cols(), 2u);
  EXPECT_NEAR(out(0, 0), 0.5, 0.01 + 1.0 / 16);
  EXPECT_NEAR(out(0, 1), 0.25, 0.01 + 1.0 / 16);
  EXPECT_TRUE(verify_single_head(plan, Matrix{{0.5, 0.25}}).pass);
}

TEST(SingleHead, EndpointTokenSelectsLowAnchor) {
  std::vector<TruncatedLinearModel> task = {{{1.0}, 0.0, -1.0, 2.0}, {{1.0}, 0.5, -1.0, 2.0}};
  const auto plan = make_single_head_plan(task, 12, 0.01);
  const auto rep = verify_single_head(plan, Matrix{{-1.0, 0.0}});
  EXPECT_TRUE(rep.pass);
  EXPECT_LE(rep.per_token[0], 2.0 * 0.01);
}

TEST(SingleHead, OffRowsStayBelowSoftmaxBudget) {
  CounterRng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    auto task = random_models(5, 2, -1, 1, rng);
    const auto plan = make_single_head_plan(task, 24, 0.01, IndexMapG::constant(1, 3));
    const Matrix x = random_uniform(2, 5, -1, 1, rng);
    const Matrix out = forward_stack(build_single_head(plan), x);
    for (std::size_t i = 0; i < 5; ++i) {
      EXPECT_LE(std::abs(out(0, i)), plan.m_bound() * plan.epsilon0);
      EXPECT_LE(std::abs(out(2, i)), plan.m_bound() * plan.epsilon0);
    }
  }
}

TEST(SingleHead, SoundAtChosenParameters) {
  CounterRng rng(32);
  const auto c = choose_parameters(8, -1, 1, 0.1);
  for (int trial = 0; trial < 200; ++trial) {
    auto task = random_models(8, 2, -1, 1, rng);
    const auto plan = make_single_head_plan(task, c.p, c.epsilon0);
    const Matrix x = random_uniform(2, 8, -1.5, 1.5, rng);
    const auto rep = verify_single_head(plan, x);
    ASSERT_TRUE(rep.pass) << rep.measured_inf << " > " << rep.bound;
    // independent recomputation of the same grade
    const Matrix out = forward_stack(build_single_head(plan), x);
    for (std::size_t i = 0; i < 8; ++i) {
      const double u = plan.task[i].pre_activation(x.col(i));
      EXPECT_LE(oracle_column_error(out, i, u, -1, 1, 0), rep.bound);
    }
  }
}

TEST(SingleHead, SoundOverManySmallPlans) {
  CounterRng rng(33);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.index(5), d = 1 + rng.index(3);
    const std::size_t p = n + 1 + rng.index(20);
    const double a = rng.uniform(-2, 1), b = a + rng.uniform(0.2, 3);
    auto task = random_models(n, d, a, b, rng);
    const auto plan = make_single_head_plan(task, std::max<std::size_t>(p, 3), std::pow(10.0, -1 - rng.uniform() * 3));
    const auto rep = verify_single_head(plan, random_uniform(d, n, -2, 2, rng));
    ASSERT_TRUE(rep.pass) << "trial " << trial << ": " << rep.measured_inf << " > " << rep.bound;
  }
}

TEST(SingleHead, ExactAnchorsLeaveOnlySoftmaxError) {
  const auto g = make_grid(-1, 1, 20);
  std::vector<TruncatedLinearModel> task;
  Matrix x(1, 6);
  for (std::size_t i = 0; i < 6; ++i) {
    task.push_back({{1.0}, 0.0, -1.0, 1.0});
    x(0, i) = g.anchors[3 * i];
  }
  const auto plan = make_single_head_plan(task, 20, 0.001);
  EXPECT_LE(verify_single_head(plan, x).measured_inf, plan.m_bound() * plan.epsilon0);
}

TEST(SingleHead, InterpolationTermIsTight) {
  const std::size_t p = 16;
  const auto g = make_grid(0, 1, p);
  std::vector<TruncatedLinearModel> task(2, TruncatedLinearModel{{1.0}, 0.0, 0.0, 1.0});
  auto plan = make_single_head_plan(task, p, 0.01);
  // u = b sits a full spacing above the last anchor.
  const Matrix x{{1.0, g.anchors[5] + 0.499 * g.deltaL}};
  plan.beta *= 1e4;
  const auto rep = verify_single_head(plan, x);
  EXPECT_TRUE(rep.pass);
  EXPECT_GE(rep.per_token[0], 0.99 * g.deltaL);
  EXPECT_GE(rep.per_token[1], 0.49 * g.deltaL);
}

TEST(SingleHead, RequiresMoreAnchorsThanTokens) {
  std::vector<TruncatedLinearModel> task(4, TruncatedLinearModel{{1.0}, 0.0, 0.0, 1.0});
  EXPECT_THROW(make_single_head_plan(task, 4, 0.01), std::invalid_argument);
}

TEST(Argmax, InteriorValuesPickNearestAnchor) {
  CounterRng rng(34);
  for (int trial = 0; trial < 200; ++trial) {
    auto task = random_models(6, 2, -1, 1, rng);
    const auto plan = make_single_head_plan(task, 32, 0.01);
    const Matrix x = random_uniform(2, 6, -1, 1, rng);
    const auto arg = attention_column_argmax(plan, x);
    for (std::size_t i = 0; i < 6; ++i) {
      const double u = plan.task[i].pre_activation(x.col(i));
      const std::size_t k = oracle::brute_nearest(-1, 1, 32, u);
      const double frac = (u - plan.grid.anchors[k]) / plan.grid.deltaL;
      if (std::abs(std::abs(frac) - 0.5) < 1e-6) continue;
      EXPECT_EQ(arg[i], k);
    }
  }
}

TEST(Argmax, MidpointPicksATiedNeighbour) {
  std::vector<TruncatedLinearModel> task(2, TruncatedLinearModel{{1.0}, 0.0, 0.0, 8.0});
  const auto plan = make_single_head_plan(task, 8, 0.01);
  const auto arg = attention_column_argmax(plan, Matrix{{3.5, 6.5}});
  EXPECT_TRUE(arg[0] == 3 || arg[0] == 4);
  EXPECT_TRUE(arg[1] == 6 || arg[1] == 7);
}

TEST(Argmax, ConstantShiftOfScoresChangesNothing) {
  CounterRng rng(35);
  auto task = random_models(4, 1, -1, 1, rng);
  const auto plan = make_single_head_plan(task, 16, 0.01);
  const AttentionStack s = build_single_head(plan);
  const Matrix x = random_uniform(1, 4, -1, 1, rng);
  const Matrix scores = head_scores(s.heads[0], s.pre->apply(x));
  for (double c : {-50.0, 3.0, 1e4}) {
    for (std::size_t i = 0; i < 4; ++i) {
      std::size_t b0 = 0, b1 = 0;
      for (std::size_t k = 1; k < scores.rows(); ++k) {
        if (scores(k, i) > scores(b0, i)) b0 = k;
        if (scores(k, i) + c > scores(b1, i) + c) b1 = k;
      }
      EXPECT_EQ(b0, b1);
    }
  }
}

TEST(SingleHead, PaddingColumnOrderIsIrrelevant) {
  CounterRng rng(36);
  auto task = random_models(3, 1, -1, 1, rng);
  const auto plan = make_single_head_plan(task, 12, 0.01);
  const AttentionStack s = build_single_head(plan);
  AttentionStack t = s;
  // reverse the padding columns 3..11 of every pre-map piece
  const std::size_t n = 3, p = 12;
  auto permute_cols = [&](Matrix& m) {
    Matrix c = m;
    for (std::size_t j = n; j < p; ++j)
      for (std::size_t r = 0; r < m.rows(); ++r) m(r, j) = c(r, p - 1 - (j - n));
  };
  permute_cols(*t.pre->bias);
  for (auto& term : t.pre->terms)
    if (term.right) permute_cols(*term.right);
  const Matrix x = random_uniform(1, 3, -1, 1, rng);
  EXPECT_LE(max_abs_diff(forward_stack(s, x), forward_stack(t, x)), 1e-9);
}

TEST(SingleHead, TableIndexMapRoutesRows) {
  CounterRng rng(37);
  const std::size_t p = 20;
  std::vector<std::size_t> rows(p);
  for (std::size_t k = 0; k < p; ++k) rows[k] = k < p / 2 ? 0 : 1;
  const auto G = IndexMapG::table(rows, 2);
  for (int trial = 0; trial < 100; ++trial) {
    auto task = random_models(4, 1, -1, 1, rng);
    const auto plan = make_single_head_plan(task, p, 0.01, G, 0.2 * 0.1 * 0.1);
    const auto rep = verify_single_head(plan, random_uniform(1, 4, -1, 1, rng));
    EXPECT_TRUE(rep.pass) << rep.measured_inf << " vs " << rep.bound;
  }
  std::vector<TruncatedLinearModel> task(2, TruncatedLinearModel{{1.0}, 0.0, -1.0, 1.0});
  EXPECT_THROW(make_single_head_plan(task, p, 0.01, G), std::invalid_argument);
}

TEST(SingleHead, TableIndexMapExcludesBoundaryTies) {
  const std::size_t p = 20;
  std::vector<std::size_t> rows(p);
  for (std::size_t k = 0; k < p; ++k) rows[k] = k < p / 2 ? 0 : 1;
  std::vector<TruncatedLinearModel> task(2, TruncatedLinearModel{{1.0}, 0.0, -1.0, 1.0});
  const auto g = make_grid(-1, 1, p);
  const auto plan = make_single_head_plan(task, p, 0.01, IndexMapG::table(rows, 2), 1e-3);
  // token 0 at the midpoint between the two anchors that map to different rows
  const double mid = 0.5 * (g.anchors[9] + g.anchors[10]);
  const auto rep = verify_single_head(plan, Matrix{{mid, 0.33}});
  ASSERT_EQ(rep.excluded.size(), 1u);
  EXPECT_EQ(rep.excluded[0], 0u);
  EXPECT_TRUE(rep.pass);
}

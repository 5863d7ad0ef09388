#include <gtest/gtest.h>

#include <cmath>

#include "attnapprox/construct_multi.hpp"
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

// n tokens, d = 1, w = 1, t = 0: the token value is the input entry itself.
std::vector<TruncatedLinearModel> identity_task(std::size_t n, double a, double b) {
  return std::vector<TruncatedLinearModel>(n, TruncatedLinearModel{{1.0}, 0.0, a, b});
}

}  // namespace

TEST(CaseBudgets, PerCaseAssignments) {
  const auto c = case_budgets(0.06, 4);
  EXPECT_DOUBLE_EQ(c.eps2, 0.03);
  EXPECT_DOUBLE_EQ(c.eps4, 0.02);
  EXPECT_DOUBLE_EQ(c.eps3, std::min(0.06 / 6.0, 0.06 / 6.0));
  EXPECT_DOUBLE_EQ(c.smallest, 0.01);
  EXPECT_DOUBLE_EQ(case_budgets(0.06, 1).smallest, 0.02);
}

TEST(MultiHead, PlanShape) {
  CounterRng rng(1);
  const auto plan = make_multi_head_plan(random_models(10, 2, -1, 1, rng), 4, 0.01);
  EXPECT_EQ(plan.grid.p, 32u);
  EXPECT_EQ(plan.per_head(), 8u);
  EXPECT_NEAR(plan.error_bound(), 0.01 + 2.0 / 32.0, 1e-15);
  const AttentionStack s = build_multi_head(plan);
  EXPECT_EQ(s.heads.size(), 4u);
  EXPECT_THROW(make_multi_head_plan(random_models(2, 1, -1, 1, rng), 2, 0.01), std::invalid_argument);
}

TEST(MultiHead, SoundForSeveralHeadCounts) {
  CounterRng rng(2);
  for (std::size_t H : {1u, 2u, 4u, 8u}) {
    for (int trial = 0; trial < 200; ++trial) {
      const auto plan = make_multi_head_plan(random_models(10, 2, -1, 1, rng), H, 0.01);
      const auto rep = verify_multi_head(plan, random_uniform(2, 10, -1, 1, rng));
      ASSERT_TRUE(rep.pass) << "H=" << H << " " << rep.measured_inf << " > " << rep.bound;
    }
  }
}

TEST(MultiHead, ClippedTokensUseEndpointAnchors) {
  auto plan = make_multi_head_plan(identity_task(6, -1, 1), 3, 0.01);
  const Matrix x{{-5.0, -1.2, 1.3, 4.0, 9.0, -1.0}};
  const auto rep = verify_multi_head(plan, x);
  EXPECT_TRUE(rep.pass) << rep.measured_inf;
  const Matrix out = forward_stack(build_multi_head(plan), x);
  EXPECT_NEAR(out(0, 0), -1.0, plan.m_bound() * plan.epsilon0);
  EXPECT_NEAR(out(0, 4), 1.0, plan.m_bound() * plan.epsilon0);
}

TEST(MultiHead, OneHeadAgreesWithSingleHeadOnShortChunks) {
  // H = 1 uses p = n - 2 anchors; a single head over n - 3 tokens shares that grid.
  CounterRng rng(3);
  const std::size_t n = 10;
  for (int trial = 0; trial < 50; ++trial) {
    const auto task = random_models(n, 1, -1, 1, rng);
    const auto mplan = make_multi_head_plan(task, 1, 0.01);
    const Matrix x = random_uniform(1, n, -1, 1, rng);
    const Matrix multi = forward_stack(build_multi_head(mplan), x);
    for (std::size_t start = 0; start + (n - 3) <= n; start += n - 3) {
      std::vector<TruncatedLinearModel> chunk(task.begin() + start, task.begin() + start + (n - 3));
      const auto splan = make_single_head_plan(chunk, n - 2, 0.01);
      const Matrix single = forward_stack(build_single_head(splan), x.block(0, start, 1, n - 3));
      for (std::size_t i = 0; i < n - 3; ++i) {
        const double tol = 2.0 * (mplan.m_bound() * 0.01 + mplan.grid.deltaL);
        EXPECT_NEAR(multi(0, start + i), single(0, i), tol);
      }
    }
  }
}

TEST(MultiHead, NonSelectingHeadsStaySmall) {
  const std::size_t n = 6, H = 4;
  const auto plan = make_multi_head_plan(identity_task(n, 0, 1), H, 0.01);
  const AttentionStack s = build_multi_head(plan);
  const double K = static_cast<double>(plan.per_head());
  CounterRng rng(4);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t h = rng.index(H);
    // strictly inside head h's owned anchors
    const double lo = plan.grid.anchor_at(static_cast<long>(h * plan.per_head()));
    const double v = lo + rng.uniform(0.1, K - 1.1) * plan.grid.deltaL;
    Matrix x(1, n, v);
    const Matrix z = s.pre->apply(x);
    for (std::size_t other = 0; other < H; ++other) {
      if (other == h) continue;
      const Matrix y = forward_head(s.heads[other], z);
      EXPECT_LE(std::abs(y(0, 0)), plan.m_bound() * plan.budgets.eps3) << "head " << other << " v=" << v;
    }
  }
}

TEST(MultiHead, SharedBoundaryBlendsTwoHeads) {
  const std::size_t n = 6, H = 3;
  const auto plan = make_multi_head_plan(identity_task(n, 0, 1), H, 0.01);
  const double K = static_cast<double>(plan.per_head());
  // halfway between the last anchor of head 0 and the first of head 1
  const double v = plan.grid.anchor_at(static_cast<long>(K) - 1) + 0.5 * plan.grid.deltaL;
  const auto rep = verify_multi_head(plan, Matrix(1, n, v));
  EXPECT_TRUE(rep.pass) << rep.measured_inf;
  const auto labels = head_case_classifier(plan, v);
  EXPECT_EQ(labels[0], HeadCase::boundary);
  EXPECT_EQ(labels[1], HeadCase::boundary);
  EXPECT_EQ(labels[2], HeadCase::outside);
}

TEST(CaseClassifier, SelectingHeadMidInterval) {
  const auto plan = make_multi_head_plan(identity_task(6, 0, 1), 5, 0.01);
  const double v = plan.grid.anchor_at(2 * 4 + 1) + 0.3 * plan.grid.deltaL;
  const auto labels = head_case_classifier(plan, v);
  for (std::size_t h = 0; h < 5; ++h) EXPECT_EQ(labels[h], h == 2 ? HeadCase::selecting : HeadCase::outside);
  EXPECT_TRUE(case_dichotomy_holds(labels));
}

TEST(CaseClassifier, GapBetweenHeads) {
  const auto plan = make_multi_head_plan(identity_task(6, 0, 1), 5, 0.01);
  const double v = plan.grid.anchor_at(7) + 0.5 * plan.grid.deltaL;
  const auto labels = head_case_classifier(plan, v);
  EXPECT_EQ(labels[1], HeadCase::boundary);
  EXPECT_EQ(labels[2], HeadCase::boundary);
  EXPECT_TRUE(case_dichotomy_holds(labels));
}

TEST(CaseClassifier, BelowRangeClipsToFirstHead) {
  const auto plan = make_multi_head_plan(identity_task(6, 0, 1), 3, 0.01);
  const auto labels = head_case_classifier(plan, -4.0);
  EXPECT_EQ(labels[0], HeadCase::selecting);
  EXPECT_TRUE(case_dichotomy_holds(labels));
}

TEST(CaseClassifier, DichotomyOnDenseMesh) {
  for (std::size_t H = 1; H <= 8; ++H) {
    for (std::size_t n = 4; n <= 12; ++n) {
      const auto plan = make_multi_head_plan(identity_task(n, -1, 1), H, 0.01);
      const double lo = plan.grid.anchor_at(0), hi = plan.grid.b;
      const int mesh = 100000 / 72 + 1;
      for (int m = 0; m <= mesh; ++m) {
        const double v = lo + (hi - lo) * m / mesh;
        ASSERT_TRUE(case_dichotomy_holds(head_case_classifier(plan, v))) << "H=" << H << " n=" << n << " v=" << v;
      }
    }
  }
}

TEST(MultiHead, ZeroingAHeadOnlyMattersNearItsInterval) {
  const std::size_t n = 6, H = 4;
  const auto plan = make_multi_head_plan(identity_task(n, 0, 1), H, 0.01);
  const AttentionStack full = build_multi_head(plan);
  CounterRng rng(5);
  for (std::size_t h = 0; h < H; ++h) {
    AttentionStack cut = full;
    cut.heads[h].w_v = Matrix(cut.heads[h].w_v.rows(), cut.heads[h].w_v.cols());
    const double lo = plan.grid.anchor_at(static_cast<long>(h * plan.per_head())) - plan.grid.deltaL;
    const double hi = plan.grid.anchor_at(static_cast<long>((h + 1) * plan.per_head() - 1)) + plan.grid.deltaL;
    for (int trial = 0; trial < 100; ++trial) {
      const Matrix x = random_uniform(1, n, 0, 1, rng);
      const Matrix a = forward_stack(full, x), b = forward_stack(cut, x);
      for (std::size_t i = 0; i < n; ++i) {
        if (x(0, i) >= lo && x(0, i) <= hi) continue;
        EXPECT_LE(std::abs(a(0, i) - b(0, i)), plan.m_bound() * plan.budgets.eps3);
      }
    }
  }
}

TEST(MultiHead, EqualAnchorCountsGiveEqualInterpolation) {
  // (p = 64, H = 1) needs n = 66; (n - 2 = 8 per head, H = 8) needs n = 10.
  const auto big = make_multi_head_plan(identity_task(66, -1, 1), 1, 0.001);
  const auto small = make_multi_head_plan(identity_task(10, -1, 1), 8, 0.001);
  EXPECT_EQ(big.grid.p, small.grid.p);
  const double t1 = (big.grid.b - big.grid.a) / static_cast<double>(big.per_head() * big.H);
  const double t2 = (small.grid.b - small.grid.a) / static_cast<double>(small.per_head() * small.H);
  EXPECT_LE(std::max(t1, t2) / std::min(t1, t2), 1.1);
  CounterRng rng(6);
  const Matrix x = random_uniform(1, 10, -1, 1, rng);
  Matrix xb(1, 66);
  for (std::size_t i = 0; i < 66; ++i) xb(0, i) = x(0, i % 10);
  const double e1 = verify_multi_head(big, xb).measured_inf;
  const double e2 = verify_multi_head(small, x).measured_inf;
  EXPECT_LE(e1, big.error_bound());
  EXPECT_LE(e2, small.error_bound());
}

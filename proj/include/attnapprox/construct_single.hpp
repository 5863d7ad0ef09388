#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "attnapprox/attn.hpp"
#include "attnapprox/hardmax.hpp"
#include "attnapprox/interp.hpp"
#include "attnapprox/numkit.hpp"

namespace attnapprox {

struct SingleHeadPlan {
  std::vector<TruncatedLinearModel> task;  // one model per token, all on grid.a..grid.b
  InterpolationGrid grid;
  IndexMapG g_map;
  std::size_t d_out = 1;
  double epsilon0 = 0.01;
  double beta = 1.0;
  // Only for non-constant g_map: score gap the temperature was sized for. Tokens whose
  // realized gap is smaller fall in the excluded region and are not graded.
  double min_gap = 0.0;

  std::size_t n() const { return task.size(); }
  std::size_t d() const { return task.empty() ? 0 : task.front().w.size(); }
  double m_bound() const { return std::max(std::abs(grid.a), std::abs(grid.b)); }
  double error_bound() const { return m_bound() * epsilon0 + (grid.b - grid.a) / static_cast<double>(grid.p); }
};

struct ErrorReport {
  double measured_inf = 0.0;
  double bound = 0.0;
  bool pass = true;
  std::vector<double> per_token;
  std::vector<std::size_t> excluded;  // tokens not graded (case-(i) caveat)
};

inline ErrorReport finish_report(std::vector<double> per_token, double bound,
                                 std::vector<std::size_t> excluded = {}) {
  ErrorReport r;
  r.per_token = std::move(per_token);
  r.excluded = std::move(excluded);
  for (std::size_t i = 0; i < r.per_token.size(); ++i) {
    if (std::find(r.excluded.begin(), r.excluded.end(), i) != r.excluded.end()) continue;
    r.measured_inf = std::max(r.measured_inf, r.per_token[i]);
  }
  r.bound = bound;
  r.pass = r.measured_inf <= bound;
  return r;
}

// Temperature for the selection scores, which are -(u - L_k)^2 / 2 up to a per-column shift.
// Adjacent-anchor separation is then (Delta L)^2 / 2.
inline double selection_beta(const InterpolationGrid& grid, double epsilon0) {
  return beta_for_two_max(std::max<std::size_t>(grid.p, 3), grid.deltaL * grid.deltaL / 2.0, epsilon0);
}

inline SingleHeadPlan make_single_head_plan(std::vector<TruncatedLinearModel> task, std::size_t p,
                                            double epsilon0, IndexMapG g_map = IndexMapG{},
                                            double min_gap = 0.0) {
  if (task.empty()) throw std::invalid_argument("single head: empty task");
  const double a = task.front().a, b = task.front().b;
  for (const auto& m : task)
    if (m.a != a || m.b != b || m.w.size() != task.front().w.size())
      throw std::invalid_argument("single head: tokens must share [a,b] and dimension");
  if (p <= task.size()) throw std::invalid_argument("single head: need p > n");
  SingleHeadPlan plan;
  plan.grid = make_grid(a, b, p);
  plan.task = std::move(task);
  plan.g_map = g_map;
  plan.d_out = g_map.d_out;
  plan.epsilon0 = epsilon0;
  if (g_map.is_constant()) {
    plan.beta = selection_beta(plan.grid, epsilon0);
  } else {
    if (!(min_gap > 0.0)) throw std::invalid_argument("single head: non-constant G needs min_gap > 0");
    plan.min_gap = min_gap;
    plan.beta = beta_for_unique_max(p, min_gap, epsilon0);
  }
  return plan;
}

struct ParameterChoice {
  std::size_t p = 0;
  double beta = 0.0;
  double epsilon0 = 0.0;
};

// p = max{n+1, ceil(2(b-a)/eps)}, eps0 = eps/(2M), beta = (2p^2/(b-a)^2)(ln(p-2) + ln(2M/eps)).
inline ParameterChoice choose_parameters(std::size_t n, double a, double b, double epsilon) {
  if (!(a < b)) throw std::invalid_argument("choose_parameters: need a < b");
  if (!(epsilon > 0.0)) throw std::invalid_argument("choose_parameters: eps must be positive");
  const double m = std::max(std::abs(a), std::abs(b));
  ParameterChoice c;
  c.p = std::max<std::size_t>({n + 1, static_cast<std::size_t>(std::ceil(2.0 * (b - a) / epsilon)), 3});
  c.epsilon0 = epsilon / (2.0 * m);
  const double pd = static_cast<double>(c.p);
  c.beta = 2.0 * pd * pd / ((b - a) * (b - a)) * (std::log(pd - 2.0) + std::log(2.0 * m / epsilon));
  return c;
}

namespace single_layout {
// Row layout of the pre-map output (d' = d + 1).
struct Rows {
  std::size_t dp, query, key, ell, values, indicator, total;
};
inline Rows rows(std::size_t d, std::size_t d_out) {
  Rows r{};
  r.dp = d + 1;
  r.query = 0;
  r.key = r.dp;
  r.ell = 2 * r.dp;
  r.values = r.ell + 1;
  r.indicator = r.values + d_out;
  r.total = r.indicator + 1;
  return r;
}
}  // namespace single_layout

// Pre-map A: n tokens -> p columns holding [x_i o w_i; t_i] (query block), k * 1 (key
// block), k (L_k + L_0), the anchor block, and the token indicator. The head scores are
// scaled by -Delta L / 2 so that column i reads -(u_i - L_k)^2 / 2 + const.
inline AttentionStack build_single_head(const SingleHeadPlan& plan) {
  const std::size_t n = plan.n(), d = plan.d(), p = plan.grid.p, d_out = plan.d_out;
  if (p <= n) throw std::invalid_argument("build_single_head: need p > n");
  const auto L = single_layout::rows(d, d_out);
  const auto& g = plan.grid;

  Matrix mask(d, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t r = 0; r < d; ++r) mask(r, i) = plan.task[i].w[r];
  Matrix pad(n, p);
  for (std::size_t i = 0; i < n; ++i) pad(i, i) = 1.0;

  Matrix bias(L.total, p);
  for (std::size_t i = 0; i < n; ++i) bias(L.query + d, i) = plan.task[i].t;
  for (std::size_t k = 0; k < p; ++k) {
    const double kd = static_cast<double>(k);
    for (std::size_t r = 0; r < L.dp; ++r) bias(L.key + r, k) = kd;
    bias(L.ell, k) = kd * (g.anchors[k] + g.anchors[0]);
    bias(L.values + plan.g_map(k), k) = g.anchors[k];
    bias(L.indicator, k) = k < n ? 1.0 : 0.0;
  }

  AffineMap pre;
  pre.out_rows = L.total;
  pre.out_cols = p;
  pre.terms.push_back({Matrix::identity(d), mask, pad, L.query});
  pre.bias = bias;

  const double c = -g.deltaL / 2.0;
  AttentionHead h;
  h.w_q = Matrix(L.dp + 1, L.total);
  h.w_k = Matrix(L.dp + 1, L.total);
  for (std::size_t r = 0; r < L.dp; ++r) {
    h.w_q(r, L.query + r) = 1.0;
    h.w_k(r, L.key + r) = -2.0 * c;
  }
  h.w_q(L.dp, L.indicator) = 1.0;
  h.w_k(L.dp, L.ell) = c;
  h.w_v = Matrix(d_out, L.total);
  for (std::size_t r = 0; r < d_out; ++r) h.w_v(r, L.values + r) = 1.0;
  Matrix wo(p, n);
  for (std::size_t i = 0; i < n; ++i) wo(i, i) = 1.0;
  h.w_o = wo;
  h.beta = plan.beta;

  AttentionStack s;
  s.pre = std::move(pre);
  s.heads.push_back(std::move(h));
  return s;
}

inline std::vector<double> token_values(const std::vector<TruncatedLinearModel>& task, const Matrix& x) {
  if (x.cols() != task.size()) throw std::invalid_argument("input must have one column per token");
  std::vector<double> u(task.size());
  for (std::size_t i = 0; i < task.size(); ++i) {
    if (x.rows() != task[i].w.size()) throw std::invalid_argument("input row count must equal d");
    u[i] = task[i].pre_activation(x.col(i));
  }
  return u;
}

// Error of one output column against Range(u) e_{G(k)}; at an exact midpoint either
// tied anchor is accepted.
inline double selection_column_error(const InterpolationGrid& grid, const IndexMapG& g_map,
                                     const Matrix& out, std::size_t col, double u) {
  const double target = range_clip(u, grid.a, grid.b);
  auto err_for = [&](std::size_t k) {
    double e = 0.0;
    const std::size_t row = g_map(k);
    for (std::size_t r = 0; r < out.rows(); ++r)
      e = std::max(e, std::abs(out(r, col) - (r == row ? target : 0.0)));
    return e;
  };
  const std::size_t k = nearest_anchor(grid, u);
  double e = err_for(k);
  const double scale = std::max({1.0, std::abs(u), std::abs(grid.a), std::abs(grid.b)});
  for (std::size_t j : {k > 0 ? k - 1 : k, k + 1 < grid.p ? k + 1 : k}) {
    if (j == k) continue;
    if (std::abs(std::abs(u - grid.anchors[j]) - std::abs(u - grid.anchors[k])) <= 1e-12 * scale)
      e = std::min(e, err_for(j));
  }
  return e;
}

inline std::vector<std::size_t> attention_column_argmax(const AttentionStack& built, std::size_t n,
                                                        const Matrix& x) {
  const Matrix z = built.pre ? built.pre->apply(x) : x;
  const Matrix s = head_scores(built.heads.front(), z);
  std::vector<std::size_t> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < s.rows(); ++k)
      if (s(k, i) > s(best, i)) best = k;
    out[i] = best;
  }
  return out;
}

inline std::vector<std::size_t> attention_column_argmax(const SingleHeadPlan& plan, const Matrix& x) {
  return attention_column_argmax(build_single_head(plan), plan.n(), x);
}

inline ErrorReport verify_single_head(const SingleHeadPlan& plan, const AttentionStack& built,
                                      const Matrix& x) {
  const std::vector<double> u = token_values(plan.task, x);
  const Matrix out = forward_stack(built, x);
  std::vector<double> per(plan.n());
  for (std::size_t i = 0; i < plan.n(); ++i)
    per[i] = selection_column_error(plan.grid, plan.g_map, out, i, u[i]);
  std::vector<std::size_t> excluded;
  if (!plan.g_map.is_constant()) {
    const Matrix z = built.pre->apply(x);
    const Matrix s = head_scores(built.heads.front(), z);
    for (std::size_t i = 0; i < plan.n(); ++i) {
      std::vector<double> col(s.rows());
      for (std::size_t k = 0; k < s.rows(); ++k) col[k] = s(k, i);
      const TopTwo t = top_two(col);
      if (t.delta < plan.min_gap && plan.g_map(t.first) != plan.g_map(t.second)) excluded.push_back(i);
    }
  }
  return finish_report(std::move(per), plan.error_bound(), std::move(excluded));
}

inline ErrorReport verify_single_head(const SingleHeadPlan& plan, const Matrix& x) {
  return verify_single_head(plan, build_single_head(plan), x);
}

}  // namespace attnapprox

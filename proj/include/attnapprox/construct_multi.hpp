#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <stdexcept>
#include <vector>

#include "attnapprox/attn.hpp"
#include "attnapprox/construct_single.hpp"
#include "attnapprox/hardmax.hpp"
#include "attnapprox/interp.hpp"

namespace attnapprox {

// Internal per-case budgets derived from the single user-facing epsilon0.
struct CaseBudgets {
  double eps2 = 0.0;  // the selecting head
  double eps3 = 0.0;  // heads whose interval misses the value
  double eps4 = 0.0;  // the two boundary heads
  double eps5 = 0.0;
  double smallest = 0.0;
};

inline CaseBudgets case_budgets(double epsilon0, std::size_t heads) {
  CaseBudgets c;
  c.eps2 = epsilon0 / 2.0;
  c.eps4 = c.eps5 = epsilon0 / 3.0;
  c.eps3 = epsilon0;
  if (heads >= 2) c.eps3 = std::min(c.eps3, epsilon0 / (2.0 * static_cast<double>(heads - 1)));
  if (heads >= 3) c.eps3 = std::min(c.eps3, epsilon0 / (3.0 * static_cast<double>(heads - 2)));
  c.smallest = std::min({c.eps2, c.eps3, c.eps4, c.eps5});
  return c;
}

struct MultiHeadPlan {
  std::vector<TruncatedLinearModel> task;
  InterpolationGrid grid;  // p = H (n - 2)
  std::size_t H = 1;
  std::size_t out_row = 0;
  std::size_t d_out = 1;
  double epsilon0 = 0.01;
  CaseBudgets budgets;
  double beta = 1.0;

  std::size_t n() const { return task.size(); }
  std::size_t d() const { return task.empty() ? 0 : task.front().w.size(); }
  std::size_t per_head() const { return n() - 2; }
  double m_bound() const { return std::max(std::abs(grid.a), std::abs(grid.b)); }
  double error_bound() const {
    return m_bound() * epsilon0 + (grid.b - grid.a) / static_cast<double>(per_head() * H);
  }
};

inline double windowed_beta(const InterpolationGrid& grid, std::size_t slots, double eps) {
  return beta_for_two_max(std::max<std::size_t>(slots, 3), grid.deltaL * grid.deltaL / 2.0, eps);
}

inline MultiHeadPlan make_multi_head_plan(std::vector<TruncatedLinearModel> task, std::size_t heads,
                                          double epsilon0, std::size_t out_row = 0,
                                          std::size_t d_out = 1) {
  if (task.size() < 3) throw std::invalid_argument("multi head: need n >= 3 tokens");
  if (heads == 0) throw std::invalid_argument("multi head: need H >= 1");
  if (out_row >= d_out) throw std::invalid_argument("multi head: output row out of range");
  const double a = task.front().a, b = task.front().b;
  for (const auto& m : task)
    if (m.a != a || m.b != b || m.w.size() != task.front().w.size())
      throw std::invalid_argument("multi head: tokens must share [a,b] and dimension");
  MultiHeadPlan plan;
  plan.H = heads;
  plan.grid = make_grid(a, b, heads * (task.size() - 2));
  plan.task = std::move(task);
  plan.out_row = out_row;
  plan.d_out = d_out;
  plan.epsilon0 = epsilon0;
  plan.budgets = case_budgets(epsilon0, heads);
  plan.beta = windowed_beta(plan.grid, plan.n(), plan.budgets.smallest);
  return plan;
}

// Heads over a token-wise block at rows [offset, offset + qdim + slots) of the input:
// qdim rows whose column sum is the token value u, then a slots x slots positional block.
// Head h owns anchors hK .. (h+1)K - 1 (K = slots - 2); its two outer slots are sentinels
// worth 0, except that the lowest and highest sentinels carry the clipped endpoints a, b.
inline std::vector<AttentionHead> windowed_selection_heads(const InterpolationGrid& grid,
                                                           std::size_t heads, std::size_t slots,
                                                           std::size_t qdim, std::size_t offset,
                                                           std::size_t out_row, std::size_t d_out,
                                                           double beta,
                                                           const std::optional<Matrix>& w_o = std::nullopt) {
  if (slots < 3) throw std::invalid_argument("windowed heads: need at least 3 slots");
  const std::size_t K = slots - 2;
  if (grid.p != heads * K) throw std::invalid_argument("windowed heads: p must equal H (n - 2)");
  const std::size_t width = qdim + slots;
  const double c = -grid.deltaL / 2.0;
  const double l0 = grid.anchor_at(0);
  std::vector<AttentionHead> out;
  out.reserve(heads);
  for (std::size_t h = 0; h < heads; ++h) {
    AttentionHead head;
    head.in_offset = offset;
    head.beta = beta;
    head.w_o = w_o;
    head.w_q = Matrix(qdim + 1, width);
    for (std::size_t r = 0; r < qdim; ++r) head.w_q(r, r) = 1.0;
    for (std::size_t s = 0; s < slots; ++s) head.w_q(qdim, qdim + s) = 1.0;
    head.w_k = Matrix(qdim + 1, width);
    head.w_v = Matrix(d_out, width);
    for (std::size_t s = 0; s < slots; ++s) {
      const long m = static_cast<long>(h * K + s) - 1;
      const double md = static_cast<double>(m);
      for (std::size_t r = 0; r < qdim; ++r) head.w_k(r, qdim + s) = -2.0 * c * md;
      head.w_k(qdim, qdim + s) = c * md * (grid.anchor_at(m) + l0);
      double value = 0.0;
      if (s == 0) {
        value = h == 0 ? grid.a : 0.0;
      } else if (s == slots - 1) {
        value = h + 1 == heads ? grid.b : 0.0;
      } else {
        value = grid.anchor_at(m);
      }
      head.w_v(out_row, qdim + s) = value;
    }
    out.push_back(std::move(head));
  }
  return out;
}

// Token-wise pre-map [X o W; t; I_n] followed by H windowed heads.
inline AttentionStack build_multi_head(const MultiHeadPlan& plan) {
  const std::size_t n = plan.n(), d = plan.d();
  if (plan.grid.p != plan.H * plan.per_head())
    throw std::invalid_argument("build_multi_head: p not divisible by n - 2");
  Matrix mask(d, n);
  Matrix bias(d + 1 + n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t r = 0; r < d; ++r) mask(r, i) = plan.task[i].w[r];
    bias(d, i) = plan.task[i].t;
    bias(d + 1 + i, i) = 1.0;
  }
  AffineMap pre;
  pre.out_rows = d + 1 + n;
  pre.terms.push_back({Matrix::identity(d), mask, std::nullopt, 0});
  pre.bias = bias;
  AttentionStack s;
  s.pre = std::move(pre);
  s.heads = windowed_selection_heads(plan.grid, plan.H, n, d + 1, 0, plan.out_row, plan.d_out, plan.beta);
  return s;
}

inline ErrorReport verify_multi_head(const MultiHeadPlan& plan, const AttentionStack& built, const Matrix& x) {
  const std::vector<double> u = token_values(plan.task, x);
  const Matrix out = forward_stack(built, x);
  std::vector<double> per(plan.n());
  for (std::size_t i = 0; i < plan.n(); ++i) {
    const double target = range_clip(u[i], plan.grid.a, plan.grid.b);
    double e = 0.0;
    for (std::size_t r = 0; r < out.rows(); ++r)
      e = std::max(e, std::abs(out(r, i) - (r == plan.out_row ? target : 0.0)));
    per[i] = e;
  }
  return finish_report(std::move(per), plan.error_bound());
}

inline ErrorReport verify_multi_head(const MultiHeadPlan& plan, const Matrix& x) {
  return verify_multi_head(plan, build_multi_head(plan), x);
}

enum class HeadCase { selecting = 1, outside = 2, boundary = 3 };

// Case labels per head for a value clipped to [a, b]. Owned intervals are closed,
// the gaps between neighbouring heads are open, and the top head's upper gap runs to b.
inline std::vector<HeadCase> head_case_classifier(const MultiHeadPlan& plan, double value) {
  const auto& g = plan.grid;
  const double v = range_clip(value, g.a, g.b);
  const long K = static_cast<long>(plan.per_head());
  std::vector<HeadCase> out(plan.H, HeadCase::outside);
  for (std::size_t h = 0; h < plan.H; ++h) {
    const long lo = static_cast<long>(h) * K, hi = (static_cast<long>(h) + 1) * K - 1;
    const double own_lo = g.anchor_at(lo), own_hi = g.anchor_at(hi);
    if (v >= own_lo && v <= own_hi) {
      out[h] = HeadCase::selecting;
    } else if (v > g.anchor_at(lo - 1) && v < own_lo) {
      out[h] = HeadCase::boundary;
    } else if (v > own_hi && (v < g.anchor_at(hi + 1) || h + 1 == plan.H)) {
      out[h] = HeadCase::boundary;
    }
  }
  return out;
}

// Exactly one selecting head, or two adjacent boundary heads, or the top head alone in
// its upper gap; every other head outside.
inline bool case_dichotomy_holds(const std::vector<HeadCase>& labels) {
  std::vector<std::size_t> sel, bnd;
  for (std::size_t h = 0; h < labels.size(); ++h) {
    if (labels[h] == HeadCase::selecting) sel.push_back(h);
    if (labels[h] == HeadCase::boundary) bnd.push_back(h);
  }
  if (sel.size() == 1 && bnd.empty()) return true;
  if (sel.empty() && bnd.size() == 2 && bnd[1] == bnd[0] + 1) return true;
  if (sel.empty() && bnd.size() == 1 && bnd[0] + 1 == labels.size()) return true;
  return false;
}

}  // namespace attnapprox

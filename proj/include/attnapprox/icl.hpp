#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnapprox/attn.hpp"
#include "attnapprox/construct_single.hpp"
#include "attnapprox/interp.hpp"
#include "attnapprox/numkit.hpp"

namespace attnapprox {

struct ICLPrompt {
  Matrix x;               // d x n
  std::vector<double> y;  // n
  std::vector<double> w;  // d
  double t = 0.0;

  std::size_t d() const { return x.rows(); }
  std::size_t n() const { return x.cols(); }

  // Rows [x; w; t].
  Matrix truncated_layout() const {
    Matrix m(2 * d() + 1, n());
    m.set_block(0, 0, x);
    for (std::size_t i = 0; i < n(); ++i) {
      for (std::size_t r = 0; r < d(); ++r) m(d() + r, i) = w[r];
      m(2 * d(), i) = t;
    }
    return m;
  }

  // Rows [x; y; w; 1].
  Matrix gd_layout() const {
    Matrix m(2 * d() + 2, n());
    m.set_block(0, 0, x);
    for (std::size_t i = 0; i < n(); ++i) {
      m(d(), i) = y.at(i);
      for (std::size_t r = 0; r < d(); ++r) m(d() + 1 + r, i) = w[r];
      m(2 * d() + 1, i) = 1.0;
    }
    return m;
  }

  double wx(std::size_t i) const {
    double s = 0.0;
    for (std::size_t r = 0; r < d(); ++r) s += w[r] * x(r, i);
    return s;
  }
};

struct IclTruncated {
  AttentionStack stack;
  InterpolationGrid grid;
  IndexMapG g_map;
  std::size_t d = 1;
  std::size_t n = 1;
  double epsilon0 = 0.01;
  double beta = 1.0;

  double error_bound() const {
    return std::max(std::abs(grid.a), std::abs(grid.b)) * epsilon0 + (grid.b - grid.a) / static_cast<double>(grid.p);
  }
};

namespace icl_detail {

// Rows of the pre-map output for a D-dimensional query: query block, key block (k w),
// ell row, d_out value rows, indicator.
struct Rows {
  std::size_t D, query, key, ell, values, indicator, total;
};
inline Rows rows(std::size_t D, std::size_t d_out) {
  Rows r{};
  r.D = D;
  r.query = 0;
  r.key = D;
  r.ell = 2 * D;
  r.values = r.ell + 1;
  r.indicator = r.values + d_out;
  r.total = r.indicator + 1;
  return r;
}

// n x p matrix whose first row is 0, 1, ..., p-1: X * it = (column 1 of X) * k.
inline Matrix index_ramp(std::size_t n, std::size_t p) {
  Matrix m(n, p);
  for (std::size_t k = 0; k < p; ++k) m(0, k) = static_cast<double>(k);
  return m;
}

inline Matrix token_pad(std::size_t n, std::size_t p) {
  Matrix m(n, p);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

inline Matrix grid_bias(const Rows& L, const InterpolationGrid& g, const IndexMapG& gm, std::size_t n) {
  Matrix bias(L.total, g.p);
  for (std::size_t k = 0; k < g.p; ++k) {
    bias(L.ell, k) = static_cast<double>(k) * (g.anchors[k] + g.anchors[0]);
    bias(L.values + gm(k), k) = g.anchors[k];
    bias(L.indicator, k) = k < n ? 1.0 : 0.0;
  }
  return bias;
}

inline AttentionHead selection_head(const Rows& L, const InterpolationGrid& g, std::size_t d_out, double beta) {
  const double c = -g.deltaL / 2.0;
  AttentionHead h;
  h.w_q = Matrix(L.D + 1, L.total);
  h.w_k = Matrix(L.D + 1, L.total);
  for (std::size_t r = 0; r < L.D; ++r) {
    h.w_q(r, L.query + r) = 1.0;
    h.w_k(r, L.key + r) = -2.0 * c;
  }
  h.w_q(L.D, L.indicator) = 1.0;
  h.w_k(L.D, L.ell) = c;
  h.w_v = Matrix(d_out, L.total);
  for (std::size_t r = 0; r < d_out; ++r) h.w_v(r, L.values + r) = 1.0;
  h.beta = beta;
  return h;
}

}  // namespace icl_detail

// The pre-map reads w and t from the prompt rows, so one set of weights serves every
// (w, t); nothing here depends on a particular prompt.
inline IclTruncated build_icl_truncated(const InterpolationGrid& grid, std::size_t d, std::size_t n,
                                        const IndexMapG& g_map, double epsilon0, double min_gap = 0.0) {
  if (grid.p <= n) throw std::invalid_argument("icl truncated: need p > n");
  const std::size_t in_rows = 2 * d + 1, p = grid.p;
  const auto L = icl_detail::rows(d, g_map.d_out);
  IclTruncated m;
  m.grid = grid;
  m.g_map = g_map;
  m.d = d;
  m.n = n;
  m.epsilon0 = epsilon0;
  if (g_map.is_constant()) {
    m.beta = selection_beta(grid, epsilon0);
  } else {
    if (!(min_gap > 0.0)) throw std::invalid_argument("icl truncated: non-constant G needs min_gap > 0");
    m.beta = beta_for_unique_max(p, min_gap, epsilon0);
  }

  Matrix pick_x(d, in_rows), pick_w(d, in_rows), pick_t(1, in_rows);
  for (std::size_t r = 0; r < d; ++r) {
    pick_x(r, r) = 1.0;
    pick_w(r, d + r) = 1.0;
  }
  pick_t(0, 2 * d) = -2.0;
  const Matrix ramp = icl_detail::index_ramp(n, p);
  AffineMap pre;
  pre.out_rows = L.total;
  pre.out_cols = p;
  pre.terms.push_back({pick_x, std::nullopt, icl_detail::token_pad(n, p), L.query});
  pre.terms.push_back({pick_w, std::nullopt, ramp, L.key});
  pre.terms.push_back({pick_t, std::nullopt, ramp, L.ell});
  pre.bias = icl_detail::grid_bias(L, grid, g_map, n);

  AttentionHead h = icl_detail::selection_head(L, grid, g_map.d_out, m.beta);
  h.w_o = icl_detail::token_pad(n, p).transpose();
  m.stack.pre = std::move(pre);
  m.stack.heads.push_back(std::move(h));
  return m;
}

inline ErrorReport verify_icl_truncated(const IclTruncated& m, const ICLPrompt& prompt) {
  if (prompt.d() != m.d || prompt.n() != m.n) throw std::invalid_argument("icl truncated: prompt shape mismatch");
  const Matrix out = forward_stack(m.stack, prompt.truncated_layout());
  std::vector<double> per(m.n);
  for (std::size_t i = 0; i < m.n; ++i)
    per[i] = selection_column_error(m.grid, m.g_map, out, i, prompt.wx(i) + prompt.t);
  return finish_report(std::move(per), m.error_bound());
}

// g^{(r)}(u, y) = sum_h ReLU(a[r][h] u + b[r][h] y + c[r][h]).
struct GradNetSpec {
  std::size_t d = 1;
  std::size_t H = 1;
  std::vector<std::vector<double>> a, b, c;  // [r][h]

  static GradNetSpec zeros(std::size_t d, std::size_t H) {
    GradNetSpec s;
    s.d = d;
    s.H = H;
    s.a.assign(d, std::vector<double>(H, 0.0));
    s.b = s.a;
    s.c = s.a;
    return s;
  }

  double coefficient_bound() const {
    double m = 0.0;
    for (std::size_t r = 0; r < d; ++r)
      for (std::size_t h = 0; h < H; ++h)
        m = std::max({m, std::abs(a[r][h]), std::abs(b[r][h]), std::abs(c[r][h])});
    return m;
  }

  double g(std::size_t r, double u, double y) const {
    double s = 0.0;
    for (std::size_t h = 0; h < H; ++h) s += relu(a[r][h] * u + b[r][h] * y + c[r][h]);
    return s;
  }
};

// Lines "r h a b c" with 1-based r and h; '#' starts a comment. d and H are the largest
// indices seen; missing entries are zero.
inline GradNetSpec parse_gradnet(std::istream& in) {
  struct Entry {
    std::size_t r, h;
    double a, b, c;
  };
  std::vector<Entry> entries;
  std::string line;
  std::size_t lineno = 0, d = 0, H = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    Entry e{};
    if (!(ls >> e.r)) continue;
    if (!(ls >> e.h >> e.a >> e.b >> e.c) || e.r == 0 || e.h == 0)
      throw std::runtime_error("gradnet line " + std::to_string(lineno) + ": expected 'r h a b c'");
    d = std::max(d, e.r);
    H = std::max(H, e.h);
    entries.push_back(e);
  }
  if (entries.empty()) throw std::runtime_error("gradnet: no coefficients");
  GradNetSpec s = GradNetSpec::zeros(d, H);
  for (const auto& e : entries) {
    s.a[e.r - 1][e.h - 1] = e.a;
    s.b[e.r - 1][e.h - 1] = e.b;
    s.c[e.r - 1][e.h - 1] = e.c;
  }
  return s;
}

inline GradNetSpec load_gradnet(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open gradnet file: " + path);
  return parse_gradnet(in);
}

inline void check_prompt_bound(const ICLPrompt& p, double B1) {
  double wl1 = 0.0;
  for (double v : p.w) wl1 += std::abs(v);
  if (wl1 > B1) throw std::invalid_argument("prompt rejected: ||w||_1 exceeds B1");
  for (std::size_t i = 0; i < p.n(); ++i) {
    double l1 = 0.0;
    for (std::size_t r = 0; r < p.d(); ++r) l1 += std::abs(p.x(r, i));
    if (l1 > B1) throw std::invalid_argument("prompt rejected: ||x_i||_1 exceeds B1");
    if (std::abs(p.y.at(i)) > B1) throw std::invalid_argument("prompt rejected: |y_i| exceeds B1");
  }
}

struct IcgdLayer {
  AttentionStack stack;
  GradNetSpec net;
  double eta = 0.1;
  std::size_t n = 1;
  double B1 = 1.0;
  double upper = 1.0;  // truncation range [0, upper]
  std::size_t p = 0;
  double beta = 0.0;
  double eps1 = 0.0;   // per-head, per-token error
  double eps0 = 0.0;   // how far the nets are from the true gradient (0 when the nets define it)

  double error_bound() const {
    return std::max(eta, 1.0) * static_cast<double>(net.d * net.H) * eps1 + static_cast<double>(net.d) * eps0;
  }
};

// One head per (h, r): a lift [a x; b y; 1] against [w; 1; c] turns the in-context
// truncated head into ReLU(a w^T x + b y + c) on [0, upper]. W_O averages the tokens with
// weight -eta/n and broadcasts into every column of row w_r; the residual adds the prompt.
inline IcgdLayer build_icgd_layer(const GradNetSpec& net, double eta, std::size_t n, double B1, double eps1,
                                  double eps0 = 0.0) {
  if (net.d * net.H > 4096) throw std::invalid_argument("icgd: too many heads");
  if (!(eps1 > 0.0)) throw std::invalid_argument("icgd: eps1 must be positive");
  const std::size_t d = net.d, D = d + 2, in_rows = 2 * d + 2;
  IcgdLayer L;
  L.net = net;
  L.eta = eta;
  L.n = n;
  L.B1 = B1;
  L.eps1 = eps1;
  L.eps0 = eps0;
  // An all-zero net still needs a nondegenerate grid.
  const double coef = net.coefficient_bound() > 0.0 ? net.coefficient_bound() : 1.0;
  L.upper = coef * (B1 * B1 + B1 + 1.0);
  const ParameterChoice pc = choose_parameters(n, 0.0, L.upper, eps1);
  L.p = pc.p;
  const InterpolationGrid grid = make_grid(0.0, L.upper, pc.p);
  L.beta = selection_beta(grid, pc.epsilon0);

  const auto R = icl_detail::rows(D, 1);
  const Matrix pad = icl_detail::token_pad(n, pc.p);
  const Matrix ramp = icl_detail::index_ramp(n, pc.p);
  const Matrix bias_block = icl_detail::grid_bias(R, grid, IndexMapG::constant(0, 1), n);
  Matrix wo(pc.p, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) wo(i, j) = -eta / static_cast<double>(n);

  const std::size_t heads = d * net.H;
  AffineMap pre;
  pre.out_rows = R.total * heads;
  pre.out_cols = pc.p;
  Matrix bias(pre.out_rows, pc.p);
  std::size_t slot = 0;
  for (std::size_t r = 0; r < d; ++r) {
    for (std::size_t h = 0; h < net.H; ++h, ++slot) {
      const std::size_t off = slot * R.total;
      Matrix q(D, in_rows), k(D, in_rows);
      for (std::size_t j = 0; j < d; ++j) {
        q(j, j) = net.a[r][h];
        k(j, d + 1 + j) = 1.0;
      }
      q(d, d) = net.b[r][h];
      q(d + 1, 2 * d + 1) = 1.0;
      k(d, 2 * d + 1) = 1.0;
      k(d + 1, 2 * d + 1) = net.c[r][h];
      pre.terms.push_back({q, std::nullopt, pad, off + R.query});
      pre.terms.push_back({k, std::nullopt, ramp, off + R.key});
      bias.set_block(off, 0, bias_block);

      AttentionHead head = icl_detail::selection_head(R, grid, 1, L.beta);
      Matrix wv(in_rows, R.total);
      wv(d + 1 + r, R.values) = 1.0;
      head.w_v = wv;
      head.w_o = wo;
      head.in_offset = off;
      L.stack.heads.push_back(std::move(head));
    }
  }
  pre.bias = bias;
  L.stack.pre = std::move(pre);
  L.stack.residual = true;
  return L;
}

inline std::vector<double> exact_gd_step(const GradNetSpec& net, double eta, const ICLPrompt& p) {
  std::vector<double> w = p.w;
  const double n = static_cast<double>(p.n());
  for (std::size_t r = 0; r < net.d; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.n(); ++i) s += net.g(r, p.wx(i), p.y[i]);
    w[r] -= eta / n * s;
  }
  return w;
}

inline std::vector<double> read_w(const Matrix& out, std::size_t d) {
  std::vector<double> w(d);
  for (std::size_t r = 0; r < d; ++r) w[r] = out(d + 1 + r, 0);
  return w;
}

// Measured error is the entrywise max over the whole output matrix.
inline ErrorReport verify_icgd_layer(const IcgdLayer& L, const ICLPrompt& prompt) {
  check_prompt_bound(prompt, L.B1);
  const Matrix out = forward_stack(L.stack, prompt.gd_layout());
  ICLPrompt next = prompt;
  next.w = exact_gd_step(L.net, L.eta, prompt);
  const Matrix ref = next.gd_layout();
  std::vector<double> per(prompt.n(), 0.0);
  for (std::size_t i = 0; i < prompt.n(); ++i)
    for (std::size_t r = 0; r < ref.rows(); ++r) per[i] = std::max(per[i], std::abs(out(r, i) - ref(r, i)));
  return finish_report(std::move(per), L.error_bound());
}

struct TrajectoryReport {
  std::vector<std::vector<double>> attention;  // w after each layer
  std::vector<std::vector<double>> exact;      // analytic recursion
  std::vector<double> step_divergence;         // one layer vs one exact step from the same state
  std::vector<double> cumulative_divergence;
  std::vector<double> cumulative_bound;
  double growth = 1.0;
  bool within_prompt_bound = true;  // every visited w kept ||w||_1 <= B1
};

inline double inf_dist(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Applies the same layer `steps` times. The cumulative bound compounds the per-layer
// bound with growth factor 1 + eta * max_r sum_h |a_h^(r)| * B1, the Lipschitz constant
// of one exact step in w.
inline TrajectoryReport stacked_icgd_trajectory(const IcgdLayer& L, const ICLPrompt& prompt, std::size_t steps) {
  if (steps == 0) throw std::invalid_argument("trajectory: need at least one step");
  check_prompt_bound(prompt, L.B1);
  TrajectoryReport rep;
  double amax = 0.0;
  for (std::size_t r = 0; r < L.net.d; ++r) {
    double s = 0.0;
    for (std::size_t h = 0; h < L.net.H; ++h) s += std::abs(L.net.a[r][h]);
    amax = std::max(amax, s);
  }
  rep.growth = 1.0 + L.eta * amax * L.B1;
  ICLPrompt att = prompt, ex = prompt;
  Matrix z = prompt.gd_layout();
  double bound = 0.0, power = 1.0;
  for (std::size_t s = 0; s < steps; ++s) {
    const std::vector<double> local = exact_gd_step(L.net, L.eta, att);
    z = forward_stack(L.stack, z);
    att.w = read_w(z, L.net.d);
    ex.w = exact_gd_step(L.net, L.eta, ex);
    double wl1 = 0.0;
    for (double v : att.w) wl1 += std::abs(v);
    rep.within_prompt_bound = rep.within_prompt_bound && wl1 <= L.B1;
    bound += L.error_bound() * power;
    power *= rep.growth;
    rep.attention.push_back(att.w);
    rep.exact.push_back(ex.w);
    rep.step_divergence.push_back(inf_dist(att.w, local));
    rep.cumulative_divergence.push_back(inf_dist(att.w, ex.w));
    rep.cumulative_bound.push_back(bound);
  }
  return rep;
}

}  // namespace attnapprox

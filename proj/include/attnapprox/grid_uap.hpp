#pragma once

#include <cmath>
#include <cstddef>
#include <fstream>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnapprox/attn.hpp"
#include "attnapprox/construct_single.hpp"
#include "attnapprox/hardmax.hpp"
#include "attnapprox/interp.hpp"
#include "attnapprox/numkit.hpp"

namespace attnapprox {

inline constexpr std::size_t kMaxGridCenters = 10000;

struct InputGrid {
  double B = 1.0;
  std::size_t g = 2;
  std::size_t d = 1;
  std::size_t n = 1;
  double delta = 0.25;

  std::size_t dims() const { return d * n; }
  std::size_t count() const {
    std::size_t c = 1;
    for (std::size_t i = 0; i < dims(); ++i) c *= g;
    return c;
  }
  double spacing() const { return 2.0 * B / static_cast<double>(g); }
  double coord(std::size_t m) const {
    return -B * static_cast<double>(g - 1) / static_cast<double>(g) + static_cast<double>(m) * spacing();
  }
  // Digit f of the center index (base g, least significant first) drives entry
  // (f / n, f % n).
  Matrix center(std::size_t j) const {
    Matrix v(d, n);
    for (std::size_t f = 0; f < dims(); ++f) {
      v(f / n, f % n) = coord(j % g);
      j /= g;
    }
    return v;
  }
  // Index of the center whose cell contains x (cells are clamped at the box edge).
  std::size_t cell_of(const Matrix& x) const {
    std::size_t j = 0, mult = 1;
    for (std::size_t f = 0; f < dims(); ++f) {
      const double pos = std::floor((x(f / n, f % n) + B) / spacing());
      const std::size_t m = static_cast<std::size_t>(std::clamp(pos, 0.0, static_cast<double>(g - 1)));
      j += m * mult;
      mult *= g;
    }
    return j;
  }
  // Core region: every coordinate within (1 - delta) B / g of the center.
  bool in_core(const Matrix& x, std::size_t j) const {
    const Matrix v = center(j);
    for (std::size_t f = 0; f < dims(); ++f)
      if (std::abs(x(f / n, f % n) - v(f / n, f % n)) > (1.0 - delta) * B / static_cast<double>(g)) return false;
    return true;
  }
  double dead_zone_measure() const { return 1.0 - std::pow(1.0 - delta, static_cast<double>(dims())); }
  Box box() const { return Box{d, n, -B, B}; }
};

inline InputGrid make_input_grid(double B, std::size_t g, std::size_t d, std::size_t n, double delta = 0.25) {
  if (!(B > 0.0)) throw std::invalid_argument("input grid: B must be positive");
  if (g < 2) throw std::invalid_argument("input grid: g must be >= 2");
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("input grid: delta in (0,1)");
  InputGrid grid{B, g, d, n, delta};
  double c = 1.0;
  for (std::size_t i = 0; i < grid.dims(); ++i) c *= static_cast<double>(g);
  if (c > static_cast<double>(kMaxGridCenters))
    throw std::invalid_argument("input grid: more than 10^4 centers");
  return grid;
}

enum class BumpVariant {
  saturating,  // per-coordinate tent in [0, 2]; core value 2dn
  shifted      // tent minus 1; core value dn, feeds the ReLU network
};

// Four-ReLU tent: Range01((z+1)/delta) + Range01((1-z)/delta), z = g (x - v) / B.
inline double tent(double x, double v, const InputGrid& grid) {
  const double z = static_cast<double>(grid.g) * (x - v) / grid.B;
  const double y1 = (z + 1.0) / grid.delta, y2 = (1.0 - z) / grid.delta;
  return relu(y1) - relu(y1 - 1.0) + relu(y2) - relu(y2 - 1.0);
}

inline double bump_value(const InputGrid& grid, const Matrix& v, const Matrix& x,
                         BumpVariant variant = BumpVariant::saturating) {
  double s = 0.0;
  for (std::size_t i = 0; i < grid.d; ++i)
    for (std::size_t k = 0; k < grid.n; ++k) {
      s += tent(x(i, k), v(i, k), grid);
      if (variant == BumpVariant::shifted) s -= 1.0;
    }
  return s;
}

inline double bump_value(const InputGrid& grid, std::size_t j, const Matrix& x,
                         BumpVariant variant = BumpVariant::saturating) {
  return bump_value(grid, grid.center(j), x, variant);
}

struct ScalarTargetTable {
  std::vector<double> values;  // one per center

  double sup_norm() const {
    double m = 0.0;
    for (double v : values) m = std::max(m, std::abs(v));
    return m;
  }
};

using ScalarFn = std::function<double(const Matrix&)>;

struct ScalarTarget {
  std::string name;
  ScalarFn f;
  double lipschitz_inf = 1.0;  // w.r.t. the entrywise max norm
  double sup = 1.0;            // bound on |f| over the box
};

inline ScalarTarget named_scalar_target(const std::string& name, const InputGrid& grid) {
  const double dn = static_cast<double>(grid.dims());
  if (name == "coordinate") return {name, [](const Matrix& x) { return x(0, 0); }, 1.0, grid.B};
  if (name == "sum") {
    return {name, [](const Matrix& x) { double s = 0; for (double v : x.data()) s += v; return s; },
            dn, dn * grid.B};
  }
  if (name == "product") {
    return {name, [](const Matrix& x) { double s = 1; for (double v : x.data()) s *= v; return s; },
            dn * std::pow(std::max(1.0, grid.B), dn - 1.0), std::pow(grid.B, dn)};
  }
  if (name == "sine_of_sum") {
    return {name, [](const Matrix& x) { double s = 0; for (double v : x.data()) s += v; return std::sin(s); },
            dn, 1.0};
  }
  throw std::invalid_argument("unknown target function: " + name);
}

inline ScalarTargetTable tabulate(const InputGrid& grid, const ScalarFn& f) {
  ScalarTargetTable t;
  t.values.resize(grid.count());
  for (std::size_t j = 0; j < grid.count(); ++j) t.values[j] = f(grid.center(j));
  return t;
}

// Whitespace-separated values, one per center in center-index order.
inline ScalarTargetTable load_target_table(const std::string& path, std::size_t expected) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open table file: " + path);
  ScalarTargetTable t;
  double v = 0.0;
  while (in >> v) t.values.push_back(v);
  if (t.values.size() != expected)
    throw std::runtime_error("table file " + path + ": expected " + std::to_string(expected) + " values");
  return t;
}

// sum_v f(v) ReLU(R_v(x) - N + 1) with the shifted bump and N = d n.
inline double relu_ffn_oracle(const InputGrid& grid, const ScalarTargetTable& table, const Matrix& x) {
  if (table.values.size() != grid.count()) throw std::invalid_argument("ffn oracle: table size mismatch");
  const double N = static_cast<double>(grid.dims());
  double s = 0.0;
  for (std::size_t j = 0; j < grid.count(); ++j) {
    const double act = relu(bump_value(grid, j, x, BumpVariant::shifted) - N + 1.0);
    if (act != 0.0) s += table.values[j] * act;
  }
  return s;
}

struct UapEpsilons {
  double eps0 = 0.05;  // bump-row fidelity, per row of the input
  double eps1 = 0.01;  // selection softmax
};

enum class BumpLayout { row, column };

struct BumpLayer {
  AttentionStack stack;
  std::size_t p = 0;
  double beta = 0.0;
  std::size_t heads = 0;
};

// 2d single-head truncated approximators per center (one per input row and tent side),
// each summing its n token outputs into the center's slot. Each head is sized so that its
// token sum is within eps0 / 2, which puts the whole bump row within d * eps0.
inline BumpLayer build_bump_layer(const InputGrid& grid, double eps0, BumpLayout layout) {
  const std::size_t G = grid.count(), n = grid.n, d = grid.d;
  const ParameterChoice pc = choose_parameters(n, 0.0, 1.0, eps0 / (2.0 * static_cast<double>(n)));
  const double slope = static_cast<double>(grid.g) / (grid.delta * grid.B);

  const std::size_t block = single_layout::rows(d, 1).total;
  const std::size_t nheads = 2 * d * G;
  BumpLayer out;
  out.p = pc.p;
  out.heads = nheads;
  AffineMap pre;
  pre.out_rows = block * nheads;
  pre.out_cols = pc.p;
  Matrix bias(pre.out_rows, pc.p);

  std::size_t slot = 0;
  for (std::size_t j = 0; j < G; ++j) {
    const Matrix v = grid.center(j);
    for (std::size_t i = 0; i < d; ++i) {
      for (double sign : {1.0, -1.0}) {
        std::vector<TruncatedLinearModel> task(n);
        for (std::size_t k = 0; k < n; ++k) {
          task[k].w.assign(d, 0.0);
          task[k].w[i] = sign * slope;
          task[k].t = (1.0 - sign * static_cast<double>(grid.g) * v(i, k) / grid.B) / grid.delta;
          task[k].a = 0.0;
          task[k].b = 1.0;
        }
        const SingleHeadPlan plan = make_single_head_plan(std::move(task), pc.p, pc.epsilon0);
        out.beta = plan.beta;
        AttentionStack s = build_single_head(plan);
        const std::size_t off = slot * block;
        for (AffineTerm t : s.pre->terms) {
          t.row_offset += off;
          pre.terms.push_back(std::move(t));
        }
        bias.set_block(off, 0, *s.pre->bias);
        AttentionHead h = std::move(s.heads.front());
        h.in_offset = off;
        if (layout == BumpLayout::row) {
          Matrix wo(pc.p, G);
          for (std::size_t k = 0; k < n; ++k) wo(k, j) = 1.0;
          h.w_o = wo;
        } else {
          Matrix wv(G, h.w_v.cols());
          wv.set_block(j, 0, h.w_v);
          h.w_v = wv;
          Matrix wo(pc.p, 1);
          for (std::size_t k = 0; k < n; ++k) wo(k, 0) = 1.0;
          h.w_o = wo;
        }
        out.stack.heads.push_back(std::move(h));
        ++slot;
      }
    }
  }
  pre.bias = bias;
  out.stack.pre = std::move(pre);
  return out;
}

// Smallest score gap the selection stage can see: the top bump beats the runner-up by
// at least 1 - 2 d eps0 and every bump is at least d n - d eps0.
inline double selection_gap(const InputGrid& grid, double eps0) {
  const double d = static_cast<double>(grid.d), dn = static_cast<double>(grid.dims());
  const double lead = 1.0 - 2.0 * d * eps0;
  if (!(lead > 0.0)) throw std::invalid_argument("grid uap: eps0 too large, need 2 d eps0 < 1");
  return lead * (dn - d * eps0);
}

struct UapModel {
  Network net;
  InputGrid grid;
  UapEpsilons eps;
  std::size_t stage1_p = 0;
  double stage1_beta = 0.0;
  double stage2_beta = 0.0;
  double sup_f = 0.0;  // largest |table value| over all output entries

  Matrix operator()(const Matrix& x) const { return net.forward(x); }
  double in_core_budget() const { return eps.eps1 * sup_f + static_cast<double>(grid.d) * eps.eps0; }
};

// Two layers: bump row, then Gram-score selection of the winning center's value.
inline UapModel build_seq_to_scalar(const InputGrid& grid, const ScalarTargetTable& table, const UapEpsilons& eps) {
  const std::size_t G = grid.count();
  if (table.values.size() != G) throw std::invalid_argument("seq_to_scalar: table size mismatch");
  BumpLayer l1 = build_bump_layer(grid, eps.eps0, BumpLayout::row);
  UapModel m;
  m.grid = grid;
  m.eps = eps;
  m.stage1_p = l1.p;
  m.stage1_beta = l1.beta;
  m.sup_f = table.sup_norm();
  m.stage2_beta = beta_for_unique_max(G, selection_gap(grid, eps.eps0), eps.eps1);

  AttentionStack l2;
  Matrix bias(2, G);
  for (std::size_t j = 0; j < G; ++j) bias(1, j) = table.values[j];
  l2.pre = AffineMap::linear(Matrix{{1.0}, {0.0}}, std::nullopt, bias);
  AttentionHead h;
  h.w_q = Matrix{{1.0, 0.0}};
  h.w_k = Matrix{{1.0, 0.0}};
  h.w_v = Matrix{{0.0, 1.0}};
  h.w_o = Matrix(G, 1, 1.0 / static_cast<double>(G));
  h.beta = m.stage2_beta;
  l2.heads.push_back(std::move(h));
  m.net.layers = {std::move(l1.stack), std::move(l2)};
  return m;
}

// One layer with the bump column, a trailing column softmax, and the readout f^T z.
inline UapModel build_seq_to_scalar_single_layer(const InputGrid& grid, const ScalarTargetTable& table,
                                                 const UapEpsilons& eps) {
  const std::size_t G = grid.count();
  if (table.values.size() != G) throw std::invalid_argument("seq_to_scalar: table size mismatch");
  BumpLayer l1 = build_bump_layer(grid, eps.eps0, BumpLayout::column);
  UapModel m;
  m.grid = grid;
  m.eps = eps;
  m.stage1_p = l1.p;
  m.stage1_beta = l1.beta;
  m.sup_f = table.sup_norm();
  const double lead = 1.0 - 2.0 * static_cast<double>(grid.d) * eps.eps0;
  if (!(lead > 0.0)) throw std::invalid_argument("grid uap: eps0 too large, need 2 d eps0 < 1");
  m.stage2_beta = beta_for_unique_max(G, lead, eps.eps1);
  l1.stack.post_softmax = true;
  l1.stack.post_beta = m.stage2_beta;
  l1.stack.post = AffineMap::linear(Matrix::row(table.values));
  m.net.layers = {std::move(l1.stack)};
  return m;
}

// tables[i * n + j] tabulates output entry (i, j).
inline UapModel build_seq2seq(const InputGrid& grid, const std::vector<ScalarTargetTable>& tables,
                              const UapEpsilons& eps) {
  const std::size_t G = grid.count(), d = grid.d, n = grid.n;
  if (tables.size() != d * n) throw std::invalid_argument("seq2seq: need d*n tables");
  for (const auto& t : tables)
    if (t.values.size() != G) throw std::invalid_argument("seq2seq: table size mismatch");
  BumpLayer l1 = build_bump_layer(grid, eps.eps0, BumpLayout::row);
  UapModel m;
  m.grid = grid;
  m.eps = eps;
  m.stage1_p = l1.p;
  m.stage1_beta = l1.beta;
  for (const auto& t : tables) m.sup_f = std::max(m.sup_f, t.sup_norm());
  m.stage2_beta = beta_for_unique_max(G, selection_gap(grid, eps.eps0), eps.eps1);

  AttentionStack l2;
  Matrix left(1 + d * n, 1);
  left(0, 0) = 1.0;
  Matrix bias(1 + d * n, G);
  for (std::size_t e = 0; e < d * n; ++e)
    for (std::size_t j = 0; j < G; ++j) bias(1 + e, j) = tables[e].values[j];
  l2.pre = AffineMap::linear(left, std::nullopt, bias);
  Matrix sel(1, 1 + d * n);
  sel(0, 0) = 1.0;
  for (std::size_t i = 0; i < d; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      AttentionHead h;
      h.w_q = sel;
      h.w_k = sel;
      h.w_v = Matrix(d, 1 + d * n);
      h.w_v(i, 1 + i * n + j) = 1.0;
      Matrix wo(G, n);
      for (std::size_t r = 0; r < G; ++r) wo(r, j) = 1.0 / static_cast<double>(G);
      h.w_o = wo;
      h.beta = m.stage2_beta;
      l2.heads.push_back(std::move(h));
    }
  }
  m.net.layers = {std::move(l1.stack), std::move(l2)};
  return m;
}

inline UapModel build_seq2seq_single_layer(const InputGrid& grid, const std::vector<ScalarTargetTable>& tables,
                                           const UapEpsilons& eps) {
  const std::size_t G = grid.count(), d = grid.d, n = grid.n;
  if (tables.size() != d * n) throw std::invalid_argument("seq2seq: need d*n tables");
  BumpLayer l1 = build_bump_layer(grid, eps.eps0, BumpLayout::column);
  UapModel m;
  m.grid = grid;
  m.eps = eps;
  m.stage1_p = l1.p;
  m.stage1_beta = l1.beta;
  for (const auto& t : tables) m.sup_f = std::max(m.sup_f, t.sup_norm());
  const double lead = 1.0 - 2.0 * static_cast<double>(d) * eps.eps0;
  if (!(lead > 0.0)) throw std::invalid_argument("grid uap: eps0 too large, need 2 d eps0 < 1");
  m.stage2_beta = beta_for_unique_max(G, lead, eps.eps1);
  AffineMap readout;
  readout.out_rows = d;
  readout.out_cols = n;
  for (std::size_t j = 0; j < n; ++j) {
    Matrix f(d, G);
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t c = 0; c < G; ++c) f(i, c) = tables[i * n + j].values[c];
    Matrix pick(1, n);
    pick(0, j) = 1.0;
    readout.terms.push_back({f, std::nullopt, pick, 0});
  }
  l1.stack.post_softmax = true;
  l1.stack.post_beta = m.stage2_beta;
  l1.stack.post = std::move(readout);
  m.net.layers = {std::move(l1.stack)};
  return m;
}

using SeqFn = std::function<Matrix(const Matrix&)>;

struct SeqTarget {
  std::string name;
  SeqFn f;
  double lipschitz_inf = 1.0;
  double sup = 1.0;
};

inline SeqTarget named_seq_target(const std::string& name, const InputGrid& grid) {
  if (name == "identity") return {name, [](const Matrix& x) { return x; }, 1.0, grid.B};
  if (name == "swap") {
    // Reverses token order; for n = 2 this is [X_12, X_11].
    return {name,
            [](const Matrix& x) {
              Matrix y(x.rows(), x.cols());
              for (std::size_t i = 0; i < x.rows(); ++i)
                for (std::size_t j = 0; j < x.cols(); ++j) y(i, j) = x(i, x.cols() - 1 - j);
              return y;
            },
            1.0, grid.B};
  }
  if (name == "sine_of_sum") {
    return {name,
            [](const Matrix& x) {
              double s = 0;
              for (double v : x.data()) s += v;
              return Matrix(x.rows(), x.cols(), std::sin(s));
            },
            static_cast<double>(grid.dims()), 1.0};
  }
  throw std::invalid_argument("unknown sequence target: " + name);
}

inline std::vector<ScalarTargetTable> tabulate_seq(const InputGrid& grid, const SeqFn& f) {
  std::vector<ScalarTargetTable> t(grid.dims());
  for (auto& tt : t) tt.values.resize(grid.count());
  for (std::size_t j = 0; j < grid.count(); ++j) {
    const Matrix y = f(grid.center(j));
    if (y.rows() != grid.d || y.cols() != grid.n) throw std::invalid_argument("seq target: wrong output shape");
    for (std::size_t e = 0; e < grid.dims(); ++e) t[e].values[j] = y(e / grid.n, e % grid.n);
  }
  return t;
}

// A point drawn uniformly from the core of a uniformly drawn center.
inline Matrix sample_in_core(const InputGrid& grid, CounterRng& rng, std::size_t* center = nullptr) {
  const std::size_t j = rng.index(grid.count());
  Matrix x = grid.center(j);
  const double r = (1.0 - grid.delta) * grid.B / static_cast<double>(grid.g);
  for (double& v : x.data()) v += rng.uniform(-r, r);
  if (center) *center = j;
  return x;
}

// Declared L_p budget: in-core error (selection budget plus the modulus of f over a half
// cell) on the core fraction, and 2 sup|f| + d eps0 on the dead-zone fraction.
inline double uap_lp_budget(const UapModel& m, double lipschitz_inf, double sup_f, std::size_t entries, double p) {
  const double core_err = m.in_core_budget() + lipschitz_inf * m.grid.B / static_cast<double>(m.grid.g);
  const double dead_err = 2.0 * sup_f + static_cast<double>(m.grid.d) * m.eps.eps0;
  const double dz = m.grid.dead_zone_measure();
  const double inner = (1.0 - dz) * std::pow(core_err, p) + dz * std::pow(dead_err, p);
  return std::pow(m.grid.box().volume() * static_cast<double>(entries) * inner, 1.0 / p);
}

}  // namespace attnapprox

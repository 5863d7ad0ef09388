#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

#include "attnapprox/attn.hpp"
#include "attnapprox/construct_multi.hpp"
#include "attnapprox/interp.hpp"
#include "attnapprox/numkit.hpp"

namespace attnapprox {

struct ColwiseSpec {
  Matrix A_lin;  // d_out x d
  Matrix B_mix;  // n x n, strictly positive
  double T = 1.0;

  std::vector<double> column_sums() const {
    std::vector<double> s(B_mix.cols(), 0.0);
    for (std::size_t i = 0; i < B_mix.rows(); ++i)
      for (std::size_t j = 0; j < B_mix.cols(); ++j) s[j] += B_mix(i, j);
    return s;
  }
  double M() const {
    const auto s = column_sums();
    return *std::max_element(s.begin(), s.end());
  }
};

// Where the [[X,0],[I_n,0],[0,1]] blocks sit inside a taller input, and where
// the A_lin rows land in the output.
struct ColwiseLayout {
  std::size_t total_rows = 0;
  std::size_t x_offset = 0;
  std::size_t pos_offset = 0;  // start of the (n+1) x (n+1) positional block
  std::size_t out_rows = 0;
  std::size_t out_offset = 0;
};

inline ColwiseLayout standard_colwise_layout(const ColwiseSpec& s) {
  const std::size_t d = s.A_lin.cols(), n = s.B_mix.rows();
  return {d + n + 1, 0, d, s.A_lin.rows(), 0};
}

inline Matrix colwise_input(const Matrix& x) {
  const std::size_t d = x.rows(), n = x.cols();
  Matrix z(d + n + 1, n + 1);
  z.set_block(0, 0, x);
  for (std::size_t i = 0; i <= n; ++i) z(d + i, i) = 1.0;
  return z;
}

// T such that 3 M n ||AX||_inf e^{-T n ln 2} <= eps, times a safety factor.
inline double colwise_routing_T(double M, std::size_t n, double ax_bound, double eps, double safety = 4.0) {
  if (!(eps > 0.0)) throw std::invalid_argument("colwise T: eps must be positive");
  const double need = std::log(std::max(3.0 * M * static_cast<double>(n) * ax_bound / eps, std::exp(1.0)));
  return safety * need / (static_cast<double>(n) * std::log(2.0));
}

// Values 3M A X; keys ln(B^T) for tokens and ln(3M - s) for the padding token; queries e_j
// for tokens and T 1 for the padding column. Softmax weight of token i in column j is
// B_ij / (3M), so the first n output columns are A X B.
inline AttentionHead build_colwise(const ColwiseSpec& spec, const ColwiseLayout& lay) {
  const std::size_t n = spec.B_mix.rows(), d = spec.A_lin.cols();
  if (spec.B_mix.cols() != n) throw std::invalid_argument("colwise: B must be square");
  for (double v : spec.B_mix.data())
    if (!(v > 0.0)) throw std::invalid_argument("colwise: B entries must be strictly positive; split B = B+ - B-");
  const double M = spec.M();
  const auto s = spec.column_sums();
  AttentionHead h;
  h.beta = 1.0;
  h.w_v = Matrix(lay.out_rows, lay.total_rows);
  for (std::size_t r = 0; r < spec.A_lin.rows(); ++r)
    for (std::size_t c = 0; c < d; ++c) h.w_v(lay.out_offset + r, lay.x_offset + c) = 3.0 * M * spec.A_lin(r, c);
  h.w_q = Matrix(n, lay.total_rows);
  h.w_k = Matrix(n, lay.total_rows);
  for (std::size_t r = 0; r < n; ++r) {
    h.w_q(r, lay.pos_offset + r) = 1.0;
    h.w_q(r, lay.pos_offset + n) = spec.T;
    for (std::size_t i = 0; i < n; ++i) h.w_k(r, lay.pos_offset + i) = std::log(spec.B_mix(i, r));
    h.w_k(r, lay.pos_offset + n) = std::log(3.0 * M - s[r]);
  }
  return h;
}

inline AttentionHead build_colwise(const ColwiseSpec& spec) { return build_colwise(spec, standard_colwise_layout(spec)); }

// Two heads whose difference realizes A X B for a B of any sign:
// B- = max(0, -B) + 0.1, B+ = B + B-.
inline std::vector<AttentionHead> build_colwise_signed(const Matrix& A, const Matrix& B, double ax_bound,
                                                       double eps, const ColwiseLayout& lay,
                                                       double safety = 4.0) {
  Matrix bm(B.rows(), B.cols());
  for (std::size_t i = 0; i < B.data().size(); ++i) bm.data()[i] = std::max(0.0, -B.data()[i]) + 0.1;
  const Matrix bp = B + bm;
  std::vector<AttentionHead> heads;
  for (const Matrix* part : std::initializer_list<const Matrix*>{&bp, &bm}) {
    ColwiseSpec spec{A, *part, 1.0};
    spec.T = colwise_routing_T(spec.M(), B.rows(), ax_bound, eps / 2.0, safety);
    heads.push_back(build_colwise(spec, lay));
  }
  heads[1].w_v *= -1.0;
  return heads;
}

// Stack over colwise_input(X) whose first n output columns approximate A X B.
inline AttentionStack build_colwise_stack(const Matrix& A, const Matrix& B, double ax_bound, double eps,
                                          double safety = 4.0) {
  ColwiseSpec probe{A, Matrix(B.rows(), B.cols(), 1.0), 1.0};
  AttentionStack s;
  s.heads = build_colwise_signed(A, B, ax_bound, eps, standard_colwise_layout(probe), safety);
  return s;
}

struct ColwiseCheck {
  double first_cols_err = 0.0;
  double padding_col = 0.0;
};

inline ColwiseCheck check_colwise(const Matrix& out, const Matrix& A, const Matrix& x, const Matrix& B) {
  const Matrix ref = matmul(matmul(A, x), B);
  ColwiseCheck c;
  for (std::size_t i = 0; i < ref.rows(); ++i) {
    for (std::size_t j = 0; j < ref.cols(); ++j) c.first_cols_err = std::max(c.first_cols_err, std::abs(out(i, j) - ref(i, j)));
    c.padding_col = std::max(c.padding_col, std::abs(out(i, ref.cols())));
  }
  return c;
}

// One output row: y_i = sum_k a(i,k) ReLU(sum_j w[i*N+k](:,j)^T x_j).
struct ReluRowNet {
  std::size_t N = 1;
  Matrix a;               // n x N
  std::vector<Matrix> w;  // n*N matrices of shape d x n

  std::size_t n() const { return a.rows(); }
  std::size_t d() const { return w.empty() ? 0 : w.front().rows(); }

  double pre_activation(std::size_t i, std::size_t k, const Matrix& x) const {
    const Matrix& wk = w[i * N + k];
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j)
      for (std::size_t r = 0; r < x.rows(); ++r) s += wk(r, j) * x(r, j);
    return s;
  }

  Matrix evaluate(const Matrix& x) const {
    Matrix y(1, n());
    for (std::size_t i = 0; i < n(); ++i)
      for (std::size_t k = 0; k < N; ++k) y(0, i) += a(i, k) * relu(pre_activation(i, k, x));
    return y;
  }
};

struct ThreeLayerOptions {
  double input_bound = 1.0;  // entries of X lie in [-input_bound, input_bound]
  double epsilon = 0.05;
  double safety = 4.0;
};

struct ThreeLayerRow {
  Network net;
  std::size_t layer1_heads_per_unit = 0;
  std::size_t layer1_p = 0;
  double range = 0.0;        // layer-1 truncation range [-range, range]
  double layer1_beta = 0.0;
  double identity_beta = 0.0;
  double layer3_beta = 0.0;
  double e1 = 0.0;           // per-entry layer-1 budget
  double eT = 0.0;           // padding leakage budget per colwise pair
  double rho = 0.0;          // ReLU blend error per unit
  double composed_budget = 0.0;

  Matrix operator()(const Matrix& x) const { return net.forward(x); }
};

inline constexpr std::size_t kMaxHiddenUnits = 512;

// Largest |x sigma(beta x) - ReLU(x)| over x, attained near x = 1.2785 / beta.
inline double relu_blend_error(double beta) { return 0.27846454276 / beta; }

// Layer 1: windowed truncated heads put sum-free pre-activations w_{i,k,j}^T x_j into the
// block rows, plus an identity head that carries the positional block forward.
// Layer 2: per token i, a signed column-wise pair gathers sum_j into a diagonal.
// Layer 3: per hidden unit, two sign-selected heads apply ReLU and aggregate.
inline ThreeLayerRow build_three_layer_row(const ReluRowNet& net_in, const ThreeLayerOptions& opt) {
  const std::size_t n = net_in.n(), N = net_in.N, d = net_in.d();
  if (n < 2) throw std::invalid_argument("three layer: need n >= 2");
  if (N * n > kMaxHiddenUnits) throw std::invalid_argument("three layer: more than 512 hidden units");
  if (net_in.w.size() != n * N) throw std::invalid_argument("three layer: expected n*N weight matrices");

  // Fold |a| into the weights so that every output coefficient is +-1.
  ReluRowNet net = net_in;
  std::vector<int> sign(n * N, 1);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t k = 0; k < N; ++k) {
      const double av = net.a(i, k);
      net.w[i * N + k] *= std::abs(av);
      sign[i * N + k] = av < 0.0 ? -1 : 1;
    }

  ThreeLayerRow out;
  const double eps = opt.epsilon;
  const double Nd = static_cast<double>(N), nd = static_cast<double>(n);
  out.e1 = eps / (2.2 * Nd * nd);
  out.eT = eps / (8.0 * Nd);

  double R = 0.0;
  for (const Matrix& wk : net.w)
    for (std::size_t j = 0; j < n; ++j) {
      double l1 = 0.0;
      for (std::size_t r = 0; r < d; ++r) l1 += std::abs(wk(r, j));
      R = std::max(R, l1 * opt.input_bound);
    }
  R = std::max(R, 1e-3);
  out.range = R;

  const std::size_t groups = n * N;
  const std::size_t rows1 = groups + n + 1;  // blocks W_0..W_{n-1} then I_{n+1}
  const std::size_t pos1 = groups;
  const std::size_t blk = d + 1 + n + 1;

  // Layer 1.
  const double eps01 = out.e1 / (2.0 * R);
  out.layer1_heads_per_unit =
      static_cast<std::size_t>(std::ceil(4.0 * R / (out.e1 * static_cast<double>(n - 1))));
  out.layer1_p = out.layer1_heads_per_unit * (n - 1);
  const InterpolationGrid grid1 = make_grid(-R, R, out.layer1_p);
  out.layer1_beta = windowed_beta(grid1, n + 1, case_budgets(eps01, out.layer1_heads_per_unit).smallest);
  out.identity_beta = opt.safety * std::log((nd + 1.0) * 8.0 * Nd / eps);

  AttentionStack l1;
  {
    AffineMap pre;
    pre.out_rows = blk * groups;
    pre.out_cols = n + 1;
    Matrix bias(pre.out_rows, n + 1);
    Matrix pad(n, n + 1);
    for (std::size_t j = 0; j < n; ++j) pad(j, j) = 1.0;
    for (std::size_t g = 0; g < groups; ++g) {
      pre.terms.push_back({Matrix::identity(d), net.w[g], pad, g * blk});
      for (std::size_t c = 0; c <= n; ++c) bias(g * blk + d + 1 + c, c) = 1.0;
    }
    pre.bias = bias;
    l1.pre = std::move(pre);
    Matrix wo = Matrix::identity(n + 1);
    wo(n, n) = 0.0;
    for (std::size_t g = 0; g < groups; ++g) {
      auto hs = windowed_selection_heads(grid1, out.layer1_heads_per_unit, n + 1, d + 1, g * blk, g, rows1,
                                         out.layer1_beta, wo);
      for (auto& h : hs) l1.heads.push_back(std::move(h));
    }
    AttentionHead id;
    id.in_offset = 0;
    id.beta = out.identity_beta;
    id.w_q = Matrix(n + 1, blk);
    id.w_k = Matrix(n + 1, blk);
    id.w_v = Matrix(rows1, blk);
    for (std::size_t c = 0; c <= n; ++c) {
      id.w_q(c, d + 1 + c) = 1.0;
      id.w_k(c, d + 1 + c) = 1.0;
      id.w_v(pos1 + c, d + 1 + c) = 1.0;
    }
    l1.heads.push_back(std::move(id));
  }

  // Layer 2: block k of the output holds diag(S_{k,0}, ..., S_{k,n-1}).
  const std::size_t rows2 = N * n + n + 1;
  const std::size_t pos2 = N * n;
  AttentionStack l2;
  {
    const double ax_bound = R + out.e1;
    for (std::size_t i = 0; i < n; ++i) {
      Matrix A(N * n, N);
      for (std::size_t k = 0; k < N; ++k) A(k * n + i, k) = 1.0;
      Matrix B(n, n);
      for (std::size_t r = 0; r < n; ++r) B(r, i) = 1.0;
      ColwiseLayout lay{rows1, i * N, pos1, rows2, 0};
      auto hs = build_colwise_signed(A, B, ax_bound, out.eT, lay, opt.safety);
      for (auto& h : hs) l2.heads.push_back(std::move(h));
    }
    AttentionHead id;
    id.beta = out.identity_beta;
    id.w_q = Matrix(n + 1, rows1);
    id.w_k = Matrix(n + 1, rows1);
    id.w_v = Matrix(rows2, rows1);
    for (std::size_t c = 0; c <= n; ++c) {
      id.w_q(c, pos1 + c) = 1.0;
      id.w_k(c, pos1 + c) = 1.0;
      id.w_v(pos2 + c, pos1 + c) = 1.0;
    }
    l2.heads.push_back(std::move(id));
  }

  // Layer 3.
  out.layer3_beta = opt.safety * 0.27846454276 * 8.0 * Nd / eps;
  out.rho = relu_blend_error(out.layer3_beta) +
            2.0 * nd * nd * (R + 1.0) * std::exp(-out.layer3_beta);
  AttentionStack l3;
  for (std::size_t k = 0; k < N; ++k) {
    for (int sg : {1, -1}) {
      AttentionHead h;
      h.beta = out.layer3_beta;
      h.w_v = Matrix(1, rows2);
      for (std::size_t r = 0; r < n; ++r) h.w_v(0, k * n + r) = static_cast<double>(sg);
      h.w_k = Matrix(n, rows2);
      h.w_q = Matrix(n, rows2);
      bool any = false;
      for (std::size_t r = 0; r < n; ++r) {
        h.w_k(r, pos2 + r) = 1.0;
        const bool match = sign[r * N + k] == sg;
        any = any || match;
        h.w_q(r, k * n + r) = match ? 1.0 : 0.0;
        for (std::size_t l = 0; l < n; ++l) h.w_q(r, pos2 + l) = (l == r && match) ? 0.0 : -1.0;
      }
      if (any) l3.heads.push_back(std::move(h));
    }
  }
  if (l3.heads.empty()) {
    // Every unit is switched off; a zero-valued head keeps the output shape.
    AttentionHead h;
    h.w_q = Matrix(1, rows2);
    h.w_k = Matrix(1, rows2);
    h.w_v = Matrix(1, rows2);
    l3.heads.push_back(std::move(h));
  }
  Matrix drop(n + 1, n);
  for (std::size_t j = 0; j < n; ++j) drop(j, j) = 1.0;
  l3.post = AffineMap::linear(Matrix::identity(1), drop);

  out.composed_budget = Nd * (1.1 * (nd * out.e1 + out.eT) + out.rho);
  out.net.layers = {std::move(l1), std::move(l2), std::move(l3)};
  return out;
}

// Independent row builds stacked vertically.
struct ThreeLayerModel {
  std::vector<ThreeLayerRow> rows;

  Matrix operator()(const Matrix& x) const {
    std::vector<Matrix> ys;
    for (const auto& r : rows) ys.push_back(r(x));
    return vstack(ys);
  }
  double composed_budget() const {
    double b = 0.0;
    for (const auto& r : rows) b = std::max(b, r.composed_budget);
    return b;
  }
};

inline ThreeLayerModel build_three_layer_seq2seq(const std::vector<ReluRowNet>& nets, const ThreeLayerOptions& opt) {
  std::size_t units = 0;
  for (const auto& n : nets) units += n.N * n.n();
  if (units > kMaxHiddenUnits) throw std::invalid_argument("three layer: more than 512 hidden units");
  ThreeLayerModel m;
  for (const auto& n : nets) m.rows.push_back(build_three_layer_row(n, opt));
  return m;
}

}  // namespace attnapprox

#pragma once

#include <cstddef>
#include <cstdio>
#include <limits>
#include <istream>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "attnapprox/numkit.hpp"

namespace attnapprox {

// One summand of an affine pre-map: left * (X o mask) * right, written into the
// output starting at row_offset. mask and right are optional.
struct AffineTerm {
  Matrix left;
  std::optional<Matrix> mask;
  std::optional<Matrix> right;
  std::size_t row_offset = 0;
};

// apply(X) = sum_t [left_t (X o mask_t) right_t] + bias.
// With a single term, no mask and row_offset 0 this is left*X*right + bias.
struct AffineMap {
  std::size_t out_rows = 0;
  std::size_t out_cols = 0;  // 0 keeps the input column count
  std::vector<AffineTerm> terms;
  std::optional<Matrix> bias;

  static AffineMap linear(Matrix left, std::optional<Matrix> right = std::nullopt,
                          std::optional<Matrix> bias = std::nullopt) {
    AffineMap m;
    m.out_rows = left.rows();
    m.out_cols = right ? right->cols() : 0;
    m.terms.push_back({std::move(left), std::nullopt, std::move(right), 0});
    m.bias = std::move(bias);
    return m;
  }

  Matrix apply(const Matrix& x) const {
    const std::size_t cols = out_cols ? out_cols : x.cols();
    Matrix out = bias ? *bias : Matrix(out_rows, cols);
    if (out.rows() != out_rows || out.cols() != cols)
      throw std::invalid_argument("AffineMap: bias shape does not match output");
    for (const AffineTerm& t : terms) {
      if (t.left.cols() != x.rows()) throw std::invalid_argument("AffineMap: left/input mismatch");
      Matrix y = t.mask ? matmul(t.left, hadamard(x, *t.mask)) : matmul(t.left, x);
      if (t.right) y = matmul(y, *t.right);
      if (y.cols() != cols || t.row_offset + y.rows() > out_rows)
        throw std::invalid_argument("AffineMap: term does not fit output");
      for (std::size_t i = 0; i < y.rows(); ++i)
        for (std::size_t j = 0; j < cols; ++j) out(t.row_offset + i, j) += y(i, j);
    }
    return out;
  }
};

// Un-tempered score weights plus temperature. The head reads rows
// [in_offset, in_offset + w_q.cols()) of its input, which is the same as padding the
// weights with zero columns. An absent w_o means identity.
struct AttentionHead {
  Matrix w_q;
  Matrix w_k;
  Matrix w_v;
  std::optional<Matrix> w_o;
  double beta = 1.0;
  std::size_t in_offset = 0;

  std::size_t width() const { return w_q.cols(); }
  std::size_t out_rows() const { return w_v.rows(); }
};

namespace detail {

inline Matrix matmul_window(const Matrix& w, const Matrix& z, std::size_t offset) {
  if (offset + w.cols() > z.rows())
    throw std::invalid_argument("attention head: weight width exceeds input rows");
  Matrix c(w.rows(), z.cols());
  for (std::size_t i = 0; i < w.rows(); ++i) {
    double* crow = &c(i, 0);
    for (std::size_t l = 0; l < w.cols(); ++l) {
      const double wv = w(i, l);
      if (wv == 0.0) continue;
      const double* zrow = z.data().data() + (offset + l) * z.cols();
      for (std::size_t j = 0; j < z.cols(); ++j) crow[j] += wv * zrow[j];
    }
  }
  return c;
}

inline void check_head(const AttentionHead& h) {
  if (h.w_q.rows() != h.w_k.rows()) throw std::invalid_argument("head: W_Q and W_K disagree on head dim");
  if (h.w_q.cols() != h.w_k.cols() || h.w_q.cols() != h.w_v.cols())
    throw std::invalid_argument("head: weights disagree on input width");
  if (!(h.beta > 0.0)) throw std::invalid_argument("head: beta must be positive");
}

}  // namespace detail

// (W_K Z)^T (W_Q Z), before temperature.
inline Matrix head_scores(const AttentionHead& h, const Matrix& z) {
  detail::check_head(h);
  const Matrix k = detail::matmul_window(h.w_k, z, h.in_offset);
  const Matrix q = detail::matmul_window(h.w_q, z, h.in_offset);
  return matmul(k.transpose(), q);
}

// (W_V Z) softmax_beta((W_K Z)^T (W_Q Z)) W_O. Softmax columns that W_O discards
// (all-zero rows of W_O) are skipped; they cannot affect the result.
inline Matrix forward_head(const AttentionHead& h, const Matrix& z) {
  detail::check_head(h);
  const std::size_t n = z.cols();
  if (h.w_o && h.w_o->rows() != n) throw std::invalid_argument("head: W_O rows must equal token count");
  std::vector<char> needed(n, 1);
  if (h.w_o) {
    for (std::size_t j = 0; j < n; ++j) {
      bool any = false;
      for (std::size_t c = 0; c < h.w_o->cols() && !any; ++c) any = (*h.w_o)(j, c) != 0.0;
      needed[j] = any;
    }
  }
  const Matrix k = detail::matmul_window(h.w_k, z, h.in_offset);
  const Matrix q = detail::matmul_window(h.w_q, z, h.in_offset);
  const Matrix v = detail::matmul_window(h.w_v, z, h.in_offset);
  const std::size_t dh = k.rows();
  Matrix vp(v.rows(), n);
  std::vector<double> col(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (!needed[j]) continue;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < n; ++i) {
      double s = 0.0;
      for (std::size_t r = 0; r < dh; ++r) s += k(r, i) * q(r, j);
      col[i] = s;
      mx = std::max(mx, s);
    }
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = std::exp(h.beta * (col[i] - mx));
      sum += col[i];
    }
    for (std::size_t i = 0; i < n; ++i) {
      const double pij = col[i] / sum;
      if (pij == 0.0) continue;
      for (std::size_t r = 0; r < v.rows(); ++r) vp(r, j) += v(r, i) * pij;
    }
  }
  return h.w_o ? matmul(vp, *h.w_o) : vp;
}

// pre-map -> sum of heads -> optional residual (+X) -> optional column softmax -> optional post-map.
// With no heads the pre-map output passes straight through.
struct AttentionStack {
  std::optional<AffineMap> pre;
  std::vector<AttentionHead> heads;
  bool residual = false;
  bool post_softmax = false;
  double post_beta = 1.0;
  std::optional<AffineMap> post;
};

inline Matrix forward_stack(const AttentionStack& s, const Matrix& x) {
  const Matrix z = s.pre ? s.pre->apply(x) : x;
  Matrix out;
  if (s.heads.empty()) {
    out = z;
  } else {
    out = forward_head(s.heads.front(), z);
    for (std::size_t h = 1; h < s.heads.size(); ++h) {
      const Matrix y = forward_head(s.heads[h], z);
      if (y.rows() != out.rows() || y.cols() != out.cols())
        throw std::invalid_argument("forward_stack: head output shapes differ");
      out += y;
    }
  }
  if (s.residual) {
    if (out.rows() != x.rows() || out.cols() != x.cols())
      throw std::invalid_argument("forward_stack: residual shape mismatch");
    out += x;
  }
  if (s.post_softmax) out = softmax_beta(out, s.post_beta);
  if (s.post) out = s.post->apply(out);
  return out;
}

struct Network {
  std::vector<AttentionStack> layers;

  Matrix forward(const Matrix& x) const {
    Matrix z = x;
    for (const auto& l : layers) z = forward_stack(l, z);
    return z;
  }
};

// Text serialization: a keyword line per record, matrices as "matrix R C" followed by
// R lines of C values printed with %.17g (round-trips exactly).
namespace serial {

inline void write_matrix(std::ostream& os, const Matrix& m) {
  os << "matrix " << m.rows() << ' ' << m.cols() << '\n';
  char buf[40];
  for (std::size_t i = 0; i < m.rows(); ++i) {
    for (std::size_t j = 0; j < m.cols(); ++j) {
      std::snprintf(buf, sizeof buf, "%.17g", m(i, j));
      os << (j ? " " : "") << buf;
    }
    os << '\n';
  }
}

inline void expect(std::istream& is, const std::string& word) {
  std::string got;
  if (!(is >> got) || got != word)
    throw std::runtime_error("deserialize: expected '" + word + "', got '" + got + "'");
}

inline Matrix read_matrix(std::istream& is) {
  expect(is, "matrix");
  std::size_t r = 0, c = 0;
  if (!(is >> r >> c)) throw std::runtime_error("deserialize: bad matrix header");
  Matrix m(r, c);
  for (double& v : m.data())
    if (!(is >> v)) throw std::runtime_error("deserialize: truncated matrix");
  return m;
}

inline void write_optional(std::ostream& os, const std::optional<Matrix>& m) {
  os << (m ? 1 : 0) << '\n';
  if (m) write_matrix(os, *m);
}

inline std::optional<Matrix> read_optional(std::istream& is) {
  int flag = 0;
  if (!(is >> flag)) throw std::runtime_error("deserialize: bad flag");
  if (!flag) return std::nullopt;
  return read_matrix(is);
}

inline void write_affine(std::ostream& os, const std::optional<AffineMap>& a) {
  if (!a) {
    os << "affine 0\n";
    return;
  }
  os << "affine 1 " << a->out_rows << ' ' << a->out_cols << ' ' << a->terms.size() << '\n';
  for (const auto& t : a->terms) {
    os << "term " << t.row_offset << '\n';
    write_matrix(os, t.left);
    write_optional(os, t.mask);
    write_optional(os, t.right);
  }
  os << "bias ";
  write_optional(os, a->bias);
}

inline std::optional<AffineMap> read_affine(std::istream& is) {
  expect(is, "affine");
  int present = 0;
  is >> present;
  if (!present) return std::nullopt;
  AffineMap a;
  std::size_t nterms = 0;
  if (!(is >> a.out_rows >> a.out_cols >> nterms)) throw std::runtime_error("deserialize: bad affine");
  for (std::size_t i = 0; i < nterms; ++i) {
    AffineTerm t;
    expect(is, "term");
    is >> t.row_offset;
    t.left = read_matrix(is);
    t.mask = read_optional(is);
    t.right = read_optional(is);
    a.terms.push_back(std::move(t));
  }
  expect(is, "bias");
  a.bias = read_optional(is);
  return a;
}

}  // namespace serial

inline void write_stack(std::ostream& os, const AttentionStack& s) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", s.post_beta);
  os << "stack " << s.heads.size() << ' ' << s.residual << ' ' << s.post_softmax << ' ' << buf << '\n';
  serial::write_affine(os, s.pre);
  for (const auto& h : s.heads) {
    std::snprintf(buf, sizeof buf, "%.17g", h.beta);
    os << "head " << buf << ' ' << h.in_offset << '\n';
    serial::write_matrix(os, h.w_q);
    serial::write_matrix(os, h.w_k);
    serial::write_matrix(os, h.w_v);
    serial::write_optional(os, h.w_o);
  }
  serial::write_affine(os, s.post);
}

inline AttentionStack read_stack(std::istream& is) {
  serial::expect(is, "stack");
  AttentionStack s;
  std::size_t nheads = 0;
  if (!(is >> nheads >> s.residual >> s.post_softmax >> s.post_beta))
    throw std::runtime_error("deserialize: bad stack header");
  s.pre = serial::read_affine(is);
  for (std::size_t i = 0; i < nheads; ++i) {
    AttentionHead h;
    serial::expect(is, "head");
    is >> h.beta >> h.in_offset;
    h.w_q = serial::read_matrix(is);
    h.w_k = serial::read_matrix(is);
    h.w_v = serial::read_matrix(is);
    h.w_o = serial::read_optional(is);
    s.heads.push_back(std::move(h));
  }
  s.post = serial::read_affine(is);
  return s;
}

inline void write_network(std::ostream& os, const Network& n) {
  os << "network " << n.layers.size() << '\n';
  for (const auto& l : n.layers) write_stack(os, l);
}

inline Network read_network(std::istream& is) {
  serial::expect(is, "network");
  std::size_t count = 0;
  is >> count;
  Network n;
  for (std::size_t i = 0; i < count; ++i) n.layers.push_back(read_stack(is));
  return n;
}

inline std::string to_text(const Network& n) {
  std::ostringstream os;
  write_network(os, n);
  return os.str();
}

}  // namespace attnapprox

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace attnapprox {

class Matrix {
 public:
  Matrix() = default;

  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {
    if (rows == 0 || cols == 0) throw std::invalid_argument("Matrix: zero dimension");
  }

  Matrix(std::initializer_list<std::initializer_list<double>> init) {
    rows_ = init.size();
    if (rows_ == 0) throw std::invalid_argument("Matrix: empty initializer");
    cols_ = init.begin()->size();
    if (cols_ == 0) throw std::invalid_argument("Matrix: empty row");
    data_.reserve(rows_ * cols_);
    for (const auto& r : init) {
      if (r.size() != cols_) throw std::invalid_argument("Matrix: ragged initializer");
      data_.insert(data_.end(), r.begin(), r.end());
    }
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static Matrix column(const std::vector<double>& v) {
    Matrix m(v.size(), 1);
    std::copy(v.begin(), v.end(), m.data_.begin());
    return m;
  }

  static Matrix row(const std::vector<double>& v) {
    Matrix m(1, v.size());
    std::copy(v.begin(), v.end(), m.data_.begin());
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t i, std::size_t j) { return data_[i * cols_ + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data_[i * cols_ + j]; }

  double& at(std::size_t i, std::size_t j) {
    if (i >= rows_ || j >= cols_) throw std::out_of_range("Matrix::at");
    return (*this)(i, j);
  }
  double at(std::size_t i, std::size_t j) const {
    if (i >= rows_ || j >= cols_) throw std::out_of_range("Matrix::at");
    return (*this)(i, j);
  }

  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  std::vector<double> col(std::size_t j) const {
    std::vector<double> out(rows_);
    for (std::size_t i = 0; i < rows_; ++i) out[i] = (*this)(i, j);
    return out;
  }

  Matrix transpose() const {
    Matrix t(cols_, rows_);
    for (std::size_t i = 0; i < rows_; ++i)
      for (std::size_t j = 0; j < cols_; ++j) t(j, i) = (*this)(i, j);
    return t;
  }

  // Copies `src` into this matrix with its top-left corner at (r0, c0).
  void set_block(std::size_t r0, std::size_t c0, const Matrix& src) {
    if (r0 + src.rows_ > rows_ || c0 + src.cols_ > cols_)
      throw std::invalid_argument("set_block: block out of range");
    for (std::size_t i = 0; i < src.rows_; ++i)
      for (std::size_t j = 0; j < src.cols_; ++j) (*this)(r0 + i, c0 + j) = src(i, j);
  }

  Matrix block(std::size_t r0, std::size_t c0, std::size_t nr, std::size_t nc) const {
    if (r0 + nr > rows_ || c0 + nc > cols_) throw std::invalid_argument("block: out of range");
    Matrix out(nr, nc);
    for (std::size_t i = 0; i < nr; ++i)
      for (std::size_t j = 0; j < nc; ++j) out(i, j) = (*this)(r0 + i, c0 + j);
    return out;
  }

  Matrix& operator+=(const Matrix& o) {
    check_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }
  Matrix& operator-=(const Matrix& o) {
    check_same(o, "-=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }
  Matrix& operator*=(double s) {
    for (double& v : data_) v *= s;
    return *this;
  }

  friend Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
  friend Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
  friend Matrix operator*(Matrix a, double s) { return a *= s; }
  friend Matrix operator*(double s, Matrix a) { return a *= s; }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }

 private:
  void check_same(const Matrix& o, const char* what) const {
    if (rows_ != o.rows_ || cols_ != o.cols_)
      throw std::invalid_argument(std::string("Matrix ") + what + ": shape mismatch");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// Fixed i-k-j loop order, so results are bit-reproducible.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw std::invalid_argument("matmul: " + std::to_string(a.rows()) + "x" +
                                std::to_string(a.cols()) + " times " + std::to_string(b.rows()) +
                                "x" + std::to_string(b.cols()));
  Matrix c(a.rows(), b.cols());
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &c(i, 0);
    for (std::size_t l = 0; l < k; ++l) {
      const double av = a(i, l);
      if (av == 0.0) continue;
      const double* brow = b.data().data() + l * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
  return c;
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw std::invalid_argument("hadamard: shape mismatch");
  Matrix c = a;
  for (std::size_t i = 0; i < c.data().size(); ++i) c.data()[i] *= b.data()[i];
  return c;
}

inline Matrix vstack(const std::vector<Matrix>& parts) {
  if (parts.empty()) throw std::invalid_argument("vstack: nothing to stack");
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != parts.front().cols()) throw std::invalid_argument("vstack: column mismatch");
    rows += p.rows();
  }
  Matrix out(rows, parts.front().cols());
  std::size_t r = 0;
  for (const auto& p : parts) {
    out.set_block(r, 0, p);
    r += p.rows();
  }
  return out;
}

inline Matrix hstack(const std::vector<Matrix>& parts) {
  if (parts.empty()) throw std::invalid_argument("hstack: nothing to stack");
  std::size_t cols = 0;
  for (const auto& p : parts) {
    if (p.rows() != parts.front().rows()) throw std::invalid_argument("hstack: row mismatch");
    cols += p.cols();
  }
  Matrix out(parts.front().rows(), cols);
  std::size_t c = 0;
  for (const auto& p : parts) {
    out.set_block(0, c, p);
    c += p.cols();
  }
  return out;
}

// Column-wise tempered softmax. The column max is subtracted before exp.
inline Matrix softmax_beta(const Matrix& scores, double beta) {
  if (!(beta > 0.0)) throw std::invalid_argument("softmax_beta: beta must be positive");
  Matrix out(scores.rows(), scores.cols());
  std::vector<double> e(scores.rows());
  for (std::size_t j = 0; j < scores.cols(); ++j) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < scores.rows(); ++i) mx = std::max(mx, scores(i, j));
    double sum = 0.0;
    for (std::size_t i = 0; i < scores.rows(); ++i) {
      e[i] = std::exp(beta * (scores(i, j) - mx));
      sum += e[i];
    }
    for (std::size_t i = 0; i < scores.rows(); ++i) out(i, j) = e[i] / sum;
  }
  return out;
}

inline std::vector<double> softmax_beta(const std::vector<double>& scores, double beta) {
  Matrix m = softmax_beta(Matrix::column(scores), beta);
  return m.col(0);
}

struct NormKind {
  enum class Tag { inf_entrywise, pq, lp_function };
  Tag tag = Tag::inf_entrywise;
  double p = 1.0;
  double q = 1.0;

  static NormKind inf() { return {}; }
  static NormKind pq_norm(double p, double q) {
    if (!(p >= 1.0) || !(q >= 1.0)) throw std::invalid_argument("NormKind: p, q must be >= 1");
    return {Tag::pq, p, q};
  }
  static NormKind lp_function(double p) {
    if (!(p >= 1.0)) throw std::invalid_argument("NormKind: p must be >= 1");
    return {Tag::lp_function, p, 1.0};
  }
};

// inf_entrywise: max |Z_ij|.  pq: (sum_j (sum_i |Z_ij|^p)^(q/p))^(1/q).
// lp_function on a matrix treats it as a sample vector: (sum |Z_ij|^p)^(1/p).
inline double norm(const Matrix& m, const NormKind& kind) {
  switch (kind.tag) {
    case NormKind::Tag::inf_entrywise: {
      double mx = 0.0;
      for (double v : m.data()) mx = std::max(mx, std::abs(v));
      return mx;
    }
    case NormKind::Tag::pq: {
      double total = 0.0;
      for (std::size_t j = 0; j < m.cols(); ++j) {
        double s = 0.0;
        for (std::size_t i = 0; i < m.rows(); ++i) s += std::pow(std::abs(m(i, j)), kind.p);
        total += std::pow(s, kind.q / kind.p);
      }
      return std::pow(total, 1.0 / kind.q);
    }
    case NormKind::Tag::lp_function: {
      double s = 0.0;
      for (double v : m.data()) s += std::pow(std::abs(v), kind.p);
      return std::pow(s, 1.0 / kind.p);
    }
  }
  return 0.0;
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  return norm(a - b, NormKind::inf());
}

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

// Counter-based generator: draw i of stream `seed` is a pure function of (seed, i).
class CounterRng {
 public:
  explicit CounterRng(std::uint64_t seed, std::uint64_t stream = 0)
      : key_(splitmix64(seed ^ splitmix64(stream + 0x632BE59BD9B4E019ULL))) {}

  std::uint64_t next_u64() { return splitmix64(key_ + 0x9E3779B97F4A7C15ULL * (counter_++)); }

  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  std::size_t index(std::size_t n) { return static_cast<std::size_t>(next_u64() % n); }

  double normal() {
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(6.283185307179586 * u2);
  }

  std::uint64_t counter() const { return counter_; }

 private:
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

inline Matrix random_uniform(std::size_t rows, std::size_t cols, double lo, double hi,
                             CounterRng& rng) {
  Matrix m(rows, cols);
  for (double& v : m.data()) v = rng.uniform(lo, hi);
  return m;
}

struct Box {
  std::size_t rows = 1;
  std::size_t cols = 1;
  double lo = -1.0;
  double hi = 1.0;

  double volume() const { return std::pow(hi - lo, static_cast<double>(rows * cols)); }
};

using MatrixFn = std::function<Matrix(const Matrix&)>;

// (volume * mean_s ||f(X_s) - g(X_s)||_p^p)^(1/p), X_s uniform on the box.
// Sample s uses its own counter stream, so the estimate does not depend on evaluation order.
inline double mc_lp_error(const MatrixFn& f, const MatrixFn& g, const Box& domain, double p,
                          std::size_t samples, std::uint64_t seed) {
  if (samples == 0) throw std::invalid_argument("mc_lp_error: samples must be >= 1");
  if (!(p >= 1.0)) throw std::invalid_argument("mc_lp_error: p must be >= 1");
  if (!(domain.hi > domain.lo)) throw std::invalid_argument("mc_lp_error: empty box");
  double acc = 0.0;
  for (std::size_t s = 0; s < samples; ++s) {
    CounterRng rng(seed, s);
    const Matrix x = random_uniform(domain.rows, domain.cols, domain.lo, domain.hi, rng);
    const Matrix diff = f(x) - g(x);
    double v = 0.0;
    for (double e : diff.data()) v += std::pow(std::abs(e), p);
    acc += v;
  }
  return std::pow(domain.volume() * acc / static_cast<double>(samples), 1.0 / p);
}

inline double median(std::vector<double> v) {
  if (v.empty()) throw std::invalid_argument("median: empty input");
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace attnapprox

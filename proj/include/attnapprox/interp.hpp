#pragma once

#include <cmath>
#include <cstddef>
#include <map>
#include <stdexcept>
#include <vector>

#include "attnapprox/numkit.hpp"

namespace attnapprox {

inline double range_clip(double x, double a, double b) {
  if (!(a < b)) throw std::invalid_argument("range_clip: need a < b");
  if (x <= a) return a;
  if (x >= b) return b;
  return x;
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }

struct TruncatedLinearModel {
  std::vector<double> w;
  double t = 0.0;
  double a = 0.0;
  double b = 1.0;

  double pre_activation(const std::vector<double>& x) const {
    if (x.size() != w.size()) throw std::invalid_argument("TruncatedLinearModel: dimension mismatch");
    double s = t;
    for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * x[i];
    return s;
  }
  double operator()(const std::vector<double>& x) const { return range_clip(pre_activation(x), a, b); }
};

struct InterpolationGrid {
  double a = 0.0;
  double b = 1.0;
  std::size_t p = 1;
  double deltaL = 1.0;
  std::vector<double> anchors;

  // Anchor value for any integer index, including the slots just outside 0..p-1
  // that the multi-head sentinels use.
  double anchor_at(long k) const { return a + static_cast<double>(k) * (b - a) / static_cast<double>(p); }
};

inline InterpolationGrid make_grid(double a, double b, std::size_t p) {
  if (!(a < b)) throw std::invalid_argument("make_grid: need a < b");
  if (p == 0) throw std::invalid_argument("make_grid: p must be positive");
  InterpolationGrid g;
  g.a = a;
  g.b = b;
  g.p = p;
  g.deltaL = (b - a) / static_cast<double>(p);
  g.anchors.resize(p);
  for (std::size_t k = 0; k < p; ++k) g.anchors[k] = g.anchor_at(static_cast<long>(k));
  return g;
}

// Index of the closest anchor; exact ties go to the smaller index.
inline std::size_t nearest_anchor(const InterpolationGrid& grid, double value) {
  const double pos = (value - grid.a) / grid.deltaL;
  if (!(pos > 0.0)) return 0;
  if (pos >= static_cast<double>(grid.p - 1)) return grid.p - 1;
  std::size_t k = static_cast<std::size_t>(std::floor(pos));
  // floor() can be off by one after rounding; settle by comparing distances directly.
  std::size_t best = k > 0 ? k - 1 : 0;
  const std::size_t hi = std::min(grid.p - 1, k + 2);
  for (std::size_t j = best + 1; j <= hi; ++j)
    if (std::abs(value - grid.anchors[j]) < std::abs(value - grid.anchors[best])) best = j;
  return best;
}

// argmin over k of (-2 value + L_0 + L_k) * k, ties to the smaller k.
inline std::size_t score_form_argmin(const InterpolationGrid& grid, double value) {
  std::size_t best = 0;
  double best_score = 0.0;
  for (std::size_t k = 1; k < grid.p; ++k) {
    const double s = (-2.0 * value + grid.anchors[0] + grid.anchors[k]) * static_cast<double>(k);
    if (s < best_score) {
      best_score = s;
      best = k;
    }
  }
  return best;
}

// True when the score-form argmin names the nearest anchor, or an anchor tied with it
// up to rounding.
inline bool score_form_equivalence_check(const InterpolationGrid& grid, double value) {
  const std::size_t k1 = nearest_anchor(grid, value);
  const std::size_t k2 = score_form_argmin(grid, value);
  if (k1 == k2) return true;
  const double d1 = std::abs(value - grid.anchors[k1]);
  const double d2 = std::abs(value - grid.anchors[k2]);
  const double scale = std::max({1.0, std::abs(value), std::abs(grid.a), std::abs(grid.b)});
  return std::abs(d1 - d2) <= 1e-9 * scale;
}

// Maps anchor index k to an output row. Rows are 0-based here.
struct IndexMapG {
  enum class Mode { constant, table };
  Mode mode = Mode::constant;
  std::size_t row = 0;
  std::vector<std::size_t> rows;
  std::size_t d_out = 1;

  static IndexMapG constant(std::size_t r, std::size_t d_out) {
    if (r >= d_out) throw std::invalid_argument("IndexMapG: row out of range");
    IndexMapG g;
    g.row = r;
    g.d_out = d_out;
    return g;
  }
  static IndexMapG table(std::vector<std::size_t> rows, std::size_t d_out) {
    for (std::size_t r : rows)
      if (r >= d_out) throw std::invalid_argument("IndexMapG: row out of range");
    IndexMapG g;
    g.mode = Mode::table;
    g.rows = std::move(rows);
    g.d_out = d_out;
    return g;
  }

  bool is_constant() const { return mode == Mode::constant; }

  std::size_t operator()(std::size_t k) const {
    if (mode == Mode::constant) return row;
    if (k >= rows.size()) throw std::out_of_range("IndexMapG: anchor index outside table");
    return rows[k];
  }
};

}  // namespace attnapprox

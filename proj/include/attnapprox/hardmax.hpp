#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

#include "attnapprox/numkit.hpp"

namespace attnapprox {

// Smallest temperature putting softmax within eps of e_1 when the top score leads by `gap`.
inline double beta_for_unique_max(std::size_t n, double gap, double epsilon) {
  if (n < 2) throw std::invalid_argument("beta_for_unique_max: n must be >= 2");
  if (!(gap > 0.0)) throw std::invalid_argument("beta_for_unique_max: gap <= 0, use the two-max case");
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw std::invalid_argument("beta_for_unique_max: eps in (0,1)");
  return (std::log(static_cast<double>(n - 1)) - std::log(epsilon)) / gap;
}

// Temperature for the two-leader case; gamma separates the leaders from the third entry.
inline double beta_for_two_max(std::size_t n, double gamma, double epsilon) {
  if (n < 3) throw std::invalid_argument("beta_for_two_max: n must be >= 3");
  if (!(gamma > 0.0)) throw std::invalid_argument("beta_for_two_max: gamma must be positive");
  if (!(epsilon > 0.0)) throw std::invalid_argument("beta_for_two_max: eps must be positive");
  return (std::log(static_cast<double>(n - 2)) - std::log(epsilon)) / gamma;
}

struct BetaBudget {
  enum class Case { unique_max, two_max };
  Case which = Case::unique_max;
  double epsilon = 0.0;
  std::size_t n = 2;
  double gap = 0.0;
  double beta_min = 0.0;
};

inline BetaBudget make_budget(BetaBudget::Case which, std::size_t n, double gap, double epsilon) {
  BetaBudget b{which, epsilon, n, gap, 0.0};
  b.beta_min = which == BetaBudget::Case::unique_max ? beta_for_unique_max(n, gap, epsilon)
                                                     : beta_for_two_max(n, gap, epsilon);
  return b;
}

enum class HardmaxMode { automatic, unique_max, two_max };

struct TopTwo {
  std::size_t first = 0;
  std::size_t second = 0;
  double delta = 0.0;  // x_first - x_second
  double gamma = 0.0;  // x_first - x_third (infinite when fewer than 3 entries)
};

inline TopTwo top_two(const std::vector<double>& x) {
  if (x.size() < 2) throw std::invalid_argument("top_two: need at least two entries");
  std::vector<std::size_t> idx(x.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return x[a] > x[b]; });
  TopTwo t;
  t.first = idx[0];
  t.second = idx[1];
  t.delta = x[idx[0]] - x[idx[1]];
  t.gamma = x.size() > 2 ? x[idx[0]] - x[idx[2]] : std::numeric_limits<double>::infinity();
  return t;
}

// Blend weights 1/(1+e^{-beta delta}) and e^{-beta delta}/(1+e^{-beta delta}).
inline std::pair<double, double> blend_weights(double beta, double delta) {
  const double z = beta * delta;
  if (z > 700.0) return {1.0, 0.0};
  const double e = std::exp(-z);
  return {1.0 / (1.0 + e), e / (1.0 + e)};
}

// Unique max: ||softmax - e_1||_inf.  Two max: distance to the two-leader blend.
// automatic picks two_max only for exact ties.
inline double hardmax_deviation(const std::vector<double>& scores, double beta,
                                HardmaxMode mode = HardmaxMode::automatic) {
  if (scores.size() == 1) return 0.0;
  const std::vector<double> s = softmax_beta(scores, beta);
  const TopTwo t = top_two(scores);
  if (mode == HardmaxMode::automatic)
    mode = t.delta > 0.0 ? HardmaxMode::unique_max : HardmaxMode::two_max;
  std::vector<double> target(scores.size(), 0.0);
  if (mode == HardmaxMode::unique_max) {
    target[t.first] = 1.0;
  } else {
    const auto [w1, w2] = blend_weights(beta, t.delta);
    target[t.first] = w1;
    target[t.second] = w2;
  }
  double dev = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) dev = std::max(dev, std::abs(s[i] - target[i]));
  return dev;
}

}  // namespace attnapprox

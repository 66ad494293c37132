#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "socl/errors.hpp"

// Value-level kernels shared by the tape ops and by callers that only need
// numbers (evaluation, queue scoring).

namespace socl::ten {

// Probabilities are floored here before every log.
inline constexpr double kProbFloor = 1e-12;
// Vectors with norm at or below this cannot be normalized.
inline constexpr double kNormEps = 1e-12;

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw ShapeError("dot: length " + std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

// In-place row softmax with max subtraction.
inline void softmax_inplace(std::span<double> x) {
  if (x.empty()) return;
  const double mx = *std::max_element(x.begin(), x.end());
  double z = 0.0;
  for (double& v : x) {
    v = std::exp(v - mx);
    z += v;
  }
  for (double& v : x) v /= z;
}

inline std::vector<double> softmax(std::span<const double> x) {
  std::vector<double> out(x.begin(), x.end());
  softmax_inplace(out);
  return out;
}

inline std::vector<double> l2_normalize(std::span<const double> v) {
  const double n = norm2(v);
  if (!(n > kNormEps)) throw DegenerateInputError("l2_normalize: vector norm " + std::to_string(n));
  std::vector<double> out(v.begin(), v.end());
  for (double& x : out) x /= n;
  return out;
}

// H(y, p) = -sum y_i log max(p_i, floor)
inline double cross_entropy(std::span<const double> y, std::span<const double> p) {
  if (y.size() != p.size()) {
    throw ShapeError("cross_entropy: length " + std::to_string(y.size()) + " vs " +
                     std::to_string(p.size()));
  }
  double h = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) {
    if (y[i] != 0.0) h -= y[i] * std::log(std::max(p[i], kProbFloor));
  }
  return h;
}

// KL(q || p) = sum q_i log(q_i / p_i), both floored.
inline double kl_divergence(std::span<const double> q, std::span<const double> p) {
  if (q.size() != p.size()) {
    throw ShapeError("kl_divergence: length " + std::to_string(q.size()) + " vs " +
                     std::to_string(p.size()));
  }
  double kl = 0.0;
  for (std::size_t i = 0; i < q.size(); ++i) {
    if (q[i] <= 0.0) continue;
    kl += q[i] * (std::log(std::max(q[i], kProbFloor)) - std::log(std::max(p[i], kProbFloor)));
  }
  return kl;
}

}  // namespace socl::ten

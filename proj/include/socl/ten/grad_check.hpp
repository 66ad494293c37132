#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "socl/errors.hpp"
#include "socl/ten/tape.hpp"

namespace socl::ten {

// Builds a scalar on the given tape from the variable under test.
using ScalarFn = std::function<Var(Tape&, Var)>;

namespace detail {

inline double relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / (std::abs(numeric) + 1e-8);
}

inline void check_step(double h) {
  if (!(h >= 1e-5 && h <= 1e-3)) throw ParameterError("grad_check: step " + std::to_string(h) + " outside [1e-5, 1e-3]");
}

}  // namespace detail

// Max over coordinates of |analytic - central difference| / (|central| + 1e-8).
inline double grad_check(const ScalarFn& f, const Mat& x, double h = 1e-5) {
  detail::check_step(h);
  Mat analytic;
  {
    Tape tape;
    Var xv = tape.leaf(x);
    Var y = f(tape, xv);
    if (!std::isfinite(y.item())) throw NumericError("grad_check: f(x) is not finite");
    tape.backward(y);
    analytic = tape.grad(xv);
  }
  auto eval = [&](const Mat& at) {
    Tape tape(false);
    return f(tape, tape.constant(at)).item();
  };
  double worst = 0.0;
  Mat probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double fp = eval(probe);
    probe[i] = orig - h;
    const double fm = eval(probe);
    probe[i] = orig;
    worst = std::max(worst, detail::relative_error(analytic[i], (fp - fm) / (2.0 * h)));
  }
  return worst;
}

// Same measure for a bound parameter: `f` builds the scalar on a fresh tape
// that reads `p` through Tape::param.
inline double grad_check(const std::function<Var(Tape&)>& f, Param& p, double h = 1e-5) {
  detail::check_step(h);
  const bool was_frozen = p.frozen;
  p.frozen = false;
  p.zero_grad();
  {
    Tape tape;
    Var y = f(tape);
    if (!std::isfinite(y.item())) throw NumericError("grad_check: f(x) is not finite");
    tape.backward(y);
  }
  const Mat analytic = p.grad;
  auto eval = [&]() {
    Tape tape(false);
    return f(tape).item();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double orig = p.value[i];
    p.value[i] = orig + h;
    const double fp = eval();
    p.value[i] = orig - h;
    const double fm = eval();
    p.value[i] = orig;
    worst = std::max(worst, detail::relative_error(analytic[i], (fp - fm) / (2.0 * h)));
  }
  p.zero_grad();
  p.frozen = was_frozen;
  return worst;
}

}  // namespace socl::ten

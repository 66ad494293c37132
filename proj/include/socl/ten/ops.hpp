#pragma once

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "socl/ten/functional.hpp"
#include "socl/ten/mat.hpp"
#include "socl/ten/tape.hpp"

// Differentiable ops. Every op computes its forward value eagerly and records
// a closure that accumulates input gradients from the output gradient.

namespace socl::ten {

namespace detail {

inline void require_same(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": " + a.shape().str() + " vs " + b.shape().str());
  }
}

inline void add_into(Mat& dst, const Mat& src, double s = 1.0) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += s * src[i];
}

}  // namespace detail

// ---------------------------------------------------------------- products

inline Var matmul(Var a, Var b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: " + a.shape().str() + " x " + b.shape().str());
  }
  Tape& t = *a.tape;
  Mat out(a.rows(), b.cols());
  detail::gemm(a.value(), false, b.value(), false, out, false);
  return t.record(std::move(out), {a.id, b.id}, [a, b](Tape& t, const Mat& g, const Mat&) {
    if (t.requires_grad(a.id)) detail::gemm(g, false, t.value(b.id), true, t.grad_buffer(a.id), true);
    if (t.requires_grad(b.id)) detail::gemm(t.value(a.id), true, g, false, t.grad_buffer(b.id), true);
  });
}

// a * b^T
inline Var matmul_nt(Var a, Var b) {
  if (a.cols() != b.cols()) {
    throw ShapeError("matmul_nt: " + a.shape().str() + " x " + b.shape().str() + "^T");
  }
  Tape& t = *a.tape;
  Mat out(a.rows(), b.rows());
  detail::gemm(a.value(), false, b.value(), true, out, false);
  return t.record(std::move(out), {a.id, b.id}, [a, b](Tape& t, const Mat& g, const Mat&) {
    if (t.requires_grad(a.id)) detail::gemm(g, false, t.value(b.id), false, t.grad_buffer(a.id), true);
    if (t.requires_grad(b.id)) detail::gemm(g, true, t.value(a.id), false, t.grad_buffer(b.id), true);
  });
}

inline Var transpose(Var a) {
  Tape& t = *a.tape;
  return t.record(transpose(a.value()), {a.id}, [a](Tape& t, const Mat& g, const Mat&) {
    Mat& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(j, i) += g(i, j);
  });
}

// ------------------------------------------------------------ elementwise

inline Var add(Var a, Var b) {
  detail::require_same(a, b, "add");
  Mat out = a.value();
  out += b.value();
  return a.tape->record(std::move(out), {a.id, b.id}, [a, b](Tape& t, const Mat& g, const Mat&) {
    if (t.requires_grad(a.id)) t.grad_buffer(a.id) += g;
    if (t.requires_grad(b.id)) t.grad_buffer(b.id) += g;
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same(a, b, "sub");
  Mat out = a.value();
  detail::add_into(out, b.value(), -1.0);
  return a.tape->record(std::move(out), {a.id, b.id}, [a, b](Tape& t, const Mat& g, const Mat&) {
    if (t.requires_grad(a.id)) t.grad_buffer(a.id) += g;
    if (t.requires_grad(b.id)) detail::add_into(t.grad_buffer(b.id), g, -1.0);
  });
}

inline Var hadamard(Var a, Var b) {
  detail::require_same(a, b, "hadamard");
  Mat out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.value()[i];
  return a.tape->record(std::move(out), {a.id, b.id}, [a, b](Tape& t, const Mat& g, const Mat&) {
    if (t.requires_grad(a.id)) {
      Mat& ga = t.grad_buffer(a.id);
      const Mat& bv = t.value(b.id);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * bv[i];
    }
    if (t.requires_grad(b.id)) {
      Mat& gb = t.grad_buffer(b.id);
      const Mat& av = t.value(a.id);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * av[i];
    }
  });
}

inline Var scale(Var a, double s) {
  Mat out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= s;
  return a.tape->record(std::move(out), {a.id}, [a, s](Tape& t, const Mat& g, const Mat&) {
    detail::add_into(t.grad_buffer(a.id), g, s);
  });
}

// a + c for a constant matrix c (masks, offsets).
inline Var add_const(Var a, const Mat& c) {
  if (a.shape() != c.shape()) throw ShapeError("add_const: " + a.shape().str() + " vs " + c.shape().str());
  Mat out = a.value();
  out += c;
  return a.tape->record(std::move(out), {a.id}, [a](Tape& t, const Mat& g, const Mat&) { t.grad_buffer(a.id) += g; });
}

// a (m x n) + row (1 x n) broadcast over rows.
inline Var add_row(Var a, Var row) {
  if (row.rows() != 1 || row.cols() != a.cols()) {
    throw ShapeError("add_row: " + a.shape().str() + " + " + row.shape().str());
  }
  Mat out = a.value();
  const Mat& r = row.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < out.cols(); ++j) out(i, j) += r[j];
  return a.tape->record(std::move(out), {a.id, row.id}, [a, row](Tape& t, const Mat& g, const Mat&) {
    if (t.requires_grad(a.id)) t.grad_buffer(a.id) += g;
    if (t.requires_grad(row.id)) {
      Mat& gr = t.grad_buffer(row.id);
      for (std::size_t i = 0; i < g.rows(); ++i)
        for (std::size_t j = 0; j < g.cols(); ++j) gr[j] += g(i, j);
    }
  });
}

// a * s where s is a 1x1 variable.
inline Var mul_scalar(Var a, Var s) {
  if (s.shape() != Shape{1, 1}) throw ShapeError("mul_scalar: scalar is " + s.shape().str());
  const double sv = s.item();
  Mat out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= sv;
  return a.tape->record(std::move(out), {a.id, s.id}, [a, s](Tape& t, const Mat& g, const Mat&) {
    const double sv = t.value(s.id)[0];
    if (t.requires_grad(a.id)) detail::add_into(t.grad_buffer(a.id), g, sv);
    if (t.requires_grad(s.id)) {
      const Mat& av = t.value(a.id);
      double acc = 0.0;
      for (std::size_t i = 0; i < g.size(); ++i) acc += g[i] * av[i];
      t.grad_buffer(s.id)[0] += acc;
    }
  });
}

inline Var exp(Var a) {
  Mat out = a.value();
  for (double& v : out.values()) v = std::exp(v);
  return a.tape->record(std::move(out), {a.id}, [a](Tape& t, const Mat& g, const Mat& y) {
    Mat& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i];
  });
}

inline Var relu(Var a) {
  Mat out = a.value();
  for (double& v : out.values()) v = v > 0.0 ? v : 0.0;
  return a.tape->record(std::move(out), {a.id}, [a](Tape& t, const Mat& g, const Mat&) {
    Mat& ga = t.grad_buffer(a.id);
    const Mat& x = t.value(a.id);
    for (std::size_t i = 0; i < g.size(); ++i)
      if (x[i] > 0.0) ga[i] += g[i];
  });
}

// tanh approximation of GELU.
inline Var gelu(Var a) {
  constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
  Mat out = a.value();
  for (double& v : out.values()) v = 0.5 * v * (1.0 + std::tanh(c * (v + 0.044715 * v * v * v)));
  return a.tape->record(std::move(out), {a.id}, [a](Tape& t, const Mat& g, const Mat&) {
    Mat& ga = t.grad_buffer(a.id);
    const Mat& xv = t.value(a.id);
    for (std::size_t i = 0; i < g.size(); ++i) {
      const double x = xv[i];
      const double u = c * (x + 0.044715 * x * x * x);
      const double th = std::tanh(u);
      const double du = c * (1.0 + 3.0 * 0.044715 * x * x);
      ga[i] += g[i] * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * du);
    }
  });
}

// -------------------------------------------------------------- reductions

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().values()) s += v;
  return a.tape->record(Mat(1, 1, s), {a.id}, [a](Tape& t, const Mat& g, const Mat&) {
    Mat& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0];
  });
}

inline Var mean(Var a) {
  if (a.value().empty()) throw ShapeError("mean: empty input");
  return scale(sum(a), 1.0 / static_cast<double>(a.value().size()));
}

// m x n -> m x 1
inline Var row_sums(Var a) {
  const Mat& x = a.value();
  Mat out(x.rows(), 1);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < x.cols(); ++j) out[i] += x(i, j);
  return a.tape->record(std::move(out), {a.id}, [a](Tape& t, const Mat& g, const Mat&) {
    Mat& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < ga.rows(); ++i)
      for (std::size_t j = 0; j < ga.cols(); ++j) ga(i, j) += g[i];
  });
}

// Row-wise inner products: m x n, m x n -> m x 1
inline Var rows_dot(Var a, Var b) { return row_sums(hadamard(a, b)); }

// ------------------------------------------------------------- row-wise maps

inline Var softmax_rows(Var a) {
  Mat out = a.value();
  for (std::size_t i = 0; i < out.rows(); ++i) softmax_inplace(out.row_span(i));
  return a.tape->record(std::move(out), {a.id}, [a](Tape& t, const Mat& g, const Mat& y) {
    Mat& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) s += g(i, j) * y(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += y(i, j) * (g(i, j) - s);
    }
  });
}

inline Var log_softmax_rows(Var a) {
  const Mat& x = a.value();
  Mat out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    auto row = x.row_span(i);
    double mx = row[0];
    for (double v : row) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < x.cols(); ++j) out(i, j) = row[j] - lse;
  }
  return a.tape->record(std::move(out), {a.id}, [a](Tape& t, const Mat& g, const Mat& y) {
    Mat& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < y.cols(); ++j) s += g(i, j);
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += g(i, j) - std::exp(y(i, j)) * s;
    }
  });
}

// Each row scaled to unit Euclidean norm. Throws on a near-zero row.
inline Var l2_normalize_rows(Var a) {
  const Mat& x = a.value();
  Mat out = x;
  std::vector<double> norms(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double n = norm2(x.row_span(i));
    if (!(n > kNormEps)) {
      throw DegenerateInputError("l2_normalize: row " + std::to_string(i) + " has norm " + std::to_string(n));
    }
    norms[i] = n;
    for (double& v : out.row_span(i)) v /= n;
  }
  return a.tape->record(std::move(out), {a.id}, [a, norms = std::move(norms)](Tape& t, const Mat& g, const Mat& y) {
    Mat& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < y.rows(); ++i) {
      const double yg = dot(y.row_span(i), g.row_span(i));
      for (std::size_t j = 0; j < y.cols(); ++j) ga(i, j) += (g(i, j) - y(i, j) * yg) / norms[i];
    }
  });
}

// Row-wise layer normalization with learned gain and bias (both 1 x n).
inline Var layer_norm_rows(Var x, Var gain, Var bias, double eps = 1e-5) {
  const Mat& xv = x.value();
  const std::size_t n = xv.cols();
  if (gain.shape() != Shape{1, n} || bias.shape() != Shape{1, n}) {
    throw ShapeError("layer_norm_rows: " + xv.shape().str() + " with gain " + gain.shape().str());
  }
  Mat xhat(xv.rows(), n);
  std::vector<double> inv_std(xv.rows());
  for (std::size_t i = 0; i < xv.rows(); ++i) {
    double mu = 0.0;
    for (double v : xv.row_span(i)) mu += v;
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (double v : xv.row_span(i)) var += (v - mu) * (v - mu);
    var /= static_cast<double>(n);
    inv_std[i] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < n; ++j) xhat(i, j) = (xv(i, j) - mu) * inv_std[i];
  }
  Mat out = xhat;
  const Mat& gv = gain.value();
  const Mat& bv = bias.value();
  for (std::size_t i = 0; i < out.rows(); ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = out(i, j) * gv[j] + bv[j];
  return x.tape->record(
      std::move(out), {x.id, gain.id, bias.id},
      [x, gain, bias, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& t, const Mat& g, const Mat&) {
        const std::size_t n = xhat.cols();
        const Mat& gv = t.value(gain.id);
        if (t.requires_grad(gain.id) || t.requires_grad(bias.id)) {
          Mat dg(1, n), db(1, n);
          for (std::size_t i = 0; i < g.rows(); ++i)
            for (std::size_t j = 0; j < n; ++j) {
              dg[j] += g(i, j) * xhat(i, j);
              db[j] += g(i, j);
            }
          if (t.requires_grad(gain.id)) t.grad_buffer(gain.id) += dg;
          if (t.requires_grad(bias.id)) t.grad_buffer(bias.id) += db;
        }
        if (t.requires_grad(x.id)) {
          Mat& gx = t.grad_buffer(x.id);
          std::vector<double> dxhat(n);
          for (std::size_t i = 0; i < g.rows(); ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              dxhat[j] = g(i, j) * gv[j];
              m1 += dxhat[j];
              m2 += dxhat[j] * xhat(i, j);
            }
            m1 /= static_cast<double>(n);
            m2 /= static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) gx(i, j) += inv_std[i] * (dxhat[j] - m1 - xhat(i, j) * m2);
          }
        }
      });
}

// ------------------------------------------------------------- restructuring

inline Var slice_rows(Var a, std::size_t start, std::size_t count) {
  const Mat& x = a.value();
  if (start + count > x.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " +
                     x.shape().str());
  }
  Mat out(count, x.cols());
  std::copy(x.data() + start * x.cols(), x.data() + (start + count) * x.cols(), out.data());
  return a.tape->record(std::move(out), {a.id}, [a, start](Tape& t, const Mat& g, const Mat&) {
    Mat& ga = t.grad_buffer(a.id);
    double* dst = ga.data() + start * ga.cols();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

inline Var slice_cols(Var a, std::size_t start, std::size_t count) {
  const Mat& x = a.value();
  if (start + count > x.cols()) {
    throw ShapeError("slice_cols: [" + std::to_string(start) + ", +" + std::to_string(count) + ") of " +
                     x.shape().str());
  }
  Mat out(x.rows(), count);
  for (std::size_t i = 0; i < x.rows(); ++i)
    for (std::size_t j = 0; j < count; ++j) out(i, j) = x(i, start + j);
  return a.tape->record(std::move(out), {a.id}, [a, start](Tape& t, const Mat& g, const Mat&) {
    Mat& ga = t.grad_buffer(a.id);
    for (std::size_t i = 0; i < g.rows(); ++i)
      for (std::size_t j = 0; j < g.cols(); ++j) ga(i, start + j) += g(i, j);
  });
}

inline Var concat_rows(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.cols() != cols) throw ShapeError("concat_rows: width " + p.shape().str() + " vs " + std::to_string(cols));
    rows += p.rows();
    ids.push_back(p.id);
  }
  Mat out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    std::copy(p.value().data(), p.value().data() + p.value().size(), out.data() + off);
    off += p.value().size();
  }
  return parts.front().tape->record(std::move(out), ids, [ids](Tape& t, const Mat& g, const Mat&) {
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t n = t.value(id).size();
      if (t.requires_grad(id)) {
        Mat& gi = t.grad_buffer(id);
        for (std::size_t k = 0; k < n; ++k) gi[k] += g[off + k];
      }
      off += n;
    }
  });
}

inline Var concat_cols(const std::vector<Var>& parts) {
  if (parts.empty()) throw ShapeError("concat_cols: no inputs");
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  std::vector<std::size_t> ids;
  for (const Var& p : parts) {
    if (p.rows() != rows) throw ShapeError("concat_cols: height " + p.shape().str() + " vs " + std::to_string(rows));
    cols += p.cols();
    ids.push_back(p.id);
  }
  Mat out(rows, cols);
  std::size_t off = 0;
  for (const Var& p : parts) {
    const Mat& v = p.value();
    for (std::size_t i = 0; i < rows; ++i)
      for (std::size_t j = 0; j < v.cols(); ++j) out(i, off + j) = v(i, j);
    off += v.cols();
  }
  return parts.front().tape->record(std::move(out), ids, [ids](Tape& t, const Mat& g, const Mat&) {
    std::size_t off = 0;
    for (std::size_t id : ids) {
      const std::size_t w = t.value(id).cols();
      if (t.requires_grad(id)) {
        Mat& gi = t.grad_buffer(id);
        for (std::size_t i = 0; i < gi.rows(); ++i)
          for (std::size_t j = 0; j < w; ++j) gi(i, j) += g(i, off + j);
      }
      off += w;
    }
  });
}

// Embedding lookup: out row r = table row ids[r].
inline Var gather_rows(Var table, std::vector<std::size_t> ids) {
  const Mat& tv = table.value();
  Mat out(ids.size(), tv.cols());
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] >= tv.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(ids[r]) + " outside " + tv.shape().str());
    }
    auto src = tv.row_span(ids[r]);
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  return table.tape->record(std::move(out), {table.id}, [table, ids = std::move(ids)](Tape& t, const Mat& g, const Mat&) {
    Mat& gt = t.grad_buffer(table.id);
    for (std::size_t r = 0; r < ids.size(); ++r) {
      auto dst = gt.row_span(ids[r]);
      auto src = g.row_span(r);
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += src[j];
    }
  });
}

// out[r] = a(r, cols[r]) as an m x 1 column.
inline Var pick(Var a, std::vector<std::size_t> cols) {
  const Mat& x = a.value();
  if (cols.size() != x.rows()) throw ShapeError("pick: " + std::to_string(cols.size()) + " indices for " + x.shape().str());
  Mat out(x.rows(), 1);
  for (std::size_t r = 0; r < cols.size(); ++r) {
    if (cols[r] >= x.cols()) throw ShapeError("pick: column " + std::to_string(cols[r]) + " outside " + x.shape().str());
    out[r] = x(r, cols[r]);
  }
  return a.tape->record(std::move(out), {a.id}, [a, cols = std::move(cols)](Tape& t, const Mat& g, const Mat&) {
    Mat& ga = t.grad_buffer(a.id);
    for (std::size_t r = 0; r < cols.size(); ++r) ga(r, cols[r]) += g[r];
  });
}

// --------------------------------------------------------------- divergences

// Row-wise H(y_r, p_r) against constant targets y. Returns m x 1.
inline Var cross_entropy_rows(const Mat& targets, Var probs) {
  const Mat& p = probs.value();
  if (targets.shape() != p.shape()) {
    throw ShapeError("cross_entropy: targets " + targets.shape().str() + " vs probs " + p.shape().str());
  }
  Mat out(p.rows(), 1);
  for (std::size_t i = 0; i < p.rows(); ++i) out[i] = cross_entropy(targets.row_span(i), p.row_span(i));
  return probs.tape->record(std::move(out), {probs.id}, [probs, targets](Tape& t, const Mat& g, const Mat&) {
    Mat& gp = t.grad_buffer(probs.id);
    const Mat& p = t.value(probs.id);
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t j = 0; j < p.cols(); ++j)
        if (targets(i, j) != 0.0 && p(i, j) > kProbFloor) gp(i, j) -= g[i] * targets(i, j) / p(i, j);
  });
}

// Row-wise KL(q_r || p_r) with q constant (gradient-blocked). Returns m x 1.
inline Var kl_divergence_rows(const Mat& q, Var probs) {
  const Mat& p = probs.value();
  if (q.shape() != p.shape()) {
    throw ShapeError("kl_divergence: q " + q.shape().str() + " vs p " + p.shape().str());
  }
  Mat out(p.rows(), 1);
  for (std::size_t i = 0; i < p.rows(); ++i) out[i] = kl_divergence(q.row_span(i), p.row_span(i));
  return probs.tape->record(std::move(out), {probs.id}, [probs, q](Tape& t, const Mat& g, const Mat&) {
    Mat& gp = t.grad_buffer(probs.id);
    const Mat& p = t.value(probs.id);
    for (std::size_t i = 0; i < p.rows(); ++i)
      for (std::size_t j = 0; j < p.cols(); ++j)
        if (q(i, j) > 0.0 && p(i, j) > kProbFloor) gp(i, j) -= g[i] * q(i, j) / p(i, j);
  });
}

}  // namespace socl::ten

#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "socl/errors.hpp"
#include "socl/ten/checkpoint.hpp"
#include "socl/ten/functional.hpp"
#include "socl/ten/ops.hpp"
#include "socl/ten/rng.hpp"

namespace socl::align {

using ten::Mat;
using ten::Param;
using ten::Tape;
using ten::Var;

inline constexpr double kTauMin = 0.01;
inline constexpr double kTauMax = 1.0;

// g_v, g_t and the learnable temperature (stored as log tau).
struct ProjectionHeads {
  Param gv_weight;  // d_o x d_p
  Param gv_bias;
  Param gt_weight;  // d_t x d_p
  Param gt_bias;
  Param log_tau;    // 1 x 1

  ProjectionHeads() = default;
  ProjectionHeads(std::size_t d_o, std::size_t d_t, std::size_t d_p, double tau_init, std::uint64_t seed) {
    if (!(tau_init >= kTauMin && tau_init <= kTauMax)) {
      throw ParameterError("tau_init " + std::to_string(tau_init) + " outside [0.01, 1]");
    }
    ten::Rng rng(ten::mix_seed(seed, 0x9ead));
    gv_weight = Param("align.gv.weight", rng.normal_mat(d_o, d_p, 1.0 / std::sqrt(static_cast<double>(d_o))));
    gv_bias = Param("align.gv.bias", Mat(1, d_p), false);
    gt_weight = Param("align.gt.weight", rng.normal_mat(d_t, d_p, 1.0 / std::sqrt(static_cast<double>(d_t))));
    gt_bias = Param("align.gt.bias", Mat(1, d_p), false);
    log_tau = Param("align.log_tau", Mat(1, 1, std::log(tau_init)), false);
  }

  std::size_t dim() const { return gv_weight.value.cols(); }
  double tau() const { return std::exp(log_tau.value[0]); }

  void clamp_tau() {
    log_tau.value[0] = std::clamp(log_tau.value[0], std::log(kTauMin), std::log(kTauMax));
  }

  std::vector<Param*> params() { return {&gv_weight, &gv_bias, &gt_weight, &gt_bias, &log_tau}; }
  std::vector<const Param*> params() const { return {&gv_weight, &gv_bias, &gt_weight, &gt_bias, &log_tau}; }

  Var project_visual(Tape& t, Var sv) {
    return ten::l2_normalize_rows(ten::add_row(ten::matmul(sv, t.param(gv_weight)), t.param(gv_bias)));
  }
  Var project_text(Tape& t, Var st) {
    return ten::l2_normalize_rows(ten::add_row(ten::matmul(st, t.param(gt_weight)), t.param(gt_bias)));
  }

  // Value-only projections (no gradient bookkeeping).
  Mat visual(const Mat& sv) const {
    Tape t(false);
    return ten::l2_normalize_rows(ten::add_row(ten::matmul(t.constant(sv), t.param(gv_weight)), t.param(gv_bias))).value();
  }
  Mat text(const Mat& st) const {
    Tape t(false);
    return ten::l2_normalize_rows(ten::add_row(ten::matmul(t.constant(st), t.param(gt_weight)), t.param(gt_bias))).value();
  }

  void save_to(ten::ArrayTable& table) const {
    for (const Param* p : params()) table.put(*p);
  }
  void load_from(const ten::ArrayTable& table) {
    for (Param* p : params()) table.load_into(*p);
  }
};

// ------------------------------------------------------------ value-level ops

// sim(u, w) = u^T w on already projected, normalized tokens.
inline double sim(std::span<const double> u, std::span<const double> w) { return ten::dot(u, w); }

namespace detail {

inline std::vector<double> candidate_softmax(std::span<const double> anchor, std::span<const double> positive,
                                             const Mat& negatives, double tau) {
  if (!(tau > 0.0)) throw ParameterError("temperature must be positive");
  if (negatives.rows() > 0 && negatives.cols() != anchor.size()) {
    throw ShapeError("negatives width " + std::to_string(negatives.cols()) + " vs token " + std::to_string(anchor.size()));
  }
  std::vector<double> logits;
  logits.reserve(1 + negatives.rows());
  logits.push_back(sim(anchor, positive) / tau);
  for (std::size_t m = 0; m < negatives.rows(); ++m) logits.push_back(sim(anchor, negatives.row_span(m)) / tau);
  ten::softmax_inplace(logits);
  return logits;
}

}  // namespace detail

// p^{v2t}: softmax over {positive} + negatives of sim(u, .)/tau. Index 0 is
// the positive.
inline std::vector<double> image_to_text_dist(std::span<const double> visual, std::span<const double> positive,
                                              const Mat& negatives, double tau) {
  return detail::candidate_softmax(visual, positive, negatives, tau);
}

// q^{t2t}: the same candidate set scored with text-text similarity.
inline std::vector<double> soft_targets(std::span<const double> text, const Mat& negatives, double tau) {
  return detail::candidate_softmax(text, text, negatives, tau);
}

struct ContrastPair {
  std::size_t subject = 0;
  std::size_t structure = 0;
  std::vector<double> visual;  // g_v(s^v_i), normalized
  std::vector<double> text;    // g_t(s^t_i), normalized
};

using ContrastBatch = std::vector<ContrastPair>;

inline void require_batch(const ContrastBatch& b) {
  if (b.empty()) throw ParameterError("contrastive loss: empty batch");
}

inline double loss_so_itc(const ContrastBatch& batch, const Mat& negatives, double tau) {
  require_batch(batch);
  double total = 0.0;
  for (const auto& pr : batch) {
    const auto p = image_to_text_dist(pr.visual, pr.text, negatives, tau);
    std::vector<double> y(p.size(), 0.0);
    y[0] = 1.0;
    total += ten::cross_entropy(y, p);
  }
  return total / static_cast<double>(batch.size());
}

inline double loss_so_kl(const ContrastBatch& batch, const Mat& negatives, double tau) {
  require_batch(batch);
  double total = 0.0;
  for (const auto& pr : batch) {
    const auto p = image_to_text_dist(pr.visual, pr.text, negatives, tau);
    const auto q = soft_targets(pr.text, negatives, tau);
    total += ten::kl_divergence(q, p);
  }
  return total / static_cast<double>(batch.size());
}

inline void require_alpha(double alpha) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ParameterError("alpha " + std::to_string(alpha) + " outside [0, 1]");
}

inline double loss_so_pre(const ContrastBatch& batch, const Mat& negatives, double tau, double alpha) {
  require_alpha(alpha);
  return (1.0 - alpha) * loss_so_itc(batch, negatives, tau) + alpha * loss_so_kl(batch, negatives, tau);
}

// ------------------------------------------------------------- tape objective

// Which terms are active. With both on the objective is
// (1 - alpha) L_itc + alpha L_kl; with one on it is that term alone.
struct ObjectiveWeights {
  double alpha = 0.2;
  bool itc = true;
  bool kl = true;
};

struct ObjectiveTerms {
  Var itc;
  Var kl;
  Var total;
  Mat targets;  // q^{t2t} rows, for inspection
};

// visual, text: P x d_p projected normalized tokens of the batch pairs (row r
// of both from the same subject and structure). negatives: queue snapshot.
// fixed_targets, when given, replaces q^{t2t}; gradient checks use it to hold
// the blocked targets still while text or tau is perturbed.
inline ObjectiveTerms so_pre_objective(Tape& t, Var visual, Var text, const Mat& negatives, Var log_tau,
                                       const ObjectiveWeights& w, const Mat* fixed_targets = nullptr) {
  require_alpha(w.alpha);
  if (visual.shape() != text.shape()) throw ShapeError("objective: visual " + visual.shape().str() + " vs text " + text.shape().str());
  if (visual.rows() == 0) throw ParameterError("contrastive loss: empty batch");
  const std::size_t P = visual.rows();
  const std::size_t d = visual.cols();
  if (negatives.rows() > 0 && negatives.cols() != d) throw ShapeError("objective: negatives " + negatives.shape().str());
  Mat neg = negatives.rows() > 0 ? negatives : Mat(0, d);
  Var negv = t.constant(neg);

  Var inv_tau = ten::exp(ten::scale(log_tau, -1.0));
  Var logits = ten::concat_cols({ten::rows_dot(visual, text), ten::matmul_nt(visual, negv)});
  Var p = ten::softmax_rows(ten::mul_scalar(logits, inv_tau));

  // Targets are constants: computed from values, never recorded.
  const double tau = std::exp(log_tau.item());
  const Mat& tv = text.value();
  Mat q(P, 1 + neg.rows());
  if (fixed_targets) {
    if (fixed_targets->shape() != q.shape()) throw ShapeError("objective: fixed targets " + fixed_targets->shape().str());
    q = *fixed_targets;
  } else {
    for (std::size_t r = 0; r < P; ++r) {
      const auto row = soft_targets(tv.row_span(r), neg, tau);
      std::copy(row.begin(), row.end(), q.row_span(r).begin());
    }
  }
  Mat y(P, 1 + neg.rows());
  for (std::size_t r = 0; r < P; ++r) y(r, 0) = 1.0;

  ObjectiveTerms out;
  out.itc = ten::mean(ten::cross_entropy_rows(y, p));
  out.kl = ten::mean(ten::kl_divergence_rows(q, p));
  if (w.itc && w.kl) {
    out.total = ten::add(ten::scale(out.itc, 1.0 - w.alpha), ten::scale(out.kl, w.alpha));
  } else if (w.itc) {
    out.total = out.itc;
  } else if (w.kl) {
    out.total = out.kl;
  } else {
    out.total = t.constant(Mat(1, 1, 0.0));
  }
  out.targets = std::move(q);
  return out;
}

}  // namespace socl::align

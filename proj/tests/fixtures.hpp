#pragma once

// Tiny instances shared by the unit tests and the acceptance runner:
// N^s = 3, N^v = 16, every width 8, batch 2.

#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "socl/align/loss.hpp"
#include "socl/harness/config.hpp"
#include "socl/decoder/model.hpp"
#include "socl/ten/grad_check.hpp"
#include "socl/ten/ops.hpp"
#include "socl/vision/structure.hpp"
#include "support.hpp"

namespace socl::fixture {

using ten::Mat;
using ten::Param;
using ten::Tape;
using ten::Var;

inline vision::VisionDims tiny_vision_dims() {
  vision::VisionDims d;
  d.volume = {8, 8, 2};
  d.patch = {2, 2, 2};
  d.d_v = d.d_q = d.d_a = d.d_o = 8;
  d.n_structures = 3;
  d.query_init_scale = 0.5;
  return d;
}

// Full stage-1 chain: patches -> F^v -> observe -> g_v, frozen S^t -> g_t,
// against a fixed set of projected negatives.
struct TinyAlign {
  vision::VisionModel vision;
  align::ProjectionHeads heads;
  std::vector<Mat> patches;  // 2 subjects, 16 x 8 each
  Mat text;                  // 6 x 8 frozen S^t, subject-major
  Mat negatives;             // 5 x 8 projected, unit rows

  explicit TinyAlign(std::uint64_t seed = 1) : vision(tiny_vision_dims(), seed), heads(8, 8, 8, 0.2, seed) {
    ten::Rng rng(ten::mix_seed(seed, 77));
    for (int b = 0; b < 2; ++b) patches.push_back(rng.normal_mat(16, 8, 1.0));
    text = test::random_unit_rows(rng, 6, 8);
    negatives = test::random_unit_rows(rng, 5, 8);
    for (double& v : heads.gv_bias.value.values()) v = 0.1 * rng.normal();
    for (double& v : heads.gt_bias.value.values()) v = 0.1 * rng.normal();
  }

  std::vector<Param*> params() {
    auto p = vision.params();
    for (Param* h : heads.params()) p.push_back(h);
    return p;
  }

  align::ObjectiveTerms objective(Tape& t, const align::ObjectiveWeights& w, const Mat* fixed = nullptr) {
    Var feats = vision.embedder.forward(t, ten::concat_rows({t.constant(patches[0]), t.constant(patches[1])}));
    std::vector<Var> tokens;
    for (std::size_t b = 0; b < 2; ++b) tokens.push_back(vision::observe(t, ten::slice_rows(feats, b * 16, 16), vision.queries).tokens);
    Var visual = heads.project_visual(t, ten::concat_rows(tokens));
    Var txt = heads.project_text(t, t.constant(text));
    return align::so_pre_objective(t, visual, txt, negatives, t.param(heads.log_tau), w, fixed);
  }

  // Largest relative error over every trainable coordinate. Soft targets are
  // held at their value at the current point, as the optimizer sees them.
  double grad_error(const align::ObjectiveWeights& w) {
    Mat q;
    {
      Tape t(false);
      q = objective(t, w).targets;
    }
    double worst = 0.0;
    for (Param* p : params()) {
      worst = std::max(worst, ten::grad_check([&](Tape& t) { return objective(t, w, &q).total; }, *p, 1e-5));
    }
    return worst;
  }
};

// Gradient of sum(S .* R1) + sum(A .* R2) w.r.t. F^v, Q^v and W^v_{0,1,2}.
inline double observe_grad_error(std::uint64_t seed = 2) {
  ten::Rng rng(seed);
  vision::StructureQuerySet q(tiny_vision_dims(), rng);
  const Mat F = rng.normal_mat(16, 8, 1.0);
  const Mat r1 = rng.normal_mat(3, 8, 1.0), r2 = rng.normal_mat(3, 16, 1.0);
  auto scalar = [&](Tape& t, Var f) {
    auto o = vision::observe(t, f, q);
    return ten::add(ten::sum(ten::hadamard(o.tokens, t.constant(r1))), ten::sum(ten::hadamard(o.attention, t.constant(r2))));
  };
  double worst = ten::grad_check(scalar, F, 1e-5);
  for (Param* p : {&q.queries, &q.w0, &q.w1, &q.w2}) {
    worst = std::max(worst, ten::grad_check([&](Tape& t) { return scalar(t, t.constant(F)); }, *p, 1e-5));
  }
  return worst;
}

// One batch whose queue holds an exact copy of every positive text token, plus
// random negatives. Visual tokens sit near their texts.
struct DuplicateCase {
  align::ContrastBatch batch;
  Mat negatives;
  std::vector<std::size_t> duplicate_row;  // per pair, its copy's row in negatives
  double tau = 0.1;
};

inline DuplicateCase duplicate_case(std::uint64_t seed, std::size_t pairs = 4, std::size_t extra = 12, std::size_t dim = 16) {
  ten::Rng rng(seed);
  DuplicateCase c;
  const Mat text = test::random_unit_rows(rng, pairs, dim);
  const Mat noise = rng.normal_mat(pairs, dim, 0.3);
  const Mat others = test::random_unit_rows(rng, extra, dim);
  c.negatives = Mat(pairs + extra, dim);
  for (std::size_t i = 0; i < pairs; ++i) {
    std::vector<double> v = text.row_vec(i);
    for (std::size_t k = 0; k < dim; ++k) v[k] += noise(i, k);
    c.batch.push_back({i, 0, ten::l2_normalize(v), text.row_vec(i)});
  }
  // Interleave so the copies are not simply the first rows.
  std::vector<std::size_t> order(pairs + extra);
  std::iota(order.begin(), order.end(), 0);
  rng.shuffle(order);
  c.duplicate_row.resize(pairs);
  for (std::size_t r = 0; r < order.size(); ++r) {
    const std::size_t src = order[r];
    const auto row = src < pairs ? text.row_span(src) : others.row_span(src - pairs);
    std::copy(row.begin(), row.end(), c.negatives.row_span(r).begin());
    if (src < pairs) c.duplicate_row[src] = r;
  }
  return c;
}

inline decoder::DecoderDims tiny_decoder_dims() {
  decoder::DecoderDims d;
  d.vocab = 9;
  d.width = 8;
  d.heads = 2;
  d.blocks = 1;
  d.ff = 16;
  d.max_len = 8;
  d.d_o = 8;
  d.d_v = 8;
  d.n_structures = 3;
  d.k = 2;
  return d;
}

struct TinyDecoder {
  decoder::DecoderModel model;
  std::vector<decoder::VisualInput> visual;
  std::vector<std::vector<decoder::TokenId>> targets{{1, 4, 5, 6, 2}, {1, 7, 0, 2}};

  explicit TinyDecoder(std::uint64_t seed = 3) : model(tiny_decoder_dims(), seed) {
    ten::Rng rng(ten::mix_seed(seed, 5));
    for (int b = 0; b < 2; ++b) visual.push_back({rng.normal_mat(3, 8, 1.0), rng.normal_mat(6, 8, 1.0)});
    // Non-trivial layer-norm affine parameters so their gradients are exercised.
    for (Param* p : model.params())
      if (p->name.find(".gain") != std::string::npos || p->name.find("ln_") != std::string::npos)
        for (double& v : p->value.values()) v += 0.1 * rng.normal();
  }

  Var batch_loss(Tape& t) { return model.batch_loss(t, {&visual[0], &visual[1]}, targets); }

  // Attention key biases shift every score of a query row equally, so softmax
  // cancels them and their true gradient is exactly zero. Relative error is
  // undefined there; they are checked in absolute terms by key_bias_grad().
  static bool is_key_bias(const Param& p) { return p.name.ends_with(".k.bias"); }

  double grad_error() {
    double worst = 0.0;
    for (Param* p : model.params())
      if (!is_key_bias(*p)) worst = std::max(worst, ten::grad_check([&](Tape& t) { return batch_loss(t); }, *p, 1e-5));
    return worst;
  }

  // Largest |analytic| or |central difference| over key-bias coordinates.
  double key_bias_grad() {
    double worst = 0.0;
    for (Param* p : model.params()) {
      if (!is_key_bias(*p)) continue;
      p->zero_grad();
      {
        Tape t;
        t.backward(batch_loss(t));
      }
      for (double g : p->grad.values()) worst = std::max(worst, std::abs(g));
      p->zero_grad();
      for (std::size_t i = 0; i < p->value.size(); ++i) {
        const double orig = p->value[i];
        Tape a(false), b(false);
        p->value[i] = orig + 1e-5;
        const double fp = batch_loss(a).item();
        p->value[i] = orig - 1e-5;
        const double fm = batch_loss(b).item();
        p->value[i] = orig;
        worst = std::max(worst, std::abs(fp - fm) / 2e-5);
      }
    }
    return worst;
  }
};

// A run small enough for unit tests: 2 anatomical structures, 8 patches,
// widths of 16 and a few dozen steps per stage.
inline harness::RunConfig tiny_run(const std::string& output_dir = "runs/tiny") {
  harness::RunConfig c;
  c.output_dir = output_dir;
  c.data.n_cases = 24;
  c.data.n_structures = 2;
  c.data.volume = {16, 16, 8};
  c.data.patch = {8, 8, 4};
  c.model.d_v = c.model.d_q = c.model.d_a = c.model.d_o = c.model.d_t = 16;
  c.model.d_p = 8;
  c.model.text_buckets = 512;
  c.model.k = 2;
  c.pretrain.steps = 30;
  c.pretrain.batch_size = 4;
  c.pretrain.queue_capacity = 8;
  c.decoder.steps = 20;
  c.decoder.batch_size = 4;
  c.decoder.width = 16;
  c.decoder.heads = 2;
  c.decoder.blocks = 1;
  c.decoder.ff = 32;
  c.decoder.max_len = 64;
  harness::validate(c);
  return c;
}

}  // namespace socl::fixture

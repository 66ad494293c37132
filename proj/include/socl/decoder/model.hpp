#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "socl/decoder/vocab.hpp"
#include "socl/errors.hpp"
#include "socl/ten/checkpoint.hpp"
#include "socl/ten/ops.hpp"
#include "socl/ten/rng.hpp"

namespace socl::decoder {

using ten::Mat;
using ten::Param;
using ten::Tape;
using ten::Var;

// Visual conditioning of one case. Either part may be empty (0 rows) when
// ablated, but not both.
struct VisualInput {
  Mat sv;  // S^v, N^s x d_o
  Mat ts;  // T^s, (K * N^s) x d_v, grouped by structure
};

struct DecoderDims {
  std::size_t vocab = 4;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t ff = 128;
  std::size_t max_len = 128;
  std::size_t d_o = 64;
  std::size_t d_v = 64;
  std::size_t n_structures = 5;
  std::size_t k = 4;

  std::size_t memory_slots() const { return n_structures * (1 + k); }
};

struct GenerationConfig {
  std::size_t max_len = 128;  // including BOS and EOS
  TokenId eos = Vocab::kEos;
};

struct Linear {
  Param weight;
  Param bias;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, ten::Rng& rng)
      : weight(name + ".weight", rng.normal_mat(in, out, 1.0 / std::sqrt(static_cast<double>(in)))),
        bias(name + ".bias", Mat(1, out), false) {}

  Var operator()(Tape& t, Var x) { return ten::add_row(ten::matmul(x, t.param(weight)), t.param(bias)); }
  void collect(std::vector<Param*>& out) { out.insert(out.end(), {&weight, &bias}); }
};

struct LayerNorm {
  Param gain;
  Param bias;

  LayerNorm() = default;
  LayerNorm(const std::string& name, std::size_t n)
      : gain(name + ".gain", Mat(1, n, 1.0), false), bias(name + ".bias", Mat(1, n), false) {}

  Var operator()(Tape& t, Var x) { return ten::layer_norm_rows(x, t.param(gain), t.param(bias)); }
  void collect(std::vector<Param*>& out) { out.insert(out.end(), {&gain, &bias}); }
};

struct Attention {
  Linear q, k, v, o;

  Attention() = default;
  Attention(const std::string& name, std::size_t d, ten::Rng& rng)
      : q(name + ".q", d, d, rng), k(name + ".k", d, d, rng), v(name + ".v", d, d, rng), o(name + ".o", d, d, rng) {}

  void collect(std::vector<Param*>& out) {
    q.collect(out);
    k.collect(out);
    v.collect(out);
    o.collect(out);
  }
};

struct Block {
  LayerNorm ln_self, ln_cross, ln_ff;
  Attention self, cross;
  Linear ff_in, ff_out;

  Block() = default;
  Block(const std::string& name, const DecoderDims& d, ten::Rng& rng)
      : ln_self(name + ".ln_self", d.width),
        ln_cross(name + ".ln_cross", d.width),
        ln_ff(name + ".ln_ff", d.width),
        self(name + ".self", d.width, rng),
        cross(name + ".cross", d.width, rng),
        ff_in(name + ".ff_in", d.width, d.ff, rng),
        ff_out(name + ".ff_out", d.ff, d.width, rng) {}

  void collect(std::vector<Param*>& out) {
    ln_self.collect(out);
    ln_cross.collect(out);
    ln_ff.collect(out);
    self.collect(out);
    cross.collect(out);
    ff_in.collect(out);
    ff_out.collect(out);
  }
};

// Row ranges of the stacked sequences inside one forward pass.
struct Segments {
  std::vector<std::size_t> text_offset, text_len;
  std::size_t memory_len = 0;
};

// Pre-norm transformer decoder over word tokens with cross-attention to the
// projected visual tokens.
class DecoderModel {
 public:
  Param tok_emb;  // vocab x width
  Param pos_emb;  // max_len x width
  Linear sv_in;   // d_o -> width
  Linear ts_in;   // d_v -> width
  Param mem_pos;  // memory_slots x width
  LayerNorm ln_mem;
  std::vector<Block> blocks;
  LayerNorm ln_out;
  Linear head;  // width -> vocab

  DecoderModel() = default;
  DecoderModel(const DecoderDims& d, std::uint64_t seed) : dims_(d) {
    if (d.width % d.heads != 0) throw ParameterError("decoder width must be divisible by heads");
    if (d.vocab < 4 || d.max_len < 2 || d.blocks < 1) throw ParameterError("decoder: invalid dimensions");
    ten::Rng rng(ten::mix_seed(seed, 0xdec0));
    tok_emb = Param("decoder.tok_emb", rng.normal_mat(d.vocab, d.width, 0.02));
    pos_emb = Param("decoder.pos_emb", rng.normal_mat(d.max_len, d.width, 0.02));
    sv_in = Linear("decoder.sv_in", d.d_o, d.width, rng);
    ts_in = Linear("decoder.ts_in", d.d_v, d.width, rng);
    mem_pos = Param("decoder.mem_pos", rng.normal_mat(d.memory_slots(), d.width, 0.02));
    ln_mem = LayerNorm("decoder.ln_mem", d.width);
    for (std::size_t b = 0; b < d.blocks; ++b) blocks.emplace_back("decoder.block" + std::to_string(b), d, rng);
    ln_out = LayerNorm("decoder.ln_out", d.width);
    head = Linear("decoder.head", d.width, d.vocab, rng);
  }

  const DecoderDims& dims() const { return dims_; }

  std::vector<Param*> params() {
    std::vector<Param*> out{&tok_emb, &pos_emb};
    sv_in.collect(out);
    ts_in.collect(out);
    out.push_back(&mem_pos);
    ln_mem.collect(out);
    for (auto& b : blocks) b.collect(out);
    ln_out.collect(out);
    head.collect(out);
    return out;
  }

  // Projected visual memory, one row per visual token: S^v rows take slots
  // 0..N^s-1, T^s rows take slots N^s.. in order.
  Var memory(Tape& t, const VisualInput& in) {
    check_visual(in);
    std::vector<Var> parts;
    std::vector<std::size_t> slots;
    if (in.sv.rows() > 0) {
      parts.push_back(sv_in(t, t.constant(in.sv)));
      for (std::size_t i = 0; i < in.sv.rows(); ++i) slots.push_back(i);
    }
    if (in.ts.rows() > 0) {
      parts.push_back(ts_in(t, t.constant(in.ts)));
      for (std::size_t i = 0; i < in.ts.rows(); ++i) slots.push_back(dims_.n_structures + i);
    }
    Var m = parts.size() == 1 ? parts.front() : ten::concat_rows(parts);
    return ln_mem(t, ten::add(m, ten::gather_rows(t.param(mem_pos), std::move(slots))));
  }

  // Next-token logits for every input position of every sequence, stacked in
  // sequence order. All visual inputs must have the same memory length.
  Var logits(Tape& t, const std::vector<const VisualInput*>& visual, const std::vector<std::vector<TokenId>>& inputs) {
    if (visual.size() != inputs.size() || inputs.empty()) throw ParameterError("decoder: batch size mismatch or empty batch");
    Segments seg;
    std::vector<std::size_t> ids, positions;
    for (const auto& seq : inputs) {
      if (seq.empty() || seq.size() > dims_.max_len) throw ParameterError("decoder: input length " + std::to_string(seq.size()));
      seg.text_offset.push_back(ids.size());
      seg.text_len.push_back(seq.size());
      for (std::size_t p = 0; p < seq.size(); ++p) {
        check_id(seq[p]);
        ids.push_back(static_cast<std::size_t>(seq[p]));
        positions.push_back(p);
      }
    }
    std::vector<Var> mems;
    for (const VisualInput* v : visual) {
      mems.push_back(memory(t, *v));
      if (mems.back().rows() != mems.front().rows()) throw ShapeError("decoder: ragged visual memory in batch");
    }
    seg.memory_len = mems.front().rows();
    Var mem = mems.size() == 1 ? mems.front() : ten::concat_rows(mems);

    Var x = ten::add(ten::gather_rows(t.param(tok_emb), std::move(ids)), ten::gather_rows(t.param(pos_emb), std::move(positions)));
    for (auto& b : blocks) {
      x = ten::add(x, attend(t, b.self, b.ln_self(t, x), Var{}, seg, true));
      x = ten::add(x, attend(t, b.cross, b.ln_cross(t, x), mem, seg, false));
      x = ten::add(x, b.ff_out(t, ten::gelu(b.ff_in(t, b.ln_ff(t, x)))));
    }
    return head(t, ln_out(t, x));
  }

  // -log P(t_k | t_<k) for k = 1..n-1 as an (n-1) x 1 column; entries whose
  // target is PAD are 0.
  Var position_losses(Tape& t, const VisualInput& visual, const std::vector<TokenId>& target) {
    check_target(target);
    const std::vector<TokenId> input(target.begin(), target.end() - 1);
    Var lp = ten::log_softmax_rows(logits(t, {&visual}, {input}));
    return masked_nll(t, lp, target, 0);
  }

  // L_rg: summed next-token negative log-likelihood under teacher forcing.
  Var loss_rg(Tape& t, const VisualInput& visual, const std::vector<TokenId>& target) {
    return ten::sum(position_losses(t, visual, target));
  }

  // Mean over the batch of per-sequence L_rg, computed in one stacked pass.
  Var batch_loss(Tape& t, const std::vector<const VisualInput*>& visual, const std::vector<std::vector<TokenId>>& targets) {
    std::vector<std::vector<TokenId>> inputs;
    for (const auto& tg : targets) {
      check_target(tg);
      inputs.emplace_back(tg.begin(), tg.end() - 1);
    }
    Var lp = ten::log_softmax_rows(logits(t, visual, inputs));
    std::vector<Var> parts;
    std::size_t off = 0;
    for (const auto& tg : targets) {
      parts.push_back(masked_nll(t, lp, tg, off));
      off += tg.size() - 1;
    }
    Var all = parts.size() == 1 ? parts.front() : ten::concat_rows(parts);
    return ten::scale(ten::sum(all), 1.0 / static_cast<double>(targets.size()));
  }

  // Greedy decoding from BOS; the returned ids include BOS and, when reached
  // within cfg.max_len, EOS.
  std::vector<TokenId> generate(const VisualInput& visual, const GenerationConfig& cfg) const {
    return generate_batch({&visual}, cfg).front();
  }

  // Sequences advance in lockstep; a sequence leaves the active set once it
  // emits EOS. Ties in the argmax go to the lower token id.
  std::vector<std::vector<TokenId>> generate_batch(const std::vector<const VisualInput*>& visual,
                                                   const GenerationConfig& cfg) const {
    if (cfg.max_len < 1) throw ParameterError("generation max length must be >= 1");
    const std::size_t limit = std::min(cfg.max_len, dims_.max_len);
    std::vector<std::vector<TokenId>> out(visual.size(), std::vector<TokenId>{Vocab::kBos});
    std::vector<std::size_t> active(visual.size());
    for (std::size_t i = 0; i < active.size(); ++i) active[i] = i;
    auto& self = const_cast<DecoderModel&>(*this);  // grad-disabled tape never writes params
    while (!active.empty() && out[active.front()].size() < limit) {
      Tape t(false);
      std::vector<const VisualInput*> vis;
      std::vector<std::vector<TokenId>> inputs;
      for (std::size_t i : active) {
        vis.push_back(visual[i]);
        inputs.push_back(out[i]);
      }
      const Mat& lg = self.logits(t, vis, inputs).value();
      std::vector<std::size_t> still;
      std::size_t row = 0;
      for (std::size_t a = 0; a < active.size(); ++a) {
        row += inputs[a].size();
        auto r = lg.row_span(row - 1);
        const auto next = static_cast<TokenId>(std::max_element(r.begin(), r.end()) - r.begin());
        out[active[a]].push_back(next);
        if (next != cfg.eos) still.push_back(active[a]);
      }
      active = std::move(still);
    }
    return out;
  }

  void save_to(ten::ArrayTable& table) {
    for (Param* p : params()) table.put(*p);
    auto& m = table.meta();
    m["decoder.width"] = std::to_string(dims_.width);
    m["decoder.heads"] = std::to_string(dims_.heads);
    m["decoder.blocks"] = std::to_string(dims_.blocks);
    m["decoder.ff"] = std::to_string(dims_.ff);
    m["decoder.max_len"] = std::to_string(dims_.max_len);
    m["decoder.vocab_size"] = std::to_string(dims_.vocab);
    m["decoder.d_o"] = std::to_string(dims_.d_o);
    m["decoder.d_v"] = std::to_string(dims_.d_v);
    m["decoder.n_structures"] = std::to_string(dims_.n_structures);
    m["decoder.k"] = std::to_string(dims_.k);
  }

  static DecoderModel load_from(const ten::ArrayTable& table) {
    const auto& m = table.meta();
    auto get = [&](const char* key) {
      auto it = m.find(key);
      if (it == m.end()) throw FormatError(std::string("checkpoint missing ") + key);
      return static_cast<std::size_t>(std::stoull(it->second));
    };
    DecoderDims d;
    d.width = get("decoder.width");
    d.heads = get("decoder.heads");
    d.blocks = get("decoder.blocks");
    d.ff = get("decoder.ff");
    d.max_len = get("decoder.max_len");
    d.vocab = get("decoder.vocab_size");
    d.d_o = get("decoder.d_o");
    d.d_v = get("decoder.d_v");
    d.n_structures = get("decoder.n_structures");
    d.k = get("decoder.k");
    DecoderModel model(d, 0);
    for (Param* p : model.params()) table.load_into(*p);
    return model;
  }

 private:
  void check_id(TokenId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= dims_.vocab) throw ParameterError("decoder: unknown token id " + std::to_string(id));
  }

  void check_target(const std::vector<TokenId>& target) const {
    if (target.size() < 2) throw ParameterError("decoder: empty target");
    if (target.front() != Vocab::kBos || target.back() != Vocab::kEos) {
      throw ParameterError("decoder: target must begin with BOS and end with EOS");
    }
    if (target.size() > dims_.max_len) {
      throw ParameterError("decoder: target length " + std::to_string(target.size()) + " exceeds " + std::to_string(dims_.max_len));
    }
    for (TokenId id : target) check_id(id);
  }

  void check_visual(const VisualInput& in) const {
    if (in.sv.rows() == 0 && in.ts.rows() == 0) throw ParameterError("decoder: no visual tokens");
    if (in.sv.rows() > 0 && (in.sv.cols() != dims_.d_o || in.sv.rows() > dims_.n_structures)) {
      throw ShapeError("decoder: S^v " + in.sv.shape().str());
    }
    if (in.ts.rows() > 0 && (in.ts.cols() != dims_.d_v || in.ts.rows() > dims_.n_structures * dims_.k)) {
      throw ShapeError("decoder: T^s " + in.ts.shape().str());
    }
  }

  // Gathers -log p of target[1..] from rows [off, off + n - 1) of lp.
  static Var masked_nll(Tape& t, Var lp, const std::vector<TokenId>& target, std::size_t off) {
    const std::size_t n = target.size() - 1;
    std::vector<std::size_t> cols(n);
    Mat mask(n, 1, -1.0);
    for (std::size_t k = 0; k < n; ++k) {
      cols[k] = static_cast<std::size_t>(target[k + 1]);
      if (target[k + 1] == Vocab::kPad) mask(k, 0) = 0.0;
    }
    Var picked = ten::pick(ten::slice_rows(lp, off, n), std::move(cols));
    return ten::hadamard(picked, t.constant(std::move(mask)));
  }

  // Multi-head attention per sequence. Self-attention (memory empty) is
  // causal over the sequence's own rows; cross-attention sees the whole
  // memory block of the sequence.
  Var attend(Tape& t, Attention& a, Var x, Var mem, const Segments& seg, bool causal) {
    const std::size_t d = dims_.width, h = dims_.heads, dh = d / h;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
    Var q = a.q(t, x);
    Var src = causal ? x : mem;
    Var k = a.k(t, src);
    Var v = a.v(t, src);
    std::vector<Var> rows;
    for (std::size_t b = 0; b < seg.text_len.size(); ++b) {
      const std::size_t n = seg.text_len[b];
      const std::size_t kv_off = causal ? seg.text_offset[b] : b * seg.memory_len;
      const std::size_t kv_len = causal ? n : seg.memory_len;
      Var qb = ten::slice_rows(q, seg.text_offset[b], n);
      Var kb = ten::slice_rows(k, kv_off, kv_len);
      Var vb = ten::slice_rows(v, kv_off, kv_len);
      Mat mask;
      if (causal) {
        mask = Mat(n, n);
        for (std::size_t i = 0; i < n; ++i)
          for (std::size_t j = i + 1; j < n; ++j) mask(i, j) = -1e30;
      }
      std::vector<Var> heads;
      for (std::size_t hh = 0; hh < h; ++hh) {
        Var s = ten::scale(ten::matmul_nt(ten::slice_cols(qb, hh * dh, dh), ten::slice_cols(kb, hh * dh, dh)), scale);
        if (causal) s = ten::add_const(s, mask);
        heads.push_back(ten::matmul(ten::softmax_rows(s), ten::slice_cols(vb, hh * dh, dh)));
      }
      rows.push_back(h == 1 ? heads.front() : ten::concat_cols(heads));
    }
    return a.o(t, rows.size() == 1 ? rows.front() : ten::concat_rows(rows));
  }

  DecoderDims dims_;
};

}  // namespace socl::decoder

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "socl/align/loss.hpp"
#include "socl/align/queue.hpp"
#include "socl/decoder/model.hpp"
#include "socl/decoder/vocab.hpp"
#include "socl/harness/config.hpp"
#include "socl/harness/hash.hpp"
#include "socl/metrics/ce.hpp"
#include "socl/metrics/nlg.hpp"
#include "socl/metrics/retrieval.hpp"
#include "socl/report/parse.hpp"
#include "socl/synth/corpus.hpp"
#include "socl/synth/io.hpp"
#include "socl/ten/optim.hpp"
#include "socl/text/embedder.hpp"
#include "socl/vision/structure.hpp"

namespace socl::harness {

using synth::Split;
using ten::Mat;

// ------------------------------------------------------------------- data

struct Case {
  std::string id;
  std::string report;
  std::vector<int> labels;
  Split split = Split::Train;
  Mat patches;                       // N^v x voxels-per-patch
  text::TextObservationTokens text;  // S^t, one slot per catalog structure
};

struct Dataset {
  report::StructureCatalog catalog;
  synth::Taxonomy taxonomy;
  std::vector<Case> cases;

  std::vector<std::size_t> indices(Split s) const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < cases.size(); ++i)
      if (cases[i].split == s) out.push_back(i);
    return out;
  }
};

inline text::TextEmbedder make_text_embedder(const RunConfig& c) {
  return text::TextEmbedder(c.model.text_seed, c.model.text_buckets, c.model.d_t);
}

inline Case make_case(std::string id, std::string report_text, std::vector<int> labels, Split split, const synth::Volume& v,
                      const Extents& patch, const report::StructureCatalog& catalog, const text::TextEmbedder& te) {
  Case c;
  c.id = std::move(id);
  c.labels = std::move(labels);
  c.split = split;
  c.patches = vision::patchify(v, patch);
  c.text = te.embed(report::parse_report(c.id, report_text, catalog));
  c.report = std::move(report_text);
  return c;
}

// Reads data.corpus when set, otherwise generates the corpus in memory from
// the data section.
inline Dataset load_dataset(const RunConfig& c) {
  Dataset d;
  d.catalog = resolve_catalog(c);
  try {
    d.taxonomy = synth::Taxonomy::for_catalog(d.catalog);
  } catch (const ParameterError& e) {
    throw ConfigError(e.what());
  }
  const auto te = make_text_embedder(c);
  const Extents patch = detail::to_extents(c.data.patch, "data.patch");
  const Extents volume = detail::to_extents(c.data.volume, "data.volume");
  if (!c.data.corpus.empty()) {
    const std::filesystem::path path(c.data.corpus);
    for (const auto& r : synth::read_corpus(path)) {
      const auto v = synth::read_volume(path.parent_path() / r.volume);
      if (v.extents != volume) {
        throw ConfigError("volume " + r.volume + " has extents " + vision::extents_str(v.extents) + ", config says " +
                          vision::extents_str(volume));
      }
      if (r.labels.size() != d.taxonomy.n_labels()) throw ConfigError("corpus labels do not match the catalog taxonomy");
      d.cases.push_back(make_case(r.id, r.report, r.labels, r.split, v, patch, d.catalog, te));
    }
  } else {
    try {
      for (auto& sc : synth::generate_corpus(c.data.n_cases, d.taxonomy, generator_config(c), c.data.seed)) {
        d.cases.push_back(make_case(sc.id, sc.report, sc.labels, sc.split, sc.volume, patch, d.catalog, te));
      }
    } catch (const ParameterError& e) {
      throw ConfigError(std::string("data: ") + e.what());
    }
  }
  if (d.cases.empty()) throw ConfigError("corpus is empty");
  return d;
}

// Epoch-wise shuffled minibatches drawn from a fixed index pool.
class BatchSampler {
 public:
  BatchSampler(std::vector<std::size_t> pool, std::size_t batch, std::uint64_t seed)
      : pool_(std::move(pool)), batch_(std::min(batch, pool_.size())), rng_(seed) {
    if (pool_.empty()) throw ConfigError("training split is empty");
    rng_.shuffle(pool_);
  }

  std::vector<std::size_t> next() {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (pos_ == pool_.size()) {
        rng_.shuffle(pool_);
        pos_ = 0;
      }
      out.push_back(pool_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> pool_;
  std::size_t batch_;
  ten::Rng rng_;
  std::size_t pos_ = 0;
};

// ---------------------------------------------------------------- stage 1

struct Stage1 {
  vision::VisionModel vision;
  align::ProjectionHeads heads;
  text::TextEmbedder text;
  align::DiversityQueue queue;

  std::vector<ten::Param*> trainable() {
    auto p = vision.params();
    for (ten::Param* h : heads.params()) p.push_back(h);
    return p;
  }

  // Everything stage 2 must leave untouched.
  ten::ArrayTable frozen_table() const {
    ten::ArrayTable t;
    vision.save_to(t);
    heads.save_to(t);
    text.save_to(t);
    return t;
  }

  ten::ArrayTable checkpoint() const {
    ten::ArrayTable t = frozen_table();
    queue.save_to(t);
    return t;
  }
};

inline vision::VisionDims vision_dims(const RunConfig& c, std::size_t n_structures) {
  vision::VisionDims d;
  d.volume = detail::to_extents(c.data.volume, "data.volume");
  d.patch = detail::to_extents(c.data.patch, "data.patch");
  d.d_v = c.model.d_v;
  d.d_q = c.model.d_q;
  d.d_a = c.model.d_a;
  d.d_o = c.model.d_o;
  d.n_structures = n_structures;
  d.query_init_scale = c.model.query_init_scale;
  return d;
}

inline Stage1 init_stage1(const RunConfig& c, std::size_t n_structures) {
  return Stage1{vision::VisionModel(vision_dims(c, n_structures), c.seed),
                align::ProjectionHeads(c.model.d_o, c.model.d_t, c.model.d_p, c.model.tau_init, c.seed),
                make_text_embedder(c),
                align::DiversityQueue(n_structures, c.pretrain.queue_capacity, align::parse_queue_policy(c.pretrain.queue))};
}

inline Stage1 stage1_from_table(const RunConfig& c, std::size_t n_structures, const ten::ArrayTable& t) {
  Stage1 s = init_stage1(c, n_structures);
  s.vision.load_from(t);
  s.heads.load_from(t);
  s.text = text::TextEmbedder::load_from(t);
  s.queue = align::DiversityQueue::load_from(t);
  return s;
}

struct LossRecord {
  std::size_t step = 0;
  double itc = 0.0;
  double kl = 0.0;
  double pre = 0.0;
  double tau = 0.0;
};

inline json to_json(const LossRecord& r) {
  return {{"step", r.step}, {"L_itc", r.itc}, {"L_kl", r.kl}, {"L_pre", r.pre}, {"tau", r.tau}};
}

struct PretrainResult {
  Stage1 model;
  std::vector<LossRecord> log;
};

namespace detail {

struct Stage1Batch {
  ten::Var visual;  // projected S^v rows of the present pairs
  ten::Var text;    // projected S^t rows
  std::vector<align::QueueCandidate> candidates;
};

inline std::optional<Stage1Batch> stage1_forward(ten::Tape& t, Stage1& s, const Dataset& d,
                                                 const std::vector<std::size_t>& batch) {
  const std::size_t nv = d.cases[batch.front()].patches.rows();
  const std::size_t ns = s.vision.queries.n_structures();
  std::vector<ten::Var> parts;
  for (std::size_t i : batch) parts.push_back(t.constant(d.cases[i].patches));
  ten::Var feats = s.vision.embedder.forward(t, parts.size() == 1 ? parts.front() : ten::concat_rows(parts));
  std::vector<ten::Var> tokens;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    tokens.push_back(vision::observe(t, ten::slice_rows(feats, b * nv, nv), s.vision.queries).tokens);
  }
  ten::Var all = tokens.size() == 1 ? tokens.front() : ten::concat_rows(tokens);

  std::vector<std::size_t> rows;
  std::vector<std::vector<double>> texts;
  std::vector<std::pair<std::size_t, std::size_t>> who;  // (structure, subject)
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& tt = d.cases[batch[b]].text;
    for (std::size_t st = 0; st < ns; ++st) {
      if (!tt.present(st)) continue;
      rows.push_back(b * ns + st);
      texts.push_back(*tt.tokens[st]);
      who.emplace_back(st, batch[b]);
    }
  }
  if (rows.empty()) return std::nullopt;
  Mat tm(texts.size(), texts.front().size());
  for (std::size_t r = 0; r < texts.size(); ++r) std::copy(texts[r].begin(), texts[r].end(), tm.row_span(r).begin());

  Stage1Batch out;
  out.visual = s.heads.project_visual(t, ten::gather_rows(all, std::move(rows)));
  out.text = s.heads.project_text(t, t.constant(std::move(tm)));
  const Mat& tv = out.text.value();
  for (std::size_t r = 0; r < who.size(); ++r) out.candidates.push_back({who[r].first, tv.row_vec(r), who[r].second, texts[r]});
  return out;
}

}  // namespace detail

// Queue snapshot as loss negatives. The text encoder is frozen, so a queued
// s^t never goes stale; only its cached g_t output does.
inline Mat negatives(const Stage1& s, const RunConfig& c) {
  if (c.pretrain.negatives == "stored" || s.queue.total_size() == 0) return s.queue.snapshot(s.heads.dim());
  return s.heads.text(s.queue.sources(c.model.d_t));
}

inline align::ObjectiveWeights objective_weights(const RunConfig& c) {
  return {c.pretrain.alpha, c.pretrain.itc, c.pretrain.kl};
}

// Stage 1. The queue is updated after each step's loss with the batch's
// projected text tokens. With both loss terms off no parameter moves.
inline PretrainResult pretrain(const RunConfig& c, const Dataset& d,
                               const std::function<void(const LossRecord&)>& on_step = {}) {
  PretrainResult res{init_stage1(c, d.catalog.size()), {}};
  Stage1& s = res.model;
  const auto w = objective_weights(c);
  const bool learn = w.itc || w.kl;
  BatchSampler sampler(d.indices(Split::Train), c.pretrain.batch_size, ten::mix_seed(c.seed, 0xba7c));
  ten::AdamW opt(s.trainable(), {c.pretrain.lr, 0.9, 0.999, 1e-8, c.pretrain.weight_decay});
  const ten::LinearWarmupDecay sched{c.pretrain.steps, c.pretrain.warmup_ratio};
  for (std::size_t step = 0; step < c.pretrain.steps; ++step) {
    const auto batch = sampler.next();
    ten::Tape t(learn);
    auto fwd = detail::stage1_forward(t, s, d, batch);
    if (!fwd) continue;
    const Mat neg = negatives(s, c);
    auto terms = align::so_pre_objective(t, fwd->visual, fwd->text, neg, t.param(s.heads.log_tau), w);
    LossRecord rec{step, terms.itc.item(), terms.kl.item(), terms.total.item(), s.heads.tau()};
    if (!std::isfinite(rec.itc) || !std::isfinite(rec.kl) || !std::isfinite(rec.pre)) {
      throw NumericError("pretrain: non-finite loss at step " + std::to_string(step) + " (L_itc=" + std::to_string(rec.itc) +
                         ", L_kl=" + std::to_string(rec.kl) + ", L_pre=" + std::to_string(rec.pre) +
                         ", tau=" + std::to_string(rec.tau) + ")");
    }
    if (learn) {
      opt.zero_grad();
      t.backward(terms.total);
      opt.step(sched.factor(step));
      s.heads.clamp_tau();
    }
    s.queue.update(fwd->candidates);
    res.log.push_back(rec);
    if (on_step) on_step(rec);
  }
  return res;
}

// Value of the stage-1 objective on a fixed batch without touching the queue
// or parameters.
inline LossRecord evaluate_objective(const RunConfig& c, Stage1& s, const Dataset& d, const std::vector<std::size_t>& batch) {
  const auto w = objective_weights(c);
  ten::Tape t(false);
  auto fwd = detail::stage1_forward(t, s, d, batch);
  if (!fwd) throw ParameterError("evaluate_objective: batch has no structure pairs");
  auto terms = align::so_pre_objective(t, fwd->visual, fwd->text, negatives(s, c), t.param(s.heads.log_tau), w);
  return {0, terms.itc.item(), terms.kl.item(), terms.total.item(), s.heads.tau()};
}

// ------------------------------------------------------------- retrieval

struct RetrievalTokens {
  std::vector<metrics::TextQuery> queries;
  std::vector<Mat> volumes;
};

inline RetrievalTokens retrieval_tokens(const Stage1& s, const Dataset& d, const std::vector<std::size_t>& idx) {
  RetrievalTokens out;
  for (std::size_t i : idx) {
    const Case& c = d.cases[i];
    out.volumes.push_back(s.heads.visual(s.vision.features_from_patches(c.patches).observation.tokens));
    metrics::TextQuery q(c.text.tokens.size());
    for (std::size_t st = 0; st < q.size(); ++st) {
      if (!c.text.present(st)) continue;
      q[st] = s.heads.text(Mat::row(*c.text.tokens[st])).row_vec(0);
    }
    out.queries.push_back(std::move(q));
  }
  return out;
}

inline std::map<std::size_t, double> retrieval(const Stage1& s, const Dataset& d, Split split, const std::vector<std::size_t>& ks) {
  const auto idx = d.indices(split);
  if (idx.empty()) throw ConfigError(std::string("split '") + synth::to_string(split) + "' is empty");
  auto tok = retrieval_tokens(s, d, idx);
  return metrics::retrieval_recall(tok.queries, tok.volumes, ks);
}

// ---------------------------------------------------------------- stage 2

struct Stage2 {
  decoder::Vocab vocab;
  decoder::DecoderModel model;

  ten::ArrayTable checkpoint() const {
    ten::ArrayTable t;
    const_cast<decoder::DecoderModel&>(model).save_to(t);
    vocab.save_to(t);
    return t;
  }

  static Stage2 from_table(const ten::ArrayTable& t) {
    Stage2 s{decoder::Vocab::load_from(t), decoder::DecoderModel::load_from(t)};
    if (s.model.dims().vocab != s.vocab.size()) throw FormatError("stage-2 checkpoint: vocab size mismatch");
    return s;
  }
};

// [S^v; T^s] for one case from the frozen stage-1 model.
inline decoder::VisualInput visual_input(const Stage1& s, const Case& c, bool use_sv, bool use_ts, std::size_t k) {
  auto f = s.vision.features_from_patches(c.patches);
  decoder::VisualInput in;
  if (use_sv) in.sv = f.observation.tokens;
  if (use_ts) in.ts = vision::select_patches(f.observation.attention, f.grid.features, k).embeddings;
  return in;
}

inline decoder::DecoderDims decoder_dims(const RunConfig& c, std::size_t vocab, std::size_t n_structures) {
  decoder::DecoderDims d;
  d.vocab = vocab;
  d.width = c.decoder.width;
  d.heads = c.decoder.heads;
  d.blocks = c.decoder.blocks;
  d.ff = c.decoder.ff;
  d.max_len = c.decoder.max_len;
  d.d_o = c.model.d_o;
  d.d_v = c.model.d_v;
  d.n_structures = n_structures;
  d.k = c.model.k;
  return d;
}

// Called after every optimizer step; tests use it to tamper with stage 1.
using StepHook = std::function<void(Stage1&, std::size_t step)>;

struct DecoderResult {
  Stage2 model;
  std::vector<std::pair<std::size_t, double>> log;  // (step, batch-mean L_rg)
  std::string frozen_sha256;
};

// Stage 2: trains only the decoder on the frozen stage-1 visual tokens.
// Throws ContractError if any stage-1 parameter changed meanwhile.
inline DecoderResult train_decoder(const RunConfig& c, const Dataset& d, Stage1& s1, const StepHook& hook = {}) {
  const std::string before = params_sha256(s1.frozen_table());
  s1.vision.set_frozen(true);
  for (ten::Param* p : s1.heads.params()) p->frozen = true;

  const auto train = d.indices(Split::Train);
  if (train.empty()) throw ConfigError("training split is empty");
  std::vector<std::string> texts;
  for (std::size_t i : train) texts.push_back(d.cases[i].report);
  DecoderResult res{{decoder::Vocab::build(texts), {}}, {}, before};
  Stage2& s2 = res.model;
  s2.model = decoder::DecoderModel(decoder_dims(c, s2.vocab.size(), d.catalog.size()), ten::mix_seed(c.seed, 0x5e2));

  // Inputs are precomputed once: the visual side is frozen.
  std::map<std::size_t, decoder::VisualInput> vis;
  std::map<std::size_t, std::vector<decoder::TokenId>> targets;
  for (std::size_t i : train) {
    vis[i] = visual_input(s1, d.cases[i], c.decoder.use_sv, c.decoder.use_ts, c.model.k);
    targets[i] = s2.vocab.encode(d.cases[i].report);
    if (targets[i].size() > c.decoder.max_len) {
      throw ConfigError("report " + d.cases[i].id + " has " + std::to_string(targets[i].size()) + " tokens; decoder.max_len is " +
                        std::to_string(c.decoder.max_len));
    }
  }

  BatchSampler sampler(train, c.decoder.batch_size, ten::mix_seed(c.seed, 0xba7d));
  ten::AdamW opt(s2.model.params(), {c.decoder.lr, 0.9, 0.999, 1e-8, c.decoder.weight_decay});
  const ten::LinearWarmupDecay sched{c.decoder.steps, c.decoder.warmup_ratio};
  for (std::size_t step = 0; step < c.decoder.steps; ++step) {
    const auto batch = sampler.next();
    std::vector<const decoder::VisualInput*> bv;
    std::vector<std::vector<decoder::TokenId>> bt;
    for (std::size_t i : batch) {
      bv.push_back(&vis[i]);
      bt.push_back(targets[i]);
    }
    ten::Tape t;
    ten::Var loss = s2.model.batch_loss(t, bv, bt);
    const double l = loss.item();
    if (!std::isfinite(l)) throw NumericError("train-decoder: non-finite L_rg at step " + std::to_string(step));
    opt.zero_grad();
    t.backward(loss);
    opt.step(sched.factor(step));
    res.log.emplace_back(step, l);
    if (hook) hook(s1, step);
  }

  const std::string after = params_sha256(s1.frozen_table());
  if (after != before) {
    throw ContractError("stage-1 parameters changed during decoder training (frozen hash " + before.substr(0, 12) + " -> " +
                        after.substr(0, 12) + ")");
  }
  return res;
}

// ------------------------------------------------------------ evaluation

struct Prediction {
  std::string id;
  std::string reference;
  std::string generated;
  std::vector<int> true_labels;
  std::vector<int> pred_labels;
};

struct MetricReport {
  std::string config_hash;
  std::string split;
  std::size_t cases = 0;
  double bleu1 = 0.0;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double ce_precision = 0.0;
  double ce_recall = 0.0;
  double ce_f1 = 0.0;
  std::string ce_averaging = "micro";
  std::map<std::size_t, double> recall;  // K -> recall@K
};

inline json to_json(const MetricReport& m) {
  json r = json::object();
  for (const auto& [k, v] : m.recall) r["recall@" + std::to_string(k)] = v;
  return {{"config_hash", m.config_hash},
          {"split", m.split},
          {"cases", m.cases},
          {"bleu1", m.bleu1},
          {"bleu4", m.bleu4},
          {"rouge_l", m.rouge_l},
          {"rouge_beta", metrics::kRougeBeta},
          {"ce_precision", m.ce_precision},
          {"ce_recall", m.ce_recall},
          {"ce_f1", m.ce_f1},
          {"ce_averaging", m.ce_averaging},
          {"retrieval", r}};
}

// NLG and CE scores of generated reports against references. CE labels of
// the generated text come from the rule labeler.
inline MetricReport score_predictions(std::vector<Prediction>& preds, const synth::Taxonomy& tax, metrics::Averaging avg) {
  if (preds.empty()) throw ConfigError("evaluation split is empty");
  std::vector<metrics::Tokens> hyps;
  std::vector<std::vector<metrics::Tokens>> refs;
  std::vector<metrics::Tokens> refs1;
  std::vector<std::vector<int>> yp, yt;
  for (auto& p : preds) {
    hyps.push_back(decoder::word_tokens(p.generated));
    refs1.push_back(decoder::word_tokens(p.reference));
    refs.push_back({refs1.back()});
    p.pred_labels = synth::label_report(p.generated, tax);
    yp.push_back(p.pred_labels);
    yt.push_back(p.true_labels);
  }
  MetricReport m;
  m.cases = preds.size();
  m.bleu1 = metrics::corpus_bleu(hyps, refs, 1);
  m.bleu4 = metrics::corpus_bleu(hyps, refs, 4);
  m.rouge_l = metrics::corpus_rouge_l(hyps, refs1);
  const auto ce = metrics::ce_metrics(yp, yt, avg);
  m.ce_precision = ce.precision;
  m.ce_recall = ce.recall;
  m.ce_f1 = ce.f1;
  m.ce_averaging = metrics::to_string(avg);
  return m;
}

inline std::vector<Prediction> generate_reports(const RunConfig& c, const Dataset& d, const Stage1& s1, const Stage2& s2,
                                                const std::vector<std::size_t>& idx) {
  std::vector<decoder::VisualInput> vis;
  vis.reserve(idx.size());
  for (std::size_t i : idx) vis.push_back(visual_input(s1, d.cases[i], c.decoder.use_sv, c.decoder.use_ts, c.model.k));
  std::vector<const decoder::VisualInput*> ptrs;
  for (const auto& v : vis) ptrs.push_back(&v);
  const auto ids = s2.model.generate_batch(ptrs, {c.decoder.max_len, decoder::Vocab::kEos});
  std::vector<Prediction> out;
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const Case& cs = d.cases[idx[r]];
    out.push_back({cs.id, cs.report, s2.vocab.decode(ids[r]), cs.labels, {}});
  }
  return out;
}

inline MetricReport evaluate(const RunConfig& c, const Dataset& d, const Stage1& s1, const Stage2& s2,
                             std::vector<Prediction>* predictions = nullptr) {
  const Split split = synth::parse_split(c.eval.split);
  const auto idx = d.indices(split);
  if (idx.empty()) throw ConfigError("evaluation split '" + c.eval.split + "' is empty");
  auto preds = generate_reports(c, d, s1, s2, idx);
  MetricReport m = score_predictions(preds, d.taxonomy, metrics::parse_averaging(c.eval.ce_averaging));
  m.recall = retrieval(s1, d, split, c.eval.retrieval_ks);
  m.split = c.eval.split;
  m.config_hash = config_hashes(c).eval;
  if (predictions) *predictions = std::move(preds);
  return m;
}

}  // namespace socl::harness

#pragma once

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "socl/align/queue.hpp"
#include "socl/errors.hpp"
#include "socl/harness/hash.hpp"
#include "socl/metrics/ce.hpp"
#include "socl/report/catalog.hpp"
#include "socl/synth/corpus.hpp"

namespace socl::harness {

using nlohmann::json;
using synth::Extents;

struct DataConfig {
  std::string corpus;   // corpus.jsonl; empty = generate in memory
  std::string catalog;  // catalog file; empty = built-in chest catalog
  std::size_t n_cases = 384;
  std::size_t n_structures = 4;  // anatomical structures of the built-in catalog
  double prevalence = 0.75;
  double noise = 0.2;
  double train_fraction = 2.0 / 3.0;
  double val_fraction = 1.0 / 6.0;
  std::uint64_t seed = 7;
  std::vector<std::size_t> volume{32, 32, 16};
  std::vector<std::size_t> patch{8, 8, 8};
};

struct ModelConfig {
  std::size_t d_v = 64;
  std::size_t d_q = 64;
  std::size_t d_a = 64;
  std::size_t d_o = 64;
  std::size_t d_t = 64;
  std::size_t d_p = 32;
  std::size_t text_buckets = 4096;
  std::uint64_t text_seed = 0;
  std::size_t k = 4;
  double tau_init = 0.07;
  double query_init_scale = 0.02;
};

struct PretrainConfig {
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double warmup_ratio = 0.1;
  double weight_decay = 0.01;
  double alpha = 0.2;
  bool itc = true;
  bool kl = true;
  std::string queue = "diversity";
  std::size_t queue_capacity = 64;  // N^q, per structure
  // "reproject": negatives are the queued frozen text embeddings passed
  // through the current g_t. "stored": the g_t outputs cached at enqueue.
  std::string negatives = "reproject";
};

struct DecoderConfig {
  std::size_t steps = 1000;
  std::size_t batch_size = 8;
  double lr = 1e-3;
  double warmup_ratio = 0.1;
  double weight_decay = 0.01;
  bool use_sv = true;
  bool use_ts = true;
  std::size_t width = 64;
  std::size_t heads = 4;
  std::size_t blocks = 2;
  std::size_t ff = 128;
  std::size_t max_len = 128;
};

struct EvalConfig {
  std::string split = "test";
  std::string ce_averaging = "micro";
  std::vector<std::size_t> retrieval_ks{1, 5, 10};
};

struct RunConfig {
  std::uint64_t seed = 7;
  std::string output_dir = "runs/default";
  DataConfig data;
  ModelConfig model;
  PretrainConfig pretrain;
  DecoderConfig decoder;
  EvalConfig eval;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DataConfig, corpus, catalog, n_cases, n_structures, prevalence, noise, train_fraction,
                                   val_fraction, seed, volume, patch)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(ModelConfig, d_v, d_q, d_a, d_o, d_t, d_p, text_buckets, text_seed, k, tau_init,
                                   query_init_scale)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PretrainConfig, steps, batch_size, lr, warmup_ratio, weight_decay, alpha, itc, kl, queue,
                                   queue_capacity, negatives)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(DecoderConfig, steps, batch_size, lr, warmup_ratio, weight_decay, use_sv, use_ts, width,
                                   heads, blocks, ff, max_len)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(EvalConfig, split, ce_averaging, retrieval_ks)
NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(RunConfig, seed, output_dir, data, model, pretrain, decoder, eval)

inline constexpr const char* kOutputDirEnv = "SOCL_OUTPUT_DIR";

namespace detail {

// Copies `src` onto `dst`, rejecting keys that `dst` does not have.
inline void merge_known(json& dst, const json& src, const std::string& path) {
  if (!src.is_object()) throw ConfigError("config: '" + path + "' must be an object");
  for (auto it = src.begin(); it != src.end(); ++it) {
    const std::string p = path.empty() ? it.key() : path + "." + it.key();
    if (!dst.contains(it.key())) throw ConfigError("config: unknown field '" + p + "'");
    json& d = dst[it.key()];
    if (d.is_object()) merge_known(d, it.value(), p);
    else d = it.value();
  }
}

inline Extents to_extents(const std::vector<std::size_t>& v, const char* what) {
  if (v.size() != 3) throw ConfigError(std::string("config: ") + what + " needs 3 extents");
  return {v[0], v[1], v[2]};
}

}  // namespace detail

// Sets one field by dotted path. The value is parsed as JSON when possible
// (numbers, booleans, arrays) and taken as a string otherwise.
inline void apply_override(json& j, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not path=value");
  const std::string path = assignment.substr(0, eq);
  const std::string raw = assignment.substr(eq + 1);
  json* node = &j;
  std::size_t start = 0;
  while (true) {
    const auto dot = path.find('.', start);
    const std::string key = path.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (!node->is_object() || !node->contains(key)) throw ConfigError("override: unknown field '" + path + "'");
    node = &(*node)[key];
    if (dot == std::string::npos) break;
    start = dot + 1;
  }
  if (node->is_object()) throw ConfigError("override: '" + path + "' is a section, not a field");
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;
  *node = value;
}

inline void validate(const RunConfig& c) {
  const auto& p = c.pretrain;
  if (!(p.alpha >= 0.0 && p.alpha <= 1.0)) throw ConfigError("pretrain.alpha must be in [0, 1]");
  if (p.batch_size < 1 || c.decoder.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (p.queue_capacity < 1) throw ConfigError("pretrain.queue_capacity (N^q) must be >= 1");
  align::parse_queue_policy(p.queue);
  if (p.negatives != "reproject" && p.negatives != "stored") {
    throw ConfigError("pretrain.negatives must be 'reproject' or 'stored', got '" + p.negatives + "'");
  }
  metrics::parse_averaging(c.eval.ce_averaging);
  synth::parse_split(c.eval.split);
  if (!(c.model.tau_init >= 0.01 && c.model.tau_init <= 1.0)) throw ConfigError("model.tau_init must be in [0.01, 1]");
  if (!(p.warmup_ratio >= 0.0 && p.warmup_ratio <= 1.0) || !(c.decoder.warmup_ratio >= 0.0 && c.decoder.warmup_ratio <= 1.0)) {
    throw ConfigError("warmup_ratio must be in [0, 1]");
  }
  const Extents vol = detail::to_extents(c.data.volume, "data.volume");
  const Extents patch = detail::to_extents(c.data.patch, "data.patch");
  Extents grid;
  try {
    grid = vision::patch_grid_extents(vol, patch);
  } catch (const ShapeError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  const std::size_t n_v = grid[0] * grid[1] * grid[2];
  if (c.model.k < 1 || c.model.k > n_v) {
    throw ConfigError("model.k must be in [1, N^v=" + std::to_string(n_v) + "], got " + std::to_string(c.model.k));
  }
  if (!c.decoder.use_sv && !c.decoder.use_ts) throw ConfigError("decoder needs use_sv or use_ts");
  if (c.decoder.heads == 0 || c.decoder.width % c.decoder.heads != 0) throw ConfigError("decoder.width must be divisible by decoder.heads");
  if (c.data.n_cases < 1) throw ConfigError("data.n_cases must be >= 1");
  if (c.eval.retrieval_ks.empty()) throw ConfigError("eval.retrieval_ks must not be empty");
  for (std::size_t k : c.eval.retrieval_ks)
    if (k < 1) throw ConfigError("eval.retrieval_ks entries must be >= 1");
}

inline json default_config_json() { return json(RunConfig{}); }

// Defaults, then the optional file, then overrides, then SOCL_OUTPUT_DIR.
inline RunConfig resolve_config(const std::filesystem::path& file, const std::vector<std::string>& overrides) {
  json j = default_config_json();
  if (!file.empty()) {
    std::ifstream in(file);
    if (!in) throw ConfigError("cannot open config " + file.string());
    json user = json::parse(in, nullptr, false);
    if (user.is_discarded()) throw ConfigError("config " + file.string() + " is not valid JSON");
    detail::merge_known(j, user, "");
  }
  for (const auto& o : overrides) apply_override(j, o);
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) j["output_dir"] = env;
  RunConfig c;
  try {
    c = j.get<RunConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

inline RunConfig config_from_json(const json& j) {
  json full = default_config_json();
  detail::merge_known(full, j, "");
  RunConfig c;
  try {
    c = full.get<RunConfig>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  validate(c);
  return c;
}

inline report::StructureCatalog resolve_catalog(const RunConfig& c) {
  if (c.data.catalog.empty()) return report::StructureCatalog::chest(c.data.n_structures);
  try {
    return report::StructureCatalog::load(c.data.catalog);
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("catalog: ") + e.what());
  }
}

inline synth::GeneratorConfig generator_config(const RunConfig& c) {
  synth::GeneratorConfig g;
  g.prevalence = c.data.prevalence;
  g.noise = c.data.noise;
  g.train_fraction = c.data.train_fraction;
  g.val_fraction = c.data.val_fraction;
  g.volume = detail::to_extents(c.data.volume, "data.volume");
  g.patch = detail::to_extents(c.data.patch, "data.patch");
  return g;
}

// Hashes are chained so a later stage's hash covers every earlier input.
// Output locations are excluded so relocated runs hash identically.
struct ConfigHashes {
  std::string stage1;
  std::string stage2;
  std::string eval;
};

inline ConfigHashes config_hashes(const RunConfig& c) {
  json data = c.data;
  data.erase("corpus");
  data.erase("catalog");
  data["catalog_text"] = resolve_catalog(c).to_text();
  if (!c.data.corpus.empty()) data["corpus_sha256"] = file_sha256(c.data.corpus);
  const json s1 = {{"seed", c.seed}, {"data", data}, {"model", c.model}, {"pretrain", c.pretrain}};
  ConfigHashes h;
  h.stage1 = sha256_hex(s1.dump());
  h.stage2 = sha256_hex(json{{"stage1", h.stage1}, {"decoder", c.decoder}}.dump());
  h.eval = sha256_hex(json{{"stage2", h.stage2}, {"eval", c.eval}}.dump());
  return h;
}

}  // namespace socl::harness

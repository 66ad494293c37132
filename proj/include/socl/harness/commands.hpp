#pragma once

#include <chrono>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "socl/harness/pipeline.hpp"

namespace socl::harness {

namespace fs = std::filesystem;

inline constexpr const char* kVersion = "socl 0.1.0";

// File names inside a run directory.
namespace files {
inline constexpr const char* kConfig = "config.json";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kStage1 = "stage1.ckpt";
inline constexpr const char* kStage1Loss = "stage1_loss.jsonl";
inline constexpr const char* kStage2 = "stage2.ckpt";
inline constexpr const char* kStage2Loss = "stage2_loss.jsonl";
inline constexpr const char* kMetrics = "metrics.json";
inline constexpr const char* kPredictions = "predictions.jsonl";
inline constexpr const char* kRetrieval = "retrieval.json";
}  // namespace files

// ---------------------------------------------------------------- manifest

inline void to_json(json& j, const ConfigHashes& h) { j = {{"stage1", h.stage1}, {"stage2", h.stage2}, {"eval", h.eval}}; }

inline json read_json_file(const fs::path& p) {
  json j = json::parse(synth::read_file(p), nullptr, false);
  if (j.is_discarded()) throw FormatError(p.string() + " is not valid JSON");
  return j;
}

inline void write_json_file(const fs::path& p, const json& j) { synth::write_file(p, j.dump(2) + "\n"); }

inline json load_manifest(const fs::path& dir) {
  const fs::path p = dir / files::kManifest;
  if (!fs::exists(p)) return json{{"version", kVersion}};
  return read_json_file(p);
}

inline void save_manifest(const fs::path& dir, json m) {
  m["version"] = kVersion;
  write_json_file(dir / files::kManifest, m);
}

inline void write_config_snapshot(const RunConfig& c) {
  json j = c;
  j["config_hash"] = config_hashes(c);
  write_json_file(fs::path(c.output_dir) / files::kConfig, j);
}

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// JSON lines behind one provenance header line.
inline std::string jsonl(const json& header, const std::vector<json>& rows) {
  std::string out = header.dump() + "\n";
  for (const auto& r : rows) out += r.dump() + "\n";
  return out;
}

// Loads a checkpoint recorded in the manifest, checking its digest and the
// config hash it was written under.
inline ten::ArrayTable verified_checkpoint(const fs::path& dir, const json& manifest, const char* stage,
                                           const std::string& expected_hash) {
  if (!manifest.contains("checkpoints") || !manifest["checkpoints"].contains(stage)) {
    throw ContractError(std::string("no ") + stage + " checkpoint recorded in " + (dir / files::kManifest).string());
  }
  const json& entry = manifest["checkpoints"][stage];
  const fs::path path = dir / entry.at("path").get<std::string>();
  if (!fs::exists(path)) throw ContractError(std::string(stage) + " checkpoint missing: " + path.string());
  const std::string bytes = synth::read_file(path);
  const std::string sha = sha256_hex(bytes);
  if (sha != entry.at("sha256").get<std::string>()) {
    throw ContractError(std::string(stage) + " checkpoint digest " + sha.substr(0, 12) + " does not match manifest " +
                        entry.at("sha256").get<std::string>().substr(0, 12));
  }
  ten::ArrayTable t = ten::ArrayTable::deserialize(bytes);
  const auto it = t.meta().find("config_hash");
  if (it == t.meta().end() || it->second != expected_hash) {
    throw ContractError(std::string(stage) + " checkpoint was written under a different config (hash " +
                        (it == t.meta().end() ? std::string("none") : it->second.substr(0, 12)) + ", expected " +
                        expected_hash.substr(0, 12) + ")");
  }
  return t;
}

}  // namespace detail

// Stage-1 model of a run directory, verified against the manifest, the
// current config and the recorded frozen-parameter digest.
inline Stage1 load_stage1(const RunConfig& c, const Dataset& d) {
  const fs::path dir(c.output_dir);
  const json m = load_manifest(dir);
  const auto t = detail::verified_checkpoint(dir, m, "stage1", config_hashes(c).stage1);
  Stage1 s = stage1_from_table(c, d.catalog.size(), t);
  const std::string frozen = params_sha256(s.frozen_table());
  if (frozen != m["checkpoints"]["stage1"].at("frozen_sha256").get<std::string>()) {
    throw ContractError("stage-1 frozen-parameter digest does not match the manifest");
  }
  return s;
}

inline Stage2 load_stage2(const RunConfig& c, const Stage1& s1) {
  const fs::path dir(c.output_dir);
  const json m = load_manifest(dir);
  const auto t = detail::verified_checkpoint(dir, m, "stage2", config_hashes(c).stage2);
  const auto it = t.meta().find("stage1_frozen_sha256");
  if (it == t.meta().end() || it->second != params_sha256(s1.frozen_table())) {
    throw ContractError("stage-2 checkpoint was trained on a different stage-1 model");
  }
  return Stage2::from_table(t);
}

// ---------------------------------------------------------------- commands

// Writes the generated corpus to `dir` (corpus.jsonl, volumes/, catalog.txt).
inline fs::path cmd_gen_data(const RunConfig& c, const fs::path& dir) {
  const auto catalog = resolve_catalog(c);
  std::vector<synth::SyntheticCase> cases;
  try {
    cases = synth::generate_corpus(c.data.n_cases, catalog, generator_config(c), c.data.seed);
  } catch (const ParameterError& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }
  synth::write_file(dir / "catalog.txt", catalog.to_text());
  return synth::write_corpus(dir, cases);
}

struct PretrainOutcome {
  std::string checkpoint_sha256;
  LossRecord first;
  LossRecord last;
};

inline PretrainOutcome cmd_pretrain(const RunConfig& c, const std::function<void(const LossRecord&)>& on_step = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir(c.output_dir);
  const ConfigHashes h = config_hashes(c);
  const Dataset d = load_dataset(c);
  auto res = pretrain(c, d, on_step);

  ten::ArrayTable t = res.model.checkpoint();
  t.meta()["config_hash"] = h.stage1;
  const std::string bytes = t.serialize();
  synth::write_file(dir / files::kStage1, bytes);
  std::vector<json> rows;
  for (const auto& r : res.log) rows.push_back(to_json(r));
  synth::write_file(dir / files::kStage1Loss, detail::jsonl(json{{"config_hash", h.stage1}}, rows));
  write_config_snapshot(c);

  // A new stage 1 invalidates everything downstream.
  json m{{"config_hash", h}};
  m["checkpoints"]["stage1"] = {{"path", files::kStage1},
                                {"sha256", sha256_hex(bytes)},
                                {"frozen_sha256", params_sha256(res.model.frozen_table())}};
  m["files"] = {{"stage1_loss", files::kStage1Loss}, {"config", files::kConfig}};
  m["timings_s"]["pretrain"] = detail::seconds_since(t0);
  save_manifest(dir, m);

  PretrainOutcome out{sha256_hex(bytes), {}, {}};
  if (!res.log.empty()) {
    out.first = res.log.front();
    out.last = res.log.back();
  }
  return out;
}

inline std::string cmd_train_decoder(const RunConfig& c, const StepHook& hook = {}) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path dir(c.output_dir);
  const ConfigHashes h = config_hashes(c);
  const Dataset d = load_dataset(c);
  Stage1 s1 = load_stage1(c, d);
  auto res = train_decoder(c, d, s1, hook);

  ten::ArrayTable t = res.model.checkpoint();
  t.meta()["config_hash"] = h.stage2;
  t.meta()["stage1_frozen_sha256"] = res.frozen_sha256;
  const std::string bytes = t.serialize();
  synth::write_file(dir / files::kStage2, bytes);
  std::vector<json> rows;
  for (const auto& [step, l] : res.log) rows.push_back({{"step", step}, {"L_rg", l}});
  synth::write_file(dir / files::kStage2Loss, detail::jsonl(json{{"config_hash", h.stage2}}, rows));
  write_config_snapshot(c);

  json m = load_manifest(dir);
  m["config_hash"] = h;
  m["checkpoints"]["stage2"] = {{"path", files::kStage2}, {"sha256", sha256_hex(bytes)}};
  m["files"]["stage2_loss"] = files::kStage2Loss;
  m["files"].erase("metrics");
  m["files"].erase("predictions");
  m["timings_s"]["train_decoder"] = detail::seconds_since(t0);
  save_manifest(dir, m);
  return sha256_hex(bytes);
}

inline json to_json(const Prediction& p) {
  return {{"id", p.id}, {"reference", p.reference}, {"generated", p.generated}, {"true_labels", p.true_labels},
          {"pred_labels", p.pred_labels}};
}

// Config hash plus the digests of the checkpoints that produced an output.
inline json provenance(const RunConfig& c, const std::string& hash) {
  const json m = load_manifest(fs::path(c.output_dir));
  json h{{"config_hash", hash}};
  for (const char* stage : {"stage1", "stage2"})
    if (m.contains("checkpoints") && m["checkpoints"].contains(stage)) h[std::string(stage) + "_sha256"] = m["checkpoints"][stage]["sha256"];
  return h;
}

namespace detail {

inline void write_predictions(const RunConfig& c, const std::string& hash, const std::vector<Prediction>& preds) {
  std::vector<json> rows;
  for (const auto& p : preds) rows.push_back(to_json(p));
  synth::write_file(fs::path(c.output_dir) / files::kPredictions, jsonl(provenance(c, hash), rows));
}

inline void record_outputs(const RunConfig& c, const std::vector<std::pair<std::string, std::string>>& entries,
                           const char* timing, double seconds) {
  const fs::path dir(c.output_dir);
  json m = load_manifest(dir);
  for (const auto& [k, v] : entries) m["files"][k] = v;
  m["timings_s"][timing] = seconds;
  save_manifest(dir, m);
}

}  // namespace detail

// Generated reports for the eval split, labeled by the rule labeler.
inline std::vector<Prediction> cmd_generate(const RunConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset d = load_dataset(c);
  const Stage1 s1 = load_stage1(c, d);
  const Stage2 s2 = load_stage2(c, s1);
  const auto idx = d.indices(synth::parse_split(c.eval.split));
  if (idx.empty()) throw ConfigError("evaluation split '" + c.eval.split + "' is empty");
  auto preds = generate_reports(c, d, s1, s2, idx);
  for (auto& p : preds) p.pred_labels = synth::label_report(p.generated, d.taxonomy);
  detail::write_predictions(c, config_hashes(c).eval, preds);
  detail::record_outputs(c, {{"predictions", files::kPredictions}}, "generate", detail::seconds_since(t0));
  return preds;
}

inline MetricReport cmd_eval(const RunConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset d = load_dataset(c);
  const Stage1 s1 = load_stage1(c, d);
  const Stage2 s2 = load_stage2(c, s1);
  std::vector<Prediction> preds;
  MetricReport m = evaluate(c, d, s1, s2, &preds);
  write_json_file(fs::path(c.output_dir) / files::kMetrics, to_json(m));
  detail::write_predictions(c, m.config_hash, preds);
  detail::record_outputs(c, {{"metrics", files::kMetrics}, {"predictions", files::kPredictions}}, "eval",
                         detail::seconds_since(t0));
  return m;
}

inline std::map<std::size_t, double> cmd_retrieve(const RunConfig& c) {
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset d = load_dataset(c);
  const Stage1 s1 = load_stage1(c, d);
  const auto r = retrieval(s1, d, synth::parse_split(c.eval.split), c.eval.retrieval_ks);
  json j{{"config_hash", config_hashes(c).stage1}, {"split", c.eval.split}};
  for (const auto& [k, v] : r) j["recall@" + std::to_string(k)] = v;
  write_json_file(fs::path(c.output_dir) / files::kRetrieval, j);
  detail::record_outputs(c, {{"retrieval", files::kRetrieval}}, "retrieve", detail::seconds_since(t0));
  return r;
}

// -------------------------------------------------------------- ablations

struct Variant {
  std::string name;
  std::vector<std::string> overrides;
};

// Rows (a)-(d) and Full of the pretraining/input ablation.
inline std::vector<Variant> component_variants() {
  const std::string sv_only = "decoder.use_ts=false";
  return {{"a", {"pretrain.itc=false", "pretrain.kl=false", "pretrain.queue=fifo", sv_only}},
          {"b", {"pretrain.kl=false", "pretrain.queue=fifo", sv_only}},
          {"c", {"pretrain.queue=fifo", sv_only}},
          {"d", {sv_only}},
          {"full", {}}};
}

inline std::vector<Variant> alpha_variants() {
  std::vector<Variant> out;
  for (const char* a : {"0", "0.1", "0.2", "0.3", "0.4"}) out.push_back({std::string("alpha=") + a, {std::string("pretrain.alpha=") + a}});
  return out;
}

inline std::vector<Variant> k_variants() {
  std::vector<Variant> out;
  for (const char* k : {"1", "2", "4", "8"}) out.push_back({std::string("k=") + k, {std::string("model.k=") + k}});
  return out;
}

inline std::vector<Variant> ablation_grid(const std::string& grid) {
  if (grid == "components") return component_variants();
  if (grid == "alpha") return alpha_variants();
  if (grid == "k") return k_variants();
  throw ConfigError("ablation grid must be components, alpha or k, got '" + grid + "'");
}

// Runs pretrain, train-decoder and eval for every variant of the grid in
// <output_dir>/ablate-<grid>/<variant>/ and writes summary.json beside them.
inline json cmd_ablate(const fs::path& config_file, const std::vector<std::string>& overrides, const std::string& grid,
                       const std::function<void(const std::string&)>& progress = {}) {
  const RunConfig base = resolve_config(config_file, overrides);
  const fs::path root = fs::path(base.output_dir) / ("ablate-" + grid);
  json summary{{"grid", grid}, {"rows", json::array()}};
  for (const auto& v : ablation_grid(grid)) {
    auto o = overrides;
    o.insert(o.end(), v.overrides.begin(), v.overrides.end());
    RunConfig c = resolve_config(config_file, o);
    c.output_dir = (root / v.name).string();  // the grid layout wins over SOCL_OUTPUT_DIR
    if (progress) progress(v.name);
    cmd_pretrain(c);
    cmd_train_decoder(c);
    const MetricReport m = cmd_eval(c);
    summary["rows"].push_back({{"name", v.name}, {"overrides", v.overrides}, {"metrics", to_json(m)}});
  }
  write_json_file(root / "summary.json", summary);
  return summary;
}

}  // namespace socl::harness

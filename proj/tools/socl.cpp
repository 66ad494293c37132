// socl: two-stage structure-observation pretraining and report generation.
//
// Exit codes: 0 success, 1 other failure, 2 config or input error,
// 3 contract violation (hash, freeze, artifact integrity), 4 numeric failure.

#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "socl/harness/commands.hpp"

namespace {

using namespace socl;
using harness::json;

struct Common {
  std::string config;
  std::vector<std::string> sets;
};

void add_common(CLI::App* app, Common& c) {
  app->add_option("-c,--config", c.config, "JSON config file (fields absent from it keep their defaults)");
  app->add_option("-s,--set", c.sets, "Override a config field by dotted path, e.g. --set pretrain.alpha=0.3")
      ->allow_extra_args(false);
}

harness::RunConfig resolve(const Common& c) { return harness::resolve_config(c.config, c.sets); }

void print(const json& j) { std::cout << j.dump(2) << "\n"; }

int run(int argc, char** argv) {
  CLI::App app{"Structure-observation pretraining and report generation on a synthetic CT corpus"};
  app.require_subcommand(1);
  app.set_version_flag("--version", harness::kVersion);

  Common common;
  std::string out_dir;
  std::string grid = "components";
  bool quiet = false;

  auto* cfg = app.add_subcommand("config", "Print the resolved config and its stage hashes");
  add_common(cfg, common);
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic corpus (corpus.jsonl, volumes/, catalog.txt)");
  add_common(gen, common);
  gen->add_option("-o,--out", out_dir, "Corpus directory (default <output_dir>/data)");
  auto* pre = app.add_subcommand("pretrain", "Stage 1: align structure queries with report sentences");
  add_common(pre, common);
  pre->add_flag("-q,--quiet", quiet, "No per-step progress");
  auto* dec = app.add_subcommand("train-decoder", "Stage 2: train the report decoder on frozen stage-1 features");
  add_common(dec, common);
  auto* genr = app.add_subcommand("generate", "Write generated reports for the eval split");
  add_common(genr, common);
  auto* ev = app.add_subcommand("eval", "Generate and score reports on the eval split");
  add_common(ev, common);
  auto* ret = app.add_subcommand("retrieve", "Report-to-volume retrieval recall of the stage-1 model");
  add_common(ret, common);
  auto* abl = app.add_subcommand("ablate", "Run an ablation grid end to end");
  add_common(abl, common);
  abl->add_option("-g,--grid", grid, "components, alpha or k")->check(CLI::IsMember({"components", "alpha", "k"}));

  CLI11_PARSE(app, argc, argv);

  if (cfg->parsed()) {
    const auto c = resolve(common);
    json j = c;
    j["config_hash"] = harness::config_hashes(c);
    print(j);
  } else if (gen->parsed()) {
    const auto c = resolve(common);
    const auto dir = out_dir.empty() ? std::filesystem::path(c.output_dir) / "data" : std::filesystem::path(out_dir);
    std::cout << harness::cmd_gen_data(c, dir).string() << "\n";
  } else if (pre->parsed()) {
    const auto c = resolve(common);
    const std::size_t every = std::max<std::size_t>(1, c.pretrain.steps / 10);
    const auto r = harness::cmd_pretrain(c, [&](const harness::LossRecord& rec) {
      if (!quiet && (rec.step % every == 0 || rec.step + 1 == c.pretrain.steps)) {
        std::fprintf(stderr, "step %zu L_itc %.4f L_kl %.4f L_pre %.4f tau %.4f\n", rec.step, rec.itc, rec.kl, rec.pre, rec.tau);
      }
    });
    print({{"stage1_sha256", r.checkpoint_sha256}, {"L_pre_first", r.first.pre}, {"L_pre_last", r.last.pre}});
  } else if (dec->parsed()) {
    print({{"stage2_sha256", harness::cmd_train_decoder(resolve(common))}});
  } else if (genr->parsed()) {
    const auto c = resolve(common);
    const auto preds = harness::cmd_generate(c);
    std::cout << "# " << harness::provenance(c, harness::config_hashes(c).eval).dump() << "\n";
    for (const auto& p : preds) std::cout << p.id << "\t" << p.generated << "\n";
  } else if (ev->parsed()) {
    print(harness::to_json(harness::cmd_eval(resolve(common))));
  } else if (ret->parsed()) {
    json j = json::object();
    for (const auto& [k, v] : harness::cmd_retrieve(resolve(common))) j["recall@" + std::to_string(k)] = v;
    print(j);
  } else if (abl->parsed()) {
    print(harness::cmd_ablate(common.config, common.sets, grid,
                              [](const std::string& v) { std::fprintf(stderr, "variant %s\n", v.c_str()); }));
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const socl::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const socl::ParameterError& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return 2;
  } catch (const socl::DegenerateInputError& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return 2;
  } catch (const socl::ShapeError& e) {
    std::fprintf(stderr, "invalid input: %s\n", e.what());
    return 2;
  } catch (const socl::ContractError& e) {
    std::fprintf(stderr, "contract violation: %s\n", e.what());
    return 3;
  } catch (const socl::FormatError& e) {
    std::fprintf(stderr, "corrupt artifact: %s\n", e.what());
    return 3;
  } catch (const socl::NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}

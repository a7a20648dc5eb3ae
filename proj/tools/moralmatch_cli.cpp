#include <CLI11.hpp>
#include <iostream>

#include "moralmatch/common.hpp"
#include "moralmatch/config.hpp"
#include "moralmatch/pipeline.hpp"

namespace mp = moralmatch::pipeline;

int main(int argc, char** argv) {
  CLI::App app{"moralmatch: matched-pair analysis of gender and moral judgments"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path;
  bool force = false;
  bool quiet = false;
  app.add_option("-c,--config", config_path, "configuration file (JSON)")->required()->check(CLI::ExistingFile);
  app.add_flag("-f,--force", force, "rerun stages even when their inputs are unchanged");
  app.add_flag("-q,--quiet", quiet, "suppress progress messages");

  std::vector<std::pair<CLI::App*, mp::Stage>> stage_cmds;
  for (auto s : {mp::Stage::synth, mp::Stage::ingest, mp::Stage::extract, mp::Stage::topics, mp::Stage::embed,
                 mp::Stage::propensity, mp::Stage::match, mp::Stage::estimate, mp::Stage::report}) {
    stage_cmds.emplace_back(app.add_subcommand(std::string(mp::to_string(s)), "run the " + std::string(mp::to_string(s)) + " stage"), s);
  }
  auto* run = app.add_subcommand("run", "run ingest through report");
  bool with_synth = false;
  run->add_flag("--synth", with_synth, "generate the synthetic corpus first");

  auto* serve = app.add_subcommand("annotate-serve", "serve the pair annotation protocol over HTTP");
  int port = -1;
  std::string host;
  serve->add_option("-p,--port", port, "listening port (overrides annotate.port)");
  serve->add_option("--host", host, "listening address (overrides annotate.host)");

  auto* verify = app.add_subcommand("verify", "re-hash the files recorded in a stage manifest");
  std::string verify_stage;
  verify->add_option("stage", verify_stage, "stage name")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    auto cfg = moralmatch::config::load_config(config_path);
    mp::RunOptions opts;
    opts.force = force;
    opts.log = quiet ? nullptr : &std::cerr;

    std::vector<mp::Stage> stages;
    for (const auto& [cmd, s] : stage_cmds)
      if (cmd->parsed()) stages.push_back(s);
    if (run->parsed()) {
      if (with_synth) stages.push_back(mp::Stage::synth);
      const auto& all = mp::analysis_stages();
      stages.insert(stages.end(), all.begin(), all.end());
    }
    if (serve->parsed()) {
      if (port >= 0) cfg.annotate.port = port;
      if (!host.empty()) cfg.annotate.host = host;
      stages.push_back(mp::Stage::annotate_serve);
    }
    if (verify->parsed()) {
      const auto bad = mp::verify_manifest(cfg, mp::parse_stage(verify_stage));
      for (const auto& b : bad) std::cout << "mismatch: " << b << "\n";
      if (bad.empty()) std::cout << "ok\n";
      return bad.empty() ? 0 : 1;
    }
    mp::run_stages(stages, cfg, opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

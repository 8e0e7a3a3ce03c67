// ipart: generate synthetic part scenes, train, evaluate, visualize, ablate.

#include <iostream>

#include <CLI11.hpp>

#include "ipart/cli.hpp"
#include "ipart/errors.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Region-grouping part discovery on synthetic scenes"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint;
  std::uint64_t seed = 0;
  int threads = 1;
  ipart::Index samples = 4;
  std::vector<std::string> overrides;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_path, "key=value configuration file")->check(CLI::ExistingFile);
    cmd->add_option("--out", out_dir, "output directory");
    cmd->add_option("--seed", seed, "run seed");
    cmd->add_option("--threads", threads, "worker threads (1 = deterministic reference)")
        ->check(CLI::PositiveNumber);
    cmd->add_option("--set", overrides, "extra key=value overrides, applied last");
  };
  for (const char* name : {"gen", "train", "eval", "visualize", "ablate"}) {
    CLI::App* cmd = app.add_subcommand(name);
    add_common(cmd);
    if (std::string(name) == "eval" || std::string(name) == "visualize") {
      cmd->add_option("--checkpoint", checkpoint, "checkpoint (default <out>/checkpoint.rgt)");
    }
    if (std::string(name) == "visualize") cmd->add_option("--samples", samples, "test samples to render");
  }
  CLI11_PARSE(app, argc, argv);
  const CLI::App* cmd = app.get_subcommands().front();

  ipart::RunConfig cfg;
  try {
    if (!config_path.empty()) cfg = ipart::RunConfig::load(config_path);
    for (const auto& kv : overrides) cfg.apply(kv);
    if (cmd->count("--out")) cfg.out = out_dir;
    if (cmd->count("--seed")) cfg.seed = seed;
    if (cmd->count("--threads")) cfg.threads = threads;
  } catch (const ipart::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return ipart::exit_config;
  } catch (const ipart::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return ipart::exit_io;
  }

  ipart::RunOptions opts;
  opts.checkpoint = checkpoint;
  opts.samples = samples;
  return ipart::run(cmd->get_name(), cfg, opts, std::cerr);
}

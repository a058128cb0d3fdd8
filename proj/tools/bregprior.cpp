#include <iostream>

#include <CLI11.hpp>

#include "bregprior/commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Constrained imaging with a deep generative prior"};
  app.require_subcommand(1);
  bregprior::CommandOptions opt;
  std::string config, out, bank, checkpoint;
  std::uint64_t seed = 0;
  std::size_t stop_after = 0;

  const auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config, "INI config file");
    sub->add_option("--out", out, "Output directory");
    sub->add_option("--seed", seed, "Override every seed in the config");
  };
  auto* gen = app.add_subcommand("gen", "Generate the synthetic survey");
  common(gen);
  auto* invert = app.add_subcommand("invert", "Constrained Bregman inversion");
  common(invert);
  invert->add_option("--bank", bank, "Bank directory written by gen")->required();
  auto* train = app.add_subcommand("train", "Train the generator by expectation maximization");
  common(train);
  train->add_option("--bank", bank, "Bank directory written by gen")->required();
  train->add_flag("--resume", opt.resume, "Continue from the checkpoint in --out");
  train->add_option("--stop-after-round", stop_after, "Stop after this many completed rounds");
  auto* sample = app.add_subcommand("sample", "Write generator realizations");
  common(sample);
  sample->add_option("--checkpoint", checkpoint, "Training output or checkpoint directory")->required();
  auto* stats = app.add_subcommand("stats", "Mean, pointwise std and histograms");
  common(stats);
  stats->add_option("--checkpoint", checkpoint, "Training output or checkpoint directory")->required();
  stats->add_option("--bank", bank, "Bank directory, for quality metrics against the truth");
  auto* check = app.add_subcommand("check", "Run the property self-checks");
  common(check);
  check->add_option("--inject-fault", opt.inject_fault, "Fault fixture (adjoint-sign)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : bregprior::kUsageError;
  }
  CLI::App* sub = app.get_subcommands().front();
  if (!config.empty()) opt.config = config;
  opt.out = out;
  if (sub->count("--seed") > 0) opt.seed = seed;
  opt.bank = bank;
  opt.checkpoint = checkpoint;
  if (sub->get_option_no_throw("--stop-after-round") && sub->count("--stop-after-round") > 0)
    opt.stop_after_round = stop_after;
  return bregprior::run_command(sub->get_name(), opt, std::cout, std::cerr);
}

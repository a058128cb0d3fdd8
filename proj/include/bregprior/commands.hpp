#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>

#include "bregprior/config.hpp"
#include "bregprior/testbed.hpp"

namespace bregprior {

enum ExitCode : int { kOk = 0, kPropertyFailure = 1, kUsageError = 2, kNumericalAbort = 3 };

struct CommandOptions {
  std::optional<std::filesystem::path> config;
  std::filesystem::path out;
  std::optional<std::uint64_t> seed;
  std::filesystem::path bank;
  std::filesystem::path checkpoint;
  bool resume = false;
  std::optional<std::size_t> stop_after_round;
  std::string inject_fault;  ///< check only: "adjoint-sign"
};

/// Bank directory as written by `gen`.
struct LoadedBank {
  Survey survey;
  std::optional<Grid> truth;
  NoiseReport noise;
};

void write_bank_dir(const std::filesystem::path& dir, const RunConfig& config, const GroundTruth& truth,
                    const Survey& survey, const NoiseReport& noise);
LoadedBank load_bank_dir(const std::filesystem::path& dir);

int cmd_gen(const CommandOptions& opt, std::ostream& out);
int cmd_invert(const CommandOptions& opt, std::ostream& out);
int cmd_train(const CommandOptions& opt, std::ostream& out);
int cmd_sample(const CommandOptions& opt, std::ostream& out);
int cmd_stats(const CommandOptions& opt, std::ostream& out);
int cmd_check(const CommandOptions& opt, std::ostream& out);

/// Runs the named command, mapping exceptions to exit codes and messages on
/// `err`.
int run_command(const std::string& name, const CommandOptions& opt, std::ostream& out, std::ostream& err);

}  // namespace bregprior

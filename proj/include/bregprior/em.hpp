#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "bregprior/bregman.hpp"
#include "bregprior/net.hpp"
#include "bregprior/projections.hpp"
#include "bregprior/sgld.hpp"

namespace bregprior {

/// One data batch with its own slack image and latent code.
struct TrainTuple {
  std::size_t id = 0;
  std::vector<std::size_t> experiment_ids;
  BregmanState state;
  std::vector<double> z;
};

/// Linear ramp from `initial` to `final` over the first `ramp_rounds`
/// rounds, constant afterwards.
struct LambdaSchedule {
  double initial = 1.0;
  double final = 1.0;
  std::size_t ramp_rounds = 0;

  [[nodiscard]] double at(std::size_t round) const;
};

enum class MStepLoss { Mean, Sum };

struct TrainConfig {
  std::size_t tuples = 8;
  std::size_t rounds = 50;
  std::size_t bregman_steps_per_round = 8;
  SgldParams sgld;
  LambdaSchedule lambda;
  double eta = 1e-3;
  std::size_t m_steps_per_round = 1;
  MStepLoss loss = MStepLoss::Mean;
  /// Ball radii are scaled from 1 to this factor over the λ ramp.
  double radius_scale_final = 1.0;
  std::uint64_t seed = 6;
  std::size_t threads = 1;
  BregmanOptions bregman;

  void validate(std::size_t bank_size) const;
};

struct RoundRecord {
  std::size_t round = 0;  ///< 1-based
  double lambda = 0.0;
  double mean_data_misfit = 0.0;   ///< mean over tuples of ½Σ_{k∈batch}‖A_k x_i − y_k‖²
  double mean_prior_misfit = 0.0;  ///< mean over tuples of ‖x_i − g(z_i, w)‖ after the M-step
  double m_loss = 0.0;             ///< M-step loss before the first update
};

struct TrainState {
  std::size_t round = 0;  ///< completed rounds
  std::vector<double> weights;
  std::vector<TrainTuple> tuples;
};

struct TrainHooks {
  /// Called after every Bregman step. With threads > 1 it may run
  /// concurrently for different tuples.
  std::function<void(const TrainTuple&, const StepRecord&)> on_step;
  /// Called after every round, once the weights are updated.
  std::function<void(const TrainState&, const RoundRecord&)> on_round;
  /// Stop after this many completed rounds (simulates an interruption).
  std::size_t stop_after_round = static_cast<std::size_t>(-1);
};

struct TrainResult {
  TrainState state;
  std::vector<RoundRecord> rounds;
  /// Bregman step records per tuple, in step order.
  std::vector<std::vector<StepRecord>> bregman_traces;
};

struct MStepReport {
  double loss = 0.0;
  std::vector<double> tuple_losses;
};

/// Round-robin partition of the bank, zero images, z_i ~ N(0, I).
std::vector<TrainTuple> init_tuples(const ExperimentBank& bank, std::size_t n, std::size_t latent_dim,
                                    std::uint64_t seed);

/// Constraint stack in effect during `round` (ball radii relaxed per config).
ConstraintStack stack_for_round(const ConstraintStack& base, const TrainConfig& config, std::size_t round);

/// Per tuple: bregman_steps_per_round augmented steps within its batch, then
/// an SGLD chain warm-started from its z. Weights are read-only.
void e_step(std::vector<TrainTuple>& tuples, const ExperimentBank& bank, const Generator& net,
            std::span<const double> w, double lambda, const ConstraintStack& stack, const TrainConfig& config,
            std::size_t round, const TrainHooks& hooks = {},
            std::vector<std::vector<StepRecord>>* traces = nullptr);

/// One gradient step on Σ_i ‖x_i − g(z_i, w)‖² (divided by n for the mean
/// convention), gradients reduced in ascending tuple order.
MStepReport m_step(const std::vector<TrainTuple>& tuples, const Generator& net, std::vector<double>& w, double eta,
                   MStepLoss loss = MStepLoss::Mean);

TrainState initial_train_state(const ExperimentBank& bank, const Generator& net, std::vector<double> weights,
                               const TrainConfig& config);

/// Runs rounds state.round .. config.rounds-1.
TrainResult train(const ExperimentBank& bank, const ConstraintStack& stack, const Generator& net, TrainState state,
                  const TrainConfig& config, const TrainHooks& hooks = {});

void write_round_trace_csv(const std::vector<RoundRecord>& rounds, const std::string& path);
std::string round_trace_row(const RoundRecord& r);

// Checkpoint directory: weights.dpnw, state.txt, tuples.csv, latents.csv,
// tuple_<id>_primal.pgrd, tuple_<id>_dual.pgrd.
void write_checkpoint(const std::filesystem::path& dir, const NetArch& arch, const TrainState& state);
TrainState read_checkpoint(const std::filesystem::path& dir, const NetArch& arch);

}  // namespace bregprior

#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "bregprior/grid.hpp"
#include "bregprior/linops.hpp"
#include "bregprior/net.hpp"
#include "bregprior/projections.hpp"

namespace bregprior {

/// One source experiment: operator A_i and observed data y_i.
struct Experiment {
  LinearOp op;
  std::vector<double> data;
};

struct ExperimentBank {
  Shape model_shape;
  std::vector<Experiment> experiments;

  [[nodiscard]] std::size_t size() const noexcept { return experiments.size(); }
  [[nodiscard]] const Experiment& operator[](std::size_t i) const { return experiments[i]; }
  void validate() const;
};

/// Dual accumulator x̃ and its projection x onto the feasible set.
struct BregmanState {
  Grid dual;
  Grid primal;
  std::size_t iter = 0;

  static BregmanState zeros(Shape shape);
};

enum class SteplengthRule {
  /// t from the stacked residual (A x − y, λ(x − g)) and the full update direction.
  Stacked,
  /// t from the data residual and A^T r only.
  DataOnly,
};

struct BregmanOptions {
  double t_max = 10.0;
  SteplengthRule rule = SteplengthRule::Stacked;
  /// Record the objective over the draw set after every step.
  bool track_objective = true;
};

struct Steplength {
  double t = 0.0;
  bool skipped = false;
};

/// ‖r‖² / ‖g‖², capped at t_max; a gradient with ‖g‖² < 1e-30 gives t = 0
/// and flags the step as skipped.
Steplength dynamic_steplength(double residual_sq, double gradient_sq, double t_max = 10.0);
Steplength dynamic_steplength(std::span<const double> residual, std::span<const double> gradient,
                              double t_max = 10.0);

struct StepRecord {
  std::size_t iter = 0;  ///< iteration number after the step (1-based)
  std::size_t experiment = 0;
  double t = 0.0;
  double residual_norm = 0.0;  ///< ‖A_k x − y_k‖ at the primal used by the step
  double objective = std::numeric_limits<double>::quiet_NaN();
  bool skipped = false;
  bool projection_converged = true;
};

/// Non-finite iterate; carries the state from before the failing step.
class BregmanAbort : public NumericalAbort {
 public:
  BregmanAbort(const std::string& what, BregmanState snapshot)
      : NumericalAbort(what), snapshot_(std::move(snapshot)) {}
  [[nodiscard]] const BregmanState& snapshot() const noexcept { return snapshot_; }

 private:
  BregmanState snapshot_;
};

/// x̃ ← x̃ − t A^T(A x − y);  x ← P_C(x̃).
StepRecord bregman_step(BregmanState& state, const Experiment& exp, const ConstraintStack& stack,
                        const BregmanOptions& opts = {});

/// x̃ ← x̃ − t (A^T(A x − y) + λ²(x − g));  x ← P_C(x̃), with g = prior_image.
/// λ = 0 takes exactly the bregman_step path.
StepRecord bregman_step_augmented(BregmanState& state, const Experiment& exp, const Grid& prior_image, double lambda,
                                  const ConstraintStack& stack, const BregmanOptions& opts = {});
StepRecord bregman_step_augmented(BregmanState& state, const Experiment& exp, const Generator& net,
                                  std::span<const double> w, std::span<const double> z, double lambda,
                                  const ConstraintStack& stack, const BregmanOptions& opts = {});

/// Experiment drawn for step `iter` of stream `stream` (uniform, with
/// replacement, counter-based).
std::size_t draw_experiment(std::uint64_t seed, std::uint64_t stream, std::size_t iter, std::size_t count);

using StepObserver = std::function<void(const BregmanState&, const StepRecord&)>;

struct BregmanRun {
  BregmanState state;
  std::vector<StepRecord> trace;
};

BregmanRun run_bregman(const ExperimentBank& bank, const ConstraintStack& stack, std::size_t iters,
                       std::uint64_t seed, const BregmanOptions& opts = {}, const StepObserver& observer = {});

/// ½ Σ_i ‖y_i − A_i x‖² over the whole bank.
double eval_lsq_objective(const ExperimentBank& bank, const Grid& x);
/// Same, restricted to the listed experiments.
double eval_lsq_objective(const ExperimentBank& bank, std::span<const std::size_t> ids, const Grid& x);

/// Data term plus (λ²/2)‖x − g‖².
double eval_joint_objective(const ExperimentBank& bank, const Grid& x, const Grid& prior_image, double lambda);
double eval_joint_objective(const ExperimentBank& bank, const Grid& x, std::span<const double> z,
                            const Generator& net, std::span<const double> w, double lambda);

inline constexpr const char* kTraceHeader = "iter,k,t_k,residual_norm,joint_objective";
std::string trace_row(const StepRecord& r);
void write_trace_csv(const std::vector<StepRecord>& trace, const std::string& path);

}  // namespace bregprior

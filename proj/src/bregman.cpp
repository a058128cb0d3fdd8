#include "bregprior/bregman.hpp"

#include <cmath>
#include <fstream>

#include <fmt/format.h>

#include "bregprior/rng.hpp"

namespace bregprior {

void ExperimentBank::validate() const {
  require(!experiments.empty(), "ExperimentBank: bank is empty");
  for (std::size_t i = 0; i < experiments.size(); ++i) {
    const auto& e = experiments[i];
    require(e.op.domain_shape() == model_shape, "ExperimentBank: experiment " + std::to_string(i) +
                                                    " operator domain does not match the model shape");
    require(e.data.size() == e.op.range_shape().size(),
            "ExperimentBank: experiment " + std::to_string(i) + " data length does not match operator range");
    require(vec::all_finite(e.data), "ExperimentBank: experiment " + std::to_string(i) + " has non-finite data");
  }
}

BregmanState BregmanState::zeros(Shape shape) { return {Grid(shape), Grid(shape), 0}; }

Steplength dynamic_steplength(double residual_sq, double gradient_sq, double t_max) {
  if (!(gradient_sq >= 1e-30)) return {0.0, true};
  return {std::min(residual_sq / gradient_sq, t_max), false};
}

Steplength dynamic_steplength(std::span<const double> residual, std::span<const double> gradient, double t_max) {
  return dynamic_steplength(vec::norm_sq(residual), vec::norm_sq(gradient), t_max);
}

namespace {

StepRecord step_core(BregmanState& state, const Experiment& exp, const Grid* prior, double lambda,
                     const ConstraintStack& stack, const BregmanOptions& opts) {
  require(state.primal.shape() == exp.op.domain_shape() && state.dual.shape() == state.primal.shape(),
          "bregman_step: state shape does not match the operator domain");
  std::vector<double> r = exp.op.apply(state.primal.span());
  for (std::size_t i = 0; i < r.size(); ++i) r[i] -= exp.data[i];
  std::vector<double> grad = exp.op.adjoint(r);
  const double r2 = vec::norm_sq(r);

  StepRecord rec;
  rec.residual_norm = std::sqrt(r2);
  Steplength step;
  if (prior != nullptr && lambda > 0.0) {
    require(prior->shape() == state.primal.shape(), "bregman_step_augmented: prior image shape mismatch");
    const double l2 = lambda * lambda;
    const double data_grad_sq = opts.rule == SteplengthRule::DataOnly ? vec::norm_sq(grad) : 0.0;
    double pen_sq = 0.0;
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double d = state.primal[i] - (*prior)[i];
      pen_sq += d * d;
      grad[i] += l2 * d;
    }
    step = opts.rule == SteplengthRule::Stacked
               ? dynamic_steplength(r2 + l2 * pen_sq, vec::norm_sq(grad), opts.t_max)
               : dynamic_steplength(r2, data_grad_sq, opts.t_max);
  } else {
    step = dynamic_steplength(r2, vec::norm_sq(grad), opts.t_max);
  }
  if (!std::isfinite(r2) || !vec::all_finite(grad))
    throw BregmanAbort("bregman_step: non-finite residual at iteration " + std::to_string(state.iter + 1), state);
  rec.t = step.t;
  rec.skipped = step.skipped;

  if (!step.skipped) {
    Grid dual = state.dual;
    vec::axpy(-step.t, grad, dual.span());
    if (!dual.all_finite())
      throw BregmanAbort("bregman_step: non-finite dual iterate at iteration " + std::to_string(state.iter + 1), state);
    auto proj = project_intersection(dual, stack);
    if (!proj.x.all_finite())
      throw BregmanAbort("bregman_step: non-finite primal iterate at iteration " + std::to_string(state.iter + 1),
                         state);
    rec.projection_converged = proj.converged;
    state.dual = std::move(dual);
    state.primal = std::move(proj.x);
  }
  rec.iter = ++state.iter;
  return rec;
}

}  // namespace

StepRecord bregman_step(BregmanState& state, const Experiment& exp, const ConstraintStack& stack,
                        const BregmanOptions& opts) {
  return step_core(state, exp, nullptr, 0.0, stack, opts);
}

StepRecord bregman_step_augmented(BregmanState& state, const Experiment& exp, const Grid& prior_image, double lambda,
                                  const ConstraintStack& stack, const BregmanOptions& opts) {
  require(lambda >= 0.0, "bregman_step_augmented: lambda must be non-negative");
  return step_core(state, exp, &prior_image, lambda, stack, opts);
}

StepRecord bregman_step_augmented(BregmanState& state, const Experiment& exp, const Generator& net,
                                  std::span<const double> w, std::span<const double> z, double lambda,
                                  const ConstraintStack& stack, const BregmanOptions& opts) {
  require(lambda >= 0.0, "bregman_step_augmented: lambda must be non-negative");
  if (lambda == 0.0) return step_core(state, exp, nullptr, 0.0, stack, opts);
  const Grid g = net.forward(w, z);
  return step_core(state, exp, &g, lambda, stack, opts);
}

std::size_t draw_experiment(std::uint64_t seed, std::uint64_t stream, std::size_t iter, std::size_t count) {
  return keyed_index(seed, StreamTag::ExperimentDraw, {stream, static_cast<std::uint64_t>(iter)}, count);
}

BregmanRun run_bregman(const ExperimentBank& bank, const ConstraintStack& stack, std::size_t iters,
                       std::uint64_t seed, const BregmanOptions& opts, const StepObserver& observer) {
  require(bank.size() > 0, "run_bregman: bank is empty");
  BregmanRun run{BregmanState::zeros(bank.model_shape), {}};
  run.trace.reserve(iters);
  for (std::size_t it = 0; it < iters; ++it) {
    const std::size_t k = draw_experiment(seed, 0, run.state.iter, bank.size());
    StepRecord rec = bregman_step(run.state, bank[k], stack, opts);
    rec.experiment = k;
    if (opts.track_objective) rec.objective = eval_lsq_objective(bank, run.state.primal);
    if (observer) observer(run.state, rec);
    run.trace.push_back(rec);
  }
  return run;
}

double eval_lsq_objective(const ExperimentBank& bank, std::span<const std::size_t> ids, const Grid& x) {
  double total = 0.0;
  for (std::size_t i : ids) {
    const auto& e = bank[i];
    const std::vector<double> ax = e.op.apply(x.span());
    total += 0.5 * vec::dist_sq(ax, e.data);
  }
  return total;
}

double eval_lsq_objective(const ExperimentBank& bank, const Grid& x) {
  double total = 0.0;
  for (const auto& e : bank.experiments) {
    const std::vector<double> ax = e.op.apply(x.span());
    total += 0.5 * vec::dist_sq(ax, e.data);
  }
  return total;
}

double eval_joint_objective(const ExperimentBank& bank, const Grid& x, const Grid& prior_image, double lambda) {
  require(lambda >= 0.0, "eval_joint_objective: lambda must be non-negative");
  const double data = eval_lsq_objective(bank, x);
  if (lambda == 0.0) return data;
  return data + 0.5 * lambda * lambda * vec::dist_sq(x.span(), prior_image.span());
}

double eval_joint_objective(const ExperimentBank& bank, const Grid& x, std::span<const double> z,
                            const Generator& net, std::span<const double> w, double lambda) {
  if (lambda == 0.0) return eval_lsq_objective(bank, x);
  return eval_joint_objective(bank, x, net.forward(w, z), lambda);
}

std::string trace_row(const StepRecord& r) {
  return fmt::format("{},{},{:.17g},{:.17g},{:.17g}", r.iter, r.experiment, r.t, r.residual_norm, r.objective);
}

void write_trace_csv(const std::vector<StepRecord>& trace, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("write_trace_csv: cannot open " + path);
  os << kTraceHeader << '\n';
  for (const auto& r : trace) os << trace_row(r) << '\n';
}

}  // namespace bregprior

#include "bregprior/em.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <fstream>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "bregprior/grid_io.hpp"
#include "bregprior/rng.hpp"

namespace bregprior {

double LambdaSchedule::at(std::size_t round) const {
  if (ramp_rounds == 0 || round >= ramp_rounds) return final;
  const double f = static_cast<double>(round) / static_cast<double>(ramp_rounds);
  return initial + (final - initial) * f;
}

void TrainConfig::validate(std::size_t bank_size) const {
  require(tuples >= 1, "TrainConfig: tuples must be >= 1");
  require(tuples <= bank_size, "TrainConfig: tuples (" + std::to_string(tuples) + ") exceeds the number of experiments (" +
                                   std::to_string(bank_size) + ")");
  require(eta >= 0.0 && std::isfinite(eta), "TrainConfig: eta must be non-negative");
  require(lambda.initial >= 0.0 && lambda.final >= 0.0, "TrainConfig: lambda must be non-negative");
  require(radius_scale_final > 0.0, "TrainConfig: radius_scale_final must be positive");
  require(threads >= 1, "TrainConfig: threads must be >= 1");
  sgld.validate();
}

std::vector<TrainTuple> init_tuples(const ExperimentBank& bank, std::size_t n, std::size_t latent_dim,
                                    std::uint64_t seed) {
  require(n >= 1 && n <= bank.size(), "init_tuples: tuple count must lie in [1, N]");
  std::vector<TrainTuple> tuples(n);
  for (std::size_t i = 0; i < n; ++i) {
    tuples[i].id = i;
    tuples[i].state = BregmanState::zeros(bank.model_shape);
    tuples[i].z.resize(latent_dim);
    Engine eng = make_stream(seed, StreamTag::LatentInit, {i});
    fill_standard_normal(eng, tuples[i].z);
  }
  for (std::size_t k = 0; k < bank.size(); ++k) tuples[k % n].experiment_ids.push_back(k);
  return tuples;
}

ConstraintStack stack_for_round(const ConstraintStack& base, const TrainConfig& config, std::size_t round) {
  if (config.radius_scale_final == 1.0) return base;
  const std::size_t ramp = config.lambda.ramp_rounds;
  const double f = ramp == 0 ? 1.0 : std::min(1.0, static_cast<double>(round) / static_cast<double>(ramp));
  const double scale = 1.0 + (config.radius_scale_final - 1.0) * f;
  ConstraintStack out = base;
  for (auto& s : out.sets) {
    if (auto* b = std::get_if<L1Ball>(&s)) b->radius *= scale;
    else if (auto* b2 = std::get_if<L2Ball>(&s)) b2->radius *= scale;
    else if (auto* tv = std::get_if<TvBall>(&s)) tv->radius *= scale;
  }
  return out;
}

namespace {

void advance_tuple(TrainTuple& tuple, const ExperimentBank& bank, const Generator& net, std::span<const double> w,
                   double lambda, const ConstraintStack& stack, const TrainConfig& config, std::size_t round,
                   const TrainHooks& hooks, std::vector<StepRecord>* trace) {
  const bool coupled = lambda > 0.0;
  Grid prior;
  if (coupled && config.bregman_steps_per_round > 0) prior = net.forward(w, tuple.z);
  const double half_l2 = 0.5 * lambda * lambda;
  for (std::size_t s = 0; s < config.bregman_steps_per_round; ++s) {
    const std::size_t pick = draw_experiment(config.seed, tuple.id, tuple.state.iter, tuple.experiment_ids.size());
    const std::size_t k = tuple.experiment_ids[pick];
    StepRecord rec = coupled ? bregman_step_augmented(tuple.state, bank[k], prior, lambda, stack, config.bregman)
                             : bregman_step(tuple.state, bank[k], stack, config.bregman);
    rec.experiment = k;
    if (config.bregman.track_objective) {
      rec.objective = eval_lsq_objective(bank, tuple.experiment_ids, tuple.state.primal);
      if (coupled) rec.objective += half_l2 * vec::dist_sq(tuple.state.primal.span(), prior.span());
    }
    if (hooks.on_step) hooks.on_step(tuple, rec);
    if (trace) trace->push_back(rec);
  }
  if (config.sgld.steps > 0) {
    Engine eng = make_stream(config.seed, StreamTag::Sgld, {tuple.id, round});
    tuple.z = sgld_run(tuple.z, tuple.state.primal, net, w, lambda, config.sgld, eng).z;
  }
}

}  // namespace

void e_step(std::vector<TrainTuple>& tuples, const ExperimentBank& bank, const Generator& net,
            std::span<const double> w, double lambda, const ConstraintStack& stack, const TrainConfig& config,
            std::size_t round, const TrainHooks& hooks, std::vector<std::vector<StepRecord>>* traces) {
  if (traces) traces->resize(std::max(traces->size(), tuples.size()));
  const std::size_t workers = std::min(config.threads, tuples.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < tuples.size(); ++i)
      advance_tuple(tuples[i], bank, net, w, lambda, stack, config, round, hooks, traces ? &(*traces)[i] : nullptr);
    return;
  }
  std::vector<std::exception_ptr> errors(tuples.size());
  {
    std::vector<std::jthread> pool;
    pool.reserve(workers);
    for (std::size_t t = 0; t < workers; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < tuples.size(); i += workers) {
          try {
            advance_tuple(tuples[i], bank, net, w, lambda, stack, config, round, hooks,
                          traces ? &(*traces)[i] : nullptr);
          } catch (...) {
            errors[i] = std::current_exception();
          }
        }
      });
    }
  }
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

MStepReport m_step(const std::vector<TrainTuple>& tuples, const Generator& net, std::vector<double>& w, double eta,
                   MStepLoss loss) {
  require(!tuples.empty(), "m_step: no tuples");
  const double scale = loss == MStepLoss::Mean ? 1.0 / static_cast<double>(tuples.size()) : 1.0;
  MStepReport report;
  std::vector<double> grad(w.size(), 0.0);
  for (const auto& t : tuples) {
    const Grid& x = t.state.primal;
    Grid g;
    auto grads = net.forward_backward(
        w, t.z,
        [&](const Grid& out) {
          Grid up(out.shape());
          for (std::size_t i = 0; i < out.size(); ++i) up[i] = 2.0 * scale * (out[i] - x[i]);
          return up;
        },
        &g);
    const double li = vec::dist_sq(x.span(), g.span());
    report.tuple_losses.push_back(li);
    report.loss += scale * li;
    vec::axpy(1.0, grads.grad_w, grad);
  }
  if (!std::isfinite(report.loss) || !vec::all_finite(grad)) {
    std::ostringstream os;
    os << "m_step: non-finite gradient; per-tuple losses:";
    for (std::size_t i = 0; i < report.tuple_losses.size(); ++i) os << " [" << i << "] " << report.tuple_losses[i];
    throw NumericalAbort(os.str());
  }
  if (eta != 0.0) vec::axpy(-eta, grad, w);
  return report;
}

TrainState initial_train_state(const ExperimentBank& bank, const Generator& net, std::vector<double> weights,
                               const TrainConfig& config) {
  config.validate(bank.size());
  require(weights.size() == net.weight_count(), "initial_train_state: weight length does not match the generator");
  require(bank.model_shape == net.output_shape(), "initial_train_state: generator output " +
                                                      to_string(net.output_shape()) + " does not match model shape " +
                                                      to_string(bank.model_shape));
  return {0, std::move(weights), init_tuples(bank, config.tuples, net.latent_dim(), config.seed)};
}

TrainResult train(const ExperimentBank& bank, const ConstraintStack& stack, const Generator& net, TrainState state,
                  const TrainConfig& config, const TrainHooks& hooks) {
  config.validate(bank.size());
  stack.validate();
  TrainResult result;
  result.bregman_traces.resize(state.tuples.size());
  while (state.round < config.rounds && state.round < hooks.stop_after_round) {
    const std::size_t round = state.round;
    const double lambda = config.lambda.at(round);
    const ConstraintStack round_stack = stack_for_round(stack, config, round);
    e_step(state.tuples, bank, net, state.weights, lambda, round_stack, config, round, hooks, &result.bregman_traces);

    RoundRecord rec;
    rec.round = round + 1;
    rec.lambda = lambda;
    for (std::size_t m = 0; m < config.m_steps_per_round; ++m) {
      const auto rep = m_step(state.tuples, net, state.weights, config.eta, config.loss);
      if (m == 0) rec.m_loss = rep.loss;
    }
    for (const auto& t : state.tuples) {
      rec.mean_data_misfit += eval_lsq_objective(bank, t.experiment_ids, t.state.primal);
      rec.mean_prior_misfit += std::sqrt(vec::dist_sq(t.state.primal.span(), net.forward(state.weights, t.z).span()));
    }
    rec.mean_data_misfit /= static_cast<double>(state.tuples.size());
    rec.mean_prior_misfit /= static_cast<double>(state.tuples.size());
    state.round = round + 1;
    result.rounds.push_back(rec);
    if (hooks.on_round) hooks.on_round(state, rec);
  }
  result.state = std::move(state);
  return result;
}

std::string round_trace_row(const RoundRecord& r) {
  return fmt::format("{},{:.17g},{:.17g},{:.17g},{:.17g}", r.round, r.lambda, r.mean_data_misfit, r.mean_prior_misfit,
                     r.m_loss);
}

void write_round_trace_csv(const std::vector<RoundRecord>& rounds, const std::string& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("write_round_trace_csv: cannot open " + path);
  os << "round,lambda,mean_data_misfit,mean_prior_misfit,m_loss\n";
  for (const auto& r : rounds) os << round_trace_row(r) << '\n';
}

// ---------------------------------------------------------------------------

namespace fs = std::filesystem;

void write_checkpoint(const fs::path& dir, const NetArch& arch, const TrainState& state) {
  const fs::path tmp = dir.string() + ".partial";
  fs::remove_all(tmp);
  fs::create_directories(tmp);
  write_weights(tmp / "weights.dpnw", arch, state.weights);
  {
    std::ofstream os(tmp / "state.txt");
    os << "round " << state.round << "\n" << "tuples " << state.tuples.size() << "\n";
  }
  std::ofstream tuples_csv(tmp / "tuples.csv");
  std::ofstream latents_csv(tmp / "latents.csv");
  tuples_csv << "id,iter,experiment_ids\n";
  latents_csv << "id";
  for (std::size_t l = 0; l < arch.latent_dim; ++l) latents_csv << ",z" << l;
  latents_csv << "\n";
  for (const auto& t : state.tuples) {
    tuples_csv << t.id << "," << t.state.iter << ",";
    for (std::size_t j = 0; j < t.experiment_ids.size(); ++j) tuples_csv << (j ? " " : "") << t.experiment_ids[j];
    tuples_csv << "\n";
    latents_csv << t.id;
    for (double v : t.z) latents_csv << fmt::format(",{:.17g}", v);
    latents_csv << "\n";
    write_portable_grid(t.state.primal, tmp / fmt::format("tuple_{:03}_primal.pgrd", t.id));
    write_portable_grid(t.state.dual, tmp / fmt::format("tuple_{:03}_dual.pgrd", t.id));
  }
  tuples_csv.close();
  latents_csv.close();
  if (!tuples_csv || !latents_csv) throw std::runtime_error("write_checkpoint: write failed in " + tmp.string());
  fs::remove_all(dir);
  fs::rename(tmp, dir);
}

TrainState read_checkpoint(const fs::path& dir, const NetArch& arch) {
  TrainState state;
  state.weights = read_weights(dir / "weights.dpnw", arch);
  std::size_t ntuples = 0;
  {
    std::ifstream is(dir / "state.txt");
    std::string key;
    if (!(is >> key >> state.round) || key != "round" || !(is >> key >> ntuples) || key != "tuples")
      throw std::runtime_error("read_checkpoint: malformed " + (dir / "state.txt").string());
  }
  std::ifstream tuples_csv(dir / "tuples.csv");
  std::ifstream latents_csv(dir / "latents.csv");
  if (!tuples_csv || !latents_csv) throw std::runtime_error("read_checkpoint: missing tuple tables in " + dir.string());
  std::string line;
  std::getline(tuples_csv, line);
  std::getline(latents_csv, line);
  for (std::size_t i = 0; i < ntuples; ++i) {
    TrainTuple t;
    if (!std::getline(tuples_csv, line)) throw std::runtime_error("read_checkpoint: tuples.csv is truncated");
    {
      std::replace(line.begin(), line.end(), ',', ' ');
      std::istringstream ls(line);
      ls >> t.id >> t.state.iter;
      std::size_t k;
      while (ls >> k) t.experiment_ids.push_back(k);
    }
    if (!std::getline(latents_csv, line)) throw std::runtime_error("read_checkpoint: latents.csv is truncated");
    {
      std::istringstream ls(line);
      std::string cell;
      std::getline(ls, cell, ',');
      if (std::stoull(cell) != t.id) throw std::runtime_error("read_checkpoint: latents.csv rows out of order");
      while (std::getline(ls, cell, ',')) t.z.push_back(std::strtod(cell.c_str(), nullptr));
      if (t.z.size() != arch.latent_dim) throw std::runtime_error("read_checkpoint: latent length mismatch");
    }
    t.state.primal = read_portable_grid(dir / fmt::format("tuple_{:03}_primal.pgrd", t.id));
    t.state.dual = read_portable_grid(dir / fmt::format("tuple_{:03}_dual.pgrd", t.id));
    state.tuples.push_back(std::move(t));
  }
  return state;
}

}  // namespace bregprior

#include "bregprior/commands.hpp"

#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "bregprior/em.hpp"
#include "bregprior/grid_io.hpp"
#include "bregprior/selfcheck.hpp"
#include "bregprior/stats.hpp"

namespace bregprior {

namespace fs = std::filesystem;

namespace {

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RunConfig resolve_config(const CommandOptions& opt) {
  RunConfig c = opt.config ? load_config(*opt.config) : RunConfig{};
  if (opt.seed) c.override_seed(*opt.seed);
  return c;
}

void require_out(const CommandOptions& opt) {
  if (opt.out.empty()) throw UsageError("--out is required");
}

std::string real(double v) { return fmt::format("{:.17g}", v); }

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc | std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::string quality_row(const std::string& name, const Quality& q) {
  return fmt::format("{},{:.17g},{:.17g}\n", name, q.relative_l2, q.snr_db);
}

constexpr const char* kQualityHeader = "image,relative_l2,snr_db\n";

fs::path resolve_checkpoint(const fs::path& p) {
  if (p.empty()) throw UsageError("--checkpoint is required");
  if (fs::exists(p / "checkpoint" / "state.txt")) return p / "checkpoint";
  if (fs::exists(p / "state.txt")) return p;
  throw UsageError("no checkpoint found at " + p.string());
}

std::vector<std::string> read_lines(const fs::path& path) {
  std::vector<std::string> lines;
  std::ifstream is(path);
  for (std::string line; std::getline(is, line);) lines.push_back(line);
  return lines;
}

std::size_t leading_number(const std::string& row) { return std::stoul(row.substr(0, row.find(','))); }

}  // namespace

// ---------------------------------------------------------------------------
// Bank directory

void write_bank_dir(const fs::path& dir, const RunConfig& config, const GroundTruth& truth, const Survey& survey,
                    const NoiseReport& noise) {
  fs::create_directories(dir);
  const auto& t = config.testbed;
  const auto& bank = survey.bank;
  std::string m;
  m += "bregprior-bank 1\n";
  m += fmt::format("rows {}\ncols {}\nexperiments {}\n", bank.model_shape.rows, bank.model_shape.cols, bank.size());
  m += fmt::format("kernel_kind {}\nkernel_size {}\nkernel_width {}\n", to_string(t.kernel.kind), survey.kernel.size(),
                   real(t.kernel.width));
  m += "taps";
  for (double v : survey.kernel.taps()) m += " " + real(v);
  m += "\n";
  m += fmt::format("truth_seed {}\nbank_seed {}\nnoise_seed {}\n", t.truth_seed, t.bank_seed, t.noise_seed);
  m += fmt::format("layers {}\n", truth.layers);
  m += fmt::format("target_snr_db {}\n", real(t.snr_db));
  m += fmt::format("gamma {}\nnoise_scale {}\n", real(noise.gamma), real(noise.noise_scale));
  m += fmt::format("signal_energy {}\ncoherent_energy {}\nperturbation_energy {}\nmeasured_snr_db {}\n",
                   real(noise.signal_energy), real(noise.coherent_energy), real(noise.perturbation_energy),
                   real(noise.snr_db));
  for (std::size_t i = 0; i < survey.masks.size(); ++i) {
    const auto& idx = survey.masks[i].indices();
    m += fmt::format("mask {} {}", i, idx.size());
    for (std::size_t v : idx) m += fmt::format(" {}", v);
    m += "\n";
  }
  write_text(dir / "manifest.txt", m);
  write_portable_grid(truth.delta_m, dir / "truth.pgrd");
  write_portable_grid(truth.background, dir / "background.pgrd");
  for (std::size_t i = 0; i < bank.size(); ++i) {
    const auto& y = bank[i].data;
    write_portable_grid(Grid(1, y.size(), y), dir / fmt::format("y_{:04}.pgrd", i));
  }
}

LoadedBank load_bank_dir(const fs::path& dir) {
  if (dir.empty()) throw UsageError("--bank is required");
  const fs::path manifest = dir / "manifest.txt";
  std::ifstream is(manifest);
  if (!is) throw UsageError("no bank manifest at " + manifest.string());
  LoadedBank out;
  std::size_t rows = 0, cols = 0, n = 0, ksize = 0;
  std::vector<double> taps;
  std::vector<RestrictionMask> masks;
  std::string line;
  std::getline(is, line);
  if (line != "bregprior-bank 1") throw std::runtime_error(manifest.string() + ": unrecognised header");
  const auto bad = [&](const std::string& what) { return std::runtime_error(manifest.string() + ": " + what); };
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string key;
    ls >> key;
    if (key == "rows") ls >> rows;
    else if (key == "cols") ls >> cols;
    else if (key == "experiments") ls >> n;
    else if (key == "kernel_size") ls >> ksize;
    else if (key == "taps") {
      for (double v; ls >> v;) taps.push_back(v);
    } else if (key == "gamma") ls >> out.noise.gamma;
    else if (key == "noise_scale") ls >> out.noise.noise_scale;
    else if (key == "signal_energy") ls >> out.noise.signal_energy;
    else if (key == "coherent_energy") ls >> out.noise.coherent_energy;
    else if (key == "perturbation_energy") ls >> out.noise.perturbation_energy;
    else if (key == "measured_snr_db") {
      std::string v;
      ls >> v;
      out.noise.snr_db = v == "inf" ? std::numeric_limits<double>::infinity() : std::stod(v);
    } else if (key == "mask") {
      std::size_t id = 0, count = 0;
      ls >> id >> count;
      if (id != masks.size()) throw bad("masks out of order");
      std::vector<std::size_t> idx(count);
      for (auto& v : idx)
        if (!(ls >> v)) throw bad("truncated mask " + std::to_string(id));
      masks.emplace_back(std::move(idx), rows * cols);
    }
    if (ls.fail() && key != "taps" && key != "mask") throw bad("malformed line '" + line + "'");
  }
  if (rows == 0 || cols == 0 || n == 0 || masks.size() != n || taps.size() != ksize * ksize)
    throw bad("incomplete manifest");
  const Shape shape{rows, cols};
  out.survey.kernel = ConvKernel(ksize, std::move(taps));
  out.survey.bank.model_shape = shape;
  const LinearOp conv = LinearOp::conv(shape, out.survey.kernel);
  for (std::size_t i = 0; i < n; ++i) {
    const Grid y = read_portable_grid(dir / fmt::format("y_{:04}.pgrd", i));
    if (y.size() != masks[i].size()) throw bad(fmt::format("data y_{:04} does not match its mask", i));
    out.survey.bank.experiments.push_back({compose(LinearOp::restrict(shape, masks[i]), conv), y.values()});
  }
  out.survey.masks = std::move(masks);
  if (fs::exists(dir / "truth.pgrd")) out.truth = read_portable_grid(dir / "truth.pgrd");
  out.survey.bank.validate();
  return out;
}

// ---------------------------------------------------------------------------
// Commands

int cmd_gen(const CommandOptions& opt, std::ostream& out) {
  require_out(opt);
  const RunConfig c = resolve_config(opt);
  const auto& t = c.testbed;
  const GroundTruth truth = make_ground_truth(c.shape(), t.truth_seed);
  Survey survey = make_bank(truth, t.experiments, t.kernel, t.sampling_fraction, t.bank_seed);
  double worst = 0.0;
  for (const auto& e : survey.bank.experiments) worst = std::max(worst, dot_test(e.op, t.bank_seed, 20));
  if (worst > 1e-10) {
    out << fmt::format("dot_test failed on the generated bank: {:.3e} > 1e-10\n", worst);
    return kPropertyFailure;
  }
  const NoiseReport noise = add_noise_to_snr(survey, truth, {t.snr_db, t.gamma, t.coherent_fraction}, t.noise_seed);
  write_bank_dir(opt.out, c, truth, survey, noise);
  write_resolved_config(c, opt.out);
  out << fmt::format("bank: {} experiments on {}, {} layers, dot_test max {:.2e}\n", survey.bank.size(),
                     to_string(c.shape()), truth.layers, worst);
  out << fmt::format("gamma {:.6g}, noise std {:.6g}\n", noise.gamma, noise.noise_scale);
  out << fmt::format("measured SNR: {:.4f} dB\n", noise.snr_db);
  return kOk;
}

int cmd_invert(const CommandOptions& opt, std::ostream& out) {
  require_out(opt);
  const RunConfig c = resolve_config(opt);
  const LoadedBank bank = load_bank_dir(opt.bank);
  const ExperimentBank& b = bank.survey.bank;
  const ConstraintStack stack = c.constraints.build(b.model_shape);
  const BregmanRun run = run_bregman(b, stack, c.bregman.iterations, c.bregman.seed, c.bregman.options);
  fs::create_directories(opt.out);
  write_resolved_config(c, opt.out);
  write_portable_grid(run.state.primal, opt.out / "primal.pgrd");
  write_portable_grid(run.state.dual, opt.out / "dual.pgrd");
  write_trace_csv(run.trace, (opt.out / "trace.csv").string());
  const auto feas = is_feasible(run.state.primal, stack, stack.dykstra_tol);
  out << fmt::format("{} Bregman iterations, final data misfit {:.6g}, feasible {}\n", run.trace.size(),
                     eval_lsq_objective(b, run.state.primal), feas.feasible ? "yes" : "no");
  if (bank.truth) {
    const Quality q = model_quality(run.state.primal, *bank.truth);
    write_text(opt.out / "quality.csv", std::string(kQualityHeader) + quality_row("primal", q));
    out << fmt::format("relative l2 error {:.6f} (snr {:.3f} dB)\n", q.relative_l2, q.snr_db);
  }
  return kOk;
}

int cmd_train(const CommandOptions& opt, std::ostream& out) {
  require_out(opt);
  const RunConfig c = resolve_config(opt);
  const LoadedBank loaded = load_bank_dir(opt.bank);
  const ExperimentBank& bank = loaded.survey.bank;
  const ConstraintStack stack = c.constraints.build(bank.model_shape);
  const NetArch arch = c.net.arch(bank.model_shape);
  const Generator net(arch);
  const TrainConfig tc = c.train_config();
  const fs::path ckpt = opt.out / "checkpoint";
  const fs::path round_csv = opt.out / "round_trace.csv";
  const auto trace_path = [&](std::size_t id) { return opt.out / fmt::format("tuple_{:03}_trace.csv", id); };
  fs::create_directories(opt.out);
  write_resolved_config(c, opt.out);

  TrainState state;
  if (opt.resume && fs::exists(ckpt / "state.txt")) {
    state = read_checkpoint(ckpt, arch);
    if (state.tuples.size() != tc.tuples) throw UsageError("checkpoint tuple count does not match em.tuples");
    // Drop rows written after the checkpoint so the files continue seamlessly.
    auto rows = read_lines(round_csv);
    std::string kept = "round,lambda,mean_data_misfit,mean_prior_misfit,m_loss\n";
    for (std::size_t i = 1; i < rows.size(); ++i)
      if (!rows[i].empty() && leading_number(rows[i]) <= state.round) kept += rows[i] + "\n";
    write_text(round_csv, kept);
    for (const auto& t : state.tuples) {
      auto lines = read_lines(trace_path(t.id));
      std::string keep = std::string(kTraceHeader) + "\n";
      for (std::size_t i = 1; i < lines.size(); ++i)
        if (!lines[i].empty() && leading_number(lines[i]) <= t.state.iter) keep += lines[i] + "\n";
      write_text(trace_path(t.id), keep);
    }
    out << fmt::format("resuming after round {}\n", state.round);
  } else {
    auto w0 = net_init(arch, c.net.seed, c.net.resolved_init_scale());
    write_weights(opt.out / "weights_init.dpnw", arch, w0);
    state = initial_train_state(bank, net, std::move(w0), tc);
    write_checkpoint(ckpt, arch, state);
    write_text(round_csv, "round,lambda,mean_data_misfit,mean_prior_misfit,m_loss\n");
    for (const auto& t : state.tuples) write_text(trace_path(t.id), std::string(kTraceHeader) + "\n");
  }

  std::vector<std::ofstream> traces;
  for (const auto& t : state.tuples) traces.emplace_back(trace_path(t.id), std::ios::app | std::ios::binary);
  std::ofstream rounds_os(round_csv, std::ios::app | std::ios::binary);
  TrainHooks hooks;
  hooks.on_step = [&](const TrainTuple& t, const StepRecord& r) { traces[t.id] << trace_row(r) << '\n'; };
  hooks.on_round = [&](const TrainState& s, const RoundRecord& r) {
    for (auto& os : traces) os.flush();
    rounds_os << round_trace_row(r) << '\n';
    rounds_os.flush();
    write_checkpoint(ckpt, arch, s);
    out << fmt::format("round {:>3}  lambda {:.4g}  data misfit {:.6g}  prior misfit {:.6g}\n", r.round, r.lambda,
                       r.mean_data_misfit, r.mean_prior_misfit);
  };
  if (opt.stop_after_round) hooks.stop_after_round = *opt.stop_after_round;
  const TrainResult result = train(bank, stack, net, std::move(state), tc, hooks);
  out << fmt::format("completed {} of {} rounds\n", result.state.round, tc.rounds);
  return kOk;
}

int cmd_sample(const CommandOptions& opt, std::ostream& out) {
  require_out(opt);
  const RunConfig c = resolve_config(opt);
  const fs::path ckpt = resolve_checkpoint(opt.checkpoint);
  const NetArch arch = c.net.arch(c.shape());
  const Generator net(arch);
  const auto w = read_weights(ckpt / "weights.dpnw", arch);
  fs::create_directories(opt.out);
  write_resolved_config(c, opt.out);
  const std::size_t r = c.stats.realizations;
  for (std::size_t j = 0; j < r; ++j) {
    const Grid g = net.forward(w, sample_latent(arch.latent_dim, c.stats.seed, j));
    const Grid other = net.forward(w, sample_latent(arch.latent_dim, c.stats.seed, r + j));
    Grid diff(g.shape());
    for (std::size_t i = 0; i < g.size(); ++i) diff[i] = g[i] - other[i];
    write_portable_grid(g, opt.out / fmt::format("realization_{:03}.pgrd", j));
    write_portable_grid(diff, opt.out / fmt::format("difference_{:03}.pgrd", j));
  }
  out << fmt::format("wrote {} realizations and differences\n", r);
  return kOk;
}

int cmd_stats(const CommandOptions& opt, std::ostream& out) {
  require_out(opt);
  const RunConfig c = resolve_config(opt);
  const auto& st = c.stats;
  if (st.samples < 2)
    throw ConfigError("stats.samples", fmt::format("stats.samples = {}: pointwise std needs at least two realizations",
                                                   st.samples));
  const fs::path ckpt = resolve_checkpoint(opt.checkpoint);
  std::optional<LoadedBank> bank;
  if (!opt.bank.empty()) bank = load_bank_dir(opt.bank);
  const Shape shape = bank ? bank->survey.bank.model_shape : c.shape();
  const NetArch arch = c.net.arch(shape);
  const Generator net(arch);
  const auto w_post = read_weights(ckpt / "weights.dpnw", arch);
  const auto w_prior = net_init(arch, c.net.seed, c.net.resolved_init_scale());

  std::vector<Pixel> probes = st.probes;
  GeneratorSummary post;
  if (probes.empty()) {
    post = summarize_generator(net, w_post, st.samples, st.seed, st.std, st.threads);
    probes = default_probes(post.std);
  }
  post = summarize_generator(net, w_post, st.samples, st.seed, st.std, st.threads, probes);
  const GeneratorSummary prior = summarize_generator(net, w_prior, st.samples, st.seed, st.std, st.threads, probes);

  fs::create_directories(opt.out);
  write_resolved_config(c, opt.out);
  write_portable_grid(post.mean, opt.out / "mean.pgrd");
  write_portable_grid(post.std, opt.out / "std.pgrd");
  write_portable_grid(prior.mean, opt.out / "prior_mean.pgrd");
  write_portable_grid(prior.std, opt.out / "prior_std.pgrd");

  std::string hist = "distribution,row,col,bin_lo,bin_hi,count\n";
  for (const GeneratorSummary* s : {&prior, static_cast<const GeneratorSummary*>(&post)}) {
    const char* label = s == &prior ? "prior" : "posterior";
    for (std::size_t p = 0; p < probes.size(); ++p) {
      const auto h = histogram(s->probe_values[p], probes[p], st.bins);
      for (std::size_t b = 0; b < h.counts.size(); ++b)
        hist += fmt::format("{},{},{},{:.17g},{:.17g},{}\n", label, probes[p].row, probes[p].col, h.edges[b],
                            h.edges[b + 1], h.counts[b]);
    }
  }
  write_text(opt.out / "histograms.csv", hist);

  const auto mean_of = [](const Grid& g) { return vec::norm1(g.span()) / static_cast<double>(g.size()); };
  const double post_std = mean_of(post.std), prior_std = mean_of(prior.std);
  write_text(opt.out / "summary.csv", fmt::format("distribution,samples,mean_pointwise_std\nprior,{},{:.17g}\n"
                                                  "posterior,{},{:.17g}\n",
                                                  st.samples, prior_std, st.samples, post_std));
  out << fmt::format("mean pointwise std: prior {:.6g}, posterior {:.6g}\n", prior_std, post_std);

  if (bank && bank->truth) {
    std::string q = kQualityHeader;
    const Quality qm = model_quality(post.mean, *bank->truth);
    q += quality_row("posterior_mean", qm);
    const TrainState state = read_checkpoint(ckpt, arch);
    for (const auto& t : state.tuples)
      q += quality_row(fmt::format("tuple_{:03}_primal", t.id), model_quality(t.state.primal, *bank->truth));
    write_text(opt.out / "quality.csv", q);
    out << fmt::format("posterior mean relative l2 error {:.6f}\n", qm.relative_l2);
  }
  return kOk;
}

int cmd_check(const CommandOptions& opt, std::ostream& out) {
  SelfCheckOptions so;
  if (opt.config) (void)resolve_config(opt);
  if (opt.seed) so.seed = *opt.seed;
  if (!opt.inject_fault.empty()) {
    if (opt.inject_fault != "adjoint-sign") throw UsageError("unknown fault '" + opt.inject_fault + "'");
    so.inject_adjoint_sign_fault = true;
  }
  const auto results = run_self_checks(so);
  print_check_table(results, out);
  for (const auto& r : results)
    if (!r.passed) return kPropertyFailure;
  return kOk;
}

int run_command(const std::string& name, const CommandOptions& opt, std::ostream& out, std::ostream& err) {
  try {
    if (name == "gen") return cmd_gen(opt, out);
    if (name == "invert") return cmd_invert(opt, out);
    if (name == "train") return cmd_train(opt, out);
    if (name == "sample") return cmd_sample(opt, out);
    if (name == "stats") return cmd_stats(opt, out);
    if (name == "check") return cmd_check(opt, out);
    err << "unknown command '" << name << "'\n";
    return kUsageError;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return kUsageError;
  } catch (const NumericalAbort& e) {
    err << "numerical abort: " << e.what() << '\n';
    return kNumericalAbort;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kUsageError;
  }
}

}  // namespace bregprior

#include "bregprior/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <map>
#include <set>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <fmt/format.h>

namespace bregprior {

namespace pt = boost::property_tree;

ConstraintStack ConstraintConfig::build(Shape shape) const {
  ConstraintStack stack;
  stack.dykstra_max_iters = dykstra_max_iters;
  stack.dykstra_tol = dykstra_tol;
  stack.tv = {tv_tol, tv_max_iters};
  for (const auto& s : sets) {
    if (s == "box") {
      stack.sets.push_back(BoxSet{box_lo, box_hi});
    } else if (s == "l1") {
      stack.sets.push_back(L1Ball{l1_radius.value_or(l1_radius_per_pixel * static_cast<double>(shape.size()))});
    } else if (s == "l2") {
      if (!l2_radius) throw ConfigError("constraints.l2_radius", "constraints.l2_radius is required when sets lists l2");
      stack.sets.push_back(L2Ball{*l2_radius});
    } else if (s == "tv") {
      if (!tv_radius) throw ConfigError("constraints.tv_radius", "constraints.tv_radius is required when sets lists tv");
      stack.sets.push_back(TvBall{*tv_radius});
    } else {
      throw ConfigError("constraints.sets", "constraints.sets: unknown set '" + s + "' (expected box, l1, l2, tv)");
    }
  }
  try {
    stack.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("constraints", std::string("constraints: ") + e.what());
  }
  return stack;
}

NetArch NetConfig::arch(Shape target) const {
  NetArch a;
  a.latent_dim = latent_dim;
  a.base_rows = base_rows;
  a.base_cols = base_cols;
  a.base_channels = base_channels;
  a.final_kernel = final_kernel;
  a.leaky_slope = leaky_slope;
  std::size_t n = 0;
  if (stages) {
    n = *stages;
  } else {
    while ((base_rows << n) < target.rows) ++n;
  }
  a.stages.assign(n, NetStage{kernel, channels});
  if (a.output_shape() != target)
    throw ConfigError("net.stages", "net: generator output " + to_string(a.output_shape()) +
                                        " does not match the testbed shape " + to_string(target));
  try {
    a.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("net", std::string("net: ") + e.what());
  }
  return a;
}

double NetConfig::resolved_init_scale() const {
  return init_scale.value_or(std::sqrt(2.0 / (1.0 + leaky_slope * leaky_slope)));
}

TrainConfig RunConfig::train_config() const {
  TrainConfig t;
  t.tuples = em.tuples;
  t.rounds = em.rounds;
  t.bregman_steps_per_round = em.bregman_steps_per_round;
  t.sgld = sgld;
  t.lambda = {em.lambda_initial, em.lambda_final, em.lambda_ramp_rounds.value_or(em.rounds / 2)};
  t.eta = em.eta;
  t.m_steps_per_round = em.m_steps_per_round;
  t.loss = em.loss;
  t.radius_scale_final = em.radius_scale_final;
  t.seed = em.seed;
  t.threads = em.threads;
  t.bregman = bregman.options;
  return t;
}

void RunConfig::override_seed(std::uint64_t seed) {
  testbed.truth_seed = testbed.bank_seed = testbed.noise_seed = seed;
  net.seed = bregman.seed = em.seed = stats.seed = seed;
}

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split(const std::string& s, const std::string& seps) {
  std::vector<std::string> out;
  std::string cur;
  for (char c : s) {
    if (seps.find(c) != std::string::npos) {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

/// Reads typed values from one section and remembers which keys were used.
class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  template <class F>
  void read(const std::string& key, F&& assign) {
    used_.insert(key);
    if (!tree_) return;
    const auto child = tree_->get_child_optional(pt::ptree::path_type(key, '\0'));
    if (!child) return;
    const std::string raw = trim(child->data());
    try {
      assign(raw);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError(name_ + "." + key, name_ + "." + key + ": " + e.what());
    }
  }

  void u64(const std::string& key, std::uint64_t& v) { read(key, [&](const std::string& s) { v = parse_u64(s); }); }
  void size(const std::string& key, std::size_t& v) { read(key, [&](const std::string& s) { v = parse_u64(s); }); }
  void integer(const std::string& key, int& v) {
    read(key, [&](const std::string& s) {
      const auto u = parse_u64(s);
      if (u > static_cast<std::uint64_t>(std::numeric_limits<int>::max())) throw std::invalid_argument("value too large");
      v = static_cast<int>(u);
    });
  }
  void real(const std::string& key, double& v) { read(key, [&](const std::string& s) { v = parse_real(s); }); }
  void boolean(const std::string& key, bool& v) {
    read(key, [&](const std::string& s) {
      if (s == "true" || s == "1" || s == "yes") v = true;
      else if (s == "false" || s == "0" || s == "no") v = false;
      else throw std::invalid_argument("expected true or false, got '" + s + "'");
    });
  }
  void text(const std::string& key, std::string& v) { read(key, [&](const std::string& s) { v = s; }); }
  void opt_real(const std::string& key, std::optional<double>& v) {
    read(key, [&](const std::string& s) { v = s == "auto" ? std::nullopt : std::optional<double>(parse_real(s)); });
  }
  void opt_size(const std::string& key, std::optional<std::size_t>& v) {
    read(key, [&](const std::string& s) {
      v = s == "auto" ? std::nullopt : std::optional<std::size_t>(static_cast<std::size_t>(parse_u64(s)));
    });
  }

  void reject_unknown() const {
    if (!tree_) return;
    for (const auto& [key, child] : *tree_) {
      if (!used_.contains(key)) throw ConfigError(name_ + "." + key, "unknown config key '" + name_ + "." + key + "'");
    }
  }

  static std::uint64_t parse_u64(const std::string& s) {
    std::uint64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty())
      throw std::invalid_argument("expected a non-negative integer, got '" + s + "'");
    return v;
  }

  static double parse_real(const std::string& s) {
    if (s == "inf" || s == "+inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size() || s.empty() || std::isnan(v))
      throw std::invalid_argument("expected a number, got '" + s + "'");
    return v;
  }

 private:
  const pt::ptree* tree_;
  std::string name_;
  std::set<std::string> used_;
};

void check(bool cond, const std::string& key, const std::string& what) {
  if (!cond) throw ConfigError(key, key + ": " + what);
}

}  // namespace

RunConfig parse_config(const std::string& text) {
  pt::ptree tree;
  std::istringstream is(text);
  try {
    pt::ini_parser::read_ini(is, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError("", std::string("config: ") + e.what());
  }
  static const std::vector<std::string> known = {"testbed", "constraints", "net", "bregman", "sgld", "em", "stats"};
  for (const auto& [name, child] : tree) {
    if (std::find(known.begin(), known.end(), name) == known.end()) {
      if (child.empty() && !child.data().empty()) throw ConfigError(name, "config key '" + name + "' lies outside any section");
      throw ConfigError(name, "unknown config section [" + name + "]");
    }
  }
  const auto section = [&](const std::string& name) {
    const auto child = tree.get_child_optional(pt::ptree::path_type(name, '\0'));
    return Section(child ? &*child : nullptr, name);
  };

  RunConfig c;
  {
    auto s = section("testbed");
    auto& t = c.testbed;
    s.size("rows", t.rows);
    s.size("cols", t.cols);
    s.size("experiments", t.experiments);
    s.real("sampling_fraction", t.sampling_fraction);
    s.read("kernel", [&](const std::string& v) { t.kernel.kind = parse_kernel_kind(v); });
    s.size("kernel_size", t.kernel.size);
    s.real("kernel_width", t.kernel.width);
    s.real("snr_db", t.snr_db);
    s.opt_real("gamma", t.gamma);
    s.real("coherent_fraction", t.coherent_fraction);
    s.u64("truth_seed", t.truth_seed);
    s.u64("bank_seed", t.bank_seed);
    s.u64("noise_seed", t.noise_seed);
    s.reject_unknown();
    check(t.rows >= 16 && t.cols >= 16, "testbed.rows", "grid must be at least 16x16");
    check(t.experiments >= 1, "testbed.experiments", "must be at least 1");
    check(t.sampling_fraction > 0.0 && t.sampling_fraction <= 1.0, "testbed.sampling_fraction", "must lie in (0, 1]");
    check(t.kernel.size % 2 == 1, "testbed.kernel_size", "must be odd");
    check(t.kernel.width > 0.0, "testbed.kernel_width", "must be positive");
    check(t.snr_db != -std::numeric_limits<double>::infinity(), "testbed.snr_db", "must be finite or inf");
    check(!t.gamma || (*t.gamma >= 0.0 && std::isfinite(*t.gamma)), "testbed.gamma", "must be finite and >= 0");
    check(t.coherent_fraction >= 0.0 && t.coherent_fraction < 1.0, "testbed.coherent_fraction", "must lie in [0, 1)");
  }
  {
    auto s = section("constraints");
    auto& k = c.constraints;
    s.read("sets", [&](const std::string& v) {
      k.sets = split(v, ", ");
      if (v == "none") k.sets.clear();
    });
    s.real("box_lo", k.box_lo);
    s.real("box_hi", k.box_hi);
    s.opt_real("l1_radius", k.l1_radius);
    s.real("l1_radius_per_pixel", k.l1_radius_per_pixel);
    s.opt_real("l2_radius", k.l2_radius);
    s.opt_real("tv_radius", k.tv_radius);
    s.integer("dykstra_max_iters", k.dykstra_max_iters);
    s.real("dykstra_tol", k.dykstra_tol);
    s.real("tv_tol", k.tv_tol);
    s.integer("tv_max_iters", k.tv_max_iters);
    s.reject_unknown();
    (void)k.build(c.shape());
  }
  {
    auto s = section("net");
    auto& n = c.net;
    s.size("latent_dim", n.latent_dim);
    s.size("base_rows", n.base_rows);
    s.size("base_cols", n.base_cols);
    s.size("base_channels", n.base_channels);
    s.opt_size("stages", n.stages);
    s.size("kernel", n.kernel);
    s.size("channels", n.channels);
    s.size("final_kernel", n.final_kernel);
    s.real("leaky_slope", n.leaky_slope);
    s.opt_real("init_scale", n.init_scale);
    s.u64("seed", n.seed);
    s.reject_unknown();
    check(n.resolved_init_scale() >= 0.0 && std::isfinite(n.resolved_init_scale()), "net.init_scale",
          "must be finite and >= 0");
    (void)n.arch(c.shape());
  }
  {
    auto s = section("bregman");
    auto& b = c.bregman;
    s.size("iterations", b.iterations);
    s.u64("seed", b.seed);
    s.real("t_max", b.options.t_max);
    s.read("steplength", [&](const std::string& v) {
      if (v == "stacked") b.options.rule = SteplengthRule::Stacked;
      else if (v == "data_only") b.options.rule = SteplengthRule::DataOnly;
      else throw std::invalid_argument("expected stacked or data_only, got '" + v + "'");
    });
    s.boolean("track_objective", b.options.track_objective);
    s.reject_unknown();
    check(b.options.t_max > 0.0, "bregman.t_max", "must be positive");
  }
  {
    auto s = section("sgld");
    auto& g = c.sgld;
    s.real("epsilon", g.epsilon);
    s.size("steps", g.steps);
    s.read("potential", [&](const std::string& v) {
      if (v == "literal") g.potential = LatentPotential::Literal;
      else if (v == "half_latent") g.potential = LatentPotential::HalfLatent;
      else throw std::invalid_argument("expected literal or half_latent, got '" + v + "'");
    });
    s.reject_unknown();
    check(g.epsilon > 0.0 && g.epsilon < 2.0, "sgld.epsilon", "must lie in (0, 2)");
  }
  {
    auto s = section("em");
    auto& e = c.em;
    s.size("tuples", e.tuples);
    s.size("rounds", e.rounds);
    s.size("bregman_steps_per_round", e.bregman_steps_per_round);
    s.real("lambda_initial", e.lambda_initial);
    s.real("lambda_final", e.lambda_final);
    s.opt_size("lambda_ramp_rounds", e.lambda_ramp_rounds);
    s.real("eta", e.eta);
    s.size("m_steps_per_round", e.m_steps_per_round);
    s.read("loss", [&](const std::string& v) {
      if (v == "mean") e.loss = MStepLoss::Mean;
      else if (v == "sum") e.loss = MStepLoss::Sum;
      else throw std::invalid_argument("expected mean or sum, got '" + v + "'");
    });
    s.real("radius_scale_final", e.radius_scale_final);
    s.u64("seed", e.seed);
    s.size("threads", e.threads);
    s.reject_unknown();
    check(e.tuples >= 1, "em.tuples", "must be at least 1");
    check(e.tuples <= c.testbed.experiments, "em.tuples", "exceeds testbed.experiments");
    check(e.lambda_initial >= 0.0 && e.lambda_final >= 0.0, "em.lambda_initial", "lambda must be >= 0");
    check(e.eta >= 0.0 && std::isfinite(e.eta), "em.eta", "must be finite and >= 0");
    check(e.radius_scale_final > 0.0, "em.radius_scale_final", "must be positive");
    check(e.threads >= 1, "em.threads", "must be at least 1");
  }
  {
    auto s = section("stats");
    auto& st = c.stats;
    s.size("samples", st.samples);
    s.u64("seed", st.seed);
    s.size("bins", st.bins);
    s.read("probes", [&](const std::string& v) {
      st.probes.clear();
      if (v == "auto") return;
      for (const auto& item : split(v, " ;")) {
        const auto rc = split(item, ":");
        if (rc.size() != 2) throw std::invalid_argument("expected row:col pairs, got '" + item + "'");
        st.probes.push_back({Section::parse_u64(rc[0]), Section::parse_u64(rc[1])});
      }
    });
    s.size("realizations", st.realizations);
    s.read("std", [&](const std::string& v) { st.std = parse_std_convention(v); });
    s.size("threads", st.threads);
    s.reject_unknown();
    check(st.samples >= 1, "stats.samples", "must be at least 1");
    check(st.bins >= 1, "stats.bins", "must be at least 1");
    check(st.threads >= 1, "stats.threads", "must be at least 1");
    for (const auto& p : st.probes)
      check(p.row < c.testbed.rows && p.col < c.testbed.cols, "stats.probes", "probe outside the grid");
  }
  return c;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("", "cannot read config file " + path.string());
  std::ostringstream ss;
  ss << is.rdbuf();
  return parse_config(ss.str());
}

namespace {
std::string real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return fmt::format("{}", v);
}
}  // namespace

std::string render_config(const RunConfig& c) {
  std::string o;
  const auto& t = c.testbed;
  o += "[testbed]\n";
  o += fmt::format("rows = {}\ncols = {}\nexperiments = {}\nsampling_fraction = {}\n", t.rows, t.cols, t.experiments,
                   real(t.sampling_fraction));
  o += fmt::format("kernel = {}\nkernel_size = {}\nkernel_width = {}\n", to_string(t.kernel.kind), t.kernel.size,
                   real(t.kernel.width));
  o += fmt::format("snr_db = {}\ngamma = {}\ncoherent_fraction = {}\n", real(t.snr_db),
                   t.gamma ? real(*t.gamma) : "auto", real(t.coherent_fraction));
  o += fmt::format("truth_seed = {}\nbank_seed = {}\nnoise_seed = {}\n\n", t.truth_seed, t.bank_seed, t.noise_seed);

  const auto& k = c.constraints;
  std::string sets;
  for (const auto& s : k.sets) sets += (sets.empty() ? "" : ",") + s;
  double l1 = k.l1_radius.value_or(k.l1_radius_per_pixel * static_cast<double>(c.shape().size()));
  o += "[constraints]\n";
  o += fmt::format("sets = {}\nbox_lo = {}\nbox_hi = {}\n", sets.empty() ? "none" : sets, real(k.box_lo),
                   real(k.box_hi));
  o += fmt::format("l1_radius = {}\nl1_radius_per_pixel = {}\n", real(l1), real(k.l1_radius_per_pixel));
  o += fmt::format("l2_radius = {}\ntv_radius = {}\n", k.l2_radius ? real(*k.l2_radius) : "auto",
                   k.tv_radius ? real(*k.tv_radius) : "auto");
  o += fmt::format("dykstra_max_iters = {}\ndykstra_tol = {}\ntv_tol = {}\ntv_max_iters = {}\n\n",
                   k.dykstra_max_iters, real(k.dykstra_tol), real(k.tv_tol), k.tv_max_iters);

  const auto& n = c.net;
  o += "[net]\n";
  o += fmt::format("latent_dim = {}\nbase_rows = {}\nbase_cols = {}\nbase_channels = {}\n", n.latent_dim, n.base_rows,
                   n.base_cols, n.base_channels);
  o += fmt::format("stages = {}\nkernel = {}\nchannels = {}\nfinal_kernel = {}\n", n.arch(c.shape()).stages.size(),
                   n.kernel, n.channels, n.final_kernel);
  o += fmt::format("leaky_slope = {}\ninit_scale = {}\nseed = {}\n\n", real(n.leaky_slope), real(n.resolved_init_scale()),
                   n.seed);

  const auto& b = c.bregman;
  o += "[bregman]\n";
  o += fmt::format("iterations = {}\nseed = {}\nt_max = {}\nsteplength = {}\ntrack_objective = {}\n\n", b.iterations,
                   b.seed, real(b.options.t_max),
                   b.options.rule == SteplengthRule::Stacked ? "stacked" : "data_only",
                   b.options.track_objective ? "true" : "false");

  o += "[sgld]\n";
  o += fmt::format("epsilon = {}\nsteps = {}\npotential = {}\n\n", real(c.sgld.epsilon), c.sgld.steps,
                   c.sgld.potential == LatentPotential::Literal ? "literal" : "half_latent");

  const auto& e = c.em;
  o += "[em]\n";
  o += fmt::format("tuples = {}\nrounds = {}\nbregman_steps_per_round = {}\n", e.tuples, e.rounds,
                   e.bregman_steps_per_round);
  o += fmt::format("lambda_initial = {}\nlambda_final = {}\nlambda_ramp_rounds = {}\n", real(e.lambda_initial),
                   real(e.lambda_final), e.lambda_ramp_rounds.value_or(e.rounds / 2));
  o += fmt::format("eta = {}\nm_steps_per_round = {}\nloss = {}\nradius_scale_final = {}\nseed = {}\nthreads = {}\n\n",
                   real(e.eta), e.m_steps_per_round, e.loss == MStepLoss::Mean ? "mean" : "sum",
                   real(e.radius_scale_final), e.seed, e.threads);

  const auto& st = c.stats;
  std::string probes;
  for (const auto& p : st.probes) probes += fmt::format("{}{}:{}", probes.empty() ? "" : " ", p.row, p.col);
  o += "[stats]\n";
  o += fmt::format("samples = {}\nseed = {}\nbins = {}\nprobes = {}\nrealizations = {}\nstd = {}\nthreads = {}\n",
                   st.samples, st.seed, st.bins, probes.empty() ? "auto" : probes, st.realizations,
                   to_string(st.std), st.threads);
  return o;
}

void write_resolved_config(const RunConfig& config, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream os(dir / "resolved_config.ini", std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write " + (dir / "resolved_config.ini").string());
  os << render_config(config);
}

}  // namespace bregprior

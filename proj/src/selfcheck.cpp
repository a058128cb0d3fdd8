#include "bregprior/selfcheck.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>

#include "bregprior/linops.hpp"
#include "bregprior/net.hpp"
#include "bregprior/projections.hpp"
#include "bregprior/rng.hpp"
#include "bregprior/sgld.hpp"

namespace bregprior {

namespace {

Grid random_grid(Shape shape, Engine& eng, double scale) {
  Grid g(shape);
  fill_standard_normal(eng, g.span());
  for (double& v : g.values()) v *= scale;
  return g;
}

void check_dot_tests(const SelfCheckOptions& opt, std::vector<CheckResult>& out) {
  const Shape shape{12, 10};
  const ConvKernel kernel(3, {0.05, 0.1, -0.02, 0.2, 1.0, 0.3, -0.1, 0.07, 0.04});
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < shape.size(); i += 3) idx.push_back(i);
  const RestrictionMask mask(idx, shape.size());
  const LinearOp conv = LinearOp::conv(shape, kernel);
  const std::vector<std::pair<std::string, LinearOp>> ops = {
      {"identity", LinearOp::identity(shape)},
      {"scale", LinearOp::scale(shape, -2.5)},
      {"conv", conv},
      {"restrict", LinearOp::restrict(shape, mask)},
      {"compose", compose(LinearOp::restrict(shape, mask), conv)},
  };
  constexpr double tol = 1e-10;
  for (const auto& [name, op] : ops) {
    double err = 0.0;
    if (opt.inject_adjoint_sign_fault && op.kind() == LinearOp::Kind::Conv) {
      err = dot_test([&](std::span<const double> x) { return op.apply(x); },
                     [&](std::span<const double> y) {
                       auto v = op.adjoint(y);
                       for (double& e : v) e = -e;
                       return v;
                     },
                     op.domain_shape().size(), op.range_shape().size(), opt.seed, 20);
    } else {
      err = dot_test(op, opt.seed, 20);
    }
    out.push_back({"dot_test/" + name, err <= tol, err, tol, "20 trials"});
  }
}

// Variational inequality <a - P(a), y - P(a)> <= tol for feasible y, plus
// idempotence and feasibility of P(a).
void check_projection(const std::string& name, const ConstraintSpec& spec, double tol, Engine& eng,
                      std::vector<CheckResult>& out) {
  const Shape shape{6, 6};
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Grid a = random_grid(shape, eng, 2.0);
    const Grid p = project_onto(a, spec);
    worst = std::max(worst, violation(p, spec));
    const Grid pp = project_onto(p, spec);
    worst = std::max(worst, std::sqrt(vec::dist_sq(p.span(), pp.span())));
    for (int k = 0; k < 10; ++k) {
      const Grid y = project_onto(random_grid(shape, eng, 2.0), spec);
      double vi = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) vi += (a[i] - p[i]) * (y[i] - p[i]);
      worst = std::max(worst, vi / (1.0 + vec::norm(a.span())));
    }
  }
  out.push_back({"projection/" + name, worst <= tol, worst, tol, describe(spec)});
}

void check_intersection(double tol, Engine& eng, std::vector<CheckResult>& out) {
  const Shape shape{6, 6};
  ConstraintStack stack;
  stack.sets = {BoxSet{-0.5, 0.5}, L1Ball{6.0}};
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    const Grid a = random_grid(shape, eng, 2.0);
    const auto p = project_intersection(a, stack);
    for (double v : p.violations) worst = std::max(worst, v);
    for (int k = 0; k < 10; ++k) {
      const Grid y = project_intersection(random_grid(shape, eng, 2.0), stack).x;
      double vi = 0.0;
      for (std::size_t i = 0; i < a.size(); ++i) vi += (a[i] - p.x[i]) * (y[i] - p.x[i]);
      worst = std::max(worst, vi / (1.0 + vec::norm(a.span())));
    }
  }
  out.push_back({"projection/intersection", worst <= tol, worst, tol, "box ∩ l1"});
}

void check_net_gradient(const SelfCheckOptions& opt, std::vector<CheckResult>& out) {
  NetArch arch;
  arch.latent_dim = 8;
  arch.base_rows = arch.base_cols = 2;
  arch.base_channels = 3;
  arch.stages = {{3, 3}, {3, 2}};
  const Generator net(arch);
  const auto w = net_init(arch, opt.seed, 1.0);
  Engine eng = make_stream(opt.seed, StreamTag::Check, {1});
  std::vector<double> z(arch.latent_dim);
  fill_standard_normal(eng, z);
  const Grid upstream = random_grid(net.output_shape(), eng, 1.0);
  const auto grads = net.backward(w, z, upstream);
  const auto objective = [&](std::span<const double> ww, std::span<const double> zz) {
    return vec::dot(net.forward(ww, zz).span(), upstream.span());
  };
  constexpr double h = 1e-5, tol = 1e-5;
  double worst = 0.0;
  const auto rel = [](double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); };
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto zp = z, zm = z;
    zp[i] += h;
    zm[i] -= h;
    worst = std::max(worst, rel(grads.grad_z[i], (objective(w, zp) - objective(w, zm)) / (2 * h)));
  }
  for (std::size_t k = 0; k < 30; ++k) {
    const std::size_t i = keyed_index(opt.seed, StreamTag::Check, {2, k}, w.size());
    auto wp = w, wm = w;
    wp[i] += h;
    wm[i] -= h;
    worst = std::max(worst, rel(grads.grad_w[i], (objective(wp, z) - objective(wm, z)) / (2 * h)));
  }
  out.push_back({"net_gradient", worst <= tol, worst, tol, "central differences, h = 1e-5"});
}

void check_sgld_variance(const SelfCheckOptions& opt, std::vector<CheckResult>& out) {
  NetArch arch;
  arch.latent_dim = 32;
  const Generator net(arch);
  const std::vector<double> w(net.weight_count(), 0.0);
  SgldParams params;
  params.epsilon = 0.1;
  const Grid x(net.output_shape());
  std::vector<double> z(arch.latent_dim, 0.0);
  Engine eng = make_stream(opt.seed, StreamTag::Check, {3});
  for (int s = 0; s < 1000; ++s) sgld_step(z, x, net, w, 0.0, params, eng);
  double sum_sq = 0.0;
  for (std::size_t s = 0; s < opt.sgld_steps; ++s) {
    sgld_step(z, x, net, w, 0.0, params, eng);
    sum_sq += vec::norm_sq(z);
  }
  const double var = sum_sq / static_cast<double>(opt.sgld_steps * z.size());
  const double expected = 1.0 / (2.0 - params.epsilon);
  const double err = std::abs(var - expected) / expected;
  out.push_back({"sgld_variance", err <= 0.05, err, 0.05, fmt::format("pooled variance {:.4f}", var)});
}

}  // namespace

std::vector<CheckResult> run_self_checks(const SelfCheckOptions& options) {
  std::vector<CheckResult> out;
  check_dot_tests(options, out);
  Engine eng = make_stream(options.seed, StreamTag::Check, {0});
  check_projection("box", BoxSet{-0.5, 0.75}, 1e-12, eng, out);
  check_projection("l2", L2Ball{1.5}, 1e-12, eng, out);
  check_projection("l1", L1Ball{3.0}, 1e-12, eng, out);
  check_projection("tv", TvBall{4.0}, 1e-4, eng, out);
  check_intersection(1e-6, eng, out);
  check_net_gradient(options, out);
  check_sgld_variance(options, out);
  return out;
}

void print_check_table(const std::vector<CheckResult>& results, std::ostream& out) {
  std::size_t failed = 0;
  out << fmt::format("{:<26} {:<6} {:>12} {:>10}  {}\n", "check", "status", "error", "tol", "detail");
  for (const auto& r : results) {
    if (!r.passed) ++failed;
    out << fmt::format("{:<26} {:<6} {:>12.3e} {:>10.1e}  {}\n", r.name, r.passed ? "ok" : "FAIL", r.value,
                       r.tolerance, r.detail);
  }
  if (failed == 0) {
    out << fmt::format("all {} checks passed\n", results.size());
  } else {
    out << fmt::format("{} of {} checks failed:", failed, results.size());
    for (const auto& r : results)
      if (!r.passed) out << ' ' << r.name;
    out << '\n';
  }
}

}  // namespace bregprior

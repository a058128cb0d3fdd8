#include "bregprior/sgld.hpp"

#include <cmath>

namespace bregprior {

void SgldParams::validate() const {
  require(epsilon > 0.0 && epsilon < 2.0, "SgldParams: epsilon must lie in (0, 2)");
}

namespace {
double latent_weight(LatentPotential p) { return p == LatentPotential::Literal ? 1.0 : 0.5; }
}  // namespace

double latent_potential(std::span<const double> z, const Grid& x, const Grid& g, double lambda,
                        LatentPotential potential) {
  const double data = lambda == 0.0 ? 0.0 : lambda * lambda * vec::dist_sq(x.span(), g.span());
  return data + latent_weight(potential) * vec::norm_sq(z);
}

double sgld_step(std::span<double> z, const Grid& x, const Generator& net, std::span<const double> w, double lambda,
                 const SgldParams& params, Engine& rng) {
  params.validate();
  require(z.size() == net.latent_dim(), "sgld_step: latent length does not match the generator");
  require(lambda >= 0.0, "sgld_step: lambda must be non-negative");
  const double eps = params.epsilon;
  const double zw = 2.0 * latent_weight(params.potential);  // ∇(c‖z‖²) = 2cz

  std::vector<double> drift(z.size());
  double potential = 0.0;
  if (lambda > 0.0) {
    require(x.shape() == net.output_shape(), "sgld_step: x shape does not match the generator output");
    const double l2 = lambda * lambda;
    Grid g;
    auto grads = net.forward_backward(
        w, z,
        [&](const Grid& out) {
          Grid up(out.shape());
          for (std::size_t i = 0; i < out.size(); ++i) up[i] = 2.0 * l2 * (out[i] - x[i]);
          return up;
        },
        &g);
    potential = latent_potential(z, x, g, lambda, params.potential);
    for (std::size_t i = 0; i < z.size(); ++i) drift[i] = grads.grad_z[i] + zw * z[i];
  } else {
    potential = latent_weight(params.potential) * vec::norm_sq(z);
    for (std::size_t i = 0; i < z.size(); ++i) drift[i] = zw * z[i];
  }

  std::vector<double> noise(z.size(), 0.0);
  if (params.inject_noise) {
    fill_standard_normal(rng, noise);
    const double s = std::sqrt(eps);
    for (double& v : noise) v *= s;
  }
  for (std::size_t i = 0; i < z.size(); ++i) {
    const double d = params.include_drift ? 0.5 * eps * drift[i] : 0.0;
    z[i] = z[i] - d + noise[i];
  }
  if (!vec::all_finite(z))
    throw NumericalAbort("sgld_step: non-finite latent (potential before step " + std::to_string(potential) + ")");
  return potential;
}

SgldRun sgld_run(std::span<const double> z_warm, const Grid& x, const Generator& net, std::span<const double> w,
                 double lambda, const SgldParams& params, Engine& rng) {
  SgldRun run{{z_warm.begin(), z_warm.end()}, {}};
  run.potentials.reserve(params.steps);
  for (std::size_t s = 0; s < params.steps; ++s) run.potentials.push_back(sgld_step(run.z, x, net, w, lambda, params, rng));
  return run;
}

}  // namespace bregprior

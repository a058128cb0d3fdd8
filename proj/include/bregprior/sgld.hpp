#pragma once

#include <span>
#include <vector>

#include "bregprior/grid.hpp"
#include "bregprior/net.hpp"
#include "bregprior/rng.hpp"

namespace bregprior {

/// Latent potential whose gradient drives the Langevin drift.
enum class LatentPotential {
  /// U(z) = λ²‖x − g(z,w)‖² + ‖z‖²
  Literal,
  /// U(z) = λ²‖x − g(z,w)‖² + ½‖z‖²
  HalfLatent,
};

struct SgldParams {
  double epsilon = 0.01;
  std::size_t steps = 20;
  LatentPotential potential = LatentPotential::Literal;
  // Test hooks: drop the N(0, εI) perturbation or the gradient drift.
  bool inject_noise = true;
  bool include_drift = true;

  void validate() const;
};

/// U(z) under the chosen potential.
double latent_potential(std::span<const double> z, const Grid& x, const Grid& g, double lambda,
                        LatentPotential potential);

/// z ← z − (ε/2)∇U(z) + ξ,  ξ ~ N(0, εI). Updates z in place and returns
/// U at the pre-step z.
double sgld_step(std::span<double> z, const Grid& x, const Generator& net, std::span<const double> w, double lambda,
                 const SgldParams& params, Engine& rng);

struct SgldRun {
  std::vector<double> z;
  std::vector<double> potentials;  ///< U before each step
};

/// `params.steps` sequential steps starting from z_warm.
SgldRun sgld_run(std::span<const double> z_warm, const Grid& x, const Generator& net, std::span<const double> w,
                 double lambda, const SgldParams& params, Engine& rng);

}  // namespace bregprior

#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "bregprior/bregman.hpp"
#include "bregprior/grid.hpp"
#include "bregprior/linops.hpp"

namespace bregprior {

/// Synthetic layered perturbation δm plus the smooth background m.
struct GroundTruth {
  Grid delta_m;
  Grid background;
  std::size_t layers = 0;
};

/// 3 to 6 horizontal layers with wavy interfaces and amplitudes in [-1, 1].
GroundTruth make_ground_truth(Shape shape, std::uint64_t seed);

struct KernelSpec {
  enum class Kind { Identity, Gaussian, Ricker };
  Kind kind = Kind::Gaussian;
  std::size_t size = 5;
  double width = 1.0;
};

ConvKernel make_kernel(const KernelSpec& spec);
std::string to_string(KernelSpec::Kind kind);
KernelSpec::Kind parse_kernel_kind(const std::string& s);

/// Noiseless bank plus the pieces needed to describe it on disk.
struct Survey {
  ExperimentBank bank;
  ConvKernel kernel = ConvKernel::identity();
  std::vector<RestrictionMask> masks;
};

/// A_i = Restrict(mask_i) ∘ Conv(kernel), y_i = A_i δm. Each mask draws
/// round(fraction·pixels) distinct pixels (at least one).
Survey make_bank(const GroundTruth& truth, std::size_t n_experiments, const KernelSpec& kernel, double fraction,
                 std::uint64_t seed);

/// Quadratic surrogate forward, centred on the background so that its
/// Jacobian at m is the bank operator:  F(v) = A v + γ (C(v − m)) ⊙ (C(v − m)).
std::vector<double> surrogate_forward(const Grid& v, const Grid& background, const LinearOp& linear,
                                      const LinearOp& coherent, const RestrictionMask& mask, double gamma);

/// Closed form of F(m + δm) − F(m) − ∇F(m) δm = γ (Cδm) ⊙ (Cδm), per experiment.
std::vector<std::vector<double>> linearization_error(const GroundTruth& truth, const LinearOp& coherent,
                                                     const std::vector<RestrictionMask>& masks, double gamma);

/// The same quantity evaluated from the three-term definition.
std::vector<std::vector<double>> linearization_error_direct(const GroundTruth& truth, const Survey& survey,
                                                            const LinearOp& coherent, double gamma);

struct NoiseSpec {
  /// +infinity means noise-free.
  double target_snr_db = -11.37;
  /// Explicit surrogate strength; when empty γ is calibrated so the coherent
  /// error carries `coherent_fraction` of the total perturbation energy.
  std::optional<double> gamma;
  double coherent_fraction = 0.3;
};

struct NoiseReport {
  double signal_energy = 0.0;
  double coherent_energy = 0.0;
  double perturbation_energy = 0.0;  ///< Σ‖e_i + η_i‖²
  double gamma = 0.0;
  double noise_scale = 0.0;  ///< std of η
  double snr_db = std::numeric_limits<double>::infinity();
  std::vector<double> per_experiment_snr_db;
};

/// y_i ← y_i + e_i + η_i with one global white-noise scale solved so that the
/// survey-wide SNR equals the target.
NoiseReport add_noise_to_snr(Survey& survey, const GroundTruth& truth, const NoiseSpec& spec, std::uint64_t seed);

/// 10·log10(signal / perturbation); both must be positive.
double snr_db(double signal_energy, double perturbation_energy);

/// Exact Σ‖y_i − A_i δm‖² of a bank, i.e. the injected perturbation energy.
double perturbation_energy(const ExperimentBank& bank, const Grid& delta_m);

}  // namespace bregprior

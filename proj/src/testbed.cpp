#include "bregprior/testbed.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "bregprior/rng.hpp"

namespace bregprior {

GroundTruth make_ground_truth(Shape shape, std::uint64_t seed) {
  require(shape.rows >= 16 && shape.cols >= 16, "make_ground_truth: shape must be at least 16x16");
  Engine eng = make_stream(seed, StreamTag::Truth);
  std::uniform_int_distribution<int> layer_count(3, 6);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t layers = static_cast<std::size_t>(layer_count(eng));
  const double R = static_cast<double>(shape.rows);
  const double C = static_cast<double>(shape.cols);
  const double gap = R / static_cast<double>(layers);

  // Interfaces cannot cross: jitter ≤ 0.15 gap and amplitude ≤ 0.25 gap
  // leave at least 0.2 gap between neighbours.
  struct Interface {
    double depth, amplitude, freq, phase;
  };
  std::vector<Interface> faces;
  for (std::size_t j = 1; j < layers; ++j) {
    Interface f;
    f.depth = static_cast<double>(j) * gap + (unit(eng) - 0.5) * 0.3 * gap;
    f.amplitude = unit(eng) * 0.25 * gap;
    f.freq = 1.0 + std::floor(unit(eng) * 3.0);
    f.phase = unit(eng) * 2.0 * std::numbers::pi;
    faces.push_back(f);
  }
  std::vector<double> amps(layers);
  for (double& a : amps) a = 2.0 * unit(eng) - 1.0;

  GroundTruth truth;
  truth.layers = layers;
  truth.delta_m = Grid(shape);
  for (std::size_t c = 0; c < shape.cols; ++c) {
    for (std::size_t r = 0; r < shape.rows; ++r) {
      std::size_t layer = 0;
      for (const auto& f : faces) {
        const double b = f.depth + f.amplitude * std::sin(2.0 * std::numbers::pi * f.freq * static_cast<double>(c) / C + f.phase);
        if (static_cast<double>(r) + 0.5 >= b) ++layer;
      }
      truth.delta_m(r, c) = amps[layer];
    }
  }

  // Background: depth ramp smoothed by repeated clamped box filters.
  truth.background = Grid(shape);
  for (std::size_t r = 0; r < shape.rows; ++r)
    for (std::size_t c = 0; c < shape.cols; ++c) truth.background(r, c) = 1.0 + static_cast<double>(r) / (R - 1.0);
  const long half = static_cast<long>(shape.rows / 8);
  for (int pass = 0; pass < 3; ++pass) {
    Grid next(shape);
    for (std::size_t r = 0; r < shape.rows; ++r) {
      for (std::size_t c = 0; c < shape.cols; ++c) {
        double acc = 0.0;
        for (long d = -half; d <= half; ++d) {
          const long rr = std::clamp<long>(static_cast<long>(r) + d, 0, static_cast<long>(shape.rows) - 1);
          acc += truth.background(static_cast<std::size_t>(rr), c);
        }
        next(r, c) = acc / static_cast<double>(2 * half + 1);
      }
    }
    truth.background = std::move(next);
  }
  return truth;
}

std::string to_string(KernelSpec::Kind kind) {
  switch (kind) {
    case KernelSpec::Kind::Identity: return "identity";
    case KernelSpec::Kind::Gaussian: return "gaussian";
    case KernelSpec::Kind::Ricker: return "ricker";
  }
  return "?";
}

KernelSpec::Kind parse_kernel_kind(const std::string& s) {
  if (s == "identity") return KernelSpec::Kind::Identity;
  if (s == "gaussian") return KernelSpec::Kind::Gaussian;
  if (s == "ricker") return KernelSpec::Kind::Ricker;
  throw std::invalid_argument("unknown kernel kind '" + s + "' (expected identity, gaussian or ricker)");
}

ConvKernel make_kernel(const KernelSpec& spec) {
  if (spec.kind == KernelSpec::Kind::Identity) return ConvKernel::identity();
  require(spec.size % 2 == 1, "make_kernel: size must be odd");
  require(spec.width > 0.0, "make_kernel: width must be positive");
  const std::size_t k = spec.size;
  const double h = static_cast<double>(k / 2);
  const double w2 = spec.width * spec.width;
  std::vector<double> taps(k * k);
  double norm = 0.0;
  for (std::size_t u = 0; u < k; ++u) {
    for (std::size_t v = 0; v < k; ++v) {
      const double du = static_cast<double>(u) - h, dv = static_cast<double>(v) - h;
      double t = std::exp(-(du * du + dv * dv) / (2.0 * w2));
      // Ricker along rows (depth), Gaussian along columns.
      if (spec.kind == KernelSpec::Kind::Ricker) t *= 1.0 - du * du / w2;
      taps[u * k + v] = t;
      norm += std::abs(t);
    }
  }
  for (double& t : taps) t /= norm;
  return ConvKernel(k, std::move(taps));
}

Survey make_bank(const GroundTruth& truth, std::size_t n_experiments, const KernelSpec& kernel_spec, double fraction,
                 std::uint64_t seed) {
  require(n_experiments >= 1, "make_bank: at least one experiment is required");
  require(fraction > 0.0 && fraction <= 1.0, "make_bank: sampling fraction must lie in (0, 1]");
  const Shape shape = truth.delta_m.shape();
  const std::size_t pixels = shape.size();
  const std::size_t count =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * static_cast<double>(pixels))), 1, pixels);

  Survey s;
  s.kernel = make_kernel(kernel_spec);
  s.bank.model_shape = shape;
  const LinearOp conv = LinearOp::conv(shape, s.kernel);
  std::vector<std::size_t> perm(pixels);
  for (std::size_t i = 0; i < n_experiments; ++i) {
    Engine eng = make_stream(seed, StreamTag::Mask, {i});
    for (std::size_t p = 0; p < pixels; ++p) perm[p] = p;
    for (std::size_t p = 0; p < count; ++p) {
      std::uniform_int_distribution<std::size_t> pick(p, pixels - 1);
      std::swap(perm[p], perm[pick(eng)]);
    }
    std::vector<std::size_t> idx(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(count));
    std::sort(idx.begin(), idx.end());
    RestrictionMask mask(std::move(idx), pixels);
    LinearOp op = compose(LinearOp::restrict(shape, mask), conv);
    std::vector<double> y = op.apply(truth.delta_m.span());
    s.masks.push_back(std::move(mask));
    s.bank.experiments.push_back({std::move(op), std::move(y)});
  }
  return s;
}

std::vector<double> surrogate_forward(const Grid& v, const Grid& background, const LinearOp& linear,
                                      const LinearOp& coherent, const RestrictionMask& mask, double gamma) {
  require(v.shape() == background.shape(), "surrogate_forward: shape mismatch");
  std::vector<double> full = linear.apply(v.span());
  std::vector<double> shifted(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) shifted[i] = v[i] - background[i];
  const std::vector<double> cv = coherent.apply(shifted);
  for (std::size_t i = 0; i < full.size(); ++i) full[i] += gamma * cv[i] * cv[i];
  std::vector<double> out;
  out.reserve(mask.size());
  for (std::size_t i : mask.indices()) out.push_back(full[i]);
  return out;
}

std::vector<std::vector<double>> linearization_error(const GroundTruth& truth, const LinearOp& coherent,
                                                     const std::vector<RestrictionMask>& masks, double gamma) {
  require(gamma >= 0.0, "linearization_error: gamma must be non-negative");
  const std::vector<double> cd = coherent.apply(truth.delta_m.span());
  std::vector<std::vector<double>> out;
  out.reserve(masks.size());
  for (const auto& m : masks) {
    std::vector<double> e;
    e.reserve(m.size());
    for (std::size_t i : m.indices()) e.push_back(gamma * cd[i] * cd[i]);
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<std::vector<double>> linearization_error_direct(const GroundTruth& truth, const Survey& survey,
                                                            const LinearOp& coherent, double gamma) {
  const Shape shape = truth.delta_m.shape();
  const LinearOp linear = LinearOp::conv(shape, survey.kernel);
  Grid perturbed = truth.background;
  for (std::size_t i = 0; i < perturbed.size(); ++i) perturbed[i] += truth.delta_m[i];
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < survey.masks.size(); ++k) {
    const auto& mask = survey.masks[k];
    const std::vector<double> f1 = surrogate_forward(perturbed, truth.background, linear, coherent, mask, gamma);
    const std::vector<double> f0 = surrogate_forward(truth.background, truth.background, linear, coherent, mask, gamma);
    const std::vector<double> jac = survey.bank[k].op.apply(truth.delta_m.span());
    std::vector<double> e(f1.size());
    for (std::size_t i = 0; i < e.size(); ++i) e[i] = f1[i] - f0[i] - jac[i];
    out.push_back(std::move(e));
  }
  return out;
}

double snr_db(double signal_energy, double perturbation_energy) {
  require(signal_energy > 0.0 && perturbation_energy > 0.0, "snr_db: energies must be positive");
  return 10.0 * std::log10(signal_energy / perturbation_energy);
}

double perturbation_energy(const ExperimentBank& bank, const Grid& delta_m) {
  double total = 0.0;
  for (const auto& e : bank.experiments) total += vec::dist_sq(e.op.apply(delta_m.span()), e.data);
  return total;
}

NoiseReport add_noise_to_snr(Survey& survey, const GroundTruth& truth, const NoiseSpec& spec, std::uint64_t seed) {
  require(!std::isnan(spec.target_snr_db), "add_noise_to_snr: target SNR must not be NaN");
  require(spec.target_snr_db != -std::numeric_limits<double>::infinity(), "add_noise_to_snr: target SNR must be finite or +inf");
  require(!spec.gamma || *spec.gamma >= 0.0, "add_noise_to_snr: gamma must be non-negative");
  require(spec.coherent_fraction >= 0.0 && spec.coherent_fraction < 1.0,
          "add_noise_to_snr: coherent fraction must lie in [0, 1)");
  auto& exps = survey.bank.experiments;
  std::vector<std::vector<double>> clean;
  NoiseReport rep;
  for (const auto& e : exps) {
    clean.push_back(e.data);
    rep.signal_energy += vec::norm_sq(e.data);
  }
  require(rep.signal_energy > 0.0, "add_noise_to_snr: bank carries no signal energy; SNR is undefined");

  const LinearOp coherent = LinearOp::conv(survey.bank.model_shape, survey.kernel);
  const bool noise_free = spec.target_snr_db == std::numeric_limits<double>::infinity();
  const double target_energy = noise_free ? 0.0 : rep.signal_energy * std::pow(10.0, -spec.target_snr_db / 10.0);

  const auto unit_err = linearization_error(truth, coherent, survey.masks, 1.0);
  double unit_energy = 0.0;
  for (const auto& e : unit_err) unit_energy += vec::norm_sq(e);
  if (spec.gamma) rep.gamma = *spec.gamma;
  else if (!noise_free && unit_energy > 0.0) rep.gamma = std::sqrt(spec.coherent_fraction * target_energy / unit_energy);

  std::vector<std::vector<double>> coh(exps.size()), noise(exps.size());
  double a = 0.0, b = 0.0, c = 0.0;
  for (std::size_t i = 0; i < exps.size(); ++i) {
    coh[i] = unit_err[i];
    for (double& v : coh[i]) v *= rep.gamma;
    noise[i].resize(exps[i].data.size());
    Engine eng = make_stream(seed, StreamTag::Noise, {i});
    fill_standard_normal(eng, noise[i]);
    a += vec::norm_sq(noise[i]);
    b += vec::dot(coh[i], noise[i]);
    c += vec::norm_sq(coh[i]);
  }
  rep.coherent_energy = c;
  if (!noise_free) {
    // ‖e + sη̂‖² = a s² + 2 b s + c  must equal the target energy.
    const double disc = b * b - a * (c - target_energy);
    require(a > 0.0 && disc >= 0.0, "add_noise_to_snr: coherent error alone exceeds the target perturbation energy");
    rep.noise_scale = (-b + std::sqrt(disc)) / a;
    require(rep.noise_scale >= 0.0, "add_noise_to_snr: coherent error alone exceeds the target perturbation energy");
  }
  for (std::size_t i = 0; i < exps.size(); ++i) {
    auto& y = exps[i].data;
    double pert_i = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) {
      y[j] += coh[i][j] + rep.noise_scale * noise[i][j];
      const double d = y[j] - clean[i][j];
      pert_i += d * d;
    }
    rep.perturbation_energy += pert_i;
    const double sig_i = vec::norm_sq(clean[i]);
    rep.per_experiment_snr_db.push_back(pert_i > 0.0 && sig_i > 0.0 ? snr_db(sig_i, pert_i)
                                                                    : std::numeric_limits<double>::infinity());
  }
  rep.snr_db = rep.perturbation_energy > 0.0 ? snr_db(rep.signal_energy, rep.perturbation_energy)
                                             : std::numeric_limits<double>::infinity();
  return rep;
}

}  // namespace bregprior

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "bregprior/bregman.hpp"
#include "bregprior/em.hpp"
#include "bregprior/net.hpp"
#include "bregprior/projections.hpp"
#include "bregprior/sgld.hpp"
#include "bregprior/stats.hpp"
#include "bregprior/testbed.hpp"

namespace bregprior {

/// Bad or unknown configuration entry; `key` is "section.name".
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& what) : std::runtime_error(what), key_(std::move(key)) {}
  [[nodiscard]] const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

struct TestbedConfig {
  std::size_t rows = 64;
  std::size_t cols = 64;
  std::size_t experiments = 64;
  double sampling_fraction = 0.25;
  KernelSpec kernel;
  double snr_db = -11.37;  ///< +inf: noise free
  std::optional<double> gamma;  ///< empty: calibrated
  double coherent_fraction = 0.3;
  std::uint64_t truth_seed = 1;
  std::uint64_t bank_seed = 2;
  std::uint64_t noise_seed = 3;
};

struct ConstraintConfig {
  std::vector<std::string> sets{"box", "l1"};
  double box_lo = -1.0;
  double box_hi = 1.0;
  std::optional<double> l1_radius;  ///< empty: l1_radius_per_pixel · pixels
  double l1_radius_per_pixel = 0.5;
  std::optional<double> l2_radius;
  std::optional<double> tv_radius;
  int dykstra_max_iters = 200;
  double dykstra_tol = 1e-8;
  double tv_tol = 1e-6;
  int tv_max_iters = 500;

  [[nodiscard]] ConstraintStack build(Shape shape) const;
};

struct NetConfig {
  std::size_t latent_dim = 64;
  std::size_t base_rows = 4;
  std::size_t base_cols = 4;
  std::size_t base_channels = 8;
  std::optional<std::size_t> stages;  ///< empty: enough to reach the testbed shape
  std::size_t kernel = 3;
  std::size_t channels = 8;
  std::size_t final_kernel = 3;
  double leaky_slope = 0.2;
  std::optional<double> init_scale;  ///< empty: Kaiming gain √(2/(1+slope²))
  std::uint64_t seed = 4;

  [[nodiscard]] NetArch arch(Shape target) const;
  [[nodiscard]] double resolved_init_scale() const;
};

struct BregmanConfig {
  std::size_t iterations = 350;
  std::uint64_t seed = 5;
  BregmanOptions options;
};

struct EmConfig {
  std::size_t tuples = 8;
  std::size_t rounds = 50;
  std::size_t bregman_steps_per_round = 8;
  double lambda_initial = 0.1;
  double lambda_final = 0.1;
  std::optional<std::size_t> lambda_ramp_rounds;  ///< empty: rounds / 2
  double eta = 3e-5;
  std::size_t m_steps_per_round = 120;
  MStepLoss loss = MStepLoss::Mean;
  double radius_scale_final = 1.0;
  std::uint64_t seed = 6;
  std::size_t threads = 1;
};

struct StatsConfig {
  std::size_t samples = 3200;
  std::uint64_t seed = 7;
  std::size_t bins = 30;
  std::vector<Pixel> probes;  ///< empty: max-std and median-std pixels
  std::size_t realizations = 4;
  StdConvention std = StdConvention::Population;
  std::size_t threads = 1;
};

struct RunConfig {
  TestbedConfig testbed;
  ConstraintConfig constraints;
  NetConfig net;
  BregmanConfig bregman;
  SgldParams sgld;
  EmConfig em;
  StatsConfig stats;

  [[nodiscard]] Shape shape() const { return {testbed.rows, testbed.cols}; }
  [[nodiscard]] TrainConfig train_config() const;

  /// Replaces every seed with the given value.
  void override_seed(std::uint64_t seed);
};

/// Parses INI text. Unknown sections or keys raise ConfigError.
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);

/// Every key with its resolved value, in a fixed order.
std::string render_config(const RunConfig& config);
void write_resolved_config(const RunConfig& config, const std::filesystem::path& dir);

}  // namespace bregprior

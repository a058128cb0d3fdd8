#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "bregprior/grid.hpp"
#include "bregprior/linops.hpp"

namespace bregprior {

struct NetStage {
  std::size_t kernel = 3;
  std::size_t channels = 8;
};

/// dense(z) -> reshape (base_rows, base_cols, base_channels) -> per stage
/// {nearest x2 upsample, circular conv, leaky-ReLU} -> final linear conv to
/// one channel. final_kernel == 0 drops the final conv; that form is only
/// valid for a single-channel base with no stages (a purely linear net).
struct NetArch {
  std::size_t latent_dim = 64;
  std::size_t base_rows = 4;
  std::size_t base_cols = 4;
  std::size_t base_channels = 8;
  std::vector<NetStage> stages{{3, 8}, {3, 8}};
  std::size_t final_kernel = 3;
  bool dense_bias = true;
  double leaky_slope = 0.2;

  /// 16x16 output, two stages.
  static NetArch small();
  /// 64x64 output, four stages.
  static NetArch desk();

  [[nodiscard]] std::size_t output_rows() const noexcept { return base_rows << stages.size(); }
  [[nodiscard]] std::size_t output_cols() const noexcept { return base_cols << stages.size(); }
  [[nodiscard]] Shape output_shape() const noexcept { return {output_rows(), output_cols()}; }
  void validate() const;
};

struct LayerSlice {
  std::string name;
  std::size_t offset = 0;
  std::size_t count = 0;
  std::size_t fan_in = 0;  ///< 0 for bias slices
};

std::vector<LayerSlice> weight_layout(const NetArch& arch);

struct NetGradients {
  std::vector<double> grad_z;
  std::vector<double> grad_w;
};

struct PriorLoss {
  double loss = 0.0;
  Grid output;
  std::vector<double> grad_z;
  std::vector<double> grad_w;
};

/// The generator g(z, w). Holds only the architecture; weights are passed in
/// so that many evaluations can share one read-only weight vector.
class Generator {
 public:
  explicit Generator(NetArch arch);

  [[nodiscard]] const NetArch& arch() const noexcept { return arch_; }
  [[nodiscard]] const std::vector<LayerSlice>& layout() const noexcept { return layout_; }
  [[nodiscard]] std::size_t weight_count() const noexcept { return weight_count_; }
  [[nodiscard]] std::size_t latent_dim() const noexcept { return arch_.latent_dim; }
  [[nodiscard]] Shape output_shape() const noexcept { return arch_.output_shape(); }

  [[nodiscard]] Grid forward(std::span<const double> w, std::span<const double> z) const;

  /// Reverse-mode gradients of <upstream, g(z, w)>.
  [[nodiscard]] NetGradients backward(std::span<const double> w, std::span<const double> z,
                                      const Grid& upstream) const;

  /// (λ²/2)‖x − g(z,w)‖² and its gradients in z and w.
  [[nodiscard]] PriorLoss prior_loss_grads(const Grid& x, std::span<const double> z, std::span<const double> w,
                                           double lambda) const;

  /// Forward pass, then backward with upstream = upstream_fn(g(z,w)); the
  /// forward output is stored in `output` when given.
  NetGradients forward_backward(std::span<const double> w, std::span<const double> z,
                                const std::function<Grid(const Grid&)>& upstream_fn, Grid* output = nullptr) const;

 private:
  struct Cache;
  Cache run_forward(std::span<const double> w, std::span<const double> z) const;
  NetGradients run_backward(std::span<const double> w, std::span<const double> z, const Cache& cache,
                            const Grid& upstream) const;
  void check_inputs(std::span<const double> w, std::span<const double> z) const;

  NetArch arch_;
  std::vector<LayerSlice> layout_;
  std::size_t weight_count_ = 0;
};

/// Zero-mean Gaussian weights with std scale/√fan_in per layer; zero biases.
std::vector<double> net_init(const NetArch& arch, std::uint64_t seed, double scale);

struct StrongFit {
  std::vector<double> weights;
  std::vector<double> z;
  std::vector<double> loss_trace;  ///< loss before each step, plus the final loss
};

class FitDiverged : public NumericalAbort {
 public:
  FitDiverged(const std::string& what, std::vector<double> trace)
      : NumericalAbort(what), trace_(std::move(trace)) {}
  [[nodiscard]] const std::vector<double>& trace() const noexcept { return trace_; }

 private:
  std::vector<double> trace_;
};

/// Gradient descent on ½‖y − A g(z, w)‖² over w with z fixed (z ~ N(0, I)
/// and the initial weights both drawn from `seed`).
StrongFit fit_strong(std::span<const double> y, const LinearOp& op, const Generator& net, std::uint64_t seed,
                     std::size_t iters, double eta, double init_scale = 1.0);

// Weight checkpoint: "DPNW", then u32 version, latent_dim, stage count,
// output rows, output cols (24 bytes), then little-endian f64 weights.
void write_weights(const std::filesystem::path& path, const NetArch& arch, std::span<const double> w);
std::vector<double> read_weights(const std::filesystem::path& path, const NetArch& arch);

}  // namespace bregprior

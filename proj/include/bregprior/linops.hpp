#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "bregprior/grid.hpp"

namespace bregprior {

/// Square k x k stencil with odd k, row-major taps.
class ConvKernel {
 public:
  ConvKernel(std::size_t size, std::vector<double> taps);
  static ConvKernel identity(double value = 1.0);

  [[nodiscard]] std::size_t size() const noexcept { return size_; }
  [[nodiscard]] std::span<const double> taps() const noexcept { return taps_; }
  [[nodiscard]] double operator()(std::size_t u, std::size_t v) const { return taps_[u * size_ + v]; }

 private:
  std::size_t size_;
  std::vector<double> taps_;
};

/// Strictly increasing linear indices into a grid.
class RestrictionMask {
 public:
  RestrictionMask() = default;
  RestrictionMask(std::vector<std::size_t> indices, std::size_t domain_size);
  static RestrictionMask full(std::size_t domain_size);

  [[nodiscard]] std::span<const std::size_t> indices() const noexcept { return indices_; }
  [[nodiscard]] std::size_t size() const noexcept { return indices_.size(); }

 private:
  std::vector<std::size_t> indices_;
};

// Circular-boundary convolution kernels. The span-level forms accumulate
// into `out` and are shared with the generator network.
//
//   apply:   out[r,c] += sum_{u,v} taps[u,v] * x[(r-u+h) mod R, (c-v+h) mod C],  h = k/2
//   adjoint: out[r,c] += sum_{u,v} taps[u,v] * y[(r+u-h) mod R, (c+v-h) mod C]
//   kernel gradient of <up, apply(taps, x)>:
//            g[u,v]   += sum_{r,c} up[r,c] * x[(r-u+h) mod R, (c-v+h) mod C]
void conv2d_accumulate(std::span<const double> taps, std::size_t k, std::span<const double> x, Shape shape,
                       std::span<double> out);
void conv2d_adjoint_accumulate(std::span<const double> taps, std::size_t k, std::span<const double> y, Shape shape,
                               std::span<double> out);
void conv2d_kernel_grad_accumulate(std::span<const double> x, std::span<const double> upstream, Shape shape,
                                   std::size_t k, std::span<double> grad_taps);

Grid conv2d_apply(const ConvKernel& kernel, const Grid& x);
Grid conv2d_adjoint(const ConvKernel& kernel, const Grid& y);

std::vector<double> restriction_apply(const RestrictionMask& mask, const Grid& x);
Grid restriction_adjoint(const RestrictionMask& mask, std::span<const double> v, Shape shape);

/// Immutable handle to a matrix-free operator. Copies share the underlying
/// node; apply/adjoint are pure and safe to call concurrently.
class LinearOp {
 public:
  enum class Kind { Identity, Scale, Conv, Restrict, Compose };

  static LinearOp identity(Shape shape);
  static LinearOp scale(Shape shape, double factor);
  static LinearOp conv(Shape shape, ConvKernel kernel);
  static LinearOp restrict(Shape domain, RestrictionMask mask);

  [[nodiscard]] Kind kind() const noexcept;
  [[nodiscard]] Shape domain_shape() const noexcept;
  [[nodiscard]] Shape range_shape() const noexcept;

  [[nodiscard]] std::vector<double> apply(std::span<const double> x) const;
  [[nodiscard]] std::vector<double> adjoint(std::span<const double> y) const;

  /// Parameters for the leaf kinds; throw std::logic_error on the wrong kind.
  [[nodiscard]] double scale_factor() const;
  [[nodiscard]] const ConvKernel& kernel() const;
  [[nodiscard]] const RestrictionMask& mask() const;
  [[nodiscard]] const LinearOp& outer() const;
  [[nodiscard]] const LinearOp& inner() const;

  friend LinearOp compose(const LinearOp& outer, const LinearOp& inner);

 private:
  struct Node;
  explicit LinearOp(std::shared_ptr<const Node> node) : node_(std::move(node)) {}
  std::shared_ptr<const Node> node_;
};

LinearOp compose(const LinearOp& outer, const LinearOp& inner);

using ApplyFn = std::function<std::vector<double>(std::span<const double>)>;

/// max over trials of |<Ax,y> - <x,A^T y>| / (|<Ax,y>| + tiny) with seeded
/// Gaussian x, y.
double dot_test(const LinearOp& op, std::uint64_t seed, std::size_t trials);
double dot_test(const ApplyFn& apply, const ApplyFn& adjoint, std::size_t domain_size, std::size_t range_size,
                std::uint64_t seed, std::size_t trials);

}  // namespace bregprior

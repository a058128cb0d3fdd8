#include "bregprior/linops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <variant>

#include "bregprior/rng.hpp"

namespace bregprior {

namespace {

std::size_t wrap(long long a, std::size_t m) {
  const long long mm = static_cast<long long>(m);
  return static_cast<std::size_t>(((a % mm) + mm) % mm);
}

// out[c] += t * x[(c + s) mod n] for c in [0, n), with 0 <= s < n.
inline void shifted_axpy(double t, const double* x, std::size_t s, std::size_t n, double* out) {
  const std::size_t head = n - s;
  for (std::size_t c = 0; c < head; ++c) out[c] += t * x[c + s];
  for (std::size_t c = head; c < n; ++c) out[c] += t * x[c + s - n];
}

inline double shifted_dot(const double* up, const double* x, std::size_t s, std::size_t n) {
  const std::size_t head = n - s;
  double acc = 0.0;
  for (std::size_t c = 0; c < head; ++c) acc += up[c] * x[c + s];
  for (std::size_t c = head; c < n; ++c) acc += up[c] * x[c + s - n];
  return acc;
}

void check_conv_args(std::span<const double> taps, std::size_t k, std::size_t in, Shape shape, std::size_t out) {
  require(k % 2 == 1 && taps.size() == k * k, "conv2d: kernel must be odd-sized with k*k taps");
  require(in == shape.size() && out == shape.size(), "conv2d: buffer length does not match grid shape");
}

}  // namespace

ConvKernel::ConvKernel(std::size_t size, std::vector<double> taps) : size_(size), taps_(std::move(taps)) {
  require(size % 2 == 1, "ConvKernel: size must be odd");
  require(taps_.size() == size * size, "ConvKernel: expected size*size taps");
  require(vec::all_finite(taps_), "ConvKernel: taps must be finite");
}

ConvKernel ConvKernel::identity(double value) { return ConvKernel(1, {value}); }

RestrictionMask::RestrictionMask(std::vector<std::size_t> indices, std::size_t domain_size)
    : indices_(std::move(indices)) {
  for (std::size_t j = 0; j < indices_.size(); ++j) {
    require(indices_[j] < domain_size, "RestrictionMask: index " + std::to_string(indices_[j]) +
                                           " out of range for domain of size " + std::to_string(domain_size));
    require(j == 0 || indices_[j] > indices_[j - 1], "RestrictionMask: indices must be strictly increasing");
  }
}

RestrictionMask RestrictionMask::full(std::size_t domain_size) {
  std::vector<std::size_t> idx(domain_size);
  for (std::size_t i = 0; i < domain_size; ++i) idx[i] = i;
  return RestrictionMask(std::move(idx), domain_size);
}

void conv2d_accumulate(std::span<const double> taps, std::size_t k, std::span<const double> x, Shape shape,
                       std::span<double> out) {
  check_conv_args(taps, k, x.size(), shape, out.size());
  const std::size_t R = shape.rows, C = shape.cols;
  const long long h = static_cast<long long>(k / 2);
  for (std::size_t u = 0; u < k; ++u) {
    for (std::size_t v = 0; v < k; ++v) {
      const double t = taps[u * k + v];
      if (t == 0.0) continue;
      const std::size_t cs = wrap(h - static_cast<long long>(v), C);
      for (std::size_t r = 0; r < R; ++r) {
        const std::size_t rs = wrap(static_cast<long long>(r) + h - static_cast<long long>(u), R);
        shifted_axpy(t, x.data() + rs * C, cs, C, out.data() + r * C);
      }
    }
  }
}

void conv2d_adjoint_accumulate(std::span<const double> taps, std::size_t k, std::span<const double> y, Shape shape,
                               std::span<double> out) {
  check_conv_args(taps, k, y.size(), shape, out.size());
  const std::size_t R = shape.rows, C = shape.cols;
  const long long h = static_cast<long long>(k / 2);
  for (std::size_t u = 0; u < k; ++u) {
    for (std::size_t v = 0; v < k; ++v) {
      const double t = taps[u * k + v];
      if (t == 0.0) continue;
      const std::size_t cs = wrap(static_cast<long long>(v) - h, C);
      for (std::size_t r = 0; r < R; ++r) {
        const std::size_t rs = wrap(static_cast<long long>(r) + static_cast<long long>(u) - h, R);
        shifted_axpy(t, y.data() + rs * C, cs, C, out.data() + r * C);
      }
    }
  }
}

void conv2d_kernel_grad_accumulate(std::span<const double> x, std::span<const double> upstream, Shape shape,
                                   std::size_t k, std::span<double> grad_taps) {
  require(k % 2 == 1 && grad_taps.size() == k * k, "conv2d: kernel must be odd-sized with k*k taps");
  require(x.size() == shape.size() && upstream.size() == shape.size(), "conv2d: buffer length does not match grid shape");
  const std::size_t R = shape.rows, C = shape.cols;
  const long long h = static_cast<long long>(k / 2);
  for (std::size_t u = 0; u < k; ++u) {
    for (std::size_t v = 0; v < k; ++v) {
      const std::size_t cs = wrap(h - static_cast<long long>(v), C);
      double acc = 0.0;
      for (std::size_t r = 0; r < R; ++r) {
        const std::size_t rs = wrap(static_cast<long long>(r) + h - static_cast<long long>(u), R);
        acc += shifted_dot(upstream.data() + r * C, x.data() + rs * C, cs, C);
      }
      grad_taps[u * k + v] += acc;
    }
  }
}

Grid conv2d_apply(const ConvKernel& kernel, const Grid& x) {
  Grid out(x.shape());
  conv2d_accumulate(kernel.taps(), kernel.size(), x.span(), x.shape(), out.span());
  return out;
}

Grid conv2d_adjoint(const ConvKernel& kernel, const Grid& y) {
  Grid out(y.shape());
  conv2d_adjoint_accumulate(kernel.taps(), kernel.size(), y.span(), y.shape(), out.span());
  return out;
}

std::vector<double> restriction_apply(const RestrictionMask& mask, const Grid& x) {
  std::vector<double> out;
  out.reserve(mask.size());
  for (std::size_t i : mask.indices()) {
    require(i < x.size(), "restriction_apply: mask index out of range");
    out.push_back(x[i]);
  }
  return out;
}

Grid restriction_adjoint(const RestrictionMask& mask, std::span<const double> v, Shape shape) {
  require(v.size() == mask.size(), "restriction_adjoint: vector length " + std::to_string(v.size()) +
                                       " does not match mask length " + std::to_string(mask.size()));
  Grid out(shape);
  const auto idx = mask.indices();
  for (std::size_t j = 0; j < idx.size(); ++j) {
    require(idx[j] < out.size(), "restriction_adjoint: mask index out of range");
    out[idx[j]] = v[j];
  }
  return out;
}

// ---------------------------------------------------------------------------

namespace {
struct IdentityParams {};
struct ScaleParams {
  double factor;
};
struct ComposeParams {
  LinearOp outer;
  LinearOp inner;
};
}  // namespace

struct LinearOp::Node {
  Kind kind;
  Shape domain;
  Shape range;
  std::variant<IdentityParams, ScaleParams, ConvKernel, RestrictionMask, ComposeParams> params;
};

LinearOp LinearOp::identity(Shape shape) {
  return LinearOp(std::make_shared<const Node>(Node{Kind::Identity, shape, shape, IdentityParams{}}));
}

LinearOp LinearOp::scale(Shape shape, double factor) {
  require(std::isfinite(factor), "LinearOp::scale: factor must be finite");
  return LinearOp(std::make_shared<const Node>(Node{Kind::Scale, shape, shape, ScaleParams{factor}}));
}

LinearOp LinearOp::conv(Shape shape, ConvKernel kernel) {
  require(shape.size() > 0, "LinearOp::conv: empty grid shape");
  return LinearOp(std::make_shared<const Node>(Node{Kind::Conv, shape, shape, std::move(kernel)}));
}

LinearOp LinearOp::restrict(Shape domain, RestrictionMask mask) {
  for (std::size_t i : mask.indices())
    require(i < domain.size(), "LinearOp::restrict: mask index out of range for " + to_string(domain));
  const Shape range{1, mask.size()};
  return LinearOp(std::make_shared<const Node>(Node{Kind::Restrict, domain, range, std::move(mask)}));
}

LinearOp compose(const LinearOp& outer, const LinearOp& inner) {
  require(inner.range_shape() == outer.domain_shape(),
          "compose: inner range " + to_string(inner.range_shape()) + " does not match outer domain " +
              to_string(outer.domain_shape()));
  return LinearOp(std::make_shared<const LinearOp::Node>(LinearOp::Node{
      LinearOp::Kind::Compose, inner.domain_shape(), outer.range_shape(), ComposeParams{outer, inner}}));
}

LinearOp::Kind LinearOp::kind() const noexcept { return node_->kind; }
Shape LinearOp::domain_shape() const noexcept { return node_->domain; }
Shape LinearOp::range_shape() const noexcept { return node_->range; }

double LinearOp::scale_factor() const {
  if (const auto* p = std::get_if<ScaleParams>(&node_->params)) return p->factor;
  throw std::logic_error("LinearOp: not a Scale operator");
}

const ConvKernel& LinearOp::kernel() const {
  if (const auto* p = std::get_if<ConvKernel>(&node_->params)) return *p;
  throw std::logic_error("LinearOp: not a Conv operator");
}

const RestrictionMask& LinearOp::mask() const {
  if (const auto* p = std::get_if<RestrictionMask>(&node_->params)) return *p;
  throw std::logic_error("LinearOp: not a Restrict operator");
}

const LinearOp& LinearOp::outer() const {
  if (const auto* p = std::get_if<ComposeParams>(&node_->params)) return p->outer;
  throw std::logic_error("LinearOp: not a Compose operator");
}

const LinearOp& LinearOp::inner() const {
  if (const auto* p = std::get_if<ComposeParams>(&node_->params)) return p->inner;
  throw std::logic_error("LinearOp: not a Compose operator");
}

std::vector<double> LinearOp::apply(std::span<const double> x) const {
  require(x.size() == node_->domain.size(), "LinearOp::apply: input length " + std::to_string(x.size()) +
                                                " does not match domain " + to_string(node_->domain));
  switch (node_->kind) {
    case Kind::Identity:
      return {x.begin(), x.end()};
    case Kind::Scale: {
      const double f = std::get<ScaleParams>(node_->params).factor;
      std::vector<double> out(x.size());
      for (std::size_t i = 0; i < x.size(); ++i) out[i] = f * x[i];
      return out;
    }
    case Kind::Conv: {
      const auto& k = std::get<ConvKernel>(node_->params);
      std::vector<double> out(x.size(), 0.0);
      conv2d_accumulate(k.taps(), k.size(), x, node_->domain, out);
      return out;
    }
    case Kind::Restrict: {
      const auto idx = std::get<RestrictionMask>(node_->params).indices();
      std::vector<double> out(idx.size());
      for (std::size_t j = 0; j < idx.size(); ++j) out[j] = x[idx[j]];
      return out;
    }
    case Kind::Compose: {
      const auto& p = std::get<ComposeParams>(node_->params);
      return p.outer.apply(p.inner.apply(x));
    }
  }
  throw std::logic_error("LinearOp: unknown kind");
}

std::vector<double> LinearOp::adjoint(std::span<const double> y) const {
  require(y.size() == node_->range.size(), "LinearOp::adjoint: input length " + std::to_string(y.size()) +
                                               " does not match range " + to_string(node_->range));
  switch (node_->kind) {
    case Kind::Identity:
    case Kind::Scale:
      return apply(y);
    case Kind::Conv: {
      const auto& k = std::get<ConvKernel>(node_->params);
      std::vector<double> out(y.size(), 0.0);
      conv2d_adjoint_accumulate(k.taps(), k.size(), y, node_->domain, out);
      return out;
    }
    case Kind::Restrict: {
      const auto idx = std::get<RestrictionMask>(node_->params).indices();
      std::vector<double> out(node_->domain.size(), 0.0);
      for (std::size_t j = 0; j < idx.size(); ++j) out[idx[j]] = y[j];
      return out;
    }
    case Kind::Compose: {
      const auto& p = std::get<ComposeParams>(node_->params);
      return p.inner.adjoint(p.outer.adjoint(y));
    }
  }
  throw std::logic_error("LinearOp: unknown kind");
}

// ---------------------------------------------------------------------------

double dot_test(const ApplyFn& apply, const ApplyFn& adjoint, std::size_t domain_size, std::size_t range_size,
                std::uint64_t seed, std::size_t trials) {
  constexpr double tiny = 1e-300;
  double worst = 0.0;
  std::vector<double> x(domain_size), y(range_size);
  for (std::size_t t = 0; t < trials; ++t) {
    Engine eng = make_stream(seed, StreamTag::DotTest, {t});
    fill_standard_normal(eng, x);
    fill_standard_normal(eng, y);
    const double lhs = vec::dot(apply(x), y);
    const double rhs = vec::dot(x, adjoint(y));
    worst = std::max(worst, std::abs(lhs - rhs) / (std::abs(lhs) + tiny));
  }
  return worst;
}

double dot_test(const LinearOp& op, std::uint64_t seed, std::size_t trials) {
  return dot_test([&](std::span<const double> x) { return op.apply(x); },
                  [&](std::span<const double> y) { return op.adjoint(y); }, op.domain_shape().size(),
                  op.range_shape().size(), seed, trials);
}

}  // namespace bregprior

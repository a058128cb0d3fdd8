#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "bregprior/net.hpp"
#include "bregprior/stats.hpp"
#include "support/test_util.hpp"

using namespace bregprior;
using testutil::gaussian_grid;
using testutil::gaussian_vector;

namespace {

NetArch tiny_arch() {
  NetArch a;
  a.latent_dim = 5;
  a.base_rows = 2;
  a.base_cols = 3;
  a.base_channels = 2;
  a.stages = {{3, 3}, {1, 2}};
  a.final_kernel = 3;
  return a;
}

NetArch linear_arch(std::size_t latent, std::size_t rows, std::size_t cols) {
  NetArch a;
  a.latent_dim = latent;
  a.base_rows = rows;
  a.base_cols = cols;
  a.base_channels = 1;
  a.stages = {};
  a.final_kernel = 0;
  a.dense_bias = false;
  return a;
}

double inner(const Grid& a, const Grid& b) { return vec::dot(a.span(), b.span()); }

// |a − b| / max(1, |b|), the mixed measure used for gradient checks.
double fd_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric));
}

}  // namespace

TEST(Arch, OutputShapes) {
  EXPECT_EQ(NetArch::small().output_shape(), (Shape{16, 16}));
  EXPECT_EQ(NetArch::desk().output_shape(), (Shape{64, 64}));
  EXPECT_EQ(tiny_arch().output_shape(), (Shape{8, 12}));
}

TEST(Arch, RejectsEvenKernelsAndLinearFormWithStages) {
  NetArch a = NetArch::small();
  a.stages[0].kernel = 2;
  EXPECT_THROW(a.validate(), std::invalid_argument);
  NetArch b = NetArch::small();
  b.final_kernel = 0;
  EXPECT_THROW(b.validate(), std::invalid_argument);
}

TEST(Layout, ContiguousAndComplete) {
  const Generator net(NetArch::small());
  std::size_t offset = 0;
  for (const auto& l : net.layout()) {
    EXPECT_EQ(l.offset, offset) << l.name;
    offset += l.count;
  }
  EXPECT_EQ(offset, net.weight_count());
  EXPECT_EQ(net.weight_count(), 64u * 128 + 128 + 2 * (72 * 8 + 8) + 72 + 1);
}

TEST(Init, Deterministic) {
  EXPECT_EQ(net_init(NetArch::small(), 3, 1.0), net_init(NetArch::small(), 3, 1.0));
  EXPECT_NE(net_init(NetArch::small(), 3, 1.0), net_init(NetArch::small(), 4, 1.0));
}

TEST(Init, LayerStdMatchesFanIn) {
  const NetArch arch = NetArch::small();
  const auto w = net_init(arch, 5, 1.3);
  for (const auto& l : weight_layout(arch)) {
    if (l.fan_in == 0) {
      for (std::size_t i = 0; i < l.count; ++i) EXPECT_EQ(w[l.offset + i], 0.0);
      continue;
    }
    if (l.fan_in < 64 || l.count < 500) continue;
    double ss = 0.0;
    for (std::size_t i = 0; i < l.count; ++i) ss += w[l.offset + i] * w[l.offset + i];
    const double sd = std::sqrt(ss / static_cast<double>(l.count));
    const double expect = 1.3 / std::sqrt(static_cast<double>(l.fan_in));
    EXPECT_NEAR(sd / expect, 1.0, 0.1) << l.name;
  }
}

TEST(Forward, ZeroWeightsGiveZeroGrid) {
  const Generator net(NetArch::small());
  const std::vector<double> w(net.weight_count(), 0.0);
  EXPECT_EQ(net.forward(w, gaussian_vector(64, 1)), Grid(16, 16));
}

TEST(Forward, TinyScaleGivesNearZeroOutput) {
  const Generator net(NetArch::small());
  const auto w = net_init(net.arch(), 2, 1e-12);
  for (double v : net.forward(w, gaussian_vector(64, 3)).values()) EXPECT_LT(std::abs(v), 1e-30);
}

TEST(Forward, FinalLayerIsLinear) {
  const Generator net(NetArch::small());
  auto w = net_init(net.arch(), 4, 1.0);
  const auto z = gaussian_vector(64, 5);
  const Grid g1 = net.forward(w, z);
  for (const auto& l : net.layout())
    if (l.name == "final.w")
      for (std::size_t i = 0; i < l.count; ++i) w[l.offset + i] *= 2.0;
  const Grid g2 = net.forward(w, z);
  for (std::size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g2[i], 2.0 * g1[i], 1e-14);
}

TEST(Forward, GoldenOutput) {
  const Generator net(NetArch::small());
  const Grid g = net.forward(net_init(net.arch(), 11, 1.0), sample_latent(64, 12, 0));
  EXPECT_NEAR(g[0], 0.079681020864080826, 1e-12);
  EXPECT_NEAR(g[17], -0.7739355258193088, 1e-12);
  EXPECT_NEAR(g[100], 0.62549724711056376, 1e-12);
  EXPECT_NEAR(g[255], -0.20060790919989585, 1e-12);
  double s = 0.0;
  for (double v : g.values()) s += v;
  EXPECT_NEAR(s, -34.724087768170399, 1e-10);
}

TEST(Forward, RejectsWrongLengths) {
  const Generator net(NetArch::small());
  const auto w = net_init(net.arch(), 1, 1.0);
  EXPECT_THROW((void)net.forward(w, std::vector<double>(63)), std::invalid_argument);
  EXPECT_THROW((void)net.forward(std::vector<double>(10), std::vector<double>(64)), std::invalid_argument);
}

TEST(Backward, ZeroUpstreamGivesZeroGradients) {
  const Generator net(NetArch::small());
  const auto w = net_init(net.arch(), 6, 1.0);
  const auto g = net.backward(w, gaussian_vector(64, 7), Grid(16, 16));
  for (double v : g.grad_z) EXPECT_EQ(v, 0.0);
  for (double v : g.grad_w) EXPECT_EQ(v, 0.0);
}

TEST(Backward, LinearNetGradientIsOuterProduct) {
  const Generator net(linear_arch(3, 2, 2));
  const auto w = gaussian_vector(net.weight_count(), 8);
  const std::vector<double> z{0.5, -1.0, 2.0};
  const Grid up(2, 2, {1.0, -2.0, 0.25, 3.0});
  const auto g = net.backward(w, z, up);
  ASSERT_EQ(g.grad_w.size(), 12u);
  for (std::size_t o = 0; o < 4; ++o)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_DOUBLE_EQ(g.grad_w[o * 3 + j], up[o] * z[j]);
  for (std::size_t j = 0; j < 3; ++j) {
    double expect = 0.0;
    for (std::size_t o = 0; o < 4; ++o) expect += w[o * 3 + j] * up[o];
    EXPECT_NEAR(g.grad_z[j], expect, 1e-15);
  }
}

TEST(Backward, MatchesFiniteDifferences) {
  for (const NetArch& arch : {tiny_arch(), NetArch::small()}) {
    const Generator net(arch);
    const auto w = net_init(arch, 9, 1.4);
    const auto z = gaussian_vector(arch.latent_dim, 10);
    const Grid up = gaussian_grid(arch.output_rows(), arch.output_cols(), 11);
    const auto g = net.backward(w, z, up);
    const double h = 1e-5;
    for (std::size_t i = 0; i < z.size(); ++i) {
      auto zp = z, zm = z;
      zp[i] += h;
      zm[i] -= h;
      const double fd = (inner(up, net.forward(w, zp)) - inner(up, net.forward(w, zm))) / (2 * h);
      EXPECT_LT(fd_error(g.grad_z[i], fd), 1e-5) << "z " << i;
    }
    const std::size_t stride = std::max<std::size_t>(1, w.size() / 60);
    for (std::size_t i = 0; i < w.size(); i += stride) {
      auto wp = w, wm = w;
      wp[i] += h;
      wm[i] -= h;
      const double fd = (inner(up, net.forward(wp, z)) - inner(up, net.forward(wm, z))) / (2 * h);
      EXPECT_LT(fd_error(g.grad_w[i], fd), 1e-5) << "w " << i;
    }
  }
}

TEST(PriorLoss, ZeroAtTheOutput) {
  const Generator net(NetArch::small());
  const auto w = net_init(net.arch(), 12, 1.0);
  const auto z = gaussian_vector(64, 13);
  const auto r = net.prior_loss_grads(net.forward(w, z), z, w, 2.0);
  EXPECT_EQ(r.loss, 0.0);
  for (double v : r.grad_z) EXPECT_EQ(v, 0.0);
  for (double v : r.grad_w) EXPECT_EQ(v, 0.0);
}

TEST(PriorLoss, ZeroLambda) {
  const Generator net(NetArch::small());
  const auto w = net_init(net.arch(), 14, 1.0);
  const auto r = net.prior_loss_grads(gaussian_grid(16, 16, 15), gaussian_vector(64, 16), w, 0.0);
  EXPECT_EQ(r.loss, 0.0);
  for (double v : r.grad_z) EXPECT_EQ(v, 0.0);
}

TEST(PriorLoss, MatchesFiniteDifferences) {
  const NetArch arch = tiny_arch();
  const Generator net(arch);
  const auto w = net_init(arch, 17, 1.0);
  const auto z = gaussian_vector(arch.latent_dim, 18);
  const Grid x = gaussian_grid(8, 12, 19);
  const double lambda = 1.7;
  const auto r = net.prior_loss_grads(x, z, w, lambda);
  const auto loss = [&](std::span<const double> ww, std::span<const double> zz) {
    const Grid g = net.forward(ww, zz);
    return 0.5 * lambda * lambda * vec::dist_sq(x.span(), g.span());
  };
  EXPECT_NEAR(r.loss, loss(w, z), 1e-12 * r.loss);
  const double h = 1e-5;
  for (std::size_t i = 0; i < z.size(); ++i) {
    auto zp = z, zm = z;
    zp[i] += h;
    zm[i] -= h;
    EXPECT_LT(fd_error(r.grad_z[i], (loss(w, zp) - loss(w, zm)) / (2 * h)), 1e-5);
  }
  for (std::size_t i = 0; i < w.size(); i += 3) {
    auto wp = w, wm = w;
    wp[i] += h;
    wm[i] -= h;
    EXPECT_LT(fd_error(r.grad_w[i], (loss(wp, z) - loss(wm, z)) / (2 * h)), 1e-5);
  }
}

TEST(Forward, PureFunction) {
  const Generator net(NetArch::small());
  const auto w = net_init(net.arch(), 20, 1.0);
  const auto z = gaussian_vector(64, 21);
  EXPECT_EQ(net.forward(w, z), net.forward(w, z));
  const Grid up = gaussian_grid(16, 16, 22);
  EXPECT_EQ(net.backward(w, z, up).grad_w, net.backward(w, z, up).grad_w);
}

namespace {

NetArch fit_arch() {
  NetArch a;
  a.latent_dim = 8;
  a.base_rows = 2;
  a.base_cols = 2;
  a.base_channels = 4;
  a.stages = {{3, 4}, {3, 4}};
  return a;
}

}  // namespace

TEST(FitStrong, ZeroIterationsKeepsInitialWeights) {
  const Generator net(fit_arch());
  const LinearOp id = LinearOp::identity({8, 8});
  const auto fit = fit_strong(gaussian_vector(64, 23), id, net, 24, 0, 0.1);
  EXPECT_EQ(fit.weights, net_init(net.arch(), 24, 1.0));
}

TEST(FitStrong, ZeroStepKeepsWeightsAndLoss) {
  const Generator net(fit_arch());
  const LinearOp id = LinearOp::identity({8, 8});
  const auto fit = fit_strong(gaussian_vector(64, 25), id, net, 26, 5, 0.0);
  EXPECT_EQ(fit.weights, net_init(net.arch(), 26, 1.0));
  for (double l : fit.loss_trace) EXPECT_EQ(l, fit.loss_trace.front());
}

TEST(FitStrong, IdentityOperatorConverges) {
  const Generator net(fit_arch());
  const LinearOp id = LinearOp::identity({8, 8});
  Grid y(8, 8);
  for (std::size_t r = 0; r < 8; ++r)
    for (std::size_t c = 0; c < 8; ++c) y(r, c) = r < 4 ? 0.5 : -0.5;
  const auto fit = fit_strong(y.values(), id, net, 27, 2000, 0.01);
  ASSERT_EQ(fit.loss_trace.size(), 2001u);
  EXPECT_LE(fit.loss_trace.back(), 1e-2 * fit.loss_trace.front());
}

TEST(FitStrong, DivergenceAbortsWithTrace) {
  const Generator net(fit_arch());
  const LinearOp id = LinearOp::identity({8, 8});
  try {
    (void)fit_strong(gaussian_vector(64, 28, 10.0), id, net, 29, 200, 1e3);
    FAIL() << "expected divergence";
  } catch (const FitDiverged& e) {
    EXPECT_FALSE(e.trace().empty());
  }
}

TEST(Weights, RoundTrip) {
  const auto dir = testutil::scratch_dir("net_weights");
  const NetArch arch = NetArch::small();
  const auto w = net_init(arch, 30, 1.0);
  write_weights(dir / "w.dpnw", arch, w);
  EXPECT_EQ(std::filesystem::file_size(dir / "w.dpnw"), 24 + 8 * w.size());
  EXPECT_EQ(read_weights(dir / "w.dpnw", arch), w);
}

TEST(Weights, RejectsOtherArchitectureAndBadMagic) {
  const auto dir = testutil::scratch_dir("net_weights_bad");
  const auto w = net_init(NetArch::small(), 31, 1.0);
  write_weights(dir / "w.dpnw", NetArch::small(), w);
  EXPECT_THROW((void)read_weights(dir / "w.dpnw", NetArch::desk()), std::runtime_error);
  std::ofstream(dir / "junk.dpnw", std::ios::binary) << "NOPE and more bytes to fill the header";
  EXPECT_THROW((void)read_weights(dir / "junk.dpnw", NetArch::small()), std::runtime_error);
}

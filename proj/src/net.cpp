#include "bregprior/net.hpp"

#include <cmath>
#include <fstream>

#include "binary_io.hpp"
#include "bregprior/rng.hpp"

namespace bregprior {

NetArch NetArch::small() { return NetArch{}; }

NetArch NetArch::desk() {
  NetArch a;
  a.stages = {{3, 8}, {3, 8}, {3, 8}, {3, 8}};
  return a;
}

void NetArch::validate() const {
  require(latent_dim > 0, "NetArch: latent_dim must be positive");
  require(base_rows > 0 && base_cols > 0 && base_channels > 0, "NetArch: base shape must be positive");
  for (const auto& s : stages) {
    require(s.kernel % 2 == 1, "NetArch: stage kernel sizes must be odd");
    require(s.channels > 0, "NetArch: stage channels must be positive");
  }
  if (final_kernel == 0) {
    require(stages.empty() && base_channels == 1, "NetArch: omitting the final conv requires one channel and no stages");
  } else {
    require(final_kernel % 2 == 1, "NetArch: final kernel size must be odd");
  }
  require(leaky_slope >= 0.0 && leaky_slope < 1.0, "NetArch: leaky slope must be in [0, 1)");
}

std::vector<LayerSlice> weight_layout(const NetArch& arch) {
  std::vector<LayerSlice> out;
  std::size_t off = 0;
  auto add = [&](std::string name, std::size_t count, std::size_t fan_in) {
    out.push_back({std::move(name), off, count, fan_in});
    off += count;
  };
  const std::size_t base = arch.base_rows * arch.base_cols * arch.base_channels;
  add("dense.w", base * arch.latent_dim, arch.latent_dim);
  if (arch.dense_bias) add("dense.b", base, 0);
  std::size_t cin = arch.base_channels;
  for (std::size_t s = 0; s < arch.stages.size(); ++s) {
    const auto& st = arch.stages[s];
    add("stage" + std::to_string(s) + ".w", st.channels * cin * st.kernel * st.kernel, cin * st.kernel * st.kernel);
    add("stage" + std::to_string(s) + ".b", st.channels, 0);
    cin = st.channels;
  }
  if (arch.final_kernel > 0) {
    add("final.w", cin * arch.final_kernel * arch.final_kernel, cin * arch.final_kernel * arch.final_kernel);
    add("final.b", 1, 0);
  }
  return out;
}

// Activations retained for the backward pass. Channel-major planes.
struct Generator::Cache {
  std::vector<double> base;                 // dense output, base_channels planes
  std::vector<std::vector<double>> up;      // per stage: upsampled input
  std::vector<std::vector<double>> pre;     // per stage: conv output before activation
  std::vector<std::vector<double>> act;     // per stage: activation
  Grid output;
};

Generator::Generator(NetArch arch) : arch_(std::move(arch)) {
  arch_.validate();
  layout_ = weight_layout(arch_);
  weight_count_ = layout_.empty() ? 0 : layout_.back().offset + layout_.back().count;
}

void Generator::check_inputs(std::span<const double> w, std::span<const double> z) const {
  require(z.size() == arch_.latent_dim, "Generator: latent length " + std::to_string(z.size()) +
                                            " does not match latent_dim " + std::to_string(arch_.latent_dim));
  require(w.size() == weight_count_, "Generator: weight length " + std::to_string(w.size()) + " does not match " +
                                         std::to_string(weight_count_));
}

namespace {

void upsample2(std::span<const double> in, std::size_t R, std::size_t C, std::span<double> out) {
  const std::size_t C2 = 2 * C;
  for (std::size_t r = 0; r < 2 * R; ++r)
    for (std::size_t c = 0; c < C2; ++c) out[r * C2 + c] = in[(r / 2) * C + c / 2];
}

// Adjoint of nearest-neighbour upsampling: sum over each 2x2 block.
void upsample2_adjoint(std::span<const double> g, std::size_t R, std::size_t C, std::span<double> out) {
  const std::size_t C2 = 2 * C;
  for (std::size_t r = 0; r < 2 * R; ++r)
    for (std::size_t c = 0; c < C2; ++c) out[(r / 2) * C + c / 2] += g[r * C2 + c];
}

}  // namespace

Generator::Cache Generator::run_forward(std::span<const double> w, std::span<const double> z) const {
  check_inputs(w, z);
  Cache cache;
  std::size_t slot = 0;
  const std::size_t base_n = arch_.base_rows * arch_.base_cols * arch_.base_channels;
  {
    const auto& dw = layout_[slot++];
    cache.base.assign(base_n, 0.0);
    for (std::size_t j = 0; j < base_n; ++j) {
      const double* row = w.data() + dw.offset + j * arch_.latent_dim;
      double acc = 0.0;
      for (std::size_t l = 0; l < arch_.latent_dim; ++l) acc += row[l] * z[l];
      cache.base[j] = acc;
    }
    if (arch_.dense_bias) {
      const auto& db = layout_[slot++];
      for (std::size_t j = 0; j < base_n; ++j) cache.base[j] += w[db.offset + j];
    }
  }

  std::size_t R = arch_.base_rows, C = arch_.base_cols, cin = arch_.base_channels;
  const std::vector<double>* prev = &cache.base;
  cache.up.resize(arch_.stages.size());
  cache.pre.resize(arch_.stages.size());
  cache.act.resize(arch_.stages.size());
  for (std::size_t s = 0; s < arch_.stages.size(); ++s) {
    const auto& st = arch_.stages[s];
    const auto& kw = layout_[slot++];
    const auto& kb = layout_[slot++];
    const std::size_t R2 = 2 * R, C2 = 2 * C, plane = R2 * C2, kk = st.kernel * st.kernel;
    auto& up = cache.up[s];
    up.assign(cin * plane, 0.0);
    for (std::size_t i = 0; i < cin; ++i)
      upsample2(std::span(*prev).subspan(i * R * C, R * C), R, C, std::span(up).subspan(i * plane, plane));
    auto& pre = cache.pre[s];
    pre.assign(st.channels * plane, 0.0);
    for (std::size_t o = 0; o < st.channels; ++o) {
      auto out = std::span(pre).subspan(o * plane, plane);
      for (std::size_t i = 0; i < cin; ++i)
        conv2d_accumulate(w.subspan(kw.offset + (o * cin + i) * kk, kk), st.kernel,
                          std::span<const double>(up).subspan(i * plane, plane), {R2, C2}, out);
      const double b = w[kb.offset + o];
      for (double& v : out) v += b;
    }
    auto& act = cache.act[s];
    act.resize(pre.size());
    for (std::size_t i = 0; i < pre.size(); ++i) act[i] = pre[i] > 0.0 ? pre[i] : arch_.leaky_slope * pre[i];
    prev = &act;
    R = R2;
    C = C2;
    cin = st.channels;
  }

  cache.output = Grid(R, C);
  if (arch_.final_kernel > 0) {
    const auto& fw = layout_[slot++];
    const auto& fb = layout_[slot++];
    const std::size_t plane = R * C, kk = arch_.final_kernel * arch_.final_kernel;
    for (std::size_t i = 0; i < cin; ++i)
      conv2d_accumulate(w.subspan(fw.offset + i * kk, kk), arch_.final_kernel,
                        std::span<const double>(*prev).subspan(i * plane, plane), {R, C}, cache.output.span());
    for (double& v : cache.output.values()) v += w[fb.offset];
  } else {
    std::copy(prev->begin(), prev->end(), cache.output.values().begin());
  }
  return cache;
}

NetGradients Generator::run_backward(std::span<const double> w, std::span<const double> z, const Cache& cache,
                                     const Grid& upstream) const {
  require(upstream.shape() == output_shape(), "Generator::backward: upstream shape " + to_string(upstream.shape()) +
                                                  " does not match output " + to_string(output_shape()));
  NetGradients g;
  g.grad_z.assign(arch_.latent_dim, 0.0);
  g.grad_w.assign(weight_count_, 0.0);
  std::span<double> gw(g.grad_w);

  std::size_t R = arch_.output_rows(), C = arch_.output_cols();
  std::size_t slot = layout_.size();
  const std::size_t nstages = arch_.stages.size();
  std::size_t cin = nstages ? arch_.stages.back().channels : arch_.base_channels;
  // gradient w.r.t. the input of the final layer (last activation or base)
  std::vector<double> g_act;
  if (arch_.final_kernel > 0) {
    const auto& fb = layout_[--slot];
    const auto& fw = layout_[--slot];
    const std::size_t plane = R * C, kk = arch_.final_kernel * arch_.final_kernel;
    double bsum = 0.0;
    for (double v : upstream.values()) bsum += v;
    gw[fb.offset] += bsum;
    const std::vector<double>& input = nstages ? cache.act.back() : cache.base;
    g_act.assign(cin * plane, 0.0);
    for (std::size_t i = 0; i < cin; ++i) {
      conv2d_kernel_grad_accumulate(std::span<const double>(input).subspan(i * plane, plane), upstream.span(), {R, C},
                                    arch_.final_kernel, gw.subspan(fw.offset + i * kk, kk));
      conv2d_adjoint_accumulate(w.subspan(fw.offset + i * kk, kk), arch_.final_kernel, upstream.span(), {R, C},
                                std::span(g_act).subspan(i * plane, plane));
    }
  } else {
    g_act = upstream.values();
  }

  for (std::size_t s = nstages; s-- > 0;) {
    const auto& st = arch_.stages[s];
    const auto& kb = layout_[--slot];
    const auto& kw = layout_[--slot];
    const std::size_t stage_in = s == 0 ? arch_.base_channels : arch_.stages[s - 1].channels;
    const std::size_t plane = R * C, kk = st.kernel * st.kernel;
    const auto& pre = cache.pre[s];
    std::vector<double> g_pre(g_act.size());
    for (std::size_t i = 0; i < g_pre.size(); ++i) g_pre[i] = pre[i] > 0.0 ? g_act[i] : arch_.leaky_slope * g_act[i];
    std::vector<double> g_up(stage_in * plane, 0.0);
    for (std::size_t o = 0; o < st.channels; ++o) {
      auto gp = std::span<const double>(g_pre).subspan(o * plane, plane);
      double bsum = 0.0;
      for (double v : gp) bsum += v;
      gw[kb.offset + o] += bsum;
      for (std::size_t i = 0; i < stage_in; ++i) {
        const std::size_t koff = kw.offset + (o * stage_in + i) * kk;
        conv2d_kernel_grad_accumulate(std::span<const double>(cache.up[s]).subspan(i * plane, plane), gp, {R, C},
                                      st.kernel, gw.subspan(koff, kk));
        conv2d_adjoint_accumulate(w.subspan(koff, kk), st.kernel, gp, {R, C},
                                  std::span(g_up).subspan(i * plane, plane));
      }
    }
    R /= 2;
    C /= 2;
    std::vector<double> g_prev(stage_in * R * C, 0.0);
    for (std::size_t i = 0; i < stage_in; ++i)
      upsample2_adjoint(std::span<const double>(g_up).subspan(i * 4 * R * C, 4 * R * C), R, C,
                        std::span(g_prev).subspan(i * R * C, R * C));
    g_act = std::move(g_prev);
  }

  // dense layer
  const std::size_t base_n = g_act.size();
  if (arch_.dense_bias) {
    const auto& db = layout_[--slot];
    for (std::size_t j = 0; j < base_n; ++j) gw[db.offset + j] += g_act[j];
  }
  const auto& dw = layout_[--slot];
  for (std::size_t j = 0; j < base_n; ++j) {
    const double gj = g_act[j];
    const double* row = w.data() + dw.offset + j * arch_.latent_dim;
    double* grow = gw.data() + dw.offset + j * arch_.latent_dim;
    for (std::size_t l = 0; l < arch_.latent_dim; ++l) {
      grow[l] += gj * z[l];
      g.grad_z[l] += gj * row[l];
    }
  }
  return g;
}

Grid Generator::forward(std::span<const double> w, std::span<const double> z) const {
  return run_forward(w, z).output;
}

NetGradients Generator::backward(std::span<const double> w, std::span<const double> z, const Grid& upstream) const {
  const Cache cache = run_forward(w, z);
  return run_backward(w, z, cache, upstream);
}

NetGradients Generator::forward_backward(std::span<const double> w, std::span<const double> z,
                                         const std::function<Grid(const Grid&)>& upstream_fn, Grid* output) const {
  const Cache cache = run_forward(w, z);
  NetGradients g = run_backward(w, z, cache, upstream_fn(cache.output));
  if (output) *output = cache.output;
  return g;
}

PriorLoss Generator::prior_loss_grads(const Grid& x, std::span<const double> z, std::span<const double> w,
                                      double lambda) const {
  require(lambda >= 0.0, "prior_loss_grads: lambda must be non-negative");
  require(x.shape() == output_shape(), "prior_loss_grads: x shape does not match generator output");
  const double l2 = lambda * lambda;
  PriorLoss res;
  auto grads = forward_backward(
      w, z,
      [&](const Grid& g) {
        Grid up(g.shape());
        for (std::size_t i = 0; i < g.size(); ++i) up[i] = l2 * (g[i] - x[i]);
        return up;
      },
      &res.output);
  res.loss = 0.5 * l2 * vec::dist_sq(x.span(), res.output.span());
  res.grad_z = std::move(grads.grad_z);
  res.grad_w = std::move(grads.grad_w);
  return res;
}

std::vector<double> net_init(const NetArch& arch, std::uint64_t seed, double scale) {
  require(scale >= 0.0 && std::isfinite(scale), "net_init: scale must be non-negative");
  arch.validate();
  const auto layout = weight_layout(arch);
  std::vector<double> w(layout.back().offset + layout.back().count, 0.0);
  for (std::size_t s = 0; s < layout.size(); ++s) {
    const auto& slice = layout[s];
    if (slice.fan_in == 0) continue;
    Engine eng = make_stream(seed, StreamTag::NetInit, {s});
    auto part = std::span(w).subspan(slice.offset, slice.count);
    fill_standard_normal(eng, part);
    const double sd = scale / std::sqrt(static_cast<double>(slice.fan_in));
    for (double& v : part) v *= sd;
  }
  return w;
}

StrongFit fit_strong(std::span<const double> y, const LinearOp& op, const Generator& net, std::uint64_t seed,
                     std::size_t iters, double eta, double init_scale) {
  require(op.domain_shape() == net.output_shape(), "fit_strong: operator domain does not match generator output");
  require(y.size() == op.range_shape().size(), "fit_strong: data length does not match operator range");
  StrongFit fit;
  fit.weights = net_init(net.arch(), seed, init_scale);
  fit.z.resize(net.latent_dim());
  Engine eng = make_stream(seed, StreamTag::LatentInit, {});
  fill_standard_normal(eng, fit.z);

  auto loss_of = [&](const Grid& g, std::vector<double>* residual) {
    std::vector<double> r = op.apply(g.span());
    for (std::size_t i = 0; i < r.size(); ++i) r[i] -= y[i];
    const double l = 0.5 * vec::norm_sq(r);
    if (residual) *residual = std::move(r);
    return l;
  };

  for (std::size_t it = 0; it < iters; ++it) {
    double loss = 0.0;
    auto grads = net.forward_backward(fit.weights, fit.z, [&](const Grid& g) {
      std::vector<double> r;
      loss = loss_of(g, &r);
      return Grid(g.rows(), g.cols(), op.adjoint(r));
    });
    fit.loss_trace.push_back(loss);
    if (!std::isfinite(loss) || !vec::all_finite(grads.grad_w))
      throw FitDiverged("fit_strong: non-finite loss at iteration " + std::to_string(it), fit.loss_trace);
    vec::axpy(-eta, grads.grad_w, fit.weights);
  }
  const double final_loss = loss_of(net.forward(fit.weights, fit.z), nullptr);
  fit.loss_trace.push_back(final_loss);
  if (!std::isfinite(final_loss)) throw FitDiverged("fit_strong: non-finite final loss", fit.loss_trace);
  return fit;
}

// ---------------------------------------------------------------------------

namespace {
constexpr char kWeightsMagic[4] = {'D', 'P', 'N', 'W'};
constexpr std::uint32_t kWeightsVersion = 1;
constexpr std::size_t kWeightsHeader = 24;
}  // namespace

void write_weights(const std::filesystem::path& path, const NetArch& arch, std::span<const double> w) {
  const auto layout = weight_layout(arch);
  require(w.size() == layout.back().offset + layout.back().count, "write_weights: weight length does not match arch");
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_weights: cannot open " + path.string());
  os.write(kWeightsMagic, 4);
  detail::put<std::uint32_t>(os, kWeightsVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(arch.latent_dim));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(arch.stages.size()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(arch.output_rows()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(arch.output_cols()));
  for (double v : w) detail::put<double>(os, v);
  if (!os) throw std::runtime_error("write_weights: write failed for " + path.string());
}

std::vector<double> read_weights(const std::filesystem::path& path, const NetArch& arch) {
  const std::vector<char> buf = detail::slurp(path.string());
  auto fail = [&](const std::string& msg, std::size_t off) {
    return std::runtime_error("read_weights: " + path.string() + ": " + msg + " at byte offset " + std::to_string(off));
  };
  if (buf.size() < kWeightsHeader) throw fail("truncated header", buf.size());
  if (std::memcmp(buf.data(), kWeightsMagic, 4) != 0) throw fail("bad magic", 0);
  if (detail::get<std::uint32_t>(buf, 4) != kWeightsVersion) throw fail("unsupported version", 4);
  const std::uint32_t fields[4] = {static_cast<std::uint32_t>(arch.latent_dim),
                                   static_cast<std::uint32_t>(arch.stages.size()),
                                   static_cast<std::uint32_t>(arch.output_rows()),
                                   static_cast<std::uint32_t>(arch.output_cols())};
  for (std::size_t i = 0; i < 4; ++i)
    if (detail::get<std::uint32_t>(buf, 8 + 4 * i) != fields[i]) throw fail("header does not match architecture", 8 + 4 * i);
  const auto layout = weight_layout(arch);
  const std::size_t n = layout.back().offset + layout.back().count;
  if (buf.size() < kWeightsHeader + 8 * n) throw fail("truncated payload", buf.size());
  if (buf.size() > kWeightsHeader + 8 * n) throw fail("trailing bytes", kWeightsHeader + 8 * n);
  std::vector<double> w(n);
  for (std::size_t i = 0; i < n; ++i) w[i] = detail::get<double>(buf, kWeightsHeader + 8 * i);
  return w;
}

}  // namespace bregprior

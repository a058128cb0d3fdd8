#include "bregprior/stats.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numeric>
#include <thread>

#include "bregprior/rng.hpp"

namespace bregprior {

std::vector<double> sample_latent(std::size_t latent_dim, std::uint64_t seed, std::size_t index) {
  std::vector<double> z(latent_dim);
  Engine eng = make_stream(seed, StreamTag::Sample, {index});
  fill_standard_normal(eng, z);
  return z;
}

SampleSet sample_generator(const Generator& net, std::span<const double> w, std::size_t count, std::uint64_t seed) {
  require(count >= 1, "sample_generator: at least one realization is required");
  SampleSet s;
  s.realizations.reserve(count);
  for (std::size_t j = 0; j < count; ++j) s.realizations.push_back(net.forward(w, sample_latent(net.latent_dim(), seed, j)));
  return s;
}

StdConvention parse_std_convention(const std::string& s) {
  if (s == "population") return StdConvention::Population;
  if (s == "sample") return StdConvention::Sample;
  throw std::invalid_argument("unknown std convention '" + s + "' (expected population or sample)");
}

std::string to_string(StdConvention c) { return c == StdConvention::Population ? "population" : "sample"; }

Welford::Welford(Shape shape) : shape_(shape), mean_(shape.size(), 0.0), m2_(shape.size(), 0.0) {}

void Welford::add(const Grid& x) {
  require(x.shape() == shape_, "Welford::add: shape mismatch");
  ++count_;
  const double inv = 1.0 / static_cast<double>(count_);
  for (std::size_t i = 0; i < mean_.size(); ++i) {
    const double d = x[i] - mean_[i];
    mean_[i] += d * inv;
    m2_[i] += d * (x[i] - mean_[i]);
  }
}

void Welford::merge(const Welford& other) {
  require(other.shape_ == shape_, "Welford::merge: shape mismatch");
  if (other.count_ == 0) return;
  if (count_ == 0) {
    *this = other;
    return;
  }
  const double na = static_cast<double>(count_), nb = static_cast<double>(other.count_);
  const double n = na + nb;
  for (std::size_t i = 0; i < mean_.size(); ++i) {
    const double d = other.mean_[i] - mean_[i];
    mean_[i] += d * nb / n;
    m2_[i] += other.m2_[i] + d * d * na * nb / n;
  }
  count_ += other.count_;
}

Grid Welford::mean() const {
  require(count_ >= 1, "mean: no samples accumulated");
  return Grid(shape_.rows, shape_.cols, mean_);
}

Grid Welford::std(StdConvention convention) const {
  require(count_ >= 2, "pointwise std needs at least two realizations (got " + std::to_string(count_) + ")");
  const double denom = static_cast<double>(convention == StdConvention::Population ? count_ : count_ - 1);
  std::vector<double> out(m2_.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(std::max(0.0, m2_[i]) / denom);
  return Grid(shape_.rows, shape_.cols, std::move(out));
}

namespace {
Welford accumulate(const SampleSet& samples) {
  require(samples.size() >= 1, "empty sample set");
  Welford acc(samples.realizations.front().shape());
  for (const auto& g : samples.realizations) acc.add(g);
  return acc;
}
}  // namespace

Grid mean_grid(const SampleSet& samples) { return accumulate(samples).mean(); }

Grid pointwise_std(const SampleSet& samples, StdConvention convention) {
  require(samples.size() >= 2,
          "pointwise std needs at least two realizations (got " + std::to_string(samples.size()) + ")");
  return accumulate(samples).std(convention);
}

PixelHistogram histogram(std::span<const double> values, Pixel pixel, std::size_t bins) {
  require(bins >= 1, "histogram: bins must be at least 1");
  require(!values.empty(), "histogram: no values");
  auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) {
    lo -= 0.5;
    hi += 0.5;
  }
  PixelHistogram h;
  h.pixel = pixel;
  h.edges.resize(bins + 1);
  const double width = (hi - lo) / static_cast<double>(bins);
  for (std::size_t b = 0; b <= bins; ++b) h.edges[b] = lo + width * static_cast<double>(b);
  h.edges.back() = hi;
  h.counts.assign(bins, 0);
  for (double v : values) {
    // Locate by the stored edges so the bin assignment agrees with them exactly.
    auto it = std::upper_bound(h.edges.begin(), h.edges.end(), v);
    std::size_t b = static_cast<std::size_t>(it - h.edges.begin());
    b = b == 0 ? 0 : b - 1;
    if (b >= bins) b = bins - 1;
    ++h.counts[b];
  }
  return h;
}

PixelHistogram pixel_histogram(const SampleSet& samples, Pixel pixel, std::size_t bins) {
  require(samples.size() >= 1, "pixel_histogram: empty sample set");
  const Shape shape = samples.realizations.front().shape();
  require(pixel.row < shape.rows && pixel.col < shape.cols,
          "pixel_histogram: pixel (" + std::to_string(pixel.row) + ", " + std::to_string(pixel.col) +
              ") outside " + to_string(shape));
  std::vector<double> values;
  values.reserve(samples.size());
  for (const auto& g : samples.realizations) values.push_back(g(pixel.row, pixel.col));
  return histogram(values, pixel, bins);
}

Quality model_quality(const Grid& x, const Grid& truth) {
  require(x.shape() == truth.shape(), "model_quality: shape mismatch");
  const double tn = vec::norm(truth.span());
  require(tn > 0.0, "model_quality: truth has zero norm");
  Quality q;
  q.relative_l2 = std::sqrt(vec::dist_sq(x.span(), truth.span())) / tn;
  q.snr_db = q.relative_l2 == 0.0 ? std::numeric_limits<double>::infinity() : -20.0 * std::log10(q.relative_l2);
  return q;
}

GeneratorSummary summarize_generator(const Generator& net, std::span<const double> w, std::size_t count,
                                     std::uint64_t seed, StdConvention convention, std::size_t threads,
                                     const std::vector<Pixel>& probes) {
  require(count >= 1, "summarize_generator: at least one realization is required");
  const Shape shape = net.output_shape();
  for (const auto& p : probes)
    require(p.row < shape.rows && p.col < shape.cols, "summarize_generator: probe outside " + to_string(shape));
  constexpr std::size_t chunk = 64;
  const std::size_t n_chunks = (count + chunk - 1) / chunk;
  std::vector<Welford> partial(n_chunks, Welford(shape));
  std::vector<std::vector<double>> probe_values(probes.size(), std::vector<double>(count));

  auto run_chunk = [&](std::size_t c) {
    const std::size_t begin = c * chunk, end = std::min(count, begin + chunk);
    for (std::size_t j = begin; j < end; ++j) {
      const Grid g = net.forward(w, sample_latent(net.latent_dim(), seed, j));
      partial[c].add(g);
      for (std::size_t p = 0; p < probes.size(); ++p) probe_values[p][j] = g(probes[p].row, probes[p].col);
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(threads, 1, n_chunks);
  if (workers == 1) {
    for (std::size_t c = 0; c < n_chunks; ++c) run_chunk(c);
  } else {
    std::vector<std::exception_ptr> errors(workers);
    {
      std::vector<std::jthread> pool;
      for (std::size_t t = 0; t < workers; ++t) {
        pool.emplace_back([&, t] {
          try {
            for (std::size_t c = t; c < n_chunks; c += workers) run_chunk(c);
          } catch (...) {
            errors[t] = std::current_exception();
          }
        });
      }
    }
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }

  Welford total(shape);
  for (const auto& p : partial) total.merge(p);
  GeneratorSummary s;
  s.count = count;
  s.mean = total.mean();
  if (count >= 2) s.std = total.std(convention);
  s.probes = probes;
  s.probe_values = std::move(probe_values);
  return s;
}

std::vector<Pixel> default_probes(const Grid& std_grid) {
  std::vector<std::size_t> order(std_grid.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return std_grid[a] > std_grid[b]; });
  const std::size_t top = order.front();
  const std::size_t median = order[order.size() / 2];
  const auto to_pixel = [&](std::size_t i) { return Pixel{i / std_grid.cols(), i % std_grid.cols()}; };
  return {to_pixel(top), to_pixel(median)};
}

}  // namespace bregprior

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bregprior/grid.hpp"
#include "bregprior/net.hpp"

namespace bregprior {

/// Realizations g(z_j, w), z_j ~ N(0, I) keyed by (seed, j).
struct SampleSet {
  std::vector<Grid> realizations;

  [[nodiscard]] std::size_t size() const noexcept { return realizations.size(); }
};

std::vector<double> sample_latent(std::size_t latent_dim, std::uint64_t seed, std::size_t index);

SampleSet sample_generator(const Generator& net, std::span<const double> w, std::size_t count, std::uint64_t seed);

enum class StdConvention { Population, Sample };

StdConvention parse_std_convention(const std::string& s);
std::string to_string(StdConvention c);

Grid mean_grid(const SampleSet& samples);
Grid pointwise_std(const SampleSet& samples, StdConvention convention = StdConvention::Population);

/// Streaming per-pixel mean and M2 (sum of squared deviations).
class Welford {
 public:
  explicit Welford(Shape shape);

  void add(const Grid& x);
  /// Chan et al. pairwise merge; merging in a fixed order keeps results
  /// independent of how the stream was split.
  void merge(const Welford& other);

  [[nodiscard]] std::size_t count() const noexcept { return count_; }
  [[nodiscard]] Grid mean() const;
  [[nodiscard]] Grid std(StdConvention convention = StdConvention::Population) const;

 private:
  Shape shape_;
  std::size_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

struct Pixel {
  std::size_t row = 0;
  std::size_t col = 0;

  friend bool operator==(const Pixel&, const Pixel&) = default;
};

struct PixelHistogram {
  Pixel pixel;
  std::vector<double> edges;  ///< bins + 1 ascending edges
  std::vector<std::size_t> counts;
};

/// Equal-width bins over [min, max] of the values; right-open except the last.
PixelHistogram histogram(std::span<const double> values, Pixel pixel, std::size_t bins);
PixelHistogram pixel_histogram(const SampleSet& samples, Pixel pixel, std::size_t bins);

struct Quality {
  double relative_l2 = 0.0;
  double snr_db = 0.0;  ///< +inf when x equals the truth
};

Quality model_quality(const Grid& x, const Grid& truth);

struct GeneratorSummary {
  std::size_t count = 0;
  Grid mean;
  Grid std;
  std::vector<Pixel> probes;
  std::vector<std::vector<double>> probe_values;  ///< per probe, in sample order
};

/// Streams `count` realizations through a Welford accumulator in fixed
/// 64-sample chunks, optionally spread over threads. Results do not depend
/// on the thread count.
GeneratorSummary summarize_generator(const Generator& net, std::span<const double> w, std::size_t count,
                                     std::uint64_t seed, StdConvention convention, std::size_t threads,
                                     const std::vector<Pixel>& probes = {});

/// Pixels with the largest and the median standard deviation (ties go to the
/// lowest flat index).
std::vector<Pixel> default_probes(const Grid& std_grid);

}  // namespace bregprior

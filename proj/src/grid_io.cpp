#include "bregprior/grid_io.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

#include "binary_io.hpp"

namespace bregprior {

namespace detail {

std::vector<char> slurp(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

}  // namespace detail

namespace {
constexpr char kMagic[4] = {'P', 'G', 'R', 'D'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeader = 16;
}  // namespace

void write_portable_grid(const Grid& grid, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("write_portable_grid: cannot open " + path.string());
  os.write(kMagic, 4);
  detail::put<std::uint16_t>(os, kVersion);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(grid.rows()));
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(grid.cols()));
  detail::put<std::uint16_t>(os, 0);
  for (double v : grid.values()) detail::put<double>(os, v);
  if (!os) throw std::runtime_error("write_portable_grid: write failed for " + path.string());
}

Grid read_portable_grid(const std::filesystem::path& path) {
  const std::vector<char> buf = detail::slurp(path.string());
  const std::string name = path.string() + ": ";
  if (buf.size() < 4) throw FormatError(name + "truncated magic", buf.size());
  if (std::memcmp(buf.data(), kMagic, 4) != 0) throw FormatError(name + "bad magic", 0);
  if (buf.size() < kHeader) throw FormatError(name + "truncated header", buf.size());
  if (detail::get<std::uint16_t>(buf, 4) != kVersion) throw FormatError(name + "unsupported version", 4);
  const std::uint32_t rows = detail::get<std::uint32_t>(buf, 6);
  const std::uint32_t cols = detail::get<std::uint32_t>(buf, 10);
  if (rows == 0) throw FormatError(name + "zero rows", 6);
  if (cols == 0) throw FormatError(name + "zero cols", 10);
  const std::size_t n = static_cast<std::size_t>(rows) * cols;
  const std::size_t expected = kHeader + 8 * n;
  if (buf.size() < expected) {
    // offset of the first incomplete value
    const std::size_t complete = (buf.size() - kHeader) / 8;
    throw FormatError(name + "truncated payload", kHeader + 8 * complete);
  }
  if (buf.size() > expected) throw FormatError(name + "trailing bytes", expected);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) data[i] = detail::get<double>(buf, kHeader + 8 * i);
  return Grid(rows, cols, std::move(data));
}

}  // namespace bregprior

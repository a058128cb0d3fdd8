#pragma once

#include <cstddef>
#include <filesystem>
#include <stdexcept>
#include <string>

#include "bregprior/grid.hpp"

namespace bregprior {

/// Malformed portable-grid file; `offset` is the byte position of the problem.
class FormatError : public std::runtime_error {
 public:
  FormatError(const std::string& what, std::size_t offset)
      : std::runtime_error(what + " at byte offset " + std::to_string(offset)), offset_(offset) {}
  [[nodiscard]] std::size_t offset() const noexcept { return offset_; }

 private:
  std::size_t offset_;
};

// Portable grid: 16-byte header ("PGRD", u16 version, u32 rows, u32 cols,
// u16 pad), then rows*cols little-endian f64 values, row-major.
void write_portable_grid(const Grid& grid, const std::filesystem::path& path);
Grid read_portable_grid(const std::filesystem::path& path);

}  // namespace bregprior

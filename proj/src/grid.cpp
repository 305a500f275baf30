#include "vimprint/grid.hpp"

#include <algorithm>

#include "vimprint/errors.hpp"

namespace vimprint {

std::vector<double> toroidal_box_sum(std::span<const double> values, Extent2 grid, std::size_t channels,
                                     Extent2 block) {
  if (values.size() != grid.area() * channels) throw DomainError("grid: box-sum table size mismatch");
  if (block.x < 1 || block.y < 1 || block.x > grid.x || block.y > grid.y)
    throw DomainError("grid: box-sum block must fit inside the grid");

  const Torus torus(grid);
  const std::size_t c = channels;

  // Pass 1: sums along y. Cumulative sums over the row extended by block.y - 1.
  std::vector<double> along_y(values.size());
  std::vector<double> cum(static_cast<std::size_t>(grid.y + block.y) * c);
  for (int x = 0; x < grid.x; ++x) {
    std::fill(cum.begin(), cum.begin() + static_cast<std::ptrdiff_t>(c), 0.0);
    for (int y = 0; y < grid.y + block.y - 1; ++y) {
      const double* src = &values[torus.index(x, y) * c];
      double* prev = &cum[static_cast<std::size_t>(y) * c];
      double* next = prev + c;
      for (std::size_t z = 0; z < c; ++z) next[z] = prev[z] + src[z];
    }
    for (int y = 0; y < grid.y; ++y) {
      const double* lo = &cum[static_cast<std::size_t>(y) * c];
      const double* hi = &cum[static_cast<std::size_t>(y + block.y) * c];
      double* dst = &along_y[torus.index(x, y) * c];
      for (std::size_t z = 0; z < c; ++z) dst[z] = hi[z] - lo[z];
    }
  }

  // Pass 2: sums along x.
  std::vector<double> out(values.size());
  cum.assign(static_cast<std::size_t>(grid.x + block.x) * c, 0.0);
  for (int y = 0; y < grid.y; ++y) {
    std::fill(cum.begin(), cum.begin() + static_cast<std::ptrdiff_t>(c), 0.0);
    for (int x = 0; x < grid.x + block.x - 1; ++x) {
      const double* src = &along_y[torus.index(x, y) * c];
      double* prev = &cum[static_cast<std::size_t>(x) * c];
      double* next = prev + c;
      for (std::size_t z = 0; z < c; ++z) next[z] = prev[z] + src[z];
    }
    for (int x = 0; x < grid.x; ++x) {
      const double* lo = &cum[static_cast<std::size_t>(x) * c];
      const double* hi = &cum[static_cast<std::size_t>(x + block.x) * c];
      double* dst = &out[torus.index(x, y) * c];
      for (std::size_t z = 0; z < c; ++z) dst[z] = hi[z] - lo[z];
    }
  }
  return out;
}

std::vector<double> toroidal_shift(std::span<const double> values, Extent2 grid, std::size_t channels, int dx,
                                   int dy) {
  if (values.size() != grid.area() * channels) throw DomainError("grid: shift table size mismatch");
  const Torus torus(grid);
  std::vector<double> out(values.size());
  for (std::size_t p = 0; p < torus.size(); ++p) {
    const std::size_t dst = torus.offset(p, dx, dy);
    std::copy_n(values.begin() + static_cast<std::ptrdiff_t>(p * channels), channels,
                out.begin() + static_cast<std::ptrdiff_t>(dst * channels));
  }
  return out;
}

}  // namespace vimprint

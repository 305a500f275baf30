#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace vimprint {

/// 2-D extent. Cells are addressed row-major: index = x * y_size + y.
struct Extent2 {
  int x = 0;
  int y = 0;

  constexpr std::size_t area() const { return static_cast<std::size_t>(x) * static_cast<std::size_t>(y); }
  constexpr bool operator==(const Extent2&) const = default;
};

/// Index arithmetic on a toroidal grid.
class Torus {
 public:
  constexpr explicit Torus(Extent2 e) : e_(e) {}

  constexpr Extent2 extent() const { return e_; }
  constexpr std::size_t size() const { return e_.area(); }

  constexpr int wrap_x(int x) const { return ((x % e_.x) + e_.x) % e_.x; }
  constexpr int wrap_y(int y) const { return ((y % e_.y) + e_.y) % e_.y; }

  constexpr std::size_t index(int x, int y) const {
    return static_cast<std::size_t>(wrap_x(x)) * static_cast<std::size_t>(e_.y) +
           static_cast<std::size_t>(wrap_y(y));
  }
  constexpr int x_of(std::size_t i) const { return static_cast<int>(i / static_cast<std::size_t>(e_.y)); }
  constexpr int y_of(std::size_t i) const { return static_cast<int>(i % static_cast<std::size_t>(e_.y)); }

  /// Location reached from `i` after moving by (dx, dy).
  constexpr std::size_t offset(std::size_t i, int dx, int dy) const {
    return index(x_of(i) + dx, y_of(i) + dy);
  }

 private:
  Extent2 e_;
};

/// For every start location p, the sum of `values` (an E.area() x channels
/// row-major table) over the block [p, p + block) with wrap-around.
/// Computed with per-axis cumulative sums over the wrapped extension.
std::vector<double> toroidal_box_sum(std::span<const double> values, Extent2 grid, std::size_t channels,
                                     Extent2 block);

/// Circularly shift a per-location table so that out[p + (dx,dy)] = in[p].
std::vector<double> toroidal_shift(std::span<const double> values, Extent2 grid, std::size_t channels, int dx,
                                   int dy);

}  // namespace vimprint

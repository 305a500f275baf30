#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vimprint/features.hpp"
#include "vimprint/grid.hpp"
#include "vimprint/posterior.hpp"

namespace vimprint::tcg {

/// Lower bound applied to every counting-grid entry after an update.
inline constexpr double kPiFloor = 1e-10;

/// Tessellated counting grid. Each location holds a distribution over Z
/// feature channels; a window of `window` cells is split into `tess` equal
/// sub-windows, one per tessellation cell of a frame.
struct CountingGrid {
  Extent2 grid;
  Extent2 window;
  Extent2 tess;
  int channels = 0;
  std::vector<double> pi;  // grid.area() x channels

  Extent2 block() const { return {window.x / tess.x, window.y / tess.y}; }
  std::span<const double> at(std::size_t i) const {
    return {pi.data() + i * static_cast<std::size_t>(channels), static_cast<std::size_t>(channels)};
  }

  /// Geometry checks plus per-location normalization and the entry floor.
  void validate() const;
};

/// Throws ConfigError for an unusable (grid, window, tess) combination.
void validate_geometry(Extent2 grid, Extent2 window, Extent2 tess);

struct TcgConfig {
  Extent2 grid{24, 24};
  Extent2 window{8, 8};
  Extent2 tess{4, 4};
  int max_iters = 30;
  double tol = 1e-5;  // relative free-energy change
  std::uint64_t seed = 1;
  int workers = 1;
  double monotone_slack = 1e-6;
};

struct TcgFit {
  CountingGrid grid;
  PosteriorField posterior;
  FitTrace trace;  // objective = variational free energy, non-increasing
};

/// Uniform grid with a seeded multiplicative perturbation in [1, 1.05).
CountingGrid tcg_init(int channels, const TcgConfig& config);

/// Posterior over placements. `free_energy`, when given, receives the
/// negative log-likelihood of the counts under a uniform placement prior.
PosteriorField tcg_e_step(const CountingGrid& grid, const TessellatedCounts& counts, int workers = 1,
                          double* free_energy = nullptr);

/// One multiplicative update of the grid given the posterior.
CountingGrid tcg_m_step(const CountingGrid& grid, const TessellatedCounts& counts, const PosteriorField& q,
                        int workers = 1);

TcgFit tcg_fit(const TessellatedCounts& counts, const TcgConfig& config);

/// Continues EM from an explicit starting grid.
TcgFit tcg_fit_from(const TessellatedCounts& counts, CountingGrid init, const TcgConfig& config);

// TCGI imprint files --------------------------------------------------------

struct TcgImprint {
  CountingGrid grid;
  PosteriorField posterior;
};

std::vector<std::uint8_t> encode_imprint(const TcgImprint& imprint);
TcgImprint decode_imprint(std::span<const std::uint8_t> bytes);
void save_imprint(const TcgImprint& imprint, const std::filesystem::path& path);
TcgImprint load_imprint(const std::filesystem::path& path);

}  // namespace vimprint::tcg

#include "vimprint/tcg.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <string>

#include "vimprint/binary_io.hpp"
#include "vimprint/errors.hpp"
#include "vimprint/parallel.hpp"

namespace vimprint::tcg {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

void check_counts(const CountingGrid& grid, const TessellatedCounts& counts) {
  if (counts.tess != grid.tess) throw DomainError("tcg: counts tessellation does not match the grid");
  if (counts.channels != grid.channels) throw DomainError("tcg: counts channel count does not match the grid");
  if (counts.frames < 1) throw DomainError("tcg: no frames");
  if (counts.cells.size() != static_cast<std::size_t>(counts.frames) * counts.tess.area() * static_cast<std::size_t>(counts.channels))
    throw DomainError("tcg: counts payload does not match its shape");
  const auto z = static_cast<std::size_t>(counts.channels);
  for (std::size_t c = 0; c < counts.cells.size() / z; ++c) {
    double s = 0.0;
    for (std::size_t k = 0; k < z; ++k) {
      const double v = counts.cells[c * z + k];
      if (!(v >= 0.0)) throw DomainError("tcg: negative count");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) throw DomainError("tcg: counts cell " + std::to_string(c) + " is not l1-normalized");
  }
}

/// Offset of sub-window s inside a window.
std::pair<int, int> sub_offset(const CountingGrid& g, std::size_t s) {
  const Extent2 b = g.block();
  const int sx = static_cast<int>(s / static_cast<std::size_t>(g.tess.y));
  const int sy = static_cast<int>(s % static_cast<std::size_t>(g.tess.y));
  return {sx * b.x, sy * b.y};
}

void floor_and_normalize(std::span<double> row) {
  double s = 0.0;
  for (double& v : row) {
    v = std::max(v, kPiFloor);
    s += v;
  }
  for (double& v : row) v = std::max(v / s, kPiFloor);
}

}  // namespace

void validate_geometry(Extent2 grid, Extent2 window, Extent2 tess) {
  if (grid.x < 1 || grid.y < 1 || window.x < 1 || window.y < 1 || tess.x < 1 || tess.y < 1)
    throw ConfigError("tcg: grid, window and tessellation must be non-empty");
  if (window.x > grid.x || window.y > grid.y) throw ConfigError("tcg: window larger than grid");
  if (window.x % tess.x != 0 || window.y % tess.y != 0)
    throw ConfigError("tcg: window size must be divisible by the tessellation");
}

void CountingGrid::validate() const {
  validate_geometry(grid, window, tess);
  if (channels < 1 || pi.size() != grid.area() * static_cast<std::size_t>(channels))
    throw DomainError("tcg: grid payload does not match its shape");
  for (std::size_t i = 0; i < grid.area(); ++i) {
    double s = 0.0;
    for (double v : at(i)) {
      if (!(v >= kPiFloor * (1.0 - 1e-9)) || !std::isfinite(v)) throw DomainError("tcg: grid entry below floor or non-finite");
      s += v;
    }
    if (std::abs(s - 1.0) > 1e-6) throw DomainError("tcg: grid location " + std::to_string(i) + " is not normalized");
  }
}

CountingGrid tcg_init(int channels, const TcgConfig& config) {
  validate_geometry(config.grid, config.window, config.tess);
  if (channels < 1) throw ConfigError("tcg: channel count must be >= 1");
  CountingGrid g{config.grid, config.window, config.tess, channels, {}};
  g.pi.resize(config.grid.area() * static_cast<std::size_t>(channels));
  std::mt19937_64 rng(config.seed);
  std::uniform_real_distribution<double> jitter(0.0, 0.05);
  for (double& v : g.pi) v = 1.0 + jitter(rng);
  for (std::size_t i = 0; i < g.grid.area(); ++i)
    floor_and_normalize({g.pi.data() + i * static_cast<std::size_t>(channels), static_cast<std::size_t>(channels)});
  return g;
}

PosteriorField tcg_e_step(const CountingGrid& grid, const TessellatedCounts& counts, int workers, double* free_energy) {
  validate_geometry(grid.grid, grid.window, grid.tess);
  check_counts(grid, counts);
  const Torus torus(grid.grid);
  const std::size_t n_loc = grid.grid.area();
  const std::size_t n_sub = grid.tess.area();
  const auto z = static_cast<Eigen::Index>(grid.channels);

  // log of every sub-window sum, indexed by the sub-window's start location.
  std::vector<double> logh = toroidal_box_sum(grid.pi, grid.grid, static_cast<std::size_t>(z), grid.block());
  for (double& v : logh) v = std::log(v);

  const ConstRowMap c(counts.cells.data(), static_cast<Eigen::Index>(counts.frames * n_sub), z);
  const ConstRowMap l(logh.data(), static_cast<Eigen::Index>(n_loc), z);
  const RowMatrix per_cell = c * l.transpose();  // (frame, s) x start location

  std::vector<std::pair<int, int>> offsets(n_sub);
  for (std::size_t s = 0; s < n_sub; ++s) offsets[s] = sub_offset(grid, s);

  std::vector<double> scores(static_cast<std::size_t>(counts.frames) * n_loc, 0.0);
  parallel_for(static_cast<std::size_t>(counts.frames), workers, [&](std::size_t t) {
    double* out = &scores[t * n_loc];
    for (std::size_t s = 0; s < n_sub; ++s) {
      const double* row = per_cell.row(static_cast<Eigen::Index>(t * n_sub + s)).data();
      const auto [ox, oy] = offsets[s];
      for (std::size_t k = 0; k < n_loc; ++k) out[k] += row[torus.offset(k, ox, oy)];
    }
  });

  std::vector<double> lse;
  PosteriorField q = PosteriorField::from_log_scores(counts.frames, grid.grid, scores, workers, &lse);
  if (free_energy) {
    // Sub-window sums over-count by the sub-window area; the placement prior is uniform.
    const Extent2 b = grid.block();
    const double per_frame = std::log(static_cast<double>(n_loc)) + static_cast<double>(n_sub) * std::log(static_cast<double>(b.area()));
    double f = 0.0;
    for (double v : lse) f -= v - per_frame;
    *free_energy = f;
  }
  return q;
}

CountingGrid tcg_m_step(const CountingGrid& grid, const TessellatedCounts& counts, const PosteriorField& q, int workers) {
  validate_geometry(grid.grid, grid.window, grid.tess);
  check_counts(grid, counts);
  if (q.frames != counts.frames || q.grid != grid.grid) throw DomainError("tcg: posterior shape does not match the grid");
  const Torus torus(grid.grid);
  const std::size_t n_loc = grid.grid.area();
  const std::size_t n_sub = grid.tess.area();
  const auto z = static_cast<std::size_t>(grid.channels);
  const Extent2 b = grid.block();

  const std::vector<double> h = toroidal_box_sum(grid.pi, grid.grid, z, b);

  // shifted_q[p, (t, s)] = q_t(p - offset(s)): weight of the sub-window starting at p.
  RowMatrix shifted_q(static_cast<Eigen::Index>(n_loc), static_cast<Eigen::Index>(counts.frames * n_sub));
  parallel_for(n_loc, workers, [&](std::size_t p) {
    double* dst = shifted_q.row(static_cast<Eigen::Index>(p)).data();
    for (int t = 0; t < counts.frames; ++t) {
      auto row = q.row(t);
      for (std::size_t s = 0; s < n_sub; ++s) {
        const auto [ox, oy] = sub_offset(grid, s);
        dst[static_cast<std::size_t>(t) * n_sub + s] = row[torus.offset(p, -ox, -oy)];
      }
    }
  });
  const ConstRowMap c(counts.cells.data(), static_cast<Eigen::Index>(counts.frames * n_sub), static_cast<Eigen::Index>(z));
  RowMatrix ratio = shifted_q * c;  // start location x z
  for (std::size_t p = 0; p < n_loc; ++p)
    for (std::size_t k = 0; k < z; ++k) ratio(static_cast<Eigen::Index>(p), static_cast<Eigen::Index>(k)) /= h[p * z + k];

  // Location i collects from every sub-window start in (i - block, i].
  const std::vector<double> gathered = toroidal_box_sum({ratio.data(), n_loc * z}, grid.grid, z, b);

  CountingGrid out = grid;
  parallel_for(n_loc, workers, [&](std::size_t i) {
    const std::size_t src = torus.offset(i, -(b.x - 1), -(b.y - 1));
    std::span<double> row(out.pi.data() + i * z, z);
    double total = 0.0;
    for (std::size_t k = 0; k < z; ++k) {
      row[k] = grid.pi[i * z + k] * gathered[src * z + k];
      total += row[k];
    }
    if (!(total > 0.0) || !std::isfinite(total)) {
      std::copy_n(grid.pi.begin() + static_cast<std::ptrdiff_t>(i * z), z, row.begin());
      return;
    }
    floor_and_normalize(row);
  });
  return out;
}

TcgFit tcg_fit_from(const TessellatedCounts& counts, CountingGrid init, const TcgConfig& config) {
  if (config.max_iters < 0) throw ConfigError("tcg: max_iters must be >= 0");
  if (!(config.tol >= 0.0)) throw ConfigError("tcg: tol must be >= 0");
  const int workers = resolve_workers(config.workers);
  TcgFit fit;
  fit.grid = std::move(init);
  double energy = 0.0;
  fit.posterior = tcg_e_step(fit.grid, counts, workers, &energy);
  fit.trace.objective.push_back(energy);
  for (int it = 1; it <= config.max_iters; ++it) {
    fit.grid = tcg_m_step(fit.grid, counts, fit.posterior, workers);
    double next = 0.0;
    fit.posterior = tcg_e_step(fit.grid, counts, workers, &next);
    if (!std::isfinite(next)) throw NumericalError("tcg: free energy is not finite at iteration " + std::to_string(it));
    fit.trace.objective.push_back(next);
    fit.trace.iterations = it;
    const double regression = next - energy;
    fit.trace.worst_regression = std::max(fit.trace.worst_regression, regression);
    if (regression > config.monotone_slack)
      throw NumericalError("tcg: free energy increased by " + std::to_string(regression) + " at iteration " + std::to_string(it));
    const double change = std::abs(energy - next) / std::max(1.0, std::abs(energy));
    energy = next;
    if (change < config.tol) {
      fit.trace.converged = true;
      break;
    }
  }
  return fit;
}

TcgFit tcg_fit(const TessellatedCounts& counts, const TcgConfig& config) {
  return tcg_fit_from(counts, tcg_init(counts.channels, config), config);
}

// TCGI ------------------------------------------------------------------------

std::vector<std::uint8_t> encode_imprint(const TcgImprint& imp) {
  const CountingGrid& g = imp.grid;
  io::ByteWriter w;
  w.magic("TCGI");
  w.u32(1);
  for (int v : {g.grid.x, g.grid.y, g.channels, g.window.x, g.window.y, g.tess.x, g.tess.y, imp.posterior.frames})
    w.u32(static_cast<std::uint32_t>(v));
  w.f32s(std::span<const double>(g.pi));
  w.f32s(std::span<const double>(imp.posterior.q));
  return w.bytes();
}

TcgImprint decode_imprint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "tcg: imprint");
  r.expect_magic("TCGI");
  r.expect_version(1);
  std::uint32_t h[8];
  for (auto& v : h) v = r.u32();
  for (auto v : h)
    if (v == 0 || v > (1u << 24)) throw ParseError(ParseFailure::kShapeOverflow, "tcg: imprint header dimension out of range");
  TcgImprint imp;
  CountingGrid& g = imp.grid;
  g.grid = {static_cast<int>(h[0]), static_cast<int>(h[1])};
  g.channels = static_cast<int>(h[2]);
  g.window = {static_cast<int>(h[3]), static_cast<int>(h[4])};
  g.tess = {static_cast<int>(h[5]), static_cast<int>(h[6])};
  const std::size_t n_pi = io::checked_volume({h[0], h[1], h[2]}, r.context());
  const std::size_t n_q = io::checked_volume({h[7], h[0], h[1]}, r.context());
  r.need((n_pi + n_q) * 4);
  g.pi.resize(n_pi);
  r.f32s(std::span<double>(g.pi));
  PosteriorField& q = imp.posterior;
  q.frames = static_cast<int>(h[7]);
  q.grid = g.grid;
  q.q.resize(n_q);
  r.f32s(std::span<double>(q.q));
  r.expect_end();
  if (g.window.x > g.grid.x || g.window.y > g.grid.y || g.window.x % g.tess.x != 0 || g.window.y % g.tess.y != 0)
    throw ParseError(ParseFailure::kMalformed, "tcg: imprint has inconsistent grid geometry");
  for (double v : g.pi)
    if (!(v >= 0.0) || !std::isfinite(v)) throw ParseError(ParseFailure::kMalformed, "tcg: imprint grid has invalid entries");
  for (double v : q.q)
    if (!(v >= 0.0) || !std::isfinite(v)) throw ParseError(ParseFailure::kMalformed, "tcg: imprint posterior has invalid entries");
  q.log_q.resize(n_q);
  for (std::size_t i = 0; i < n_q; ++i) q.log_q[i] = std::log(q.q[i]);
  return imp;
}

void save_imprint(const TcgImprint& imprint, const std::filesystem::path& path) {
  io::write_file(path, encode_imprint(imprint));
}

TcgImprint load_imprint(const std::filesystem::path& path) { return decode_imprint(io::read_file(path)); }

}  // namespace vimprint::tcg

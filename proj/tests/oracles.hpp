// Straight-line reference implementations used to check the library. Each
// follows the model definitions with plain nested loops and shares no code
// with src/ beyond the data containers.
#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <vector>

#include "vimprint/epitome.hpp"
#include "vimprint/features.hpp"
#include "vimprint/imprint.hpp"
#include "vimprint/posterior.hpp"
#include "vimprint/rnet.hpp"
#include "vimprint/tcg.hpp"

namespace oracle {

using vimprint::Extent2;

inline std::size_t at(Extent2 g, int x, int y) {
  x = ((x % g.x) + g.x) % g.x;
  y = ((y % g.y) + g.y) % g.y;
  return static_cast<std::size_t>(x) * static_cast<std::size_t>(g.y) + static_cast<std::size_t>(y);
}

inline double lse(const std::vector<double>& v) {
  double m = -INFINITY;
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// ---------------------------------------------------------------------------
// Counting grid

/// Log posterior per (t, k) and the free energy -sum_t log((1/|E|) sum_k p).
struct TcgE {
  std::vector<double> log_q;
  double free_energy = 0.0;
};

inline double tcg_sub_sum(const vimprint::tcg::CountingGrid& g, int kx, int ky, int sx, int sy, int z) {
  const Extent2 b = g.block();
  double h = 0.0;
  for (int a = 0; a < b.x; ++a)
    for (int c = 0; c < b.y; ++c)
      h += g.pi[at(g.grid, kx + sx * b.x + a, ky + sy * b.y + c) * static_cast<std::size_t>(g.channels) +
                static_cast<std::size_t>(z)];
  return h;
}

inline TcgE tcg_e_step(const vimprint::tcg::CountingGrid& g, const vimprint::TessellatedCounts& c) {
  const std::size_t n = g.grid.area();
  TcgE out;
  out.log_q.resize(static_cast<std::size_t>(c.frames) * n);
  const double cell_area = g.block().area();
  for (int t = 0; t < c.frames; ++t) {
    std::vector<double> score(n, 0.0);
    for (int kx = 0; kx < g.grid.x; ++kx)
      for (int ky = 0; ky < g.grid.y; ++ky) {
        double s = 0.0;
        for (int sx = 0; sx < g.tess.x; ++sx)
          for (int sy = 0; sy < g.tess.y; ++sy) {
            const auto cell = c.cell(t, static_cast<std::size_t>(sx * g.tess.y + sy));
            for (int z = 0; z < g.channels; ++z)
              s += cell[static_cast<std::size_t>(z)] * std::log(tcg_sub_sum(g, kx, ky, sx, sy, z));
          }
        score[at(g.grid, kx, ky)] = s;
      }
    const double l = lse(score);
    for (std::size_t k = 0; k < n; ++k) out.log_q[static_cast<std::size_t>(t) * n + k] = score[k] - l;
    // Each cell's counts sum to 1, so the normalized window likelihood
    // divides by the sub-window area once per cell.
    out.free_energy -= l - std::log(static_cast<double>(n)) - static_cast<double>(g.tess.area()) * std::log(cell_area);
  }
  return out;
}

inline vimprint::tcg::CountingGrid tcg_m_step(const vimprint::tcg::CountingGrid& g, const vimprint::TessellatedCounts& c,
                                              const std::vector<double>& q) {
  const std::size_t n = g.grid.area();
  const auto z_n = static_cast<std::size_t>(g.channels);
  const Extent2 b = g.block();
  std::vector<double> acc(n * z_n, 0.0);
  for (int t = 0; t < c.frames; ++t)
    for (int kx = 0; kx < g.grid.x; ++kx)
      for (int ky = 0; ky < g.grid.y; ++ky) {
        const double qk = q[static_cast<std::size_t>(t) * n + at(g.grid, kx, ky)];
        for (int sx = 0; sx < g.tess.x; ++sx)
          for (int sy = 0; sy < g.tess.y; ++sy) {
            const auto cell = c.cell(t, static_cast<std::size_t>(sx * g.tess.y + sy));
            for (int z = 0; z < g.channels; ++z) {
              const double w = cell[static_cast<std::size_t>(z)] * qk / tcg_sub_sum(g, kx, ky, sx, sy, z);
              for (int a = 0; a < b.x; ++a)
                for (int cc = 0; cc < b.y; ++cc)
                  acc[at(g.grid, kx + sx * b.x + a, ky + sy * b.y + cc) * z_n + static_cast<std::size_t>(z)] += w;
            }
          }
      }
  vimprint::tcg::CountingGrid out = g;
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t z = 0; z < z_n; ++z) total += g.pi[i * z_n + z] * acc[i * z_n + z];
    if (!(total > 0.0)) continue;
    double s = 0.0;
    for (std::size_t z = 0; z < z_n; ++z) {
      double v = std::max(g.pi[i * z_n + z] * acc[i * z_n + z], vimprint::tcg::kPiFloor);
      out.pi[i * z_n + z] = v;
      s += v;
    }
    for (std::size_t z = 0; z < z_n; ++z) out.pi[i * z_n + z] = std::max(out.pi[i * z_n + z] / s, vimprint::tcg::kPiFloor);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Epitome

struct EpiE {
  std::vector<double> log_q;
  double log_likelihood = 0.0;
};

inline double sigma2_of(const vimprint::epitome::Epitome& ep, std::size_t i, int c) {
  if (ep.sigma_mode == vimprint::epitome::SigmaMode::kFixed) return ep.sigma2_fixed;
  return ep.sigma2[i * static_cast<std::size_t>(ep.depth) + static_cast<std::size_t>(c)];
}

inline EpiE epitome_e_step(const vimprint::epitome::Epitome& ep, const vimprint::FeatureSequence& seq) {
  const std::size_t n = ep.grid.area();
  EpiE out;
  out.log_q.resize(static_cast<std::size_t>(seq.frames) * n);
  for (int t = 0; t < seq.frames; ++t) {
    std::vector<double> score(n, 0.0);
    for (int kx = 0; kx < ep.grid.x; ++kx)
      for (int ky = 0; ky < ep.grid.y; ++ky) {
        double s = 0.0;
        for (int jx = 0; jx < ep.window.x; ++jx)
          for (int jy = 0; jy < ep.window.y; ++jy) {
            const std::size_t i = at(ep.grid, kx + jx, ky + jy);
            for (int c = 0; c < ep.depth; ++c) {
              const double f = seq.cell(t, jx, jy)[static_cast<std::size_t>(c)];
              const double m = ep.mu[i * static_cast<std::size_t>(ep.depth) + static_cast<std::size_t>(c)];
              const double v = sigma2_of(ep, i, c);
              s += -0.5 * std::log(2.0 * std::numbers::pi * v) - (f - m) * (f - m) / (2.0 * v);
            }
          }
        score[at(ep.grid, kx, ky)] = s;
      }
    const double l = lse(score);
    for (std::size_t k = 0; k < n; ++k) out.log_q[static_cast<std::size_t>(t) * n + k] = score[k] - l;
    out.log_likelihood += l - std::log(static_cast<double>(n));
  }
  return out;
}

/// mu_i = sum_t sum_{k : i in W_k} q_t(k) f^t_{i-k} / sum q, and the matching
/// weighted variance when `learn_sigma`. Unreached locations keep `prior`.
inline vimprint::epitome::Epitome epitome_m_step(const vimprint::FeatureSequence& seq, const std::vector<double>& q,
                                                 const vimprint::epitome::Epitome& prior, bool learn_sigma) {
  const std::size_t n = prior.grid.area();
  const auto d = static_cast<std::size_t>(prior.depth);
  std::vector<double> num(n * d, 0.0), den(n, 0.0);
  for (int t = 0; t < seq.frames; ++t)
    for (int kx = 0; kx < prior.grid.x; ++kx)
      for (int ky = 0; ky < prior.grid.y; ++ky) {
        const double w = q[static_cast<std::size_t>(t) * n + at(prior.grid, kx, ky)];
        for (int jx = 0; jx < prior.window.x; ++jx)
          for (int jy = 0; jy < prior.window.y; ++jy) {
            const std::size_t i = at(prior.grid, kx + jx, ky + jy);
            den[i] += w;
            for (std::size_t c = 0; c < d; ++c) num[i * d + c] += w * seq.cell(t, jx, jy)[c];
          }
      }
  vimprint::epitome::Epitome out = prior;
  out.sigma_mode = learn_sigma ? vimprint::epitome::SigmaMode::kLearned : vimprint::epitome::SigmaMode::kFixed;
  if (learn_sigma) {
    out.sigma2.assign(n * d, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < d; ++c) out.sigma2[i * d + c] = sigma2_of(prior, i, static_cast<int>(c));
  } else {
    out.sigma2.clear();
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (!(den[i] > 1e-200)) continue;
    for (std::size_t c = 0; c < d; ++c) out.mu[i * d + c] = num[i * d + c] / den[i];
  }
  if (learn_sigma) {
    std::vector<double> var(n * d, 0.0);
    for (int t = 0; t < seq.frames; ++t)
      for (int kx = 0; kx < prior.grid.x; ++kx)
        for (int ky = 0; ky < prior.grid.y; ++ky) {
          const double w = q[static_cast<std::size_t>(t) * n + at(prior.grid, kx, ky)];
          for (int jx = 0; jx < prior.window.x; ++jx)
            for (int jy = 0; jy < prior.window.y; ++jy) {
              const std::size_t i = at(prior.grid, kx + jx, ky + jy);
              for (std::size_t c = 0; c < d; ++c) {
                const double e = seq.cell(t, jx, jy)[c] - out.mu[i * d + c];
                var[i * d + c] += w * e * e;
              }
            }
        }
    for (std::size_t i = 0; i < n; ++i) {
      if (!(den[i] > 1e-200)) continue;
      for (std::size_t c = 0; c < d; ++c)
        out.sigma2[i * d + c] = std::max(vimprint::epitome::kMinSigma2, var[i * d + c] / den[i]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Random instances

inline vimprint::FeatureSequence random_sequence(std::mt19937_64& rng, int frames, Extent2 spatial, int depth,
                                                 double scale = 1.0) {
  std::uniform_real_distribution<double> u(0.0, scale);
  vimprint::FeatureSequence s;
  s.video_id = "random";
  s.frames = frames;
  s.spatial = spatial;
  s.depth = depth;
  s.data.resize(static_cast<std::size_t>(frames) * spatial.area() * static_cast<std::size_t>(depth));
  for (float& v : s.data) v = static_cast<float>(u(rng));
  return s;
}

inline vimprint::TessellatedCounts random_counts(std::mt19937_64& rng, int frames, Extent2 tess, int channels) {
  std::uniform_real_distribution<double> u(0.05, 1.0);
  vimprint::TessellatedCounts c;
  c.frames = frames;
  c.tess = tess;
  c.channels = channels;
  c.cells.resize(static_cast<std::size_t>(frames) * tess.area() * static_cast<std::size_t>(channels));
  const auto z = static_cast<std::size_t>(channels);
  for (std::size_t cell = 0; cell < c.cells.size() / z; ++cell) {
    double s = 0.0;
    for (std::size_t k = 0; k < z; ++k) s += c.cells[cell * z + k] = u(rng);
    for (std::size_t k = 0; k < z; ++k) c.cells[cell * z + k] /= s;
  }
  return c;
}

inline vimprint::tcg::CountingGrid random_grid(std::mt19937_64& rng, Extent2 grid, Extent2 window, Extent2 tess,
                                               int channels) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  vimprint::tcg::CountingGrid g{grid, window, tess, channels, {}};
  g.pi.resize(grid.area() * static_cast<std::size_t>(channels));
  const auto z = static_cast<std::size_t>(channels);
  for (std::size_t i = 0; i < grid.area(); ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < z; ++k) s += g.pi[i * z + k] = u(rng);
    for (std::size_t k = 0; k < z; ++k) g.pi[i * z + k] /= s;
  }
  return g;
}

/// Random row-stochastic posterior (frames x grid).
inline vimprint::PosteriorField random_posterior(std::mt19937_64& rng, int frames, Extent2 grid, double spread = 2.0) {
  std::normal_distribution<double> nd(0.0, spread);
  std::vector<double> scores(static_cast<std::size_t>(frames) * grid.area());
  for (double& v : scores) v = nd(rng);
  return vimprint::PosteriorField::from_log_scores(frames, grid, scores, 1);
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = a.size() == b.size() ? 0.0 : INFINITY;
  for (std::size_t i = 0; i < std::min(a.size(), b.size()); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Reasoning network

/// Forward pass written out over the full grid map: scores, softmax over
/// active cells, bordered 3x3 mean, mask, renormalize, state update.
inline Eigen::VectorXd rnet_forward(const vimprint::rnet::ReasoningNet& net,
                                    const vimprint::imprint::ImprintDescriptorSet& set,
                                    std::vector<std::vector<double>>* maps = nullptr) {
  const Extent2 g = set.grid;
  const std::size_t n = g.area();
  std::vector<int> slot(n, -1);
  for (std::size_t r = 0; r < set.locations.size(); ++r) slot[set.locations[r]] = static_cast<int>(r);
  Eigen::VectorXd u = Eigen::VectorXd::Zero(net.config.d_in);
  for (const auto& v : set.vectors)
    for (int c = 0; c < net.config.d_in; ++c) u[c] += v[static_cast<std::size_t>(c)];
  for (int hop = 0; hop < net.config.hops; ++hop) {
    std::vector<double> score(n, 0.0);
    double peak = -INFINITY;
    for (std::size_t i = 0; i < n; ++i) {
      if (slot[i] < 0) continue;
      const auto& x = set.vectors[static_cast<std::size_t>(slot[i])];
      double s = 0.0;
      for (int a = 0; a < net.config.h; ++a) {
        double m = 0.0;
        for (int c = 0; c < net.config.d_in; ++c) m += net.M(a, c) * x[static_cast<std::size_t>(c)];
        s += u[a] * m;
      }
      score[i] = s;
      peak = std::max(peak, s);
    }
    std::vector<double> alpha(n, 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      if (slot[i] >= 0) z += alpha[i] = std::exp(score[i] - peak);
    for (double& a : alpha) a /= z;
    std::vector<double> p(n, 0.0);
    double mass = 0.0;
    for (int x = 0; x < g.x; ++x)
      for (int y = 0; y < g.y; ++y) {
        const std::size_t i = static_cast<std::size_t>(x) * static_cast<std::size_t>(g.y) + static_cast<std::size_t>(y);
        if (slot[i] < 0) continue;
        double acc = 0.0;
        int cnt = 0;
        for (int dx = -1; dx <= 1; ++dx)
          for (int dy = -1; dy <= 1; ++dy) {
            const int nx = x + dx, ny = y + dy;
            if (nx < 0 || ny < 0 || nx >= g.x || ny >= g.y) continue;
            acc += alpha[static_cast<std::size_t>(nx) * static_cast<std::size_t>(g.y) + static_cast<std::size_t>(ny)];
            ++cnt;
          }
        p[i] = acc / cnt;
        mass += p[i];
      }
    for (double& v : p) v /= mass;
    if (maps) maps->push_back(p);
    Eigen::VectorXd o = Eigen::VectorXd::Zero(net.config.h);
    for (std::size_t i = 0; i < n; ++i) {
      if (slot[i] < 0) continue;
      const auto& x = set.vectors[static_cast<std::size_t>(slot[i])];
      for (int a = 0; a < net.config.h; ++a) {
        double b = 0.0;
        for (int c = 0; c < net.config.d_in; ++c) b += net.B(a, c) * x[static_cast<std::size_t>(c)];
        o[a] += p[i] * b;
      }
    }
    u += o;
  }
  Eigen::VectorXd logits;
  if (net.config.head == vimprint::rnet::HeadKind::kSoftmax) {
    logits = net.W1 * u + net.b1;
  } else {
    Eigen::VectorXd hdn = net.W1 * u + net.b1;
    for (Eigen::Index i = 0; i < hdn.size(); ++i) hdn[i] = std::max(0.0, hdn[i]);
    logits = net.W2 * hdn + net.b2;
  }
  std::vector<double> l(logits.data(), logits.data() + logits.size());
  const double z = lse(l);
  return (logits.array() - z).matrix();
}

/// Random descriptors on `n_active` distinct locations of `grid`.
inline vimprint::rnet::Example random_example(std::mt19937_64& rng, Extent2 grid, int dim, int n_active, int label) {
  std::vector<std::size_t> cells(grid.area());
  std::iota(cells.begin(), cells.end(), 0);
  std::shuffle(cells.begin(), cells.end(), rng);
  cells.resize(static_cast<std::size_t>(n_active));
  std::sort(cells.begin(), cells.end());
  vimprint::rnet::Example ex;
  ex.active.grid = grid;
  ex.active.a.assign(grid.area(), 0);
  for (std::size_t c : cells) ex.active.a[c] = 1;
  ex.descriptors.grid = grid;
  ex.descriptors.post_state = vimprint::imprint::PostState::kWhitened;
  ex.descriptors.locations = cells;
  std::normal_distribution<double> nd(0.0, 1.0);
  for (int r = 0; r < n_active; ++r) {
    std::vector<double> v(static_cast<std::size_t>(dim));
    double norm = 0.0;
    for (double& x : v) {
      x = nd(rng);
      norm += x * x;
    }
    for (double& x : v) x /= std::sqrt(norm);
    ex.descriptors.vectors.push_back(std::move(v));
  }
  ex.label = label;
  return ex;
}

/// Largest |analytic - numeric| / max(|analytic|, |numeric|, floor) over all
/// parameters, central differences with step `h`.
inline double gradient_check(const vimprint::rnet::ReasoningNet& net,
                             const std::vector<const vimprint::rnet::Example*>& batch, double h = 1e-5,
                             double floor = 1e-6) {
  using namespace vimprint::rnet;
  const LossAndGrad lg = rnet_loss_and_grads(net, batch);
  const Eigen::VectorXd analytic = lg.grad.flatten();
  Eigen::VectorXd theta = net.flatten();
  double worst = 0.0;
  ReasoningNet probe = net;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double keep = theta[i];
    theta[i] = keep + h;
    probe.unflatten(theta);
    const double up = rnet_loss_and_grads(probe, batch).loss;
    theta[i] = keep - h;
    probe.unflatten(theta);
    const double down = rnet_loss_and_grads(probe, batch).loss;
    theta[i] = keep;
    const double numeric = (up - down) / (2.0 * h);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), floor});
    worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
  }
  return worst;
}

/// R^t(j) = sum_i q_t(i) P_sum(i + j), with explicit toroidal wrap.
inline std::vector<std::vector<double>> recount_maps(const std::vector<double>& p_sum, const vimprint::PosteriorField& q,
                                                     Extent2 window) {
  const Extent2 g = q.grid;
  std::vector<std::vector<double>> out(static_cast<std::size_t>(q.frames), std::vector<double>(window.area(), 0.0));
  for (int t = 0; t < q.frames; ++t)
    for (int jx = 0; jx < window.x; ++jx)
      for (int jy = 0; jy < window.y; ++jy) {
        double acc = 0.0;
        for (int ix = 0; ix < g.x; ++ix)
          for (int iy = 0; iy < g.y; ++iy)
            acc += q.row(t)[at(g, ix, iy)] * p_sum[at(g, ix + jx, iy + jy)];
        out[static_cast<std::size_t>(t)][static_cast<std::size_t>(jx * window.y + jy)] = acc;
      }
  return out;
}

// ---------------------------------------------------------------------------
// Retrieval

/// AP from the definition: mean over relevant items r of |{relevant at rank <= rank(r)}| / rank(r),
/// with unretrieved relevant items contributing zero.
inline double average_precision(const std::vector<bool>& rel, std::size_t total) {
  if (total == 0) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 0; k < rel.size(); ++k) {
    if (!rel[k]) continue;
    std::size_t hits = 0;
    for (std::size_t j = 0; j <= k; ++j) hits += rel[j];
    sum += static_cast<double>(hits) / static_cast<double>(k + 1);
  }
  return sum / static_cast<double>(total);
}

}  // namespace oracle

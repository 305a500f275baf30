#include "vimprint/epitome.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "vimprint/binary_io.hpp"
#include "vimprint/errors.hpp"
#include "vimprint/parallel.hpp"

namespace vimprint::epitome {

namespace {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using RowMap = Eigen::Map<RowMatrix>;
using ConstRowMap = Eigen::Map<const RowMatrix>;

/// Frame vectors stacked as rows (frame, window offset) x D in double precision.
struct FrameStack {
  int frames = 0;
  Extent2 window;
  RowMatrix f;

  Eigen::Index depth() const { return f.cols(); }
};

FrameStack stack_frames(const FeatureSequence& seq) {
  FrameStack s;
  s.frames = seq.frames;
  s.window = seq.spatial;
  const auto rows = static_cast<Eigen::Index>(static_cast<std::size_t>(seq.frames) * seq.spatial.area());
  s.f = Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(seq.data.data(), rows, seq.depth)
            .cast<double>();
  return s;
}

/// loc[j * E + k] = location covered by window offset j when the window sits at k.
std::vector<std::uint32_t> window_index(Extent2 grid, Extent2 window, int sign) {
  const Torus torus(grid);
  std::vector<std::uint32_t> loc(window.area() * grid.area());
  for (std::size_t j = 0; j < window.area(); ++j) {
    const int jx = static_cast<int>(j / static_cast<std::size_t>(window.y));
    const int jy = static_cast<int>(j % static_cast<std::size_t>(window.y));
    for (std::size_t k = 0; k < grid.area(); ++k)
      loc[j * grid.area() + k] = static_cast<std::uint32_t>(torus.offset(k, sign * jx, sign * jy));
  }
  return loc;
}

/// Frames per chunk so a chunk holds about 256 window rows.
std::size_t frame_chunk(std::size_t n_win) { return std::max<std::size_t>(1, 256 / n_win); }

void check_geometry(Extent2 grid, Extent2 window) {
  if (grid.x < 1 || grid.y < 1 || window.x < 1 || window.y < 1) throw ConfigError("epitome: grid and window must be non-empty");
  if (window.x > grid.x || window.y > grid.y) throw ConfigError("epitome: window larger than grid");
}

void check_pair(const Epitome& ep, const FrameStack& s) {
  if (s.window != ep.window) throw DomainError("epitome: frame size does not match the window size");
  if (s.depth() != ep.depth) throw DomainError("epitome: feature depth does not match the epitome");
}

PosteriorField e_step_impl(const Epitome& ep, const FrameStack& s, int workers, double* log_likelihood) {
  check_pair(ep, s);
  const std::size_t n_loc = ep.grid.area();
  const std::size_t n_win = ep.window.area();
  const auto d = static_cast<Eigen::Index>(ep.depth);
  const ConstRowMap mu(ep.mu.data(), static_cast<Eigen::Index>(n_loc), d);

  std::vector<double> per_loc(n_loc, 0.0);   // location term, summed over each window below
  std::vector<double> per_frame(static_cast<std::size_t>(s.frames), 0.0);
  const bool fixed = ep.sigma_mode == SigmaMode::kFixed;
  RowMatrix weighted_mu, neg_half_precision;

  if (fixed) {
    const double s2 = ep.sigma2_fixed;
    weighted_mu = mu / s2;
    for (std::size_t i = 0; i < n_loc; ++i) per_loc[i] = -0.5 * mu.row(static_cast<Eigen::Index>(i)).squaredNorm() / s2;
    const Eigen::VectorXd sq = s.f.rowwise().squaredNorm();
    const double log_norm = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi * s2);
    for (int t = 0; t < s.frames; ++t) {
      const double fsum = sq.segment(static_cast<Eigen::Index>(static_cast<std::size_t>(t) * n_win), static_cast<Eigen::Index>(n_win)).sum();
      per_frame[static_cast<std::size_t>(t)] = -0.5 * fsum / s2 + static_cast<double>(n_win) * log_norm;
    }
  } else {
    const ConstRowMap s2(ep.sigma2.data(), static_cast<Eigen::Index>(n_loc), d);
    const RowMatrix precision = s2.cwiseInverse();
    weighted_mu = mu.cwiseProduct(precision);
    neg_half_precision = -0.5 * precision;
    for (std::size_t i = 0; i < n_loc; ++i) {
      double a = 0.0;
      for (Eigen::Index c = 0; c < d; ++c) {
        const auto ii = static_cast<Eigen::Index>(i);
        a += -0.5 * std::log(2.0 * std::numbers::pi * s2(ii, c)) - 0.5 * mu(ii, c) * mu(ii, c) * precision(ii, c);
      }
      per_loc[i] = a;
    }
  }

  const std::vector<double> window_loc = toroidal_box_sum(per_loc, ep.grid, 1, ep.window);
  const std::vector<std::uint32_t> loc = window_index(ep.grid, ep.window, +1);

  // Frames are scored in small chunks so the (frame, j) x location
  // correlation block stays cache-sized.
  const std::size_t chunk = frame_chunk(n_win);
  const std::size_t n_chunks = (static_cast<std::size_t>(s.frames) + chunk - 1) / chunk;
  std::vector<double> scores(static_cast<std::size_t>(s.frames) * n_loc);
  parallel_for(n_chunks, workers, [&](std::size_t b) {
    const std::size_t t0 = b * chunk;
    const std::size_t t1 = std::min(static_cast<std::size_t>(s.frames), t0 + chunk);
    const auto rows = s.f.middleRows(static_cast<Eigen::Index>(t0 * n_win), static_cast<Eigen::Index>((t1 - t0) * n_win));
    RowMatrix cross = rows * weighted_mu.transpose();
    if (!fixed) cross.noalias() += rows.cwiseAbs2() * neg_half_precision.transpose();
    for (std::size_t t = t0; t < t1; ++t) {
      double* out = &scores[t * n_loc];
      std::fill(out, out + n_loc, 0.0);
      for (std::size_t j = 0; j < n_win; ++j) {
        const double* row = cross.row(static_cast<Eigen::Index>((t - t0) * n_win + j)).data();
        const std::uint32_t* where = &loc[j * n_loc];
        for (std::size_t k = 0; k < n_loc; ++k) out[k] += row[where[k]];
      }
      for (std::size_t k = 0; k < n_loc; ++k) out[k] += window_loc[k] + per_frame[t];
    }
  });

  std::vector<double> lse;
  PosteriorField q = PosteriorField::from_log_scores(s.frames, ep.grid, scores, workers, &lse);
  if (log_likelihood) {
    double ll = 0.0;
    for (double v : lse) ll += v - std::log(static_cast<double>(n_loc));
    *log_likelihood = ll;
  }
  return q;
}

Epitome m_step_impl(const FrameStack& s, const PosteriorField& q, const Epitome& prior, bool learn_sigma, int workers) {
  check_pair(prior, s);
  if (q.frames != s.frames || q.grid != prior.grid) throw DomainError("epitome: posterior shape does not match the epitome");
  const std::size_t n_loc = prior.grid.area();
  const std::size_t n_win = prior.window.area();
  const auto d = static_cast<std::size_t>(prior.depth);

  // expanded[i, (t, j)] = q_t(i - j): weight with which frame t's offset j
  // lands on location i. Built one frame chunk at a time per block of
  // locations; each block accumulates its chunks in frame order.
  const std::vector<std::uint32_t> back = window_index(prior.grid, prior.window, -1);
  const std::size_t chunk = frame_chunk(n_win);
  const std::size_t block = 64;
  const std::size_t n_blocks = (n_loc + block - 1) / block;
  RowMatrix first = RowMatrix::Zero(static_cast<Eigen::Index>(n_loc), static_cast<Eigen::Index>(d));
  RowMatrix second;
  if (learn_sigma) second = RowMatrix::Zero(static_cast<Eigen::Index>(n_loc), static_cast<Eigen::Index>(d));
  Eigen::VectorXd weight = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(n_loc));
  parallel_for(n_blocks, workers, [&](std::size_t b) {
    const std::size_t i0 = b * block;
    const std::size_t i1 = std::min(n_loc, i0 + block);
    RowMatrix expanded;
    for (std::size_t t0 = 0; t0 < static_cast<std::size_t>(s.frames); t0 += chunk) {
      const std::size_t t1 = std::min(static_cast<std::size_t>(s.frames), t0 + chunk);
      expanded.resize(static_cast<Eigen::Index>(i1 - i0), static_cast<Eigen::Index>((t1 - t0) * n_win));
      for (std::size_t i = i0; i < i1; ++i) {
        double* dst = expanded.row(static_cast<Eigen::Index>(i - i0)).data();
        for (std::size_t t = t0; t < t1; ++t) {
          auto row = q.row(static_cast<int>(t));
          for (std::size_t j = 0; j < n_win; ++j) dst[(t - t0) * n_win + j] = row[back[j * n_loc + i]];
        }
      }
      const auto rows = s.f.middleRows(static_cast<Eigen::Index>(t0 * n_win), static_cast<Eigen::Index>((t1 - t0) * n_win));
      const auto ib = static_cast<Eigen::Index>(i0), ie = static_cast<Eigen::Index>(i1 - i0);
      first.middleRows(ib, ie).noalias() += expanded * rows;
      if (learn_sigma) second.middleRows(ib, ie).noalias() += expanded * rows.cwiseAbs2();
      weight.segment(ib, ie) += expanded.rowwise().sum();
    }
  });

  Epitome out = prior;
  out.sigma_mode = learn_sigma ? SigmaMode::kLearned : SigmaMode::kFixed;
  if (learn_sigma) {
    out.sigma2.resize(n_loc * d);
    for (std::size_t i = 0; i < n_loc; ++i)
      for (std::size_t c = 0; c < d; ++c)
        out.sigma2[i * d + c] = prior.sigma_mode == SigmaMode::kLearned ? prior.sigma2[i * d + c] : prior.sigma2_fixed;
  } else {
    out.sigma2.clear();
  }
  for (std::size_t i = 0; i < n_loc; ++i) {
    const double w = weight(static_cast<Eigen::Index>(i));
    if (!(w > 1e-200)) continue;  // unvisited: keep prior
    for (std::size_t c = 0; c < d; ++c) {
      const double m = first(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) / w;
      out.mu[i * d + c] = m;
      if (learn_sigma)
        out.sigma2[i * d + c] = std::max(kMinSigma2, second(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) / w - m * m);
    }
  }
  return out;
}

EpitomeFit em_loop(const FrameStack& s, Epitome init, const EpitomeConfig& config, bool learn_sigma) {
  if (config.max_iters < 0) throw ConfigError("epitome: max_iters must be >= 0");
  if (!(config.tol >= 0.0)) throw ConfigError("epitome: tol must be >= 0");
  const int workers = resolve_workers(config.workers);
  EpitomeFit fit;
  fit.epitome = std::move(init);
  double ll = 0.0;
  fit.posterior = e_step_impl(fit.epitome, s, workers, &ll);
  if (!std::isfinite(ll)) throw NumericalError("epitome: log-likelihood is not finite at initialization");
  fit.trace.objective.push_back(ll);
  for (int it = 1; it <= config.max_iters; ++it) {
    fit.epitome = m_step_impl(s, fit.posterior, fit.epitome, learn_sigma, workers);
    double next = 0.0;
    fit.posterior = e_step_impl(fit.epitome, s, workers, &next);
    if (!std::isfinite(next)) throw NumericalError("epitome: log-likelihood is not finite at iteration " + std::to_string(it));
    fit.trace.objective.push_back(next);
    fit.trace.iterations = it;
    const double regression = ll - next;
    fit.trace.worst_regression = std::max(fit.trace.worst_regression, regression);
    if (regression > config.monotone_slack)
      throw NumericalError("epitome: log-likelihood decreased by " + std::to_string(regression) + " at iteration " + std::to_string(it));
    const double change = std::abs(next - ll) / std::max(1.0, std::abs(ll));
    ll = next;
    if (change < config.tol) {
      fit.trace.converged = true;
      break;
    }
  }
  return fit;
}

Epitome init_impl(const FrameStack& s, const EpitomeConfig& config) {
  check_geometry(config.grid, config.window);
  if (s.window != config.window) throw DomainError("epitome: frame size does not match the configured window");
  const Eigen::RowVectorXd mean = s.f.colwise().mean();
  const Eigen::RowVectorXd var = (s.f.rowwise() - mean).colwise().squaredNorm() / static_cast<double>(std::max<Eigen::Index>(1, s.f.rows()));
  Epitome ep;
  ep.grid = config.grid;
  ep.window = config.window;
  ep.depth = static_cast<int>(s.depth());
  ep.mu.resize(config.grid.area() * static_cast<std::size_t>(ep.depth));
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto d = static_cast<std::size_t>(ep.depth);
  for (std::size_t i = 0; i < config.grid.area(); ++i)
    for (std::size_t c = 0; c < d; ++c) {
      const auto cc = static_cast<Eigen::Index>(c);
      ep.mu[i * d + c] = mean(cc) + 0.01 * std::sqrt(var(cc)) * normal(rng);
    }
  if (config.learn_sigma) {
    ep.sigma_mode = SigmaMode::kLearned;
    ep.sigma2.assign(ep.mu.size(), kFixedSigma2);
  }
  return ep;
}

}  // namespace

void Epitome::validate() const {
  check_geometry(grid, window);
  if (depth < 1 || mu.size() != grid.area() * static_cast<std::size_t>(depth)) throw DomainError("epitome: mean payload does not match its shape");
  for (double v : mu)
    if (!std::isfinite(v)) throw DomainError("epitome: non-finite mean");
  if (sigma_mode == SigmaMode::kFixed) {
    if (!(sigma2_fixed > 0.0)) throw DomainError("epitome: fixed variance must be positive");
  } else {
    if (sigma2.size() != mu.size()) throw DomainError("epitome: variance payload does not match its shape");
    for (double v : sigma2)
      if (!(v >= kMinSigma2) || !std::isfinite(v)) throw DomainError("epitome: variance below floor");
  }
}

Epitome epitome_init(const FeatureSequence& seq, const EpitomeConfig& config) {
  seq.validate();
  return init_impl(stack_frames(seq), config);
}

PosteriorField epitome_e_step(const Epitome& ep, const FeatureSequence& seq, int workers, double* log_likelihood) {
  seq.validate();
  ep.validate();
  if (seq.spatial != ep.window) throw DomainError("epitome: frame size does not match the window size");
  return e_step_impl(ep, stack_frames(seq), resolve_workers(workers), log_likelihood);
}

Epitome epitome_m_step(const FeatureSequence& seq, const PosteriorField& q, const Epitome& prior, bool learn_sigma, int workers) {
  seq.validate();
  if (seq.spatial != prior.window) throw DomainError("epitome: frame size does not match the window size");
  return m_step_impl(stack_frames(seq), q, prior, learn_sigma, resolve_workers(workers));
}

EpitomeFit epitome_fit(const FeatureSequence& seq, const EpitomeConfig& config) {
  seq.validate();
  const FrameStack s = stack_frames(seq);
  return em_loop(s, init_impl(s, config), config, config.learn_sigma);
}

EpitomeFit epitome_fit_from(const FeatureSequence& seq, Epitome init, const EpitomeConfig& config) {
  seq.validate();
  init.validate();
  return em_loop(stack_frames(seq), std::move(init), config, config.learn_sigma);
}

Epitome lift_to_subspace(const Epitome& ep, const numerics::PcaModel& pca) {
  if (pca.input_dim() != ep.depth) throw DomainError("epitome: pca input dim does not match the epitome depth");
  const auto n = static_cast<Eigen::Index>(ep.grid.area());
  const ConstRowMap mu(ep.mu.data(), n, ep.depth);
  const RowMatrix centered = mu.rowwise() - pca.mean.transpose();
  const RowMatrix lifted = (centered * pca.basis.transpose() * pca.basis).rowwise() + pca.mean.transpose();
  Epitome out = ep;
  std::copy(lifted.data(), lifted.data() + lifted.size(), out.mu.begin());
  return out;
}

FeatureSequence project_sequence(const FeatureSequence& seq, const numerics::PcaModel& pca) {
  seq.validate();
  if (pca.input_dim() != seq.depth) throw DomainError("epitome: pca input dim does not match the feature depth");
  const FrameStack s = stack_frames(seq);
  const RowMatrix g = (s.f * pca.basis.transpose()).rowwise() - (pca.basis * pca.mean).transpose();
  FeatureSequence out = seq;
  out.depth = static_cast<int>(pca.output_dim());
  out.data.resize(static_cast<std::size_t>(g.size()));
  Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(out.data.data(), g.rows(), g.cols()) = g.cast<float>();
  return out;
}

TwoStepFit epitome_two_step_fit(const FeatureSequence& seq, const TwoStepConfig& config) {
  seq.validate();
  if (config.reduced_dim < 1 || config.reduced_dim > seq.depth)
    throw ConfigError("epitome: reduced_dim must be in [1, D]");
  const FrameStack full = stack_frames(seq);

  TwoStepFit out;
  out.full_init = init_impl(full, config);
  out.pca = numerics::pca_fit(full.f, config.reduced_dim);

  // Correspondence step in the rotated, reduced space with fixed variance.
  FrameStack reduced;
  reduced.frames = full.frames;
  reduced.window = full.window;
  reduced.f = (full.f * out.pca.basis.transpose()).rowwise() - (out.pca.basis * out.pca.mean).transpose();

  Epitome reduced_init;
  reduced_init.grid = config.grid;
  reduced_init.window = config.window;
  reduced_init.depth = config.reduced_dim;
  const auto n = static_cast<Eigen::Index>(config.grid.area());
  const ConstRowMap mu0(out.full_init.mu.data(), n, seq.depth);
  const RowMatrix mu_hat = (mu0.rowwise() - out.pca.mean.transpose()) * out.pca.basis.transpose();
  reduced_init.mu.assign(mu_hat.data(), mu_hat.data() + mu_hat.size());

  EpitomeFit step1 = em_loop(reduced, std::move(reduced_init), config, /*learn_sigma=*/false);
  out.posterior = std::move(step1.posterior);
  out.trace = std::move(step1.trace);

  // Imprint step: one full-dimension update from q-hat.
  Epitome prior = out.full_init;
  prior.sigma_mode = SigmaMode::kFixed;
  prior.sigma2.clear();
  out.epitome = m_step_impl(full, out.posterior, prior, config.learn_sigma, resolve_workers(config.workers));
  return out;
}

// EPIT -------------------------------------------------------------------------

std::vector<std::uint8_t> encode_imprint(const EpitomeImprint& imp) {
  const Epitome& e = imp.epitome;
  io::ByteWriter w;
  w.magic("EPIT");
  w.u32(1);
  for (int v : {e.grid.x, e.grid.y, e.depth, e.window.x, e.window.y, imp.posterior.frames}) w.u32(static_cast<std::uint32_t>(v));
  w.u32(static_cast<std::uint32_t>(e.sigma_mode));
  w.f32s(std::span<const double>(e.mu));
  if (e.sigma_mode == SigmaMode::kFixed)
    w.f32(static_cast<float>(e.sigma2_fixed));
  else
    w.f32s(std::span<const double>(e.sigma2));
  w.f32s(std::span<const double>(imp.posterior.q));
  return w.bytes();
}

EpitomeImprint decode_imprint(std::span<const std::uint8_t> bytes) {
  io::ByteReader r(bytes, "epitome: imprint");
  r.expect_magic("EPIT");
  r.expect_version(1);
  std::uint32_t h[6];
  for (auto& v : h) v = r.u32();
  for (auto v : h)
    if (v == 0 || v > (1u << 24)) throw ParseError(ParseFailure::kShapeOverflow, "epitome: imprint header dimension out of range");
  const std::uint32_t mode = r.u32();
  if (mode > 1) throw ParseError(ParseFailure::kMalformed, "epitome: unknown sigma mode");
  EpitomeImprint imp;
  Epitome& e = imp.epitome;
  e.grid = {static_cast<int>(h[0]), static_cast<int>(h[1])};
  e.depth = static_cast<int>(h[2]);
  e.window = {static_cast<int>(h[3]), static_cast<int>(h[4])};
  e.sigma_mode = static_cast<SigmaMode>(mode);
  const std::size_t n_mu = io::checked_volume({h[0], h[1], h[2]}, r.context());
  const std::size_t n_q = io::checked_volume({h[5], h[0], h[1]}, r.context());
  e.mu.resize(n_mu);
  r.f32s(std::span<double>(e.mu));
  if (e.sigma_mode == SigmaMode::kFixed) {
    e.sigma2_fixed = r.f32();
  } else {
    e.sigma2.resize(n_mu);
    r.f32s(std::span<double>(e.sigma2));
  }
  PosteriorField& q = imp.posterior;
  q.frames = static_cast<int>(h[5]);
  q.grid = e.grid;
  q.q.resize(n_q);
  r.f32s(std::span<double>(q.q));
  r.expect_end();
  if (e.window.x > e.grid.x || e.window.y > e.grid.y)
    throw ParseError(ParseFailure::kMalformed, "epitome: imprint window larger than its grid");
  for (double v : e.mu)
    if (!std::isfinite(v)) throw ParseError(ParseFailure::kMalformed, "epitome: imprint has non-finite means");
  const bool bad_var = e.sigma_mode == SigmaMode::kFixed
                           ? !(e.sigma2_fixed > 0.0 && std::isfinite(e.sigma2_fixed))
                           : std::any_of(e.sigma2.begin(), e.sigma2.end(), [](double v) { return !(v > 0.0) || !std::isfinite(v); });
  if (bad_var) throw ParseError(ParseFailure::kMalformed, "epitome: imprint has invalid variances");
  for (double v : q.q)
    if (!(v >= 0.0) || !std::isfinite(v)) throw ParseError(ParseFailure::kMalformed, "epitome: imprint posterior has invalid entries");
  q.log_q.resize(n_q);
  for (std::size_t i = 0; i < n_q; ++i) q.log_q[i] = std::log(q.q[i]);
  return imp;
}

void save_imprint(const EpitomeImprint& imprint, const std::filesystem::path& path) {
  io::write_file(path, encode_imprint(imprint));
}

EpitomeImprint load_imprint(const std::filesystem::path& path) { return decode_imprint(io::read_file(path)); }

}  // namespace vimprint::epitome

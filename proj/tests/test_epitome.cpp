#include <cmath>
#include <cstring>
#include <random>

#include "doctest.h"
#include "oracles.hpp"
#include "vimprint/epitome.hpp"
#include "vimprint/errors.hpp"

using namespace vimprint;
using namespace vimprint::epitome;

namespace {

struct Instance {
  Epitome ep;
  FeatureSequence seq;
};

Instance random_instance(std::uint64_t seed, bool learned) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> small(1, 3);
  const Extent2 window{small(rng), small(rng)};
  const Extent2 grid{window.x + small(rng), window.y + small(rng) - 1};
  const int depth = 1 + static_cast<int>(seed % 4);
  const int frames = 2 + static_cast<int>(seed % 3);
  Instance in;
  in.seq = oracle::random_sequence(rng, frames, window, depth);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  in.ep.grid = grid;
  in.ep.window = window;
  in.ep.depth = depth;
  in.ep.mu.resize(grid.area() * static_cast<std::size_t>(depth));
  for (double& v : in.ep.mu) v = u(rng);
  if (learned) {
    in.ep.sigma_mode = SigmaMode::kLearned;
    in.ep.sigma2.resize(in.ep.mu.size());
    for (double& v : in.ep.sigma2) v = 0.05 + 0.3 * u(rng);
  } else {
    in.ep.sigma2_fixed = 0.05 + 0.3 * u(rng);
  }
  return in;
}

std::vector<double> logs(const std::vector<double>& v) {
  std::vector<double> out;
  for (double x : v) out.push_back(std::log(x));
  return out;
}

}  // namespace

TEST_CASE("epitome e-step matches the nested-loop oracle") {
  for (bool learned : {false, true}) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const Instance in = random_instance(seed, learned);
      double ll = 0.0;
      const PosteriorField q = epitome_e_step(in.ep, in.seq, 1, &ll);
      const oracle::EpiE ref = oracle::epitome_e_step(in.ep, in.seq);
      CHECK(oracle::max_abs_diff(q.log_q, ref.log_q) <= 1e-9);
      CHECK(ll == doctest::Approx(ref.log_likelihood).epsilon(1e-10));
    }
  }
}

TEST_CASE("epitome m-step matches the nested-loop oracle") {
  for (bool learned : {false, true}) {
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      const Instance in = random_instance(seed, learned);
      std::mt19937_64 rng(seed + 50);
      const PosteriorField q = oracle::random_posterior(rng, in.seq.frames, in.ep.grid);
      const Epitome next = epitome_m_step(in.seq, q, in.ep, learned);
      const Epitome ref = oracle::epitome_m_step(in.seq, q.q, in.ep, learned);
      CHECK(oracle::max_abs_diff(next.mu, ref.mu) <= 1e-9);
      CHECK(next.sigma_mode == ref.sigma_mode);
      if (learned) CHECK(oracle::max_abs_diff(logs(next.sigma2), logs(ref.sigma2)) <= 1e-7);
    }
  }
}

TEST_CASE("unreached locations keep the prior") {
  Instance in = random_instance(3, false);
  in.ep.grid = {in.ep.window.x + 3, in.ep.window.y + 3};
  in.ep.mu.assign(in.ep.grid.area() * static_cast<std::size_t>(in.ep.depth), 0.25);
  std::vector<double> scores(static_cast<std::size_t>(in.seq.frames) * in.ep.grid.area(), -1e6);
  for (int t = 0; t < in.seq.frames; ++t) scores[static_cast<std::size_t>(t) * in.ep.grid.area()] = 0.0;
  const PosteriorField q = PosteriorField::from_log_scores(in.seq.frames, in.ep.grid, scores, 1);
  const Epitome next = epitome_m_step(in.seq, q, in.ep, false);
  const std::size_t far = oracle::at(in.ep.grid, in.ep.window.x + 1, in.ep.window.y + 1);
  for (double v : next.mean_at(far)) CHECK(v == 0.25);
}

TEST_CASE("epitome log-likelihood is non-decreasing") {
  for (bool learned : {false, true}) {
    for (std::uint64_t seed = 1; seed <= 8; ++seed) {
      std::mt19937_64 rng(seed);
      const FeatureSequence seq = oracle::random_sequence(rng, 12, {3, 3}, 4);
      EpitomeConfig cfg;
      cfg.grid = {6, 5};
      cfg.window = {3, 3};
      cfg.max_iters = 20;
      cfg.tol = 0.0;
      cfg.seed = seed;
      cfg.learn_sigma = learned;
      const EpitomeFit fit = epitome_fit(seq, cfg);
      REQUIRE(fit.trace.objective.size() == 21);
      for (std::size_t i = 1; i < fit.trace.objective.size(); ++i)
        CHECK(fit.trace.objective[i] >= fit.trace.objective[i - 1] - 1e-6);
      fit.epitome.validate();
    }
  }
}

TEST_CASE("toroidally shifting the epitome shifts the posterior") {
  const Instance in = random_instance(9, false);
  Epitome shifted = in.ep;
  shifted.mu = toroidal_shift(in.ep.mu, in.ep.grid, static_cast<std::size_t>(in.ep.depth), 1, 2);
  const PosteriorField a = epitome_e_step(in.ep, in.seq);
  const PosteriorField b = epitome_e_step(shifted, in.seq);
  for (int t = 0; t < in.seq.frames; ++t)
    for (int x = 0; x < in.ep.grid.x; ++x)
      for (int y = 0; y < in.ep.grid.y; ++y)
        CHECK(b.log_row(t)[oracle::at(in.ep.grid, x + 1, y + 2)] ==
              doctest::Approx(a.log_row(t)[oracle::at(in.ep.grid, x, y)]).epsilon(1e-10));
}

TEST_CASE("two-step at full dimension reproduces full EM") {
  std::mt19937_64 rng(21);
  const FeatureSequence seq = oracle::random_sequence(rng, 10, {3, 3}, 5);
  TwoStepConfig cfg;
  cfg.grid = {6, 6};
  cfg.window = {3, 3};
  cfg.max_iters = 8;
  cfg.tol = 0.0;
  cfg.reduced_dim = 5;
  const TwoStepFit two = epitome_two_step_fit(seq, cfg);
  const EpitomeFit full = epitome_fit_from(seq, lift_to_subspace(two.full_init, two.pca), cfg);
  CHECK(oracle::max_abs_diff(two.posterior.log_q, full.posterior.log_q) <= 1e-6);
  Epitome prior = two.full_init;
  const Epitome step2 = epitome_m_step(seq, two.posterior, prior, false);
  CHECK(step2.mu == two.epitome.mu);
}

TEST_CASE("two-step reduced objective is non-decreasing") {
  SynthSpec spec;
  spec.frames_per_video = 16;
  spec.frame = {4, 4};
  spec.depth = 32;
  const FeatureSequence seq = synth_two_shot_video(spec, 4);
  TwoStepConfig cfg;
  cfg.grid = {8, 8};
  cfg.window = {4, 4};
  cfg.max_iters = 10;
  cfg.tol = 0.0;
  cfg.reduced_dim = 8;
  const TwoStepFit fit = epitome_two_step_fit(seq, cfg);
  for (std::size_t i = 1; i < fit.trace.objective.size(); ++i)
    CHECK(fit.trace.objective[i] >= fit.trace.objective[i - 1] - 1e-6);
  CHECK(fit.epitome.depth == 32);
  CHECK_THROWS_AS(epitome_two_step_fit(seq, [&] {
                    auto c = cfg;
                    c.reduced_dim = 33;
                    return c;
                  }()),
                  ConfigError);
}

TEST_CASE("epitome fit is bitwise independent of the worker count") {
  std::mt19937_64 rng(8);
  const FeatureSequence seq = oracle::random_sequence(rng, 40, {3, 3}, 6);
  for (bool learned : {false, true}) {
    EpitomeConfig cfg;
    cfg.grid = {12, 12};
    cfg.window = {3, 3};
    cfg.max_iters = 5;
    cfg.learn_sigma = learned;
    cfg.workers = 1;
    const EpitomeFit a = epitome_fit(seq, cfg);
    cfg.workers = 4;
    const EpitomeFit b = epitome_fit(seq, cfg);
    CHECK(a.epitome.mu == b.epitome.mu);
    CHECK(a.epitome.sigma2 == b.epitome.sigma2);
    CHECK(a.posterior.log_q == b.posterior.log_q);
  }
}

TEST_CASE("epitome input checks") {
  std::mt19937_64 rng(1);
  const FeatureSequence seq = oracle::random_sequence(rng, 3, {3, 3}, 2);
  EpitomeConfig cfg;
  cfg.grid = {2, 2};
  cfg.window = {3, 3};
  CHECK_THROWS_AS(epitome_init(seq, cfg), ConfigError);
  cfg.grid = {5, 5};
  cfg.window = {2, 2};
  CHECK_THROWS_AS(epitome_init(seq, cfg), DomainError);
  cfg.window = {3, 3};
  cfg.max_iters = -1;
  CHECK_THROWS_AS(epitome_fit(seq, cfg), ConfigError);
}

TEST_CASE("EPIT round trip in both variance modes") {
  for (bool learned : {false, true}) {
    const Instance in = random_instance(4, learned);
    const PosteriorField q = epitome_e_step(in.ep, in.seq);
    const EpitomeImprint back = decode_imprint(encode_imprint({in.ep, q}));
    CHECK(back.epitome.grid == in.ep.grid);
    CHECK(back.epitome.window == in.ep.window);
    CHECK(back.epitome.sigma_mode == in.ep.sigma_mode);
    for (std::size_t i = 0; i < in.ep.mu.size(); ++i)
      CHECK(back.epitome.mu[i] == static_cast<double>(static_cast<float>(in.ep.mu[i])));
    if (learned)
      CHECK(back.epitome.sigma2.size() == in.ep.sigma2.size());
    else
      CHECK(back.epitome.sigma2_fixed == static_cast<double>(static_cast<float>(in.ep.sigma2_fixed)));
    CHECK(back.posterior.q.size() == q.q.size());
  }
}

TEST_CASE("EPIT decode errors") {
  const Instance in = random_instance(5, false);
  const auto good = encode_imprint({in.ep, epitome_e_step(in.ep, in.seq)});
  auto kind = [](std::vector<std::uint8_t> b) {
    try {
      decode_imprint(b);
    } catch (const ParseError& e) {
      return static_cast<int>(e.kind());
    }
    return -1;
  };
  auto b = good;
  b[0] = 'Q';
  CHECK(kind(b) == static_cast<int>(ParseFailure::kBadMagic));
  b = good;
  b[5] = 1;
  CHECK(kind(b) == static_cast<int>(ParseFailure::kBadVersion));
  b = good;
  b.resize(b.size() - 4);
  CHECK(kind(b) == static_cast<int>(ParseFailure::kTruncated));
  b = good;
  b.push_back(0);
  CHECK(kind(b) == static_cast<int>(ParseFailure::kTrailingBytes));
  b = good;
  b[32] = 7;  // sigma mode
  CHECK(kind(b) == static_cast<int>(ParseFailure::kMalformed));
  b = good;
  std::memset(&b[16], 0, 4);  // depth = 0
  CHECK(kind(b) == static_cast<int>(ParseFailure::kShapeOverflow));
  b = good;
  b[20] = 0x30;  // window.x beyond the grid
  CHECK(kind(b) == static_cast<int>(ParseFailure::kMalformed));
  b = good;
  const float inf = INFINITY;
  std::memcpy(&b[36], &inf, 4);
  CHECK(kind(b) == static_cast<int>(ParseFailure::kMalformed));
}

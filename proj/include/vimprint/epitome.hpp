#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "vimprint/features.hpp"
#include "vimprint/grid.hpp"
#include "vimprint/numerics.hpp"
#include "vimprint/posterior.hpp"

namespace vimprint::epitome {

inline constexpr double kFixedSigma2 = 0.1;
inline constexpr double kMinSigma2 = 1e-4;

enum class SigmaMode : std::uint32_t { kFixed = 0, kLearned = 1 };

/// Grid of diagonal Gaussians over D-dim feature vectors. Frames of size
/// `window` are generated from a toroidal window into the grid.
struct Epitome {
  Extent2 grid;
  Extent2 window;
  int depth = 0;
  std::vector<double> mu;  // grid.area() x depth
  SigmaMode sigma_mode = SigmaMode::kFixed;
  double sigma2_fixed = kFixedSigma2;
  std::vector<double> sigma2;  // grid.area() x depth, learned mode only

  std::span<const double> mean_at(std::size_t i) const {
    return {mu.data() + i * static_cast<std::size_t>(depth), static_cast<std::size_t>(depth)};
  }
  void validate() const;
};

struct EpitomeConfig {
  Extent2 grid{24, 24};
  Extent2 window{8, 8};
  int max_iters = 30;
  double tol = 1e-5;  // relative log-likelihood change
  std::uint64_t seed = 1;
  bool learn_sigma = false;
  int workers = 1;
  double monotone_slack = 1e-6;
};

struct TwoStepConfig : EpitomeConfig {
  int reduced_dim = 64;
};

struct EpitomeFit {
  Epitome epitome;
  PosteriorField posterior;
  FitTrace trace;  // objective = log-likelihood, non-decreasing
};

struct TwoStepFit {
  Epitome epitome;         // full-dimension means from the reduced-space posterior
  PosteriorField posterior;  // q-hat
  FitTrace trace;          // reduced-space EM
  numerics::PcaModel pca;  // projection used for the correspondence step
  Epitome full_init;       // seeded full-dimension initialization
};

/// Per-channel feature mean plus N(0, (0.01 * channel std)^2) noise per entry.
Epitome epitome_init(const FeatureSequence& seq, const EpitomeConfig& config);

/// `log_likelihood`, when given, receives sum_t log (1/|E|) sum_k p(F^t | k).
PosteriorField epitome_e_step(const Epitome& ep, const FeatureSequence& seq, int workers = 1,
                              double* log_likelihood = nullptr);

/// Closed-form update from the posterior. Locations no placement reaches keep
/// the values of `prior`.
Epitome epitome_m_step(const FeatureSequence& seq, const PosteriorField& q, const Epitome& prior, bool learn_sigma,
                       int workers = 1);

EpitomeFit epitome_fit(const FeatureSequence& seq, const EpitomeConfig& config);
EpitomeFit epitome_fit_from(const FeatureSequence& seq, Epitome init, const EpitomeConfig& config);

/// PCA-reduced correspondence EM (fixed variance) followed by a single
/// full-dimension mean update.
TwoStepFit epitome_two_step_fit(const FeatureSequence& seq, const TwoStepConfig& config);

/// Projects `ep` onto the affine PCA subspace (mean + basis^T basis (mu - mean)).
/// Starting full EM from this matches the reduced EM's first E-step exactly.
Epitome lift_to_subspace(const Epitome& ep, const numerics::PcaModel& pca);

/// Applies basis * (x - mean) to every frame vector (no whitening).
FeatureSequence project_sequence(const FeatureSequence& seq, const numerics::PcaModel& pca);

// EPIT imprint files ------------------------------------------------------------

struct EpitomeImprint {
  Epitome epitome;
  PosteriorField posterior;
};

std::vector<std::uint8_t> encode_imprint(const EpitomeImprint& imprint);
EpitomeImprint decode_imprint(std::span<const std::uint8_t> bytes);
void save_imprint(const EpitomeImprint& imprint, const std::filesystem::path& path);
EpitomeImprint load_imprint(const std::filesystem::path& path);

}  // namespace vimprint::epitome

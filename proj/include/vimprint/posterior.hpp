#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "vimprint/grid.hpp"

namespace vimprint {

/// Per-frame distribution over window placements on a toroidal grid.
/// Both the log and linear forms are kept: log_q stays finite where q underflows.
struct PosteriorField {
  int frames = 0;
  Extent2 grid;
  std::vector<double> log_q;  // frames x grid.area()
  std::vector<double> q;

  std::span<const double> row(int t) const {
    return {q.data() + static_cast<std::size_t>(t) * grid.area(), grid.area()};
  }
  std::span<const double> log_row(int t) const {
    return {log_q.data() + static_cast<std::size_t>(t) * grid.area(), grid.area()};
  }
  /// Placement with the largest posterior for frame t (lowest index on ties).
  std::size_t argmax(int t) const;
  /// Sum over frames of q, per placement.
  std::vector<double> accumulated_mass() const;

  /// Throws DomainError unless every row sums to 1 within `tol`.
  void validate(double tol = 1e-6) const;

  /// Normalizes per-frame log scores with log_softmax. Returns the field and,
  /// through `log_partition`, each frame's log-sum-exp.
  static PosteriorField from_log_scores(int frames, Extent2 grid, std::span<const double> scores, int workers,
                                        std::vector<double>* log_partition = nullptr);
};

/// Objective values recorded once per E-step (index 0 is the initialization).
struct FitTrace {
  std::vector<double> objective;
  int iterations = 0;
  bool converged = false;
  double worst_regression = 0.0;  // largest step in the wrong direction seen
};

}  // namespace vimprint

#include "vimprint/posterior.hpp"

#include <cmath>
#include <string>

#include "vimprint/errors.hpp"
#include "vimprint/numerics.hpp"
#include "vimprint/parallel.hpp"

namespace vimprint {

std::size_t PosteriorField::argmax(int t) const {
  auto r = log_row(t);
  std::size_t best = 0;
  for (std::size_t k = 1; k < r.size(); ++k)
    if (r[k] > r[best]) best = k;
  return best;
}

std::vector<double> PosteriorField::accumulated_mass() const {
  std::vector<double> m(grid.area(), 0.0);
  for (int t = 0; t < frames; ++t) {
    auto r = row(t);
    for (std::size_t k = 0; k < r.size(); ++k) m[k] += r[k];
  }
  return m;
}

void PosteriorField::validate(double tol) const {
  if (q.size() != static_cast<std::size_t>(frames) * grid.area() || log_q.size() != q.size())
    throw DomainError("posterior: field size does not match its shape");
  for (int t = 0; t < frames; ++t) {
    double s = 0.0;
    for (double v : row(t)) {
      if (!(v >= 0.0)) throw DomainError("posterior: negative or NaN probability in frame " + std::to_string(t));
      s += v;
    }
    if (std::abs(s - 1.0) > tol) throw DomainError("posterior: frame " + std::to_string(t) + " is not normalized");
  }
}

PosteriorField PosteriorField::from_log_scores(int frames, Extent2 grid, std::span<const double> scores, int workers,
                                               std::vector<double>* log_partition) {
  const std::size_t n = grid.area();
  PosteriorField out;
  out.frames = frames;
  out.grid = grid;
  out.log_q.resize(static_cast<std::size_t>(frames) * n);
  out.q.resize(out.log_q.size());
  std::vector<double> lse(static_cast<std::size_t>(frames));
  parallel_for(static_cast<std::size_t>(frames), workers, [&](std::size_t t) {
    auto s = scores.subspan(t * n, n);
    for (double v : s)
      if (!std::isfinite(v))
        throw NumericalError("posterior: non-finite placement score in frame " + std::to_string(t));
    lse[t] = numerics::log_sum_exp(s);
    for (std::size_t k = 0; k < n; ++k) {
      out.log_q[t * n + k] = s[k] - lse[t];
      out.q[t * n + k] = std::exp(out.log_q[t * n + k]);
    }
  });
  if (log_partition) *log_partition = std::move(lse);
  return out;
}

}  // namespace vimprint

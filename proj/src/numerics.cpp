#include "vimprint/numerics.hpp"

#include <lapacke.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <mutex>
#include <numeric>
#include <string>

#include "vimprint/errors.hpp"

extern "C" void openblas_set_num_threads(int);

namespace vimprint::numerics {

std::vector<double> l1_normalize(std::span<const double> v) {
  double total = 0.0;
  for (double x : v) {
    if (!(x >= 0.0)) throw DomainError("numerics: l1_normalize requires nonnegative entries");
    total += x;
  }
  std::vector<double> out(v.size());
  if (v.empty()) return out;
  if (total <= 0.0) {
    std::fill(out.begin(), out.end(), 1.0 / static_cast<double>(v.size()));
    return out;
  }
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / total;
  return out;
}

bool l2_normalize(std::span<const double> v, std::vector<double>& out) {
  double sq = 0.0;
  for (double x : v) sq += x * x;
  out.assign(v.size(), 0.0);
  if (!(sq > 0.0)) return false;
  const double inv = 1.0 / std::sqrt(sq);
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] * inv;
  return true;
}

double log_sum_exp(std::span<const double> scores) {
  if (scores.empty()) throw DomainError("numerics: log_sum_exp of an empty vector");
  double peak = -std::numeric_limits<double>::infinity();
  for (double s : scores) {
    if (std::isnan(s)) throw DomainError("numerics: NaN score");
    peak = std::max(peak, s);
  }
  if (!std::isfinite(peak)) return peak;
  double acc = 0.0;
  for (double s : scores) acc += std::exp(s - peak);
  return peak + std::log(acc);
}

std::vector<double> log_softmax(std::span<const double> scores) {
  const double lse = log_sum_exp(scores);
  if (!std::isfinite(lse)) throw DomainError("numerics: log_softmax needs at least one finite score");
  std::vector<double> out(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = scores[i] - lse;
  return out;
}

std::vector<double> power_normalize(std::span<const double> v, double alpha) {
  if (!(alpha > 0.0 && alpha <= 1.0)) throw DomainError("numerics: power_normalize alpha must be in (0, 1]");
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double m = std::pow(std::abs(v[i]), alpha);
    out[i] = v[i] < 0.0 ? -m : m;
  }
  return out;
}

void pin_blas_threads() {
  static std::once_flag once;
  std::call_once(once, [] { openblas_set_num_threads(1); });
}

namespace {

Eigen::Index dominant_axis(const Eigen::VectorXd& v) {
  Eigen::Index best = 0;
  v.cwiseAbs().maxCoeff(&best);
  return best;
}

}  // namespace

namespace {

template <typename Rows>
PcaModel pca_fit_impl(const Rows& rows, Eigen::Index dim, double epsilon) {
  const Eigen::Index n = rows.rows();
  const Eigen::Index big_d = rows.cols();
  if (dim < 1 || dim > big_d)
    throw ConfigError("numerics: pca target dim " + std::to_string(dim) + " outside [1, " +
                      std::to_string(big_d) + "]");
  if (n < 2) throw ConfigError("numerics: pca needs at least two rows");
  if (epsilon < 0.0) throw ConfigError("numerics: pca epsilon must be >= 0");
  if (!rows.allFinite()) throw DomainError("numerics: pca input has non-finite entries");
  pin_blas_threads();

  PcaModel model;
  model.epsilon = epsilon;
  model.mean = rows.colwise().mean().transpose();

  Eigen::MatrixXd centered = rows.rowwise() - model.mean.transpose();
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(big_d, big_d);
  cov.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose(), 1.0 / static_cast<double>(n - 1));
  centered.resize(0, 0);

  // Largest `dim` eigenpairs, returned in ascending order.
  lapack_int found = 0;
  std::vector<double> values(static_cast<std::size_t>(big_d));
  Eigen::MatrixXd vectors(big_d, dim);
  std::vector<lapack_int> support(2 * static_cast<std::size_t>(dim));
  const lapack_int info =
      LAPACKE_dsyevr(LAPACK_COL_MAJOR, 'V', 'I', 'L', static_cast<lapack_int>(big_d), cov.data(),
                     static_cast<lapack_int>(big_d), 0.0, 0.0, static_cast<lapack_int>(big_d - dim + 1),
                     static_cast<lapack_int>(big_d), 0.0, &found, values.data(), vectors.data(),
                     static_cast<lapack_int>(big_d), support.data());
  if (info != 0 || found != dim)
    throw NumericalError("numerics: eigensolver failed (info " + std::to_string(info) + ")");

  struct Pair {
    double value;
    Eigen::Index axis;
    Eigen::Index column;
  };
  std::vector<Pair> order;
  for (Eigen::Index c = 0; c < dim; ++c)
    order.push_back({values[static_cast<std::size_t>(c)], dominant_axis(vectors.col(c)), c});
  const double scale = std::max(std::abs(values[static_cast<std::size_t>(dim - 1)]), 1e-300);
  const double tie = 1e-12 * scale;
  std::sort(order.begin(), order.end(), [tie](const Pair& a, const Pair& b) {
    if (std::abs(a.value - b.value) > tie) return a.value > b.value;
    return a.axis < b.axis;
  });

  const double largest = order.front().value;
  if (!(order.back().value > std::max(1e-12 * largest, 1e-300)))
    throw ConfigError("numerics: data rank is below the requested pca dim " + std::to_string(dim));

  model.basis.resize(dim, big_d);
  model.eigenvalues.resize(dim);
  for (Eigen::Index r = 0; r < dim; ++r) {
    const Pair& p = order[static_cast<std::size_t>(r)];
    Eigen::VectorXd v = vectors.col(p.column);
    if (v(p.axis) < 0.0) v = -v;
    model.basis.row(r) = v.transpose();
    model.eigenvalues(r) = p.value;
  }
  return model;
}

}  // namespace

PcaModel pca_fit(const Eigen::MatrixXd& rows, Eigen::Index dim, double epsilon) {
  return pca_fit_impl(rows, dim, epsilon);
}

PcaModel pca_fit(const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& rows, Eigen::Index dim,
                 double epsilon) {
  return pca_fit_impl(Eigen::MatrixXd(rows), dim, epsilon);
}

Eigen::VectorXd pca_project(const PcaModel& model, std::span<const double> v) {
  if (static_cast<Eigen::Index>(v.size()) != model.input_dim())
    throw DomainError("numerics: pca input has dim " + std::to_string(v.size()) + ", model expects " +
                      std::to_string(model.input_dim()));
  const Eigen::Map<const Eigen::VectorXd> x(v.data(), static_cast<Eigen::Index>(v.size()));
  return model.basis * (x - model.mean);
}

Eigen::VectorXd pca_whiten_project(const PcaModel& model, std::span<const double> v) {
  Eigen::VectorXd out = pca_project(model, v);
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) /= std::sqrt(model.eigenvalues(i) + model.epsilon);
  return out;
}

std::vector<double> avg_pool_3x3(std::span<const double> map, Extent2 extent) {
  if (extent.x < 1 || extent.y < 1) throw DomainError("numerics: avg_pool_3x3 needs a non-empty map");
  if (map.size() != extent.area()) throw DomainError("numerics: avg_pool_3x3 map size mismatch");
  std::vector<double> out(map.size());
  for (int x = 0; x < extent.x; ++x) {
    for (int y = 0; y < extent.y; ++y) {
      double acc = 0.0;
      int count = 0;
      for (int nx = std::max(0, x - 1); nx <= std::min(extent.x - 1, x + 1); ++nx) {
        for (int ny = std::max(0, y - 1); ny <= std::min(extent.y - 1, y + 1); ++ny) {
          acc += map[static_cast<std::size_t>(nx) * static_cast<std::size_t>(extent.y) +
                     static_cast<std::size_t>(ny)];
          ++count;
        }
      }
      out[static_cast<std::size_t>(x) * static_cast<std::size_t>(extent.y) + static_cast<std::size_t>(y)] =
          acc / count;
    }
  }
  return out;
}

}  // namespace vimprint::numerics

#pragma once

#include <Eigen/Dense>
#include <span>
#include <vector>

#include "vimprint/grid.hpp"

namespace vimprint::numerics {

/// Scales a nonnegative vector to sum 1. A zero vector maps to the uniform
/// distribution so blank frames still produce a defined posterior.
std::vector<double> l1_normalize(std::span<const double> v);

/// Unit-l2 copy of `v`. Returns false (and leaves `out` zero) for a zero vector.
bool l2_normalize(std::span<const double> v, std::vector<double>& out);

double log_sum_exp(std::span<const double> scores);
std::vector<double> log_softmax(std::span<const double> scores);

/// sign(x) * |x|^alpha elementwise, alpha in (0, 1].
std::vector<double> power_normalize(std::span<const double> v, double alpha);

struct PcaModel {
  Eigen::VectorXd mean;         // D
  Eigen::MatrixXd basis;        // d x D, orthonormal rows
  Eigen::VectorXd eigenvalues;  // d, descending, > 0
  double epsilon = 1e-6;

  Eigen::Index input_dim() const { return basis.cols(); }
  Eigen::Index output_dim() const { return basis.rows(); }
};

/// Principal subspace of the sample covariance (n - 1 normalization) of the
/// rows of `rows` (n x D). Equal eigenvalues are ordered by the index of the
/// eigenvector's dominant axis; each basis row is signed so its dominant
/// component is positive.
PcaModel pca_fit(const Eigen::MatrixXd& rows, Eigen::Index dim, double epsilon = 1e-6);
PcaModel pca_fit(const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>& rows, Eigen::Index dim,
                 double epsilon = 1e-6);

/// basis * (v - mean), no whitening.
Eigen::VectorXd pca_project(const PcaModel& model, std::span<const double> v);

/// (basis_i . (v - mean)) / sqrt(eigenvalue_i + epsilon). The caller applies
/// l2 normalization when it wants unit vectors.
Eigen::VectorXd pca_whiten_project(const PcaModel& model, std::span<const double> v);

/// 3x3, stride-1 mean filter over a bordered (non-toroidal) map. The divisor
/// is the number of in-bounds neighbors.
std::vector<double> avg_pool_3x3(std::span<const double> map, Extent2 extent);

/// OpenBLAS would otherwise pick its own thread count; pinning it keeps LAPACK
/// results independent of the host.
void pin_blas_threads();

}  // namespace vimprint::numerics

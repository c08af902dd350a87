#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace qera {

/// Dense row-major matrix of 64-bit floats. All core math runs in FP64;
/// 32-bit inputs are widened at the boundary.
using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Numerical failure (eigensolver non-convergence, non-PSD input, ...).
/// Maps to CLI exit code 2.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& what) : std::runtime_error(what) {}
};

inline constexpr double kDefaultEps = 1e-8;
inline constexpr double kDefaultEigClamp = 1e-8;

/// Throws std::invalid_argument if m contains NaN/Inf.
void require_finite(const Matrix& m, const char* name);

/// Full (thin) SVD: u is m x r, sigma descending >= 0, vt is r x n with
/// r = min(m, n). u*diag(sigma)*vt reconstructs the input.
struct SvdResult {
    Matrix u;
    Vector sigma;
    Matrix vt;

    Index rank_limit() const { return sigma.size(); }
};

SvdResult svd(const Matrix& m);

/// Top-k singular triplets of a decomposition. 1 <= k <= len(sigma).
struct TruncatedSvd {
    Matrix u_k;
    Vector sigma_k;
    Matrix vt_k;

    Matrix compose() const { return u_k * sigma_k.asDiagonal() * vt_k; }
};

TruncatedSvd truncate(const SvdResult& s, Index k);

/// m + lambda*I with lambda = eps * trace(m)/rows (lambda = eps when the
/// trace is zero). Input must be square and symmetric within 1e-9.
Matrix regularize_spd(const Matrix& m, double eps);

/// Unique symmetric PSD square root via symmetric eigendecomposition.
/// Eigenvalues below -eig_clamp*||m||_F are rejected as "not PSD"; tiny
/// negatives are clamped to zero. Result is explicitly symmetrized.
Matrix spsd_sqrt(const Matrix& m, double eig_clamp = kDefaultEigClamp);

/// (regularize_spd(m, eps))^(-1/2), fused: one eigendecomposition, with
/// the diagonal perturbation applied to the eigenvalues first.
Matrix spsd_inv_sqrt(const Matrix& m, double eps = kDefaultEps,
                     double eig_clamp = kDefaultEigClamp);

inline double frobenius_norm(const Matrix& m) { return m.norm(); }

/// Symmetrize in place: (m + m^T)/2.
Matrix symmetrize(const Matrix& m);

}  // namespace qera

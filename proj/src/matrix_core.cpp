#include "qera/matrix_core.hpp"

#include <cmath>
#include <sstream>

namespace qera {

void require_finite(const Matrix& m, const char* name) {
    if (!m.allFinite()) {
        std::ostringstream msg;
        msg << name << ": matrix (" << m.rows() << "x" << m.cols()
            << ") contains NaN/Inf";
        throw std::invalid_argument(msg.str());
    }
}

namespace {

void require_square_symmetric(const Matrix& m, const char* name, double tol = 1e-9) {
    if (m.rows() != m.cols()) {
        std::ostringstream msg;
        msg << name << ": expected square matrix, got " << m.rows() << "x" << m.cols();
        throw std::invalid_argument(msg.str());
    }
    const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
    const double asym = (m - m.transpose()).cwiseAbs().maxCoeff();
    if (asym > tol * scale) {
        std::ostringstream msg;
        msg << name << ": matrix not symmetric (max asymmetry " << asym << ")";
        throw std::invalid_argument(msg.str());
    }
}

}  // namespace

Matrix symmetrize(const Matrix& m) {
    return 0.5 * (m + Matrix(m.transpose()));
}

SvdResult svd(const Matrix& m) {
    require_finite(m, "svd");
    Eigen::JacobiSVD<Eigen::MatrixXd> solver(m, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (solver.info() != Eigen::Success) {
        std::ostringstream msg;
        msg << "svd: decomposition of " << m.rows() << "x" << m.cols()
            << " matrix did not converge";
        throw NumericalError(msg.str());
    }
    SvdResult out;
    out.u = solver.matrixU();
    out.sigma = solver.singularValues();
    out.vt = solver.matrixV().transpose();
    return out;
}

TruncatedSvd truncate(const SvdResult& s, Index k) {
    if (k < 1 || k > s.sigma.size()) {
        std::ostringstream msg;
        msg << "truncate: rank " << k << " out of range [1, " << s.sigma.size() << "]";
        throw std::invalid_argument(msg.str());
    }
    TruncatedSvd out;
    out.u_k = s.u.leftCols(k);
    out.sigma_k = s.sigma.head(k);
    out.vt_k = s.vt.topRows(k);
    return out;
}

Matrix regularize_spd(const Matrix& m, double eps) {
    require_finite(m, "regularize_spd");
    require_square_symmetric(m, "regularize_spd");
    const double tr = m.trace();
    const double lambda = (tr == 0.0) ? eps : eps * tr / static_cast<double>(m.rows());
    Matrix out = m;
    out.diagonal().array() += lambda;
    return out;
}

namespace {

struct SpsdEigen {
    Matrix vectors;
    Vector values;  // clamped to >= 0
};

SpsdEigen spsd_eigen(const Matrix& m, double eig_clamp, const char* name) {
    require_finite(m, name);
    require_square_symmetric(m, name);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(symmetrize(m));
    if (es.info() != Eigen::Success) {
        std::ostringstream msg;
        msg << name << ": eigendecomposition of " << m.rows() << "x" << m.cols()
            << " matrix did not converge";
        throw NumericalError(msg.str());
    }
    const double scale = m.norm();
    Vector vals = es.eigenvalues();
    for (Index i = 0; i < vals.size(); ++i) {
        if (vals[i] < -eig_clamp * scale) {
            std::ostringstream msg;
            msg << name << ": not PSD, eigenvalue " << vals[i]
                << " below tolerance " << -eig_clamp * scale;
            throw NumericalError(msg.str());
        }
        if (vals[i] < 0.0) vals[i] = 0.0;
    }
    return {Matrix(es.eigenvectors()), vals};
}

}  // namespace

Matrix spsd_sqrt(const Matrix& m, double eig_clamp) {
    SpsdEigen eig = spsd_eigen(m, eig_clamp, "spsd_sqrt");
    Vector roots = eig.values.cwiseSqrt();
    return symmetrize(eig.vectors * roots.asDiagonal() * eig.vectors.transpose());
}

Matrix spsd_inv_sqrt(const Matrix& m, double eps, double eig_clamp) {
    Matrix reg = regularize_spd(m, eps);
    SpsdEigen eig = spsd_eigen(reg, eig_clamp, "spsd_inv_sqrt");
    Vector inv_roots(eig.values.size());
    for (Index i = 0; i < eig.values.size(); ++i) {
        if (eig.values[i] <= 0.0) {
            std::ostringstream msg;
            msg << "spsd_inv_sqrt: singular after regularization (eigenvalue "
                << eig.values[i] << "); increase eps";
            throw NumericalError(msg.str());
        }
        inv_roots[i] = 1.0 / std::sqrt(eig.values[i]);
    }
    return symmetrize(eig.vectors * inv_roots.asDiagonal() * eig.vectors.transpose());
}

}  // namespace qera

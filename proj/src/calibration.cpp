#include "qera/calibration.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

namespace qera {

void accum_update(CalibAccumulator& acc, const Matrix& batch) {
    if (batch.cols() != acc.dim) {
        std::ostringstream msg;
        msg << "accum_update: batch has " << batch.cols() << " columns, accumulator dim is "
            << acc.dim;
        throw std::invalid_argument(msg.str());
    }
    require_finite(batch, "accum_update");
    acc.sum_outer.noalias() += batch.transpose() * batch;
    acc.sum_sq += batch.array().square().colwise().sum().matrix().transpose();
    acc.sum_abs += batch.array().abs().colwise().sum().matrix().transpose();
    acc.count += batch.rows();
}

CalibAccumulator accum_merge(const CalibAccumulator& a, const CalibAccumulator& b) {
    if (a.dim != b.dim) {
        std::ostringstream msg;
        msg << "accum_merge: dims differ (" << a.dim << " vs " << b.dim << ")";
        throw std::invalid_argument(msg.str());
    }
    CalibAccumulator out(a.dim);
    out.count = a.count + b.count;
    out.sum_outer = a.sum_outer + b.sum_outer;
    out.sum_sq = a.sum_sq + b.sum_sq;
    out.sum_abs = a.sum_abs + b.sum_abs;
    return out;
}

namespace {

CalibStats derive_stats(const Matrix& rxx, const Vector& mean_sq, const Vector& mean_abs,
                        int64_t count, double eps, double s_floor) {
    CalibStats stats;
    stats.rxx = rxx;
    stats.rxx_sqrt = spsd_sqrt(regularize_spd(rxx, eps));
    stats.rxx_inv_sqrt = spsd_inv_sqrt(rxx, eps);
    stats.s_diag = mean_sq.cwiseSqrt().cwiseMax(s_floor);
    stats.lqer_scale = mean_abs;
    stats.count = count;
    stats.eps_used = eps;
    stats.s_floor_used = s_floor;
    return stats;
}

}  // namespace

CalibStats finalize(const CalibAccumulator& acc, double eps, double s_floor) {
    if (acc.count == 0) throw NumericalError("finalize: no calibration data");
    const double inv_n = 1.0 / static_cast<double>(acc.count);
    Matrix rxx = symmetrize(acc.sum_outer) * inv_n;
    return derive_stats(rxx, Vector(acc.sum_sq * inv_n), Vector(acc.sum_abs * inv_n),
                        acc.count, eps, s_floor);
}

CalibStats stats_from_rxx(const Matrix& rxx, double eps, double s_floor) {
    require_finite(rxx, "stats_from_rxx");
    Matrix sym = symmetrize(rxx);
    Vector mean_sq = sym.diagonal();
    Vector mean_abs = (mean_sq.cwiseMax(0.0) * (2.0 / std::numbers::pi)).cwiseSqrt();
    return derive_stats(sym, mean_sq, mean_abs, /*count=*/0, eps, s_floor);
}

AutocorrDiagnostic autocorr_diagnostic(const CalibStats& stats) {
    AutocorrDiagnostic d;
    const double fro = stats.rxx.norm();
    if (fro == 0.0) {
        d.heatmap = Matrix::Zero(stats.rxx.rows(), stats.rxx.cols());
        return d;
    }
    d.heatmap = stats.rxx.cwiseAbs() / fro;
    Matrix offdiag = stats.rxx;
    offdiag.diagonal().setZero();
    d.offdiag_ratio = offdiag.norm() / fro;
    return d;
}

}  // namespace qera

#pragma once

#include "qera/matrix_core.hpp"

#include <cstdint>

namespace qera {

inline constexpr double kDefaultSFloor = 1e-12;

/// Streaming, mergeable sums over row-vector samples. Accumulation is
/// FP64 throughout. Single-writer value type; shard with independent
/// accumulators and accum_merge.
struct CalibAccumulator {
    Index dim = 0;
    int64_t count = 0;
    Matrix sum_outer;  // dim x dim, sum of x^T x
    Vector sum_sq;     // per-dimension sum of x_i^2
    Vector sum_abs;    // per-dimension sum of |x_i|

    explicit CalibAccumulator(Index dim_ = 0)
        : dim(dim_),
          sum_outer(Matrix::Zero(dim_, dim_)),
          sum_sq(Vector::Zero(dim_)),
          sum_abs(Vector::Zero(dim_)) {}
};

/// Finalized activation statistics for one layer.
struct CalibStats {
    Matrix rxx;           // E[x^T x], symmetrized
    Matrix rxx_sqrt;      // spsd_sqrt(regularize_spd(rxx, eps))
    Matrix rxx_inv_sqrt;  // spsd_inv_sqrt(rxx, eps)
    Vector s_diag;        // sqrt(E[x_i^2]), floored at s_floor
    Vector lqer_scale;    // E[|x_i|], unclamped
    int64_t count = 0;
    double eps_used = kDefaultEps;
    double s_floor_used = kDefaultSFloor;

    Index dim() const { return rxx.rows(); }
};

/// Adds a batch of row-vector samples (N_b x dim).
void accum_update(CalibAccumulator& acc, const Matrix& batch);

/// Field-wise sum; associative and commutative up to FP reassociation.
CalibAccumulator accum_merge(const CalibAccumulator& a, const CalibAccumulator& b);

/// Divides out the sample count and derives the square-root factors.
/// Dead dimensions are floored at s_floor so S stays invertible.
/// Throws NumericalError when count == 0.
CalibStats finalize(const CalibAccumulator& acc, double eps = kDefaultEps,
                    double s_floor = kDefaultSFloor);

/// Builds stats directly from a population autocorrelation matrix, for
/// synthetic instances where rxx is known exactly. lqer_scale is the
/// zero-mean-Gaussian magnitude sqrt(2/pi)*sqrt(rxx_ii).
CalibStats stats_from_rxx(const Matrix& rxx, double eps = kDefaultEps,
                          double s_floor = kDefaultSFloor);

struct AutocorrDiagnostic {
    double offdiag_ratio = 0.0;  // ||offdiag(rxx)||_F / ||rxx||_F, in [0,1)
    Matrix heatmap;              // |rxx| / ||rxx||_F
};

/// Quantifies how far the inputs are from having uncorrelated dimensions
/// (0 = exactly diagonal rxx).
AutocorrDiagnostic autocorr_diagnostic(const CalibStats& stats);

}  // namespace qera

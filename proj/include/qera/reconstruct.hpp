#pragma once

#include "qera/calibration.hpp"
#include "qera/quantizer.hpp"

#include <string>
#include <vector>

namespace qera {

enum class Method { WEIGHT_SVD, LOFTQ, LQER, QERA_APPROX, QERA_EXACT };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
bool method_needs_stats(Method m);

/// Reconstruction job for one layer. `stats` is non-owning; the same
/// CalibStats may serve many layers and is never mutated.
struct ReconRequest {
    Matrix w;
    QuantSpec spec;
    Index rank = 1;
    const CalibStats* stats = nullptr;  // required for LQER / QERA methods
    int iterations = 1;                 // LoftQ only
};

struct ReconMeta {
    QuantSpec spec;
    double eps_used = kDefaultEps;
    int iterations = 1;
    /// ||w - dq(wq) - A*B||_F after each LoftQ iteration (single entry for
    /// the one-shot methods).
    std::vector<double> weight_error_per_iter;
};

/// Quantized weight plus the rank-k high-precision correction. The
/// effective layer is x * (dq(wq) + a_k * b_k).
struct ReconstructedLayer {
    QuantizedTensor wq;
    Matrix a_k;  // m x k
    Matrix b_k;  // k x n
    Index rank = 0;
    Method method = Method::WEIGHT_SVD;
    ReconMeta meta;

    Matrix c_k() const { return a_k * b_k; }
    Matrix effective_weight() const { return dequantize(wq) + a_k * b_k; }
};

/// Truncated SVD of the raw weight error w - dq(q(w)). The factor split
/// puts sqrt(Sigma) on both sides.
ReconstructedLayer recon_weight_svd(const ReconRequest& req);

/// Iterative variant: alternates re-quantizing w - A*B with refreshing
/// the rank-k factors from the residual, `iterations` times. One
/// iteration coincides with recon_weight_svd.
ReconstructedLayer recon_loftq(const ReconRequest& req);

/// SVD of the magnitude-scaled error S*(w - dq(q(w))) with
/// S = diag(E[|x_i|]); a_k = S^-1 * U_k, b_k = Sigma_k * Vt_k.
ReconstructedLayer recon_lqer(const ReconRequest& req);

/// Same shape as recon_lqer but S = diag(sqrt(E[x_i^2])), the layer-output
/// optimum when input dimensions are uncorrelated.
ReconstructedLayer recon_qera_approx(const ReconRequest& req);

/// Layer-output optimum for arbitrary input correlation:
/// SVD of rxx_sqrt*(w - dq(q(w))), a_k = rxx_inv_sqrt * U_k.
ReconstructedLayer recon_qera_exact(const ReconRequest& req);

/// Dispatch by method enum.
ReconstructedLayer reconstruct(const ReconRequest& req, Method method);

/// Mean over the rows x of eval_inputs of ||x*(dq(wq)+a_k*b_k) - x*w||_2^2.
double sample_objective(const ReconstructedLayer& layer, const Matrix& w,
                        const Matrix& eval_inputs);

/// Tr(rxx * P * P^T) with P = dq(wq) + a_k*b_k - w, computed as
/// ||spsd_sqrt(rxx) * P||_F^2. Equals sample_objective under the eval
/// set's empirical rxx.
double closed_form_objective(const ReconstructedLayer& layer, const Matrix& w,
                             const Matrix& rxx);

}  // namespace qera

#include "qera/reconstruct.hpp"

#include <cmath>
#include <sstream>

namespace qera {

std::string to_string(Method m) {
    switch (m) {
        case Method::WEIGHT_SVD: return "weight-svd";
        case Method::LOFTQ: return "loftq";
        case Method::LQER: return "lqer";
        case Method::QERA_APPROX: return "qera-approx";
        case Method::QERA_EXACT: return "qera-exact";
    }
    return "?";
}

Method method_from_string(const std::string& s) {
    if (s == "weight-svd") return Method::WEIGHT_SVD;
    if (s == "loftq") return Method::LOFTQ;
    if (s == "lqer") return Method::LQER;
    if (s == "qera-approx") return Method::QERA_APPROX;
    if (s == "qera-exact") return Method::QERA_EXACT;
    throw std::invalid_argument("unknown method: " + s);
}

bool method_needs_stats(Method m) {
    return m == Method::LQER || m == Method::QERA_APPROX || m == Method::QERA_EXACT;
}

namespace {

void check_rank(const ReconRequest& req) {
    const Index max_k = std::min(req.w.rows(), req.w.cols());
    if (req.rank < 1 || req.rank > max_k) {
        std::ostringstream msg;
        msg << "rank " << req.rank << " out of range [1, " << max_k << "] for "
            << req.w.rows() << "x" << req.w.cols() << " weight";
        throw std::invalid_argument(msg.str());
    }
}

const CalibStats& require_stats(const ReconRequest& req, Method m) {
    if (req.stats == nullptr)
        throw std::invalid_argument(to_string(m) + " requires calibration stats");
    if (req.stats->dim() != req.w.rows()) {
        std::ostringstream msg;
        msg << to_string(m) << ": stats dim " << req.stats->dim()
            << " does not match weight rows " << req.w.rows();
        throw std::invalid_argument(msg.str());
    }
    return *req.stats;
}

ReconstructedLayer make_layer(const ReconRequest& req, Method method,
                              QuantizedTensor wq, Matrix a, Matrix b) {
    ReconstructedLayer layer;
    layer.wq = std::move(wq);
    layer.a_k = std::move(a);
    layer.b_k = std::move(b);
    layer.rank = req.rank;
    layer.method = method;
    layer.meta.spec = req.spec;
    layer.meta.iterations = (method == Method::LOFTQ) ? req.iterations : 1;
    layer.meta.eps_used = req.stats ? req.stats->eps_used : kDefaultEps;
    layer.meta.weight_error_per_iter.push_back(
        (req.w - dequantize(layer.wq) - layer.a_k * layer.b_k).norm());
    return layer;
}

/// One-shot scaled-SVD reconstruction shared by LQER / QERA methods:
/// SVD(scale_fwd * (w - dq(q(w)))), a_k = scale_inv * U_k, b_k = Sigma_k * Vt_k.
ReconstructedLayer scaled_svd_recon(const ReconRequest& req, Method method,
                                    const Matrix& scale_fwd, const Matrix& scale_inv) {
    QuantizedTensor wq = quantize(req.w, req.spec);
    Matrix error = req.w - dequantize(wq);
    TruncatedSvd t = truncate(svd(scale_fwd * error), req.rank);
    Matrix a = scale_inv * t.u_k;
    Matrix b = t.sigma_k.asDiagonal() * t.vt_k;
    return make_layer(req, method, std::move(wq), std::move(a), std::move(b));
}

}  // namespace

ReconstructedLayer recon_weight_svd(const ReconRequest& req) {
    check_rank(req);
    QuantizedTensor wq = quantize(req.w, req.spec);
    Matrix error = req.w - dequantize(wq);
    TruncatedSvd t = truncate(svd(error), req.rank);
    Vector root = t.sigma_k.cwiseSqrt();
    Matrix a = t.u_k * root.asDiagonal();
    Matrix b = root.asDiagonal() * t.vt_k;
    return make_layer(req, Method::WEIGHT_SVD, std::move(wq), std::move(a), std::move(b));
}

ReconstructedLayer recon_loftq(const ReconRequest& req) {
    check_rank(req);
    if (req.iterations < 1)
        throw std::invalid_argument("loftq requires iterations >= 1");

    Matrix a = Matrix::Zero(req.w.rows(), req.rank);
    Matrix b = Matrix::Zero(req.rank, req.w.cols());
    QuantizedTensor wq;
    std::vector<double> trace;
    for (int i = 0; i < req.iterations; ++i) {
        wq = quantize(req.w - a * b, req.spec);
        Matrix w_tilde = dequantize(wq);
        TruncatedSvd t = truncate(svd(req.w - w_tilde), req.rank);
        Vector root = t.sigma_k.cwiseSqrt();
        a = t.u_k * root.asDiagonal();
        b = root.asDiagonal() * t.vt_k;
        trace.push_back((req.w - w_tilde - a * b).norm());
    }
    ReconstructedLayer layer = make_layer(req, Method::LOFTQ, std::move(wq),
                                          std::move(a), std::move(b));
    layer.meta.weight_error_per_iter = std::move(trace);
    return layer;
}

ReconstructedLayer recon_lqer(const ReconRequest& req) {
    check_rank(req);
    const CalibStats& stats = require_stats(req, Method::LQER);
    Vector s = stats.lqer_scale.cwiseMax(stats.s_floor_used);
    return scaled_svd_recon(req, Method::LQER, Matrix(s.asDiagonal()),
                            Matrix(s.cwiseInverse().asDiagonal()));
}

ReconstructedLayer recon_qera_approx(const ReconRequest& req) {
    check_rank(req);
    const CalibStats& stats = require_stats(req, Method::QERA_APPROX);
    return scaled_svd_recon(req, Method::QERA_APPROX, Matrix(stats.s_diag.asDiagonal()),
                            Matrix(stats.s_diag.cwiseInverse().asDiagonal()));
}

ReconstructedLayer recon_qera_exact(const ReconRequest& req) {
    check_rank(req);
    const CalibStats& stats = require_stats(req, Method::QERA_EXACT);
    return scaled_svd_recon(req, Method::QERA_EXACT, stats.rxx_sqrt, stats.rxx_inv_sqrt);
}

ReconstructedLayer reconstruct(const ReconRequest& req, Method method) {
    switch (method) {
        case Method::WEIGHT_SVD: return recon_weight_svd(req);
        case Method::LOFTQ: return recon_loftq(req);
        case Method::LQER: return recon_lqer(req);
        case Method::QERA_APPROX: return recon_qera_approx(req);
        case Method::QERA_EXACT: return recon_qera_exact(req);
    }
    throw std::invalid_argument("unknown method");
}

double sample_objective(const ReconstructedLayer& layer, const Matrix& w,
                        const Matrix& eval_inputs) {
    if (w.rows() != layer.wq.rows || w.cols() != layer.wq.cols)
        throw std::invalid_argument("sample_objective: weight shape mismatch");
    if (eval_inputs.cols() != w.rows())
        throw std::invalid_argument("sample_objective: eval input dim mismatch");
    if (eval_inputs.rows() == 0) return 0.0;
    Matrix p = layer.effective_weight() - w;
    return (eval_inputs * p).squaredNorm() / static_cast<double>(eval_inputs.rows());
}

double closed_form_objective(const ReconstructedLayer& layer, const Matrix& w,
                             const Matrix& rxx) {
    if (w.rows() != layer.wq.rows || w.cols() != layer.wq.cols)
        throw std::invalid_argument("closed_form_objective: weight shape mismatch");
    if (rxx.rows() != w.rows() || rxx.cols() != w.rows())
        throw std::invalid_argument("closed_form_objective: rxx must be m x m");
    Matrix p = layer.effective_weight() - w;
    return (spsd_sqrt(rxx) * p).squaredNorm();
}

}  // namespace qera

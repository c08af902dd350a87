#include "qera/selftest.hpp"

#include "qera/harness.hpp"
#include "qera/reconstruct.hpp"

#include <chrono>
#include <cmath>
#include <functional>
#include <random>
#include <sstream>

namespace qera {
namespace selftest {

namespace {

std::string fail_msg(const char* what, uint64_t seed, double got, double limit) {
    std::ostringstream msg;
    msg << what << " (seed " << seed << "): " << got << " exceeds " << limit;
    return msg.str();
}

double tail_energy(const Vector& sigma, Index k) {
    double tail = 0.0;
    for (Index i = k; i < sigma.size(); ++i) tail += sigma[i] * sigma[i];
    return tail;
}

}  // namespace

LayerInstance make_layer_instance(uint64_t seed) {
    GaussianStream gauss(seed);
    std::mt19937_64 rng(seed ^ 0xA5A5A5A5A5A5A5A5ull);
    const Index m = 8 + static_cast<Index>(rng() % 57);  // [8, 64]
    const Index n = 8 + static_cast<Index>(rng() % 57);
    const Index max_k = std::min<Index>(8, std::min(m, n));
    LayerInstance inst;
    inst.w = gauss.matrix(m, n) / std::sqrt(static_cast<double>(m));
    inst.spec = QuantSpec{QuantFormat::MXINT, 3, 32};
    inst.rank = 1 + static_cast<Index>(rng() % max_k);

    // Population autocorrelation shaped like measured transformer
    // activations: a dense bulk, a few dominant outlier directions two to
    // three orders of magnitude above it, and per-channel scale spread.
    Matrix g = gauss.matrix(m, m);
    Matrix base = g.transpose() * g / static_cast<double>(m);
    base.diagonal().array() += 0.1;
    std::mt19937_64 drng(seed * 31 + 7);
    std::uniform_real_distribution<double> spike_amp(100.0, 1000.0);
    const int n_spikes = 1 + static_cast<int>(drng() % 4);
    for (int s = 0; s < n_spikes; ++s) {
        Vector v(m);
        for (Index i = 0; i < m; ++i) v[i] = gauss.next();
        v.normalize();
        base += spike_amp(drng) * v * v.transpose();
    }
    std::uniform_real_distribution<double> channel_log(-1.0, 1.0);
    Vector d(m);
    for (Index i = 0; i < m; ++i) d[i] = std::exp(channel_log(drng));
    Matrix rxx = symmetrize(d.asDiagonal() * base * d.asDiagonal());
    inst.stats = stats_from_rxx(rxx, /*eps=*/0.0);
    return inst;
}

CheckResult check_svd_factorization() {
    GaussianStream gauss(101);
    const std::vector<std::pair<Index, Index>> shapes = {{5, 4}, {4, 5}, {16, 16}, {48, 9}};
    for (size_t i = 0; i < shapes.size(); ++i) {
        auto [m, n] = shapes[i];
        Matrix a = gauss.matrix(m, n);
        SvdResult s = svd(a);
        const Index r = std::min(m, n);
        const double ortho_u = (s.u.transpose() * s.u - Matrix::Identity(r, r)).norm();
        const double ortho_v = (s.vt * s.vt.transpose() - Matrix::Identity(r, r)).norm();
        const double recon = (s.u * s.sigma.asDiagonal() * s.vt - a).norm() /
                             std::max(a.norm(), 1.0);
        for (Index j = 0; j + 1 < s.sigma.size(); ++j)
            if (s.sigma[j] < s.sigma[j + 1])
                return {false, "svd: singular values not sorted"};
        if (ortho_u > 1e-8 || ortho_v > 1e-8)
            return {false, fail_msg("svd orthonormality", i, std::max(ortho_u, ortho_v), 1e-8)};
        if (recon > 1e-8) return {false, fail_msg("svd reconstruction", i, recon, 1e-8)};
    }
    return {true, "4 shapes, orthonormality and reconstruction within 1e-8"};
}

CheckResult check_eckart_young() {
    for (uint64_t seed = 0; seed < 3; ++seed) {
        GaussianStream gauss(9000 + seed);
        std::mt19937_64 rng(seed);
        const Index m = 8 + static_cast<Index>(rng() % 25);
        const Index n = 8 + static_cast<Index>(rng() % 25);
        const Index k = 1 + static_cast<Index>(rng() % 6);
        Matrix a = gauss.matrix(m, n);
        SvdResult s = svd(a);
        TruncatedSvd t = truncate(s, k);
        const double best = (a - t.compose()).squaredNorm();

        const double tail = tail_energy(s.sigma, k);
        if (std::abs(best - tail) > 1e-9 * std::max(1.0, tail))
            return {false, fail_msg("truncation residual vs sigma tail", seed,
                                    std::abs(best - tail), 1e-9)};

        for (int c = 0; c < 1000; ++c) {
            Matrix comp = gauss.matrix(m, k) * gauss.matrix(k, n);
            // Optimal scaling keeps the competitor rank-k but as strong
            // as possible along its own direction.
            const double inner = (a.array() * comp.array()).sum();
            const double denom = comp.squaredNorm();
            const double residual =
                (denom > 0.0) ? a.squaredNorm() - inner * inner / denom : a.squaredNorm();
            if (residual < best - 1e-9 * std::max(1.0, best))
                return {false, fail_msg("random competitor beat truncated svd", seed,
                                        best - residual, 0.0)};
        }
    }
    return {true, "3 instances x 1000 rank-k competitors, truncation optimal"};
}

CheckResult check_sqrt_roundtrip(bool corrupt) {
    for (Index dim : {2, 16, 64, 256}) {
        GaussianStream gauss(777 + static_cast<uint64_t>(dim));
        Matrix g = gauss.matrix(dim, dim) / std::sqrt(static_cast<double>(dim));
        Matrix spd = symmetrize(g.transpose() * g);
        spd.diagonal().array() += 0.01;
        Matrix root = spsd_sqrt(spd);
        if (corrupt) root(0, 0) += 1e-3;
        const double rel = (root * root - spd).norm() / std::max(spd.norm(), 1.0);
        if (rel > 1e-10)
            return {false, fail_msg("spsd_sqrt round-trip", static_cast<uint64_t>(dim), rel,
                                    1e-10)};
        const double asym = (root - root.transpose()).cwiseAbs().maxCoeff();
        if (asym > 1e-12)
            return {false, fail_msg("spsd_sqrt symmetry", static_cast<uint64_t>(dim), asym,
                                    1e-12)};
        Matrix prod = spsd_inv_sqrt(spd, 0.0) * root;
        const double inv_err = (prod - Matrix::Identity(dim, dim)).norm();
        if (inv_err > 1e-8)
            return {false, fail_msg("spsd_inv_sqrt identity", static_cast<uint64_t>(dim),
                                    inv_err, 1e-8)};
    }
    return {true, "SPD round-trip < 1e-10 relative up to 256x256"};
}

CheckResult check_quantizer_idempotence() {
    // Average-bits values are format constants and must be exact.
    if (QuantSpec{QuantFormat::MXINT, 4, 32}.average_bits() != 4.25 ||
        QuantSpec{QuantFormat::MXINT, 3, 32}.average_bits() != 3.25 ||
        QuantSpec{QuantFormat::MXINT, 2, 16}.average_bits() != 2.5)
        return {false, "average_bits mismatch for MXINT(4,32)/(3,32)/(2,16)"};

    std::mt19937_64 rng(4242);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    std::uniform_int_distribution<int> mag(-40, 40);
    const int kBlocks = 100000;
    const int width = 16;
    for (int i = 0; i < kBlocks; ++i) {
        QuantSpec spec;
        if (i % 2 == 0)
            spec = {QuantFormat::MXINT, 2 + static_cast<int>(rng() % 7), 16};
        else
            spec = {QuantFormat::AFFINE_INT, 2 + static_cast<int>(rng() % 8), 16};
        Matrix block(1, width);
        const double scale = std::ldexp(1.0, mag(rng));
        for (int j = 0; j < width; ++j)
            block(0, j) = (rng() % 8 == 0) ? 0.0 : unit(rng) * scale;

        QuantizedTensor q1 = quantize(block, spec);
        Matrix deq = dequantize(q1);
        QuantizedTensor q2 = quantize(deq, spec);
        if (!(q1 == q2)) {
            std::ostringstream msg;
            msg << "idempotence violated at block " << i << " (" << to_string(spec.format)
                << " bits=" << spec.bits << ")";
            return {false, msg.str()};
        }
    }
    return {true, "q(dq(q)) bit-exact over 100000 fuzzed blocks; average bits exact"};
}

CheckResult check_exact_method_dominance() {
    const int kInstances = 100;
    for (uint64_t seed = 0; seed < kInstances; ++seed) {
        LayerInstance inst = make_layer_instance(seed);
        ReconRequest req;
        req.w = inst.w;
        req.spec = inst.spec;
        req.rank = inst.rank;
        req.stats = &inst.stats;

        const ReconstructedLayer exact = recon_qera_exact(req);
        const double obj_exact = closed_form_objective(exact, inst.w, inst.stats.rxx);
        const double floor = 1e-18 * (inst.stats.rxx_sqrt * inst.w).squaredNorm();

        std::vector<ReconstructedLayer> rivals;
        rivals.push_back(recon_weight_svd(req));
        for (int t = 1; t <= 5; ++t) {
            req.iterations = t;
            rivals.push_back(recon_loftq(req));
        }
        req.iterations = 1;
        rivals.push_back(recon_lqer(req));
        rivals.push_back(recon_qera_approx(req));

        for (const ReconstructedLayer& rival : rivals) {
            const double obj = closed_form_objective(rival, inst.w, inst.stats.rxx);
            const double slack = 1e-9 * std::max(obj, obj_exact) + floor;
            if (obj_exact > obj + slack) {
                std::ostringstream msg;
                msg << "dominance violated (seed " << seed << "): qera-exact " << obj_exact
                    << " > " << to_string(rival.method) << " " << obj;
                return {false, msg.str()};
            }
        }
    }
    return {true, "qera-exact dominates 8 rivals on 100 seeded instances"};
}

CheckResult check_tail_energy_identity() {
    const int kInstances = 100;
    for (uint64_t seed = 0; seed < kInstances; ++seed) {
        LayerInstance inst = make_layer_instance(seed);
        ReconRequest req;
        req.w = inst.w;
        req.spec = inst.spec;
        req.rank = inst.rank;
        req.stats = &inst.stats;

        const ReconstructedLayer layer = recon_qera_exact(req);
        const double obj = closed_form_objective(layer, inst.w, inst.stats.rxx);

        Matrix scaled_error = inst.stats.rxx_sqrt * quant_error(inst.w, inst.spec);
        const double tail = tail_energy(svd(scaled_error).sigma, inst.rank);
        // Absolute floor covers the exact-full-rank corner where both
        // sides vanish.
        const double tol =
            1e-9 * std::max(obj, tail) + 1e-18 * scaled_error.squaredNorm();
        if (std::abs(obj - tail) > tol)
            return {false, fail_msg("tail-energy identity", seed, std::abs(obj - tail), tol)};
    }
    return {true, "objective equals sigma-tail energy on 100 instances"};
}

CheckResult check_objective_equivalence() {
    const int kInstances = 50;
    for (uint64_t seed = 0; seed < kInstances; ++seed) {
        LayerInstance inst = make_layer_instance(1000 + seed);
        ReconRequest req;
        req.w = inst.w;
        req.spec = inst.spec;
        req.rank = inst.rank;
        req.stats = &inst.stats;
        const ReconstructedLayer layer =
            (seed % 2 == 0) ? recon_qera_exact(req) : recon_weight_svd(req);

        GaussianStream gauss(555000 + seed);
        const Index n_eval = 96;
        Matrix x = gauss.matrix(n_eval, inst.w.rows());
        const double sample = sample_objective(layer, inst.w, x);
        Matrix empirical_rxx =
            symmetrize(x.transpose() * x) / static_cast<double>(n_eval);
        const double closed = closed_form_objective(layer, inst.w, empirical_rxx);
        const double rel = std::abs(sample - closed) / std::max({sample, closed, 1e-30});
        if (rel > 1e-9)
            return {false, fail_msg("sample vs closed-form objective", seed, rel, 1e-9)};
    }
    return {true, "sample mean equals closed form under empirical rxx on 50 instances"};
}

CheckResult check_reduction_chain() {
    for (uint64_t seed = 0; seed < 10; ++seed) {
        LayerInstance inst = make_layer_instance(2000 + seed);
        const Index m = inst.w.rows();
        ReconRequest req;
        req.w = inst.w;
        req.spec = inst.spec;
        req.rank = inst.rank;

        // rxx = I: qera-exact collapses to weight-svd.
        CalibStats identity_stats = stats_from_rxx(Matrix::Identity(m, m), 0.0);
        req.stats = &identity_stats;
        Matrix c_exact = recon_qera_exact(req).c_k();
        Matrix c_svd = recon_weight_svd(req).c_k();
        double diff = (c_exact - c_svd).norm() / std::max(1.0, c_svd.norm());
        if (diff > 1e-9)
            return {false, fail_msg("identity-rxx reduction", seed, diff, 1e-9)};

        // Diagonal rxx: qera-exact collapses to qera-approx.
        GaussianStream gauss(3000 + seed);
        Vector d(m);
        for (Index i = 0; i < m; ++i) d[i] = std::exp(0.7 * gauss.next());
        CalibStats diag_stats = stats_from_rxx(Matrix(d.asDiagonal()), 0.0);
        req.stats = &diag_stats;
        Matrix c_exact_diag = recon_qera_exact(req).c_k();
        Matrix c_approx = recon_qera_approx(req).c_k();
        diff = (c_exact_diag - c_approx).norm() / std::max(1.0, c_approx.norm());
        if (diff > 1e-8)
            return {false, fail_msg("diagonal-rxx reduction", seed, diff, 1e-8)};

        // Constant s_diag: qera-approx collapses to weight-svd.
        CalibStats iso_stats = stats_from_rxx(Matrix(1.7 * 1.7 * Matrix::Identity(m, m)), 0.0);
        req.stats = &iso_stats;
        Matrix c_approx_iso = recon_qera_approx(req).c_k();
        diff = (c_approx_iso - c_svd).norm() / std::max(1.0, c_svd.norm());
        if (diff > 1e-10)
            return {false, fail_msg("constant-scale reduction", seed, diff, 1e-10)};
    }
    return {true, "identity/diagonal/constant-scale reductions hold on 10 instances"};
}

bool Summary::all_passed() const {
    for (const Family& f : families)
        if (!f.result.passed) return false;
    return true;
}

Summary run_selftest(const std::string& corrupt_family) {
    using Clock = std::chrono::steady_clock;
    Summary summary;
    const bool corrupt_sqrt = corrupt_family == "spsd_sqrt";
    const std::vector<std::pair<std::string, std::function<CheckResult()>>> families = {
        {"svd factorization", check_svd_factorization},
        {"eckart-young optimality", check_eckart_young},
        {"spsd_sqrt round-trip", [corrupt_sqrt] { return check_sqrt_roundtrip(corrupt_sqrt); }},
        {"quantizer idempotence", check_quantizer_idempotence},
        {"qera-exact dominance", check_exact_method_dominance},
        {"tail-energy identity", check_tail_energy_identity},
        {"objective equivalence", check_objective_equivalence},
        {"reduction chain", check_reduction_chain},
    };
    const auto start = Clock::now();
    for (const auto& [name, fn] : families) {
        const auto t0 = Clock::now();
        Summary::Family entry;
        entry.name = name;
        try {
            entry.result = fn();
        } catch (const std::exception& e) {
            entry.result = {false, std::string("exception: ") + e.what()};
        }
        entry.seconds = std::chrono::duration<double>(Clock::now() - t0).count();
        summary.families.push_back(std::move(entry));
    }
    summary.total_seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return summary;
}

}  // namespace selftest
}  // namespace qera

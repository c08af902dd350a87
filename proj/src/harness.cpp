#include "qera/harness.hpp"

#include <json.hpp>

#include <atomic>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <mutex>
#include <numbers>
#include <sstream>
#include <thread>

namespace qera {

std::string to_string(Nonlinearity n) {
    switch (n) {
        case Nonlinearity::RELU: return "relu";
        case Nonlinearity::TANH: return "tanh";
        case Nonlinearity::NONE: return "none";
    }
    return "?";
}

Nonlinearity nonlinearity_from_string(const std::string& s) {
    if (s == "relu") return Nonlinearity::RELU;
    if (s == "tanh") return Nonlinearity::TANH;
    if (s == "none") return Nonlinearity::NONE;
    throw std::invalid_argument("unknown nonlinearity: " + s);
}

std::string to_string(SweepAxis a) {
    switch (a) {
        case SweepAxis::RANK: return "rank";
        case SweepAxis::LOFTQ_ITERS: return "loftq-iters";
        case SweepAxis::CALIB_SIZE: return "calib-size";
    }
    return "?";
}

SweepAxis sweep_axis_from_string(const std::string& s) {
    if (s == "rank") return SweepAxis::RANK;
    if (s == "loftq-iters") return SweepAxis::LOFTQ_ITERS;
    if (s == "calib-size") return SweepAxis::CALIB_SIZE;
    throw std::invalid_argument("unknown sweep axis: " + s);
}

double GaussianStream::next() {
    if (has_spare_) {
        has_spare_ = false;
        return spare_;
    }
    // Box-Muller over uniforms built directly from generator bits, so
    // streams are identical across standard libraries. Rejection keeps
    // u1 strictly positive.
    auto uniform = [this] { return static_cast<double>(rng_() >> 11) * 0x1.0p-53; };
    double u1 = 0.0;
    do {
        u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
}

Matrix GaussianStream::matrix(Index rows, Index cols) {
    Matrix m(rows, cols);
    for (Index i = 0; i < rows; ++i)
        for (Index j = 0; j < cols; ++j) m(i, j) = next();
    return m;
}

namespace {

Matrix apply_nonlinearity(const Matrix& x, Nonlinearity nl) {
    switch (nl) {
        case Nonlinearity::RELU: return x.cwiseMax(0.0);
        case Nonlinearity::TANH: return x.array().tanh().matrix();
        case Nonlinearity::NONE: return x;
    }
    return x;
}

uint64_t mix_seed(uint64_t seed, uint64_t stream) {
    // splitmix64 over seed+stream so distinct streams decorrelate.
    uint64_t z = seed + (stream + 1) * 0x9E3779B97F4A7C15ull;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

}  // namespace

SyntheticModel build_model(const ModelConfig& cfg) {
    if (cfg.dims.size() < 2)
        throw std::invalid_argument("build_model: need at least [input_dim, output_dim]");
    for (Index d : cfg.dims)
        if (d < 1) throw std::invalid_argument("build_model: dims must be >= 1");

    SyntheticModel model;
    model.input_dim = cfg.dims.front();
    model.output_dim = cfg.dims.back();
    model.seed = cfg.seed;
    GaussianStream gauss(cfg.seed);
    const size_t depth = cfg.dims.size() - 1;
    for (size_t l = 0; l < depth; ++l) {
        SyntheticModel::Layer layer;
        const double scale = 1.0 / std::sqrt(static_cast<double>(cfg.dims[l]));
        layer.weight = gauss.matrix(cfg.dims[l], cfg.dims[l + 1]) * scale;
        layer.nonlinearity = (l + 1 < depth) ? cfg.nonlinearity : Nonlinearity::NONE;
        model.layers.push_back(std::move(layer));
    }
    return model;
}

Matrix SyntheticModel::forward(const Matrix& x) const {
    Matrix h = x;
    for (const Layer& layer : layers)
        h = apply_nonlinearity(Matrix(h * layer.weight), layer.nonlinearity);
    return h;
}

std::vector<Matrix> SyntheticModel::forward_trace(const Matrix& x) const {
    std::vector<Matrix> trace;
    trace.reserve(layers.size() + 1);
    trace.push_back(x);
    for (const Layer& layer : layers)
        trace.push_back(apply_nonlinearity(Matrix(trace.back() * layer.weight),
                                           layer.nonlinearity));
    return trace;
}

InputDistribution::Sampler InputDistribution::sampler(uint64_t stream) const {
    Sampler s(this, mix_seed(seed, stream));
    if (kind == Kind::CORRELATED_GAUSSIAN) {
        if (cov.rows() != dim || cov.cols() != dim)
            throw std::invalid_argument("correlated input: cov must be dim x dim");
        Eigen::LLT<Eigen::MatrixXd> llt(symmetrize(regularize_spd(cov, 1e-12)));
        if (llt.info() != Eigen::Success)
            throw NumericalError("correlated input: covariance is not PSD");
        s.chol_t_ = llt.matrixL().transpose();
    } else if (kind == Kind::LOADED) {
        if (samples.cols() != dim || samples.rows() == 0)
            throw std::invalid_argument("loaded input: need non-empty samples with matching dim");
        s.cursor_ = static_cast<Index>((stream * 7919) % static_cast<uint64_t>(samples.rows()));
    }
    return s;
}

Matrix InputDistribution::Sampler::next(Index n) {
    switch (dist_->kind) {
        case Kind::IID_GAUSSIAN:
            return gauss_.matrix(n, dist_->dim);
        case Kind::CORRELATED_GAUSSIAN:
            return gauss_.matrix(n, dist_->dim) * chol_t_;
        case Kind::LOADED: {
            Matrix out(n, dist_->dim);
            const Index rows = dist_->samples.rows();
            for (Index i = 0; i < n; ++i) {
                out.row(i) = dist_->samples.row(cursor_);
                cursor_ = (cursor_ + 1) % rows;
            }
            return out;
        }
    }
    throw std::invalid_argument("unknown input distribution kind");
}

std::vector<CalibStats> calibrate_model(const SyntheticModel& model,
                                        const InputDistribution& dist, Index n_samples,
                                        double eps, double s_floor) {
    if (n_samples < 1) throw std::invalid_argument("calibrate_model: n_samples must be >= 1");
    if (dist.dim != model.input_dim)
        throw std::invalid_argument("calibrate_model: input dim mismatch");

    std::vector<CalibAccumulator> accs;
    for (const auto& layer : model.layers)
        accs.emplace_back(layer.weight.rows());

    auto sampler = dist.sampler(kCalibStream);
    constexpr Index kBatch = 256;
    Index remaining = n_samples;
    while (remaining > 0) {
        const Index n = std::min(kBatch, remaining);
        std::vector<Matrix> trace = model.forward_trace(sampler.next(n));
        for (size_t l = 0; l < model.layers.size(); ++l)
            accum_update(accs[l], trace[l]);
        remaining -= n;
    }

    std::vector<CalibStats> stats;
    stats.reserve(accs.size());
    for (const auto& acc : accs) stats.push_back(finalize(acc, eps, s_floor));
    return stats;
}

QuantizedModel quantize_model(const SyntheticModel& model, Method method,
                              const QuantSpec& spec, Index rank,
                              const std::vector<CalibStats>& stats, int iterations) {
    if (method_needs_stats(method) && stats.size() != model.layers.size())
        throw std::invalid_argument("quantize_model: " + to_string(method) +
                                    " needs per-layer stats");
    QuantizedModel q;
    q.input_dim = model.input_dim;
    q.output_dim = model.output_dim;
    for (size_t l = 0; l < model.layers.size(); ++l) {
        ReconRequest req;
        req.w = model.layers[l].weight;
        req.spec = spec;
        req.rank = rank;
        req.iterations = iterations;
        req.stats = (l < stats.size()) ? &stats[l] : nullptr;
        q.layers.push_back(reconstruct(req, method));
        q.nonlinearities.push_back(model.layers[l].nonlinearity);
    }
    return q;
}

Matrix QuantizedModel::forward(const Matrix& x) const {
    Matrix h = x;
    for (size_t l = 0; l < layers.size(); ++l)
        h = apply_nonlinearity(Matrix(h * layers[l].effective_weight()), nonlinearities[l]);
    return h;
}

double model_output_error(const SyntheticModel& fp_model, const QuantizedModel& q_model,
                          const Matrix& eval_inputs) {
    if (fp_model.layers.size() != q_model.layers.size() ||
        fp_model.input_dim != q_model.input_dim || fp_model.output_dim != q_model.output_dim)
        throw std::invalid_argument("model_output_error: architecture mismatch");
    if (eval_inputs.cols() != fp_model.input_dim)
        throw std::invalid_argument("model_output_error: eval input dim mismatch");
    if (eval_inputs.rows() == 0) return 0.0;
    Matrix diff = q_model.forward(eval_inputs) - fp_model.forward(eval_inputs);
    return diff.squaredNorm() / static_cast<double>(eval_inputs.rows());
}

namespace {

void parallel_for(size_t n, int threads, const std::function<void(size_t)>& fn) {
    size_t hw = std::thread::hardware_concurrency();
    if (hw == 0) hw = 1;
    size_t t = (threads > 0) ? static_cast<size_t>(threads) : hw;
    t = std::min(t, n);
    if (t <= 1) {
        for (size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<size_t> next{0};
    std::mutex err_mutex;
    std::exception_ptr first_error;
    auto worker = [&] {
        while (true) {
            const size_t i = next.fetch_add(1);
            if (i >= n) return;
            {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (first_error) return;
            }
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(err_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    for (size_t i = 0; i < t; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
    if (first_error) std::rethrow_exception(first_error);
}

std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace

std::string SweepReport::to_csv() const {
    std::ostringstream out;
    out << "axis,setting,method,layer_objective_total,weight_error_total,model_output_error\n";
    for (const SweepCell& c : cells) {
        out << to_string(axis) << ',' << format_double(c.setting) << ',' << to_string(c.method)
            << ',' << format_double(c.layer_objective_total) << ','
            << format_double(c.weight_error_total) << ','
            << format_double(c.model_output_error) << '\n';
    }
    return out.str();
}

std::string SweepReport::to_json() const {
    nlohmann::json root;
    root["axis"] = to_string(axis);
    if (!config_echo.empty())
        root["config"] = nlohmann::json::parse(config_echo);
    // Cells grouped by axis setting, one method entry per cell.
    nlohmann::json points = nlohmann::json::array();
    for (const SweepCell& c : cells) {
        if (points.empty() || points.back()["setting"] != c.setting)
            points.push_back({{"setting", c.setting}, {"methods", nlohmann::json::array()}});
        nlohmann::json cell;
        cell["method"] = to_string(c.method);
        cell["layer_objective"] = c.layer_objective;
        cell["weight_error"] = c.weight_error;
        cell["layer_objective_total"] = c.layer_objective_total;
        cell["weight_error_total"] = c.weight_error_total;
        cell["model_output_error"] = c.model_output_error;
        points.back()["methods"].push_back(std::move(cell));
    }
    root["points"] = std::move(points);
    return root.dump(2) + "\n";
}

SweepReport run_sweep(const SweepConfig& cfg) {
    cfg.spec.validate();
    const SyntheticModel model = build_model(cfg.model);

    auto eval_sampler = cfg.input.sampler(kEvalStream);
    const Matrix eval_inputs = eval_sampler.next(cfg.eval_samples);

    // Per-setting calibration stats. The CALIB_SIZE axis extends one
    // accumulator stream and snapshots it at each size; the other axes
    // share a single calibration.
    std::vector<double> settings;
    std::vector<std::shared_ptr<const std::vector<CalibStats>>> stats_by_setting;
    switch (cfg.axis) {
        case SweepAxis::RANK:
            for (Index k : cfg.ranks) settings.push_back(static_cast<double>(k));
            break;
        case SweepAxis::LOFTQ_ITERS:
            for (int t : cfg.loftq_iters) settings.push_back(static_cast<double>(t));
            break;
        case SweepAxis::CALIB_SIZE:
            for (Index n : cfg.calib_sizes) settings.push_back(static_cast<double>(n));
            break;
    }
    if (settings.empty()) throw std::invalid_argument("run_sweep: empty axis settings");

    if (cfg.axis == SweepAxis::CALIB_SIZE) {
        std::vector<CalibAccumulator> accs;
        for (const auto& layer : model.layers) accs.emplace_back(layer.weight.rows());
        auto sampler = cfg.input.sampler(kCalibStream);
        Index consumed = 0;
        for (Index target : cfg.calib_sizes) {
            if (target < consumed)
                throw std::invalid_argument("run_sweep: calib_sizes must be non-decreasing");
            while (consumed < target) {
                const Index n = std::min<Index>(256, target - consumed);
                std::vector<Matrix> trace = model.forward_trace(sampler.next(n));
                for (size_t l = 0; l < model.layers.size(); ++l)
                    accum_update(accs[l], trace[l]);
                consumed += n;
            }
            auto snapshot = std::make_shared<std::vector<CalibStats>>();
            for (const auto& acc : accs)
                snapshot->push_back(finalize(acc, cfg.eps, cfg.s_floor));
            stats_by_setting.push_back(std::move(snapshot));
        }
    } else {
        auto shared = std::make_shared<std::vector<CalibStats>>(
            calibrate_model(model, cfg.input, cfg.calib_samples, cfg.eps, cfg.s_floor));
        stats_by_setting.assign(settings.size(), shared);
    }

    SweepReport report;
    report.axis = cfg.axis;
    report.cells.resize(settings.size() * cfg.methods.size());

    parallel_for(report.cells.size(), cfg.threads, [&](size_t idx) {
        const size_t si = idx / cfg.methods.size();
        const size_t mi = idx % cfg.methods.size();
        const Method method = cfg.methods[mi];
        const double setting = settings[si];
        try {
            Index rank = cfg.default_rank;
            int iters = cfg.default_iters;
            if (cfg.axis == SweepAxis::RANK) rank = static_cast<Index>(setting);
            if (cfg.axis == SweepAxis::LOFTQ_ITERS) iters = static_cast<int>(setting);

            const std::vector<CalibStats>& stats = *stats_by_setting[si];
            QuantizedModel q = quantize_model(model, method, cfg.spec, rank, stats, iters);

            SweepCell cell;
            cell.setting = setting;
            cell.method = method;
            for (size_t l = 0; l < q.layers.size(); ++l) {
                const Matrix& w = model.layers[l].weight;
                cell.layer_objective.push_back(
                    closed_form_objective(q.layers[l], w, stats[l].rxx));
                cell.weight_error.push_back(q.layers[l].meta.weight_error_per_iter.back());
                cell.layer_objective_total += cell.layer_objective.back();
                cell.weight_error_total += cell.weight_error.back();
            }
            cell.model_output_error = model_output_error(model, q, eval_inputs);
            for (size_t l = 0; l < cell.layer_objective.size(); ++l)
                if (!std::isfinite(cell.layer_objective[l]) ||
                    !std::isfinite(cell.weight_error[l]))
                    throw NumericalError("non-finite layer metric");
            if (!std::isfinite(cell.model_output_error))
                throw NumericalError("non-finite model output error");
            report.cells[idx] = std::move(cell);
        } catch (const std::exception& e) {
            std::ostringstream msg;
            msg << "sweep cell failed (axis=" << to_string(cfg.axis) << ", setting=" << setting
                << ", method=" << to_string(method) << "): " << e.what();
            throw NumericalError(msg.str());
        }
    });

    return report;
}

}  // namespace qera

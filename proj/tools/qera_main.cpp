#include "qera/container.hpp"
#include "qera/harness.hpp"
#include "qera/run_config.hpp"
#include "qera/selftest.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <string>

namespace {

using namespace qera;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitNumerical = 2;
constexpr int kExitIo = 3;

struct Flags {
    std::string config_path;
    std::string method;
    Index rank = -1;
    int iterations = -1;
    int bits = -1;
    int block_size = -1;
    std::string format;
    double eps = -1.0;
    int64_t seed = -1;
    std::string out;
    std::string fp_file;
    std::string quantized_file;
};

void register_common(CLI::App* cmd, Flags& f) {
    cmd->add_option("--config", f.config_path, "JSON run configuration");
    cmd->add_option("--eps", f.eps, "regularization for rxx square roots");
    cmd->add_option("--seed", f.seed, "overrides model and input seeds");
    cmd->add_option("--out", f.out, "primary output path");
}

void register_quant_flags(CLI::App* cmd, Flags& f) {
    cmd->add_option("--method", f.method,
                    "weight-svd | loftq | lqer | qera-approx | qera-exact");
    cmd->add_option("--rank", f.rank, "low-rank correction rank k");
    cmd->add_option("--iterations", f.iterations, "loftq iterations T");
    cmd->add_option("--bits", f.bits, "quantizer bit width");
    cmd->add_option("--block-size", f.block_size, "elements per scale block");
    cmd->add_option("--format", f.format, "mxint | affine-int");
}

RunConfig load_config(const Flags& f) {
    RunConfig cfg = f.config_path.empty() ? RunConfig{} : RunConfig::load(f.config_path);
    // Flags win over config values.
    if (!f.method.empty()) cfg.method = method_from_string(f.method);
    if (f.rank >= 0) cfg.rank = f.rank;
    if (f.iterations >= 0) cfg.iterations = f.iterations;
    if (f.eps >= 0.0) cfg.eps = f.eps;
    if (f.bits >= 0 || f.block_size >= 0 || !f.format.empty()) {
        QuantSpec spec = cfg.quant.value_or(QuantSpec{});
        if (!f.format.empty()) spec.format = quant_format_from_string(f.format);
        if (f.bits >= 0) spec.bits = f.bits;
        if (f.block_size >= 0) spec.block_size = f.block_size;
        spec.validate();
        cfg.quant = spec;
    }
    if (f.seed >= 0) {
        cfg.seed = static_cast<uint64_t>(f.seed);
        if (cfg.model && cfg.model->synthetic)
            cfg.model->synthetic->seed = static_cast<uint64_t>(f.seed);
        if (cfg.input) cfg.input->seed = static_cast<uint64_t>(f.seed);
    }
    if (!f.fp_file.empty()) {
        if (!cfg.model) cfg.model.emplace();
        cfg.model->weights_file = f.fp_file;
        cfg.model->synthetic.reset();
    }
    if (!f.quantized_file.empty()) cfg.quantized_file = f.quantized_file;
    return cfg;
}

SyntheticModel model_from_config(const RunConfig& cfg) {
    if (!cfg.model)
        throw std::invalid_argument("config: 'model' section required for this command");
    if (cfg.model->weights_file) return read_model_file(*cfg.model->weights_file);
    return build_model(*cfg.model->synthetic);
}

InputDistribution input_from_config(const RunConfig& cfg) {
    if (!cfg.input)
        throw std::invalid_argument("config: 'input' section required for this command");
    InputDistribution dist;
    dist.seed = cfg.input->seed;
    switch (cfg.input->kind) {
        case InputDistribution::Kind::IID_GAUSSIAN:
            dist.kind = InputDistribution::Kind::IID_GAUSSIAN;
            dist.dim = cfg.input->dim;
            break;
        case InputDistribution::Kind::CORRELATED_GAUSSIAN: {
            dist.kind = InputDistribution::Kind::CORRELATED_GAUSSIAN;
            TensorContainer c = TensorContainer::read(*cfg.input->cov_file);
            dist.cov = c.matrix("cov");
            dist.dim = (cfg.input->dim > 0) ? cfg.input->dim : dist.cov.rows();
            break;
        }
        case InputDistribution::Kind::LOADED: {
            dist.kind = InputDistribution::Kind::LOADED;
            TensorContainer c = TensorContainer::read(*cfg.input->file);
            dist.samples = c.matrix("samples");
            dist.dim = (cfg.input->dim > 0) ? cfg.input->dim : dist.samples.cols();
            break;
        }
    }
    if (dist.dim <= 0) throw std::invalid_argument("config: input dim must be positive");
    return dist;
}

int read_threads_env() {
    const char* env = std::getenv("QERA_THREADS");
    if (!env) return 0;
    const int t = std::atoi(env);
    return (t > 0) ? t : 1;
}

int cmd_calibrate(const Flags& flags) {
    RunConfig cfg = load_config(flags);
    std::string out_path = flags.out.empty() ? cfg.out.stats.value_or("") : flags.out;
    if (out_path.empty())
        throw std::invalid_argument("calibrate: output path required (--out or out.stats)");

    const SyntheticModel model = model_from_config(cfg);
    const InputDistribution dist = input_from_config(cfg);
    std::vector<CalibStats> stats =
        calibrate_model(model, dist, cfg.calib_samples, cfg.eps, cfg.s_floor);

    nlohmann::json meta;
    meta["config_echo"] = cfg.to_json();
    write_stats_file(out_path, stats, meta);
    if (cfg.out.model) write_model_file(*cfg.out.model, model);

    std::printf("calibrated %lld samples over %zu layers -> %s\n",
                static_cast<long long>(cfg.calib_samples), stats.size(), out_path.c_str());
    for (size_t l = 0; l < stats.size(); ++l) {
        const AutocorrDiagnostic d = autocorr_diagnostic(stats[l]);
        std::printf("layer.%zu: count=%lld offdiag_ratio=%.6f\n", l,
                    static_cast<long long>(stats[l].count), d.offdiag_ratio);
    }
    return kExitOk;
}

int cmd_quantize(const Flags& flags) {
    RunConfig cfg = load_config(flags);
    std::string out_path = flags.out.empty() ? cfg.out.quantized.value_or("") : flags.out;
    if (out_path.empty())
        throw std::invalid_argument("quantize: output path required (--out or out.quantized)");
    if (!cfg.quant) throw std::invalid_argument("quantize: 'quant' section required");
    if (!cfg.method) throw std::invalid_argument("quantize: method required");
    if (!cfg.rank) throw std::invalid_argument("quantize: rank required");
    // Method/stats mismatch is a configuration error before any work.
    if (method_needs_stats(*cfg.method) && !cfg.stats_file)
        throw std::invalid_argument("quantize: method " + to_string(*cfg.method) +
                                    " requires stats_file");

    const SyntheticModel model = model_from_config(cfg);
    std::vector<CalibStats> stats;
    if (cfg.stats_file) stats = read_stats_file(*cfg.stats_file);

    QuantizedModel q = quantize_model(model, *cfg.method, *cfg.quant, *cfg.rank, stats,
                                      cfg.iterations.value_or(1));

    nlohmann::json meta;
    meta["config_echo"] = cfg.to_json();
    meta["average_bits"] = cfg.quant->average_bits();
    write_quantized_model_file(out_path, q, meta);

    std::printf("quantized %zu layers with %s rank=%lld -> %s\n", q.layers.size(),
                to_string(*cfg.method).c_str(), static_cast<long long>(*cfg.rank),
                out_path.c_str());
    std::printf("average bits: %.6g\n", cfg.quant->average_bits());
    if (stats.size() == q.layers.size()) {
        for (size_t l = 0; l < q.layers.size(); ++l) {
            const double obj =
                closed_form_objective(q.layers[l], model.layers[l].weight, stats[l].rxx);
            std::printf("layer.%zu: closed_form_objective=%.12g\n", l, obj);
        }
    }
    return kExitOk;
}

int cmd_eval(const Flags& flags) {
    RunConfig cfg = load_config(flags);
    if (!cfg.quantized_file)
        throw std::invalid_argument("eval: quantized_file required (config or positional)");

    const SyntheticModel fp = model_from_config(cfg);
    const QuantizedModel q = read_quantized_model_file(*cfg.quantized_file);
    if (q.layers.size() != fp.layers.size() || q.input_dim != fp.input_dim ||
        q.output_dim != fp.output_dim)
        throw std::invalid_argument("eval: architecture mismatch between fp and quantized");

    const InputDistribution dist = input_from_config(cfg);
    auto sampler = dist.sampler(kEvalStream);
    const Matrix eval_inputs = sampler.next(cfg.eval_samples);
    const std::vector<Matrix> trace = fp.forward_trace(eval_inputs);

    nlohmann::json metrics;
    nlohmann::json per_layer = nlohmann::json::array();
    for (size_t l = 0; l < q.layers.size(); ++l)
        per_layer.push_back(sample_objective(q.layers[l], fp.layers[l].weight, trace[l]));
    metrics["per_layer_objective"] = std::move(per_layer);
    metrics["model_output_error"] = model_output_error(fp, q, eval_inputs);
    metrics["config_echo"] = cfg.to_json();
    std::cout << metrics.dump(2) << "\n";
    return kExitOk;
}

int cmd_sweep(const Flags& flags) {
    RunConfig cfg = load_config(flags);
    if (!cfg.sweep) throw std::invalid_argument("sweep: 'sweep' section required");
    if (!cfg.quant) throw std::invalid_argument("sweep: 'quant' section required");
    if (!cfg.model || !cfg.model->synthetic)
        throw std::invalid_argument("sweep: synthetic model spec required");

    std::string csv_path = cfg.out.report_csv.value_or("");
    std::string json_path = cfg.out.report_json.value_or("");
    if (!flags.out.empty()) {
        csv_path = flags.out + ".csv";
        json_path = flags.out + ".json";
    }
    if (csv_path.empty() && json_path.empty())
        throw std::invalid_argument(
            "sweep: output required (--out or out.report_csv/report_json)");

    SweepConfig sweep;
    sweep.model = *cfg.model->synthetic;
    sweep.input = input_from_config(cfg);
    sweep.spec = *cfg.quant;
    sweep.axis = cfg.sweep->axis;
    if (cfg.sweep->methods) sweep.methods = *cfg.sweep->methods;
    if (cfg.sweep->ranks) sweep.ranks = *cfg.sweep->ranks;
    if (cfg.sweep->loftq_iters) sweep.loftq_iters = *cfg.sweep->loftq_iters;
    if (cfg.sweep->calib_sizes) sweep.calib_sizes = *cfg.sweep->calib_sizes;
    if (cfg.sweep->default_rank) sweep.default_rank = *cfg.sweep->default_rank;
    if (cfg.sweep->default_iters) sweep.default_iters = *cfg.sweep->default_iters;
    if (cfg.rank) sweep.default_rank = *cfg.rank;
    if (cfg.iterations) sweep.default_iters = *cfg.iterations;
    sweep.calib_samples = cfg.calib_samples;
    sweep.eval_samples = cfg.eval_samples;
    sweep.eps = cfg.eps;
    sweep.s_floor = cfg.s_floor;
    sweep.threads = read_threads_env();

    SweepReport report = run_sweep(sweep);
    report.config_echo = cfg.to_json().dump();

    auto write_text = [](const std::string& path, const std::string& text) {
        std::ofstream f(path, std::ios::binary | std::ios::trunc);
        if (!f) throw IoError("cannot open '" + path + "' for writing");
        f << text;
        if (!f) throw IoError("short write to '" + path + "'");
    };
    if (!csv_path.empty()) write_text(csv_path, report.to_csv());
    if (!json_path.empty()) write_text(json_path, report.to_json());

    std::printf("sweep axis=%s cells=%zu", to_string(report.axis).c_str(),
                report.cells.size());
    if (!csv_path.empty()) std::printf(" csv=%s", csv_path.c_str());
    if (!json_path.empty()) std::printf(" json=%s", json_path.c_str());
    std::printf("\n");
    return kExitOk;
}

int cmd_selftest() {
    const char* corrupt = std::getenv("QERA_SELFTEST_CORRUPT");
    const selftest::Summary summary = selftest::run_selftest(corrupt ? corrupt : "");
    for (const auto& family : summary.families)
        std::printf("%s %s (%.2fs): %s\n", family.result.passed ? "PASS" : "FAIL",
                    family.name.c_str(), family.seconds, family.result.detail.c_str());
    std::printf("%zu property families, %.2fs total: %s\n", summary.families.size(),
                summary.total_seconds, summary.all_passed() ? "all passed" : "FAILURES");
    return summary.all_passed() ? kExitOk : kExitNumerical;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"quantization error reconstruction toolkit"};
    app.require_subcommand(1);

    Flags flags;
    CLI::App* calibrate = app.add_subcommand("calibrate", "accumulate activation statistics");
    register_common(calibrate, flags);

    CLI::App* quantize = app.add_subcommand("quantize", "quantize + low-rank reconstruction");
    register_common(quantize, flags);
    register_quant_flags(quantize, flags);

    CLI::App* eval = app.add_subcommand("eval", "compare quantized model against fp model");
    register_common(eval, flags);
    eval->add_option("fp", flags.fp_file, "full-precision model container");
    eval->add_option("quantized", flags.quantized_file, "quantized model container");

    CLI::App* sweep = app.add_subcommand("sweep", "run an experiment sweep");
    register_common(sweep, flags);
    register_quant_flags(sweep, flags);

    app.add_subcommand("selftest", "run the invariant property suite");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (calibrate->parsed()) return cmd_calibrate(flags);
        if (quantize->parsed()) return cmd_quantize(flags);
        if (eval->parsed()) return cmd_eval(flags);
        if (sweep->parsed()) return cmd_sweep(flags);
        return cmd_selftest();
    } catch (const IoError& e) {
        std::fprintf(stderr, "io error: %s\n", e.what());
        return kExitIo;
    } catch (const NumericalError& e) {
        std::fprintf(stderr, "numerical error: %s\n", e.what());
        return kExitNumerical;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return kExitUsage;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kExitUsage;
    }
}

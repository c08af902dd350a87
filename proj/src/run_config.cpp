#include "qera/run_config.hpp"

#include "qera/container.hpp"

#include <fstream>
#include <set>

namespace qera {

namespace {

using nlohmann::json;

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!allowed.count(it.key()))
            throw std::invalid_argument("config: unknown key '" + it.key() + "' in " + where);
}

InputDistribution::Kind input_kind_from_string(const std::string& s) {
    if (s == "iid-gaussian") return InputDistribution::Kind::IID_GAUSSIAN;
    if (s == "correlated-gaussian") return InputDistribution::Kind::CORRELATED_GAUSSIAN;
    if (s == "loaded") return InputDistribution::Kind::LOADED;
    throw std::invalid_argument("config: unknown input kind '" + s + "'");
}

std::string input_kind_to_string(InputDistribution::Kind k) {
    switch (k) {
        case InputDistribution::Kind::IID_GAUSSIAN: return "iid-gaussian";
        case InputDistribution::Kind::CORRELATED_GAUSSIAN: return "correlated-gaussian";
        case InputDistribution::Kind::LOADED: return "loaded";
    }
    return "?";
}

RunConfig::ModelSection parse_model(const json& j) {
    reject_unknown(j, {"weights_file", "dims", "nonlinearity", "seed"}, "model");
    RunConfig::ModelSection m;
    if (j.contains("weights_file")) {
        m.weights_file = j.at("weights_file").get<std::string>();
        if (j.contains("dims"))
            throw std::invalid_argument("config: model cannot have both weights_file and dims");
        return m;
    }
    ModelConfig cfg;
    cfg.dims = j.at("dims").get<std::vector<Index>>();
    cfg.nonlinearity = nonlinearity_from_string(j.value("nonlinearity", "relu"));
    cfg.seed = j.value("seed", 0ull);
    m.synthetic = cfg;
    return m;
}

RunConfig::InputSection parse_input(const json& j) {
    reject_unknown(j, {"kind", "dim", "seed", "cov_file", "file"}, "input");
    RunConfig::InputSection in;
    in.kind = input_kind_from_string(j.at("kind").get<std::string>());
    in.dim = j.value("dim", 0);
    in.seed = j.value("seed", 0ull);
    if (j.contains("cov_file")) in.cov_file = j.at("cov_file").get<std::string>();
    if (j.contains("file")) in.file = j.at("file").get<std::string>();
    if (in.kind == InputDistribution::Kind::CORRELATED_GAUSSIAN && !in.cov_file)
        throw std::invalid_argument("config: correlated-gaussian input needs cov_file");
    if (in.kind == InputDistribution::Kind::LOADED && !in.file)
        throw std::invalid_argument("config: loaded input needs file");
    return in;
}

QuantSpec parse_quant(const json& j) {
    reject_unknown(j, {"format", "bits", "block_size"}, "quant");
    QuantSpec spec;
    spec.format = quant_format_from_string(j.value("format", "mxint"));
    spec.bits = j.at("bits").get<int>();
    spec.block_size = j.at("block_size").get<int>();
    spec.validate();
    return spec;
}

RunConfig::SweepSection parse_sweep(const json& j) {
    reject_unknown(j,
                   {"axis", "methods", "ranks", "loftq_iters", "calib_sizes", "default_rank",
                    "default_iters"},
                   "sweep");
    RunConfig::SweepSection s;
    s.axis = sweep_axis_from_string(j.at("axis").get<std::string>());
    if (j.contains("methods")) {
        std::vector<Method> methods;
        for (const auto& m : j.at("methods")) methods.push_back(method_from_string(m));
        s.methods = std::move(methods);
    }
    if (j.contains("ranks")) s.ranks = j.at("ranks").get<std::vector<Index>>();
    if (j.contains("loftq_iters")) s.loftq_iters = j.at("loftq_iters").get<std::vector<int>>();
    if (j.contains("calib_sizes")) s.calib_sizes = j.at("calib_sizes").get<std::vector<Index>>();
    if (j.contains("default_rank")) s.default_rank = j.at("default_rank").get<Index>();
    if (j.contains("default_iters")) s.default_iters = j.at("default_iters").get<int>();
    return s;
}

RunConfig::OutSection parse_out(const json& j) {
    RunConfig::OutSection out;
    if (j.is_string()) {
        // Shorthand: a bare string names the command's primary output.
        out.stats = out.quantized = j.get<std::string>();
        return out;
    }
    reject_unknown(j, {"stats", "model", "quantized", "report_csv", "report_json"}, "out");
    if (j.contains("stats")) out.stats = j.at("stats").get<std::string>();
    if (j.contains("model")) out.model = j.at("model").get<std::string>();
    if (j.contains("quantized")) out.quantized = j.at("quantized").get<std::string>();
    if (j.contains("report_csv")) out.report_csv = j.at("report_csv").get<std::string>();
    if (j.contains("report_json")) out.report_json = j.at("report_json").get<std::string>();
    return out;
}

}  // namespace

RunConfig RunConfig::from_json(const json& j) {
    reject_unknown(j,
                   {"model", "input", "quant", "method", "rank", "iterations", "eps", "s_floor",
                    "seed", "calib_samples", "eval_samples", "stats_file", "quantized_file",
                    "out", "sweep"},
                   "config root");
    RunConfig cfg;
    if (j.contains("model")) cfg.model = parse_model(j.at("model"));
    if (j.contains("input")) cfg.input = parse_input(j.at("input"));
    if (j.contains("quant")) cfg.quant = parse_quant(j.at("quant"));
    if (j.contains("method")) cfg.method = method_from_string(j.at("method").get<std::string>());
    if (j.contains("rank")) cfg.rank = j.at("rank").get<Index>();
    if (j.contains("iterations")) cfg.iterations = j.at("iterations").get<int>();
    cfg.eps = j.value("eps", kDefaultEps);
    cfg.s_floor = j.value("s_floor", kDefaultSFloor);
    if (j.contains("seed")) cfg.seed = j.at("seed").get<uint64_t>();
    cfg.calib_samples = j.value("calib_samples", Index{1024});
    cfg.eval_samples = j.value("eval_samples", Index{128});
    if (j.contains("stats_file")) cfg.stats_file = j.at("stats_file").get<std::string>();
    if (j.contains("quantized_file"))
        cfg.quantized_file = j.at("quantized_file").get<std::string>();
    if (j.contains("out")) cfg.out = parse_out(j.at("out"));
    if (j.contains("sweep")) cfg.sweep = parse_sweep(j.at("sweep"));

    if (cfg.seed) {
        if (cfg.model && cfg.model->synthetic) cfg.model->synthetic->seed = *cfg.seed;
        if (cfg.input) cfg.input->seed = *cfg.seed;
    }
    return cfg;
}

RunConfig RunConfig::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw IoError("cannot open config '" + path + "'");
    json j;
    try {
        j = json::parse(f);
    } catch (const json::exception& e) {
        throw std::invalid_argument("config '" + path + "': invalid JSON: " + e.what());
    }
    return from_json(j);
}

nlohmann::json RunConfig::to_json() const {
    json j;
    if (model) {
        json m;
        if (model->weights_file) m["weights_file"] = *model->weights_file;
        if (model->synthetic) {
            m["dims"] = model->synthetic->dims;
            m["nonlinearity"] = to_string(model->synthetic->nonlinearity);
            m["seed"] = model->synthetic->seed;
        }
        j["model"] = std::move(m);
    }
    if (input) {
        json in;
        in["kind"] = input_kind_to_string(input->kind);
        in["dim"] = input->dim;
        in["seed"] = input->seed;
        if (input->cov_file) in["cov_file"] = *input->cov_file;
        if (input->file) in["file"] = *input->file;
        j["input"] = std::move(in);
    }
    if (quant)
        j["quant"] = {{"format", to_string(quant->format)},
                      {"bits", quant->bits},
                      {"block_size", quant->block_size}};
    if (method) j["method"] = to_string(*method);
    if (rank) j["rank"] = *rank;
    if (iterations) j["iterations"] = *iterations;
    j["eps"] = eps;
    j["s_floor"] = s_floor;
    j["calib_samples"] = calib_samples;
    j["eval_samples"] = eval_samples;
    if (stats_file) j["stats_file"] = *stats_file;
    if (quantized_file) j["quantized_file"] = *quantized_file;
    if (sweep) {
        json s;
        s["axis"] = to_string(sweep->axis);
        if (sweep->methods) {
            json methods = json::array();
            for (Method m : *sweep->methods) methods.push_back(to_string(m));
            s["methods"] = std::move(methods);
        }
        if (sweep->ranks) s["ranks"] = *sweep->ranks;
        if (sweep->loftq_iters) s["loftq_iters"] = *sweep->loftq_iters;
        if (sweep->calib_sizes) s["calib_sizes"] = *sweep->calib_sizes;
        if (sweep->default_rank) s["default_rank"] = *sweep->default_rank;
        if (sweep->default_iters) s["default_iters"] = *sweep->default_iters;
        j["sweep"] = std::move(s);
    }
    return j;
}

}  // namespace qera

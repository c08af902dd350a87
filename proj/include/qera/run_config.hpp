#pragma once

#include "qera/harness.hpp"

#include <json.hpp>

#include <optional>
#include <string>

namespace qera {

/// Schema-validated run configuration. Unknown keys are rejected at every
/// level; flags override config values after loading.
struct RunConfig {
    struct ModelSection {
        std::optional<std::string> weights_file;
        std::optional<ModelConfig> synthetic;
    };
    struct InputSection {
        InputDistribution::Kind kind = InputDistribution::Kind::IID_GAUSSIAN;
        Index dim = 0;
        uint64_t seed = 0;
        std::optional<std::string> cov_file;   // correlated-gaussian
        std::optional<std::string> file;       // loaded
    };
    struct SweepSection {
        SweepAxis axis = SweepAxis::RANK;
        std::optional<std::vector<Method>> methods;
        std::optional<std::vector<Index>> ranks;
        std::optional<std::vector<int>> loftq_iters;
        std::optional<std::vector<Index>> calib_sizes;
        std::optional<Index> default_rank;
        std::optional<int> default_iters;
    };
    struct OutSection {
        std::optional<std::string> stats;
        std::optional<std::string> model;
        std::optional<std::string> quantized;
        std::optional<std::string> report_csv;
        std::optional<std::string> report_json;
    };

    std::optional<ModelSection> model;
    std::optional<InputSection> input;
    std::optional<QuantSpec> quant;
    std::optional<Method> method;
    std::optional<Index> rank;
    std::optional<int> iterations;
    double eps = kDefaultEps;
    double s_floor = kDefaultSFloor;
    std::optional<uint64_t> seed;  // overrides model and input seeds when set
    Index calib_samples = 1024;
    Index eval_samples = 128;
    std::optional<std::string> stats_file;
    std::optional<std::string> quantized_file;
    OutSection out;
    std::optional<SweepSection> sweep;

    static RunConfig from_json(const nlohmann::json& j);
    static RunConfig load(const std::string& path);
    /// Canonical echo of the effective configuration.
    nlohmann::json to_json() const;
};

}  // namespace qera

#pragma once

#include "qera/reconstruct.hpp"

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace qera {

enum class Nonlinearity { RELU, TANH, NONE };

std::string to_string(Nonlinearity n);
Nonlinearity nonlinearity_from_string(const std::string& s);

/// Deterministic standard-normal draws (Box-Muller over mt19937_64), so
/// seeded runs are reproducible across standard libraries.
class GaussianStream {
public:
    explicit GaussianStream(uint64_t seed) : rng_(seed) {}
    double next();
    Matrix matrix(Index rows, Index cols);

private:
    std::mt19937_64 rng_;
    double spare_ = 0.0;
    bool has_spare_ = false;
};

struct ModelConfig {
    std::vector<Index> dims;  // layer boundary widths, depth = dims.size()-1
    Nonlinearity nonlinearity = Nonlinearity::RELU;
    uint64_t seed = 0;
};

/// Stack of linear layers with elementwise nonlinearities between them.
/// The final layer output is linear (logits), hidden layers use the
/// configured nonlinearity.
struct SyntheticModel {
    struct Layer {
        Matrix weight;
        Nonlinearity nonlinearity = Nonlinearity::NONE;  // applied after x*W
    };
    std::vector<Layer> layers;
    Index input_dim = 0;
    Index output_dim = 0;
    uint64_t seed = 0;

    Index depth() const { return static_cast<Index>(layers.size()); }
    Matrix forward(const Matrix& x) const;
    /// Inputs seen by each layer: trace[l] feeds layers[l]; the final
    /// output is appended last (size depth()+1).
    std::vector<Matrix> forward_trace(const Matrix& x) const;
};

/// Gaussian weights scaled by 1/sqrt(fan_in), deterministic given seed.
SyntheticModel build_model(const ModelConfig& cfg);

struct InputDistribution {
    enum class Kind { IID_GAUSSIAN, CORRELATED_GAUSSIAN, LOADED };
    Kind kind = Kind::IID_GAUSSIAN;
    Index dim = 0;
    uint64_t seed = 0;
    Matrix cov;      // CORRELATED_GAUSSIAN only; symmetric PSD
    Matrix samples;  // LOADED only

    /// Stateful sample stream; drawing N then M rows equals the first
    /// N+M rows of one draw (prefix property). Distinct `stream` ids give
    /// disjoint streams (calibration vs eval).
    class Sampler {
    public:
        Matrix next(Index n);

    private:
        friend struct InputDistribution;
        const InputDistribution* dist_ = nullptr;
        GaussianStream gauss_;
        Matrix chol_t_;  // transposed lower-triangular factor of cov
        Index cursor_ = 0;

        explicit Sampler(const InputDistribution* d, uint64_t stream_seed)
            : dist_(d), gauss_(stream_seed) {}
    };

    Sampler sampler(uint64_t stream = 0) const;
};

inline constexpr uint64_t kCalibStream = 1;
inline constexpr uint64_t kEvalStream = 2;

/// Full-precision forward passes over `n_samples` draws; each layer's
/// inputs feed that layer's accumulator. Returns finalized per-layer stats.
std::vector<CalibStats> calibrate_model(const SyntheticModel& model,
                                        const InputDistribution& dist, Index n_samples,
                                        double eps = kDefaultEps,
                                        double s_floor = kDefaultSFloor);

struct QuantizedModel {
    std::vector<ReconstructedLayer> layers;
    std::vector<Nonlinearity> nonlinearities;
    Index input_dim = 0;
    Index output_dim = 0;

    Matrix forward(const Matrix& x) const;
};

/// Replaces every linear layer by its reconstruction; architecture
/// unchanged. `stats` may be empty for methods that need none.
QuantizedModel quantize_model(const SyntheticModel& model, Method method,
                              const QuantSpec& spec, Index rank,
                              const std::vector<CalibStats>& stats, int iterations = 1);

/// Mean over eval rows of the squared l2 distance between final outputs.
double model_output_error(const SyntheticModel& fp_model, const QuantizedModel& q_model,
                          const Matrix& eval_inputs);

enum class SweepAxis { RANK, LOFTQ_ITERS, CALIB_SIZE };

std::string to_string(SweepAxis a);
SweepAxis sweep_axis_from_string(const std::string& s);

struct SweepConfig {
    ModelConfig model;
    InputDistribution input;
    QuantSpec spec;
    SweepAxis axis = SweepAxis::RANK;
    std::vector<Method> methods = {Method::WEIGHT_SVD, Method::LOFTQ, Method::LQER,
                                   Method::QERA_APPROX, Method::QERA_EXACT};
    std::vector<Index> ranks = {4, 8, 16, 32};
    std::vector<int> loftq_iters = {1, 2, 3, 4, 5};
    std::vector<Index> calib_sizes = {32, 64, 128, 256, 512, 1024, 2048, 4096};
    Index default_rank = 16;   // on LOFTQ_ITERS / CALIB_SIZE axes
    int default_iters = 1;     // LoftQ iterations on non-iteration axes
    Index calib_samples = 2048;  // on RANK / LOFTQ_ITERS axes
    Index eval_samples = 128;
    double eps = kDefaultEps;
    double s_floor = kDefaultSFloor;
    int threads = 0;  // 0 = hardware concurrency
};

/// One (setting, method) cell. layer_objective is the closed-form
/// output-error objective under the cell's calibrated empirical rxx;
/// weight_error is ||W - dq(wq) - A*B||_F. Both per layer.
struct SweepCell {
    double setting = 0.0;
    Method method = Method::WEIGHT_SVD;
    std::vector<double> layer_objective;
    std::vector<double> weight_error;
    double layer_objective_total = 0.0;
    double weight_error_total = 0.0;
    double model_output_error = 0.0;
};

struct SweepReport {
    SweepAxis axis = SweepAxis::RANK;
    std::vector<SweepCell> cells;  // sorted by (setting, method)
    std::string config_echo;

    std::string to_csv() const;
    std::string to_json() const;
};

/// Runs every cell of the configured axis. Cells execute independently
/// (bounded by `threads`); a failing cell aborts with its id in the
/// message. Deterministic given config and seeds.
SweepReport run_sweep(const SweepConfig& cfg);

}  // namespace qera

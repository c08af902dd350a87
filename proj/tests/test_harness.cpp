#include "qera/harness.hpp"

#include <doctest.h>

#include <cmath>

using namespace qera;

namespace {

ModelConfig small_model(Nonlinearity nl, uint64_t seed = 7) {
    ModelConfig cfg;
    cfg.dims = {16, 16, 16};
    cfg.nonlinearity = nl;
    cfg.seed = seed;
    return cfg;
}

InputDistribution iid_input(Index dim, uint64_t seed = 3) {
    InputDistribution dist;
    dist.kind = InputDistribution::Kind::IID_GAUSSIAN;
    dist.dim = dim;
    dist.seed = seed;
    return dist;
}

}  // namespace

TEST_CASE("depth-1 model is a single linear layer") {
    ModelConfig cfg;
    cfg.dims = {8, 5};
    cfg.nonlinearity = Nonlinearity::NONE;
    SyntheticModel model = build_model(cfg);
    REQUIRE(model.depth() == 1);
    CHECK(model.layers[0].nonlinearity == Nonlinearity::NONE);
    Matrix x = Matrix::Random(4, 8);
    CHECK((model.forward(x) - x * model.layers[0].weight).norm() == 0.0);
}

TEST_CASE("same seed builds bit-identical weights") {
    SyntheticModel a = build_model(small_model(Nonlinearity::RELU, 99));
    SyntheticModel b = build_model(small_model(Nonlinearity::RELU, 99));
    for (size_t l = 0; l < a.layers.size(); ++l)
        CHECK((a.layers[l].weight - b.layers[l].weight).norm() == 0.0);
    SyntheticModel c = build_model(small_model(Nonlinearity::RELU, 100));
    CHECK((a.layers[0].weight - c.layers[0].weight).norm() > 0.0);
}

TEST_CASE("relu forward pass matches a straight-line reference") {
    ModelConfig cfg;
    cfg.dims = {64, 64, 64, 64, 64};
    cfg.nonlinearity = Nonlinearity::RELU;
    cfg.seed = 11;
    SyntheticModel model = build_model(cfg);
    REQUIRE(model.depth() == 4);

    GaussianStream gauss(55);
    Matrix x = gauss.matrix(3, 64);
    Matrix h = x;
    for (Index l = 0; l < model.depth(); ++l) {
        h = h * model.layers[l].weight;
        if (l + 1 < model.depth())  // hidden layers only
            for (Index i = 0; i < h.size(); ++i)
                h.data()[i] = std::max(0.0, h.data()[i]);
    }
    // Summation order in the matrix product may differ from the reference
    // loop, so compare within rounding noise rather than bit-exactly.
    CHECK((model.forward(x) - h).norm() < 1e-12 * std::max(1.0, h.norm()));
}

TEST_CASE("build_model validates dims") {
    ModelConfig cfg;
    cfg.dims = {8};
    CHECK_THROWS_AS(build_model(cfg), std::invalid_argument);
    cfg.dims = {8, 0};
    CHECK_THROWS_AS(build_model(cfg), std::invalid_argument);
}

TEST_CASE("sampler streams have the prefix property") {
    InputDistribution dist = iid_input(6, 17);
    auto s1 = dist.sampler(kCalibStream);
    Matrix first = s1.next(100);
    Matrix second = s1.next(50);
    auto s2 = dist.sampler(kCalibStream);
    Matrix all = s2.next(150);
    CHECK((all.topRows(100) - first).norm() == 0.0);
    CHECK((all.bottomRows(50) - second).norm() == 0.0);

    // Distinct streams are distinct.
    auto s3 = dist.sampler(kEvalStream);
    CHECK((s3.next(100) - first).norm() > 0.0);
}

TEST_CASE("correlated sampler reproduces the requested covariance") {
    const Index dim = 6;
    Matrix cov = Matrix::Identity(dim, dim);
    cov(0, 1) = cov(1, 0) = 0.6;
    InputDistribution dist;
    dist.kind = InputDistribution::Kind::CORRELATED_GAUSSIAN;
    dist.dim = dim;
    dist.seed = 5;
    dist.cov = cov;
    auto sampler = dist.sampler(kCalibStream);
    Matrix x = sampler.next(200000);
    Matrix empirical = x.transpose() * x / 200000.0;
    CHECK((empirical - cov).cwiseAbs().maxCoeff() < 0.03);
}

TEST_CASE("loaded distribution cycles through its rows") {
    InputDistribution dist;
    dist.kind = InputDistribution::Kind::LOADED;
    dist.dim = 2;
    dist.samples = Matrix(3, 2);
    dist.samples << 1, 2, 3, 4, 5, 6;
    auto sampler = dist.sampler(0);
    Matrix x = sampler.next(5);
    CHECK((x.row(3) - x.row(0)).norm() == 0.0);
    CHECK((x.row(4) - x.row(1)).norm() == 0.0);
}

TEST_CASE("first-layer stats match a direct computation on the same draws") {
    SyntheticModel model = build_model(small_model(Nonlinearity::RELU));
    InputDistribution dist = iid_input(16);
    std::vector<CalibStats> stats = calibrate_model(model, dist, 600);

    auto sampler = dist.sampler(kCalibStream);
    Matrix x = sampler.next(600);
    Matrix direct = symmetrize(x.transpose() * x) / 600.0;
    CHECK((stats[0].rxx - direct).cwiseAbs().maxCoeff() < 1e-10);
    CHECK(stats[0].count == 600);
}

TEST_CASE("linear stacks propagate rxx through the weights") {
    ModelConfig cfg;
    cfg.dims = {12, 10, 8};
    cfg.nonlinearity = Nonlinearity::NONE;
    cfg.seed = 23;
    SyntheticModel model = build_model(cfg);
    std::vector<CalibStats> stats = calibrate_model(model, iid_input(12, 29), 2000);
    const Matrix& w1 = model.layers[0].weight;
    Matrix expected = symmetrize(w1.transpose() * stats[0].rxx * w1);
    CHECK((stats[1].rxx - expected).cwiseAbs().maxCoeff() <
          1e-10 * expected.cwiseAbs().maxCoeff());
}

TEST_CASE("full-rank quantized linear model reproduces the fp outputs") {
    ModelConfig cfg;
    cfg.dims = {12, 12, 12};
    cfg.nonlinearity = Nonlinearity::NONE;
    cfg.seed = 31;
    SyntheticModel model = build_model(cfg);
    QuantizedModel q = quantize_model(model, Method::WEIGHT_SVD,
                                      QuantSpec{QuantFormat::MXINT, 3, 32}, 12, {});
    GaussianStream gauss(32);
    Matrix x = gauss.matrix(20, 12);
    CHECK(model_output_error(model, q, x) < 1e-18);
}

TEST_CASE("quantize_model equals per-layer reconstruction") {
    SyntheticModel model = build_model(small_model(Nonlinearity::RELU, 41));
    InputDistribution dist = iid_input(16, 43);
    std::vector<CalibStats> stats = calibrate_model(model, dist, 512);
    QuantSpec spec{QuantFormat::MXINT, 3, 32};
    QuantizedModel q = quantize_model(model, Method::QERA_EXACT, spec, 4, stats);
    for (size_t l = 0; l < model.layers.size(); ++l) {
        ReconRequest req;
        req.w = model.layers[l].weight;
        req.spec = spec;
        req.rank = 4;
        req.stats = &stats[l];
        ReconstructedLayer direct = recon_qera_exact(req);
        CHECK((q.layers[l].a_k - direct.a_k).norm() == 0.0);
        CHECK((q.layers[l].b_k - direct.b_k).norm() == 0.0);
        CHECK(q.layers[l].wq == direct.wq);
    }
}

TEST_CASE("weight-svd needs no stats but qera does") {
    SyntheticModel model = build_model(small_model(Nonlinearity::RELU, 47));
    QuantSpec spec{QuantFormat::MXINT, 3, 32};
    CHECK_NOTHROW(quantize_model(model, Method::WEIGHT_SVD, spec, 4, {}));
    CHECK_THROWS_AS(quantize_model(model, Method::QERA_EXACT, spec, 4, {}),
                    std::invalid_argument);
}

TEST_CASE("zero inputs give zero model output error on linear models") {
    ModelConfig cfg;
    cfg.dims = {8, 8};
    cfg.nonlinearity = Nonlinearity::NONE;
    SyntheticModel model = build_model(cfg);
    QuantizedModel q = quantize_model(model, Method::WEIGHT_SVD,
                                      QuantSpec{QuantFormat::MXINT, 3, 32}, 2, {});
    CHECK(model_output_error(model, q, Matrix::Zero(4, 8)) == 0.0);
}

TEST_CASE("depth-1 linear model output error equals the layer sample objective") {
    ModelConfig cfg;
    cfg.dims = {10, 7};
    cfg.nonlinearity = Nonlinearity::NONE;
    cfg.seed = 51;
    SyntheticModel model = build_model(cfg);
    QuantizedModel q = quantize_model(model, Method::WEIGHT_SVD,
                                      QuantSpec{QuantFormat::MXINT, 3, 32}, 3, {});
    GaussianStream gauss(53);
    Matrix x = gauss.matrix(64, 10);
    const double model_err = model_output_error(model, q, x);
    const double layer_obj = sample_objective(q.layers[0], model.layers[0].weight, x);
    CHECK(std::abs(model_err - layer_obj) < 1e-12 * std::max(1.0, layer_obj));
}

TEST_CASE("model_output_error validates architectures") {
    SyntheticModel a = build_model(small_model(Nonlinearity::RELU, 61));
    ModelConfig other;
    other.dims = {16, 16};
    other.nonlinearity = Nonlinearity::RELU;
    SyntheticModel b = build_model(other);
    QuantizedModel qb = quantize_model(b, Method::WEIGHT_SVD,
                                       QuantSpec{QuantFormat::MXINT, 3, 32}, 2, {});
    GaussianStream gauss(62);
    CHECK_THROWS_AS(model_output_error(a, qb, gauss.matrix(4, 16)), std::invalid_argument);
}

TEST_CASE("rank sweep is deterministic and monotone for qera on a linear model") {
    SweepConfig cfg;
    cfg.model.dims = {24, 24, 24};
    cfg.model.nonlinearity = Nonlinearity::NONE;
    cfg.model.seed = 71;
    cfg.input = iid_input(24, 73);
    cfg.spec = QuantSpec{QuantFormat::MXINT, 3, 32};
    cfg.axis = SweepAxis::RANK;
    cfg.methods = {Method::WEIGHT_SVD, Method::QERA_APPROX, Method::QERA_EXACT};
    cfg.ranks = {2, 4, 8, 16};
    cfg.calib_samples = 512;
    cfg.eval_samples = 64;
    cfg.threads = 2;

    SweepReport r1 = run_sweep(cfg);
    SweepReport r2 = run_sweep(cfg);
    CHECK(r1.to_csv() == r2.to_csv());
    CHECK(r1.to_json() == r2.to_json());
    REQUIRE(r1.cells.size() == 12);

    std::vector<double> prev;
    for (const SweepCell& cell : r1.cells) {
        if (cell.method != Method::QERA_EXACT) continue;
        if (!prev.empty())
            for (size_t l = 0; l < prev.size(); ++l)
                CHECK(cell.layer_objective[l] <= prev[l] * (1.0 + 1e-12));
        prev = cell.layer_objective;
    }

    // Layer-level method ordering: qera-exact optimizes the objective the
    // cells report, so it lower-bounds qera-approx and weight-svd per
    // layer in every cell.
    for (size_t i = 0; i < r1.cells.size(); i += 3) {
        const SweepCell& svd_cell = r1.cells[i];
        const SweepCell& approx_cell = r1.cells[i + 1];
        const SweepCell& exact_cell = r1.cells[i + 2];
        REQUIRE(exact_cell.method == Method::QERA_EXACT);
        for (size_t l = 0; l < exact_cell.layer_objective.size(); ++l) {
            const double exact = exact_cell.layer_objective[l];
            CHECK(exact <= approx_cell.layer_objective[l] * (1.0 + 1e-9));
            CHECK(exact <= svd_cell.layer_objective[l] * (1.0 + 1e-9));
        }
    }
}

TEST_CASE("loftq-iters sweep records non-increasing weight error per layer") {
    SweepConfig cfg;
    cfg.model.dims = {32, 32, 32};
    cfg.model.nonlinearity = Nonlinearity::RELU;
    cfg.model.seed = 83;
    cfg.input = iid_input(32, 87);
    cfg.spec = QuantSpec{QuantFormat::MXINT, 3, 32};
    cfg.axis = SweepAxis::LOFTQ_ITERS;
    cfg.methods = {Method::LOFTQ};
    cfg.default_rank = 8;
    cfg.calib_samples = 256;
    cfg.eval_samples = 64;

    SweepReport report = run_sweep(cfg);
    REQUIRE(report.cells.size() == 5);
    for (size_t i = 1; i < report.cells.size(); ++i)
        for (size_t l = 0; l < report.cells[i].weight_error.size(); ++l)
            CHECK(report.cells[i].weight_error[l] <=
                  report.cells[i - 1].weight_error[l] * (1.0 + 1e-12));
}

TEST_CASE("calib-size sweep reuses the sample stream prefix") {
    SweepConfig cfg;
    cfg.model.dims = {16, 16};
    cfg.model.nonlinearity = Nonlinearity::NONE;
    cfg.model.seed = 91;
    cfg.input = iid_input(16, 93);
    cfg.spec = QuantSpec{QuantFormat::MXINT, 3, 32};
    cfg.axis = SweepAxis::CALIB_SIZE;
    cfg.methods = {Method::QERA_APPROX};
    cfg.calib_sizes = {32, 128, 512};
    cfg.eval_samples = 64;

    SweepReport report = run_sweep(cfg);
    REQUIRE(report.cells.size() == 3);
    // More calibration data should not hurt on this seeded linear model.
    CHECK(report.cells.back().model_output_error <=
          report.cells.front().model_output_error);
}

TEST_CASE("a failing sweep cell is identified in the error") {
    SweepConfig cfg;
    cfg.model.dims = {8, 8};
    cfg.model.nonlinearity = Nonlinearity::NONE;
    cfg.input = iid_input(8);
    cfg.spec = QuantSpec{QuantFormat::MXINT, 3, 32};
    cfg.axis = SweepAxis::RANK;
    cfg.methods = {Method::WEIGHT_SVD};
    cfg.ranks = {4, 64};  // 64 exceeds min(m, n)
    cfg.calib_samples = 32;
    cfg.eval_samples = 8;
    CHECK_THROWS_WITH_AS(run_sweep(cfg), doctest::Contains("setting=64"), NumericalError);
}

TEST_CASE("csv output has one row per cell") {
    SweepConfig cfg;
    cfg.model.dims = {8, 8};
    cfg.model.nonlinearity = Nonlinearity::NONE;
    cfg.input = iid_input(8);
    cfg.spec = QuantSpec{QuantFormat::MXINT, 3, 32};
    cfg.axis = SweepAxis::RANK;
    cfg.methods = {Method::WEIGHT_SVD, Method::QERA_EXACT};
    cfg.ranks = {2, 4};
    cfg.calib_samples = 64;
    cfg.eval_samples = 16;
    SweepReport report = run_sweep(cfg);
    const std::string csv = report.to_csv();
    size_t rows = 0;
    for (char c : csv)
        if (c == '\n') ++rows;
    CHECK(rows == 5);  // header + 4 cells
}

#include "qera/container.hpp"
#include "qera/run_config.hpp"

#include <doctest.h>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

using namespace qera;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("qera_container_test_" + std::to_string(std::random_device{}()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

Matrix gaussian(Index rows, Index cols, uint32_t seed) {
    std::mt19937 gen(seed);
    std::normal_distribution<double> dist(0.0, 1.0);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = dist(gen);
    return m;
}

bool bit_equal(const Matrix& a, const Matrix& b) {
    return a.rows() == b.rows() && a.cols() == b.cols() &&
           std::memcmp(a.data(), b.data(), sizeof(double) * a.size()) == 0;
}

}  // namespace

TEST_CASE("container round-trips tensors bit-exactly") {
    TempDir tmp;
    TensorContainer c;
    Matrix m = gaussian(5, 7, 1);
    m(0, 0) = -0.0;  // signed zero must survive
    Vector v = m.row(2).transpose();
    c.add_matrix("w", m, "weight");
    c.add_vector("s", v, "scale");
    c.add_ints("codes8", {-128, 127, 0, 5}, "i8", {4}, "codes");
    c.add_ints("codes16", {-32768, 32767, 11, -3}, "i16", {2, 2}, "codes");
    c.add_ints("codes32", {1 << 30, -(1 << 30), 0, 1}, "i32", {4}, "codes");
    c.meta["kind"] = "test";
    c.meta["nested"] = {{"a", 1}, {"b", "two"}};
    c.write(tmp.file("t.qera"));

    TensorContainer r = TensorContainer::read(tmp.file("t.qera"));
    CHECK(bit_equal(r.matrix("w"), m));
    CHECK(std::memcmp(r.vector("s").data(), v.data(), sizeof(double) * v.size()) == 0);
    CHECK(r.ints("codes8") == std::vector<int32_t>{-128, 127, 0, 5});
    CHECK(r.ints("codes16") == std::vector<int32_t>{-32768, 32767, 11, -3});
    CHECK(r.ints("codes32") == std::vector<int32_t>{1 << 30, -(1 << 30), 0, 1});
    CHECK(r.meta["kind"] == "test");
    CHECK(r.meta["nested"]["b"] == "two");
    CHECK(r.entry("w").role == "weight");
    CHECK(r.names() == c.names());

    // A second write produces identical bytes.
    r.write(tmp.file("t2.qera"));
    std::ifstream f1(tmp.file("t.qera"), std::ios::binary);
    std::ifstream f2(tmp.file("t2.qera"), std::ios::binary);
    std::string b1((std::istreambuf_iterator<char>(f1)), std::istreambuf_iterator<char>());
    std::string b2((std::istreambuf_iterator<char>(f2)), std::istreambuf_iterator<char>());
    CHECK(b1 == b2);
}

TEST_CASE("container rejects malformed files") {
    TempDir tmp;
    {
        std::ofstream f(tmp.file("bad_magic.qera"), std::ios::binary);
        f << "NOPE" << std::string(32, '\0');
    }
    CHECK_THROWS_WITH_AS(TensorContainer::read(tmp.file("bad_magic.qera")),
                         doctest::Contains("bad magic"), IoError);

    {
        std::ofstream f(tmp.file("short.qera"), std::ios::binary);
        f << "QE";
    }
    CHECK_THROWS_AS(TensorContainer::read(tmp.file("short.qera")), IoError);

    CHECK_THROWS_AS(TensorContainer::read(tmp.file("missing.qera")), IoError);

    // Header length pointing past the end of the file.
    {
        std::ofstream f(tmp.file("trunc.qera"), std::ios::binary);
        f << "QERA";
        const uint32_t version = 1;
        const uint64_t header_len = 1000;
        f.write(reinterpret_cast<const char*>(&version), 4);
        f.write(reinterpret_cast<const char*>(&header_len), 8);
        f << "{}";
    }
    CHECK_THROWS_WITH_AS(TensorContainer::read(tmp.file("trunc.qera")),
                         doctest::Contains("header exceeds"), IoError);
}

TEST_CASE("container rejects inconsistent entries") {
    TempDir tmp;
    TensorContainer c;
    c.add_matrix("w", gaussian(2, 2, 2), "weight");
    CHECK_THROWS_AS(c.add_matrix("w", gaussian(2, 2, 3), "weight"), IoError);
    c.write(tmp.file("ok.qera"));

    // Corrupt the declared byte_length in the header.
    std::ifstream in(tmp.file("ok.qera"), std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();
    const std::string needle = "\"byte_length\":32";
    const size_t pos = bytes.find(needle);
    REQUIRE(pos != std::string::npos);
    bytes.replace(pos, needle.size(), "\"byte_length\":16");
    {
        std::ofstream out(tmp.file("corrupt.qera"), std::ios::binary);
        out << bytes;
    }
    CHECK_THROWS_AS(TensorContainer::read(tmp.file("corrupt.qera")), IoError);

    CHECK_THROWS_AS(c.matrix("nope"), IoError);
    CHECK_THROWS_AS(c.ints("w"), IoError);
}

TEST_CASE("stats files round-trip") {
    TempDir tmp;
    Matrix g = gaussian(6, 6, 5);
    Matrix rxx = symmetrize(g.transpose() * g);
    rxx.diagonal().array() += 0.2;
    std::vector<CalibStats> stats = {stats_from_rxx(rxx, 1e-8, 1e-12)};
    stats[0].count = 321;
    write_stats_file(tmp.file("stats.qera"), stats);

    std::vector<CalibStats> r = read_stats_file(tmp.file("stats.qera"));
    REQUIRE(r.size() == 1);
    CHECK(bit_equal(r[0].rxx, stats[0].rxx));
    CHECK(bit_equal(r[0].rxx_sqrt, stats[0].rxx_sqrt));
    CHECK(bit_equal(r[0].rxx_inv_sqrt, stats[0].rxx_inv_sqrt));
    CHECK((r[0].s_diag - stats[0].s_diag).norm() == 0.0);
    CHECK(r[0].count == 321);
    CHECK(r[0].eps_used == 1e-8);
    CHECK(r[0].s_floor_used == 1e-12);
}

TEST_CASE("accumulator files round-trip for sharded calibration") {
    TempDir tmp;
    CalibAccumulator acc(5);
    accum_update(acc, gaussian(40, 5, 9));
    write_accumulator_file(tmp.file("acc.qera"), {acc});
    std::vector<CalibAccumulator> r = read_accumulator_file(tmp.file("acc.qera"));
    REQUIRE(r.size() == 1);
    CHECK(r[0].count == 40);
    CHECK(bit_equal(r[0].sum_outer, acc.sum_outer));
    CHECK((r[0].sum_sq - acc.sum_sq).norm() == 0.0);
    CHECK((r[0].sum_abs - acc.sum_abs).norm() == 0.0);
    // A restored shard merges like the live one.
    CalibAccumulator other(5);
    accum_update(other, gaussian(12, 5, 10));
    CalibAccumulator merged = accum_merge(r[0], other);
    CHECK(merged.count == 52);
}

TEST_CASE("model files round-trip") {
    TempDir tmp;
    ModelConfig cfg;
    cfg.dims = {10, 8, 6};
    cfg.nonlinearity = Nonlinearity::TANH;
    cfg.seed = 17;
    SyntheticModel model = build_model(cfg);
    write_model_file(tmp.file("model.qera"), model);
    SyntheticModel r = read_model_file(tmp.file("model.qera"));
    REQUIRE(r.layers.size() == 2);
    CHECK(r.input_dim == 10);
    CHECK(r.output_dim == 6);
    CHECK(r.layers[0].nonlinearity == Nonlinearity::TANH);
    CHECK(r.layers[1].nonlinearity == Nonlinearity::NONE);
    for (size_t l = 0; l < r.layers.size(); ++l)
        CHECK(bit_equal(r.layers[l].weight, model.layers[l].weight));
}

TEST_CASE("quantized model files round-trip for both formats") {
    TempDir tmp;
    ModelConfig cfg;
    cfg.dims = {12, 9};
    cfg.nonlinearity = Nonlinearity::NONE;
    cfg.seed = 19;
    SyntheticModel model = build_model(cfg);

    for (QuantFormat format : {QuantFormat::MXINT, QuantFormat::AFFINE_INT}) {
        QuantSpec spec{format, 4, format == QuantFormat::MXINT ? 32 : 8};
        QuantizedModel q = quantize_model(model, Method::WEIGHT_SVD, spec, 3, {});
        const std::string path = tmp.file("q_" + to_string(format) + ".qera");
        write_quantized_model_file(path, q);
        QuantizedModel r = read_quantized_model_file(path);
        REQUIRE(r.layers.size() == 1);
        CHECK(r.layers[0].wq == q.layers[0].wq);
        CHECK(bit_equal(r.layers[0].a_k, q.layers[0].a_k));
        CHECK(bit_equal(r.layers[0].b_k, q.layers[0].b_k));
        CHECK(r.layers[0].method == Method::WEIGHT_SVD);
        CHECK(r.layers[0].meta.weight_error_per_iter ==
              q.layers[0].meta.weight_error_per_iter);
        CHECK((r.layers[0].effective_weight() - q.layers[0].effective_weight()).norm() ==
              0.0);
    }
}

TEST_CASE("run config parses and rejects unknown keys") {
    nlohmann::json j = {
        {"model", {{"dims", {16, 16, 16}}, {"nonlinearity", "relu"}, {"seed", 5}}},
        {"input", {{"kind", "iid-gaussian"}, {"dim", 16}, {"seed", 9}}},
        {"quant", {{"format", "mxint"}, {"bits", 3}, {"block_size", 32}}},
        {"method", "qera-exact"},
        {"rank", 8},
        {"calib_samples", 256},
        {"out", {{"stats", "s.qera"}, {"quantized", "q.qera"}}},
    };
    RunConfig cfg = RunConfig::from_json(j);
    REQUIRE(cfg.model.has_value());
    CHECK(cfg.model->synthetic->dims == std::vector<Index>{16, 16, 16});
    CHECK(cfg.method == Method::QERA_EXACT);
    CHECK(cfg.rank == 8);
    CHECK(cfg.calib_samples == 256);
    CHECK(cfg.out.stats == "s.qera");

    nlohmann::json bad_root = j;
    bad_root["tpyo"] = 1;
    CHECK_THROWS_WITH_AS(RunConfig::from_json(bad_root), doctest::Contains("tpyo"),
                         std::invalid_argument);

    nlohmann::json bad_nested = j;
    bad_nested["quant"]["bitz"] = 4;
    CHECK_THROWS_WITH_AS(RunConfig::from_json(bad_nested), doctest::Contains("bitz"),
                         std::invalid_argument);
}

TEST_CASE("top-level seed overrides model and input seeds") {
    nlohmann::json j = {
        {"model", {{"dims", {8, 8}}, {"seed", 5}}},
        {"input", {{"kind", "iid-gaussian"}, {"dim", 8}, {"seed", 9}}},
        {"seed", 1234},
    };
    RunConfig cfg = RunConfig::from_json(j);
    CHECK(cfg.model->synthetic->seed == 1234);
    CHECK(cfg.input->seed == 1234);
}

TEST_CASE("config echo reproduces the effective settings") {
    nlohmann::json j = {
        {"model", {{"dims", {8, 8}}, {"nonlinearity", "tanh"}, {"seed", 5}}},
        {"quant", {{"format", "affine-int"}, {"bits", 4}, {"block_size", 8}}},
        {"method", "lqer"},
        {"sweep", {{"axis", "calib-size"}, {"calib_sizes", {32, 64}}}},
    };
    RunConfig cfg = RunConfig::from_json(j);
    nlohmann::json echo = cfg.to_json();
    CHECK(echo["model"]["nonlinearity"] == "tanh");
    CHECK(echo["quant"]["format"] == "affine-int");
    CHECK(echo["method"] == "lqer");
    CHECK(echo["sweep"]["axis"] == "calib-size");
    // The echo itself must be a valid config.
    CHECK_NOTHROW(RunConfig::from_json(echo));
}

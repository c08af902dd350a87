#include "qera/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <numeric>

static_assert(std::endian::native == std::endian::little,
              "container payload I/O assumes a little-endian host");

namespace qera {

namespace {

constexpr char kMagic[4] = {'Q', 'E', 'R', 'A'};
constexpr uint32_t kVersion = 1;

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<uint8_t>(v >> (8 * i)));
}

uint32_t get_u32(const uint8_t* p) {
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(p[i]) << (8 * i);
    return v;
}

uint64_t get_u64(const uint8_t* p) {
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(p[i]) << (8 * i);
    return v;
}

int64_t shape_elements(const std::vector<int64_t>& shape) {
    int64_t n = 1;
    for (int64_t d : shape) {
        if (d < 0) throw IoError("container: negative shape dimension");
        n *= d;
    }
    return n;
}

}  // namespace

size_t dtype_size(const std::string& dtype) {
    if (dtype == "f64") return 8;
    if (dtype == "f32") return 4;
    if (dtype == "i8") return 1;
    if (dtype == "i16") return 2;
    if (dtype == "i32") return 4;
    throw IoError("container: unknown dtype '" + dtype + "'");
}

void TensorContainer::add_raw(const std::string& name, const std::string& dtype,
                              std::vector<int64_t> shape, std::vector<uint8_t> bytes,
                              const std::string& role) {
    if (index_.count(name)) throw IoError("container: duplicate entry '" + name + "'");
    if (static_cast<uint64_t>(shape_elements(shape)) * dtype_size(dtype) != bytes.size())
        throw IoError("container: shape/byte-length mismatch for '" + name + "'");
    Stored s;
    s.entry.name = name;
    s.entry.dtype = dtype;
    s.entry.shape = std::move(shape);
    s.entry.byte_length = bytes.size();
    s.entry.role = role;
    s.bytes = std::move(bytes);
    index_[name] = entries_.size();
    entries_.push_back(std::move(s));
}

void TensorContainer::add_matrix(const std::string& name, const Matrix& m,
                                 const std::string& role) {
    std::vector<uint8_t> bytes(static_cast<size_t>(m.size()) * sizeof(double));
    std::memcpy(bytes.data(), m.data(), bytes.size());
    add_raw(name, "f64", {m.rows(), m.cols()}, std::move(bytes), role);
}

void TensorContainer::add_vector(const std::string& name, const Vector& v,
                                 const std::string& role) {
    std::vector<uint8_t> bytes(static_cast<size_t>(v.size()) * sizeof(double));
    std::memcpy(bytes.data(), v.data(), bytes.size());
    add_raw(name, "f64", {v.size()}, std::move(bytes), role);
}

void TensorContainer::add_ints(const std::string& name, const std::vector<int32_t>& values,
                               const std::string& dtype, std::vector<int64_t> shape,
                               const std::string& role) {
    const size_t width = dtype_size(dtype);
    std::vector<uint8_t> bytes;
    bytes.reserve(values.size() * width);
    for (int32_t v : values) {
        if (dtype == "i8") {
            if (v < INT8_MIN || v > INT8_MAX)
                throw IoError("container: value out of i8 range in '" + name + "'");
            bytes.push_back(static_cast<uint8_t>(static_cast<int8_t>(v)));
        } else if (dtype == "i16") {
            if (v < INT16_MIN || v > INT16_MAX)
                throw IoError("container: value out of i16 range in '" + name + "'");
            auto u = static_cast<uint16_t>(static_cast<int16_t>(v));
            bytes.push_back(static_cast<uint8_t>(u));
            bytes.push_back(static_cast<uint8_t>(u >> 8));
        } else if (dtype == "i32") {
            auto u = static_cast<uint32_t>(v);
            for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<uint8_t>(u >> (8 * i)));
        } else {
            throw IoError("container: add_ints dtype must be i8/i16/i32");
        }
    }
    add_raw(name, dtype, std::move(shape), std::move(bytes), role);
}

bool TensorContainer::has(const std::string& name) const { return index_.count(name) > 0; }

const TensorContainer::Stored& TensorContainer::stored(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw IoError("container: missing entry '" + name + "'");
    return entries_[it->second];
}

const TensorEntry& TensorContainer::entry(const std::string& name) const {
    return stored(name).entry;
}

std::vector<std::string> TensorContainer::names() const {
    std::vector<std::string> out;
    out.reserve(entries_.size());
    for (const auto& s : entries_) out.push_back(s.entry.name);
    return out;
}

Matrix TensorContainer::matrix(const std::string& name) const {
    const Stored& s = stored(name);
    if (s.entry.shape.size() != 2)
        throw IoError("container: entry '" + name + "' is not a matrix");
    Matrix m(s.entry.shape[0], s.entry.shape[1]);
    if (s.entry.dtype == "f64") {
        std::memcpy(m.data(), s.bytes.data(), s.bytes.size());
    } else if (s.entry.dtype == "f32") {
        const float* src = reinterpret_cast<const float*>(s.bytes.data());
        for (Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<double>(src[i]);
    } else {
        throw IoError("container: entry '" + name + "' is not floating point");
    }
    return m;
}

Vector TensorContainer::vector(const std::string& name) const {
    const Stored& s = stored(name);
    if (s.entry.shape.size() != 1)
        throw IoError("container: entry '" + name + "' is not a vector");
    if (s.entry.dtype != "f64")
        throw IoError("container: entry '" + name + "' is not f64");
    Vector v(s.entry.shape[0]);
    std::memcpy(v.data(), s.bytes.data(), s.bytes.size());
    return v;
}

std::vector<int32_t> TensorContainer::ints(const std::string& name) const {
    const Stored& s = stored(name);
    const int64_t n = shape_elements(s.entry.shape);
    std::vector<int32_t> out(static_cast<size_t>(n));
    if (s.entry.dtype == "i8") {
        for (int64_t i = 0; i < n; ++i)
            out[i] = static_cast<int8_t>(s.bytes[static_cast<size_t>(i)]);
    } else if (s.entry.dtype == "i16") {
        for (int64_t i = 0; i < n; ++i) {
            uint16_t u = static_cast<uint16_t>(s.bytes[2 * i]) |
                         (static_cast<uint16_t>(s.bytes[2 * i + 1]) << 8);
            out[i] = static_cast<int16_t>(u);
        }
    } else if (s.entry.dtype == "i32") {
        for (int64_t i = 0; i < n; ++i) out[i] = static_cast<int32_t>(get_u32(&s.bytes[4 * i]));
    } else {
        throw IoError("container: entry '" + name + "' is not integer");
    }
    return out;
}

void TensorContainer::write(const std::string& path) const {
    nlohmann::json header;
    header["meta"] = meta;
    nlohmann::json entries = nlohmann::json::array();
    uint64_t offset = 0;
    for (const Stored& s : entries_) {
        nlohmann::json e;
        e["name"] = s.entry.name;
        e["dtype"] = s.entry.dtype;
        e["shape"] = s.entry.shape;
        e["byte_offset"] = offset;
        e["byte_length"] = s.entry.byte_length;
        e["role"] = s.entry.role;
        entries.push_back(std::move(e));
        offset += s.entry.byte_length;
    }
    header["entries"] = std::move(entries);
    const std::string header_str = header.dump();

    std::vector<uint8_t> out;
    out.insert(out.end(), kMagic, kMagic + 4);
    put_u32(out, kVersion);
    put_u64(out, header_str.size());
    out.insert(out.end(), header_str.begin(), header_str.end());
    for (const Stored& s : entries_) out.insert(out.end(), s.bytes.begin(), s.bytes.end());

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open '" + path + "' for writing");
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) throw IoError("short write to '" + path + "'");
}

TensorContainer TensorContainer::read(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open '" + path + "'");
    std::vector<uint8_t> raw((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
    if (raw.size() < 16) throw IoError("'" + path + "': truncated container header");
    if (std::memcmp(raw.data(), kMagic, 4) != 0)
        throw IoError("'" + path + "': bad magic, not a QERA container");
    const uint32_t version = get_u32(raw.data() + 4);
    if (version != kVersion)
        throw IoError("'" + path + "': unsupported container version " +
                      std::to_string(version));
    const uint64_t header_len = get_u64(raw.data() + 8);
    if (16 + header_len > raw.size())
        throw IoError("'" + path + "': header exceeds file size");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(raw.begin() + 16, raw.begin() + 16 + header_len);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("'" + path + "': malformed header JSON: " + e.what());
    }

    const uint8_t* payload = raw.data() + 16 + header_len;
    const uint64_t payload_len = raw.size() - 16 - header_len;

    TensorContainer c;
    c.meta = header.value("meta", nlohmann::json::object());
    uint64_t expected_offset = 0;
    for (const auto& e : header.at("entries")) {
        TensorEntry entry;
        entry.name = e.at("name").get<std::string>();
        entry.dtype = e.at("dtype").get<std::string>();
        entry.shape = e.at("shape").get<std::vector<int64_t>>();
        entry.byte_offset = e.at("byte_offset").get<uint64_t>();
        entry.byte_length = e.at("byte_length").get<uint64_t>();
        entry.role = e.value("role", "");
        // Contiguous non-overlapping layout is part of the format.
        if (entry.byte_offset != expected_offset)
            throw IoError("'" + path + "': overlapping or out-of-order entry '" +
                          entry.name + "'");
        if (entry.byte_offset + entry.byte_length > payload_len)
            throw IoError("'" + path + "': entry '" + entry.name + "' exceeds payload");
        if (static_cast<uint64_t>(shape_elements(entry.shape)) * dtype_size(entry.dtype) !=
            entry.byte_length)
            throw IoError("'" + path + "': entry '" + entry.name +
                          "' shape inconsistent with byte length");
        expected_offset += entry.byte_length;

        std::vector<uint8_t> bytes(payload + entry.byte_offset,
                                   payload + entry.byte_offset + entry.byte_length);
        c.add_raw(entry.name, entry.dtype, entry.shape, std::move(bytes), entry.role);
    }
    return c;
}

// ---------------------------------------------------------------------------
// File schemas

namespace {

std::string layer_key(size_t l, const char* field) {
    return "layer." + std::to_string(l) + "/" + field;
}

nlohmann::json spec_to_json(const QuantSpec& spec) {
    return {{"format", to_string(spec.format)},
            {"bits", spec.bits},
            {"block_size", spec.block_size}};
}

QuantSpec spec_from_json(const nlohmann::json& j) {
    QuantSpec spec;
    spec.format = quant_format_from_string(j.at("format").get<std::string>());
    spec.bits = j.at("bits").get<int>();
    spec.block_size = j.at("block_size").get<int>();
    return spec;
}

}  // namespace

void write_stats_file(const std::string& path, const std::vector<CalibStats>& stats,
                      const nlohmann::json& extra_meta) {
    TensorContainer c;
    c.meta = extra_meta;
    c.meta["kind"] = "calib-stats";
    c.meta["layer_count"] = stats.size();
    nlohmann::json per_layer = nlohmann::json::array();
    for (size_t l = 0; l < stats.size(); ++l) {
        const CalibStats& s = stats[l];
        c.add_matrix(layer_key(l, "rxx"), s.rxx, "rxx");
        c.add_matrix(layer_key(l, "rxx_sqrt"), s.rxx_sqrt, "rxx_sqrt");
        c.add_matrix(layer_key(l, "rxx_inv_sqrt"), s.rxx_inv_sqrt, "rxx_inv_sqrt");
        c.add_vector(layer_key(l, "s_diag"), s.s_diag, "s_diag");
        c.add_vector(layer_key(l, "lqer_scale"), s.lqer_scale, "lqer_scale");
        per_layer.push_back({{"count", s.count},
                             {"eps_used", s.eps_used},
                             {"s_floor_used", s.s_floor_used}});
    }
    c.meta["layers"] = std::move(per_layer);
    c.write(path);
}

std::vector<CalibStats> read_stats_file(const std::string& path) {
    TensorContainer c = TensorContainer::read(path);
    if (c.meta.value("kind", "") != "calib-stats")
        throw IoError("'" + path + "': not a calib-stats container");
    const size_t n = c.meta.at("layer_count").get<size_t>();
    std::vector<CalibStats> stats(n);
    for (size_t l = 0; l < n; ++l) {
        CalibStats& s = stats[l];
        s.rxx = c.matrix(layer_key(l, "rxx"));
        s.rxx_sqrt = c.matrix(layer_key(l, "rxx_sqrt"));
        s.rxx_inv_sqrt = c.matrix(layer_key(l, "rxx_inv_sqrt"));
        s.s_diag = c.vector(layer_key(l, "s_diag"));
        s.lqer_scale = c.vector(layer_key(l, "lqer_scale"));
        const auto& meta = c.meta.at("layers").at(l);
        s.count = meta.at("count").get<int64_t>();
        s.eps_used = meta.at("eps_used").get<double>();
        s.s_floor_used = meta.at("s_floor_used").get<double>();
    }
    return stats;
}

void write_accumulator_file(const std::string& path,
                            const std::vector<CalibAccumulator>& accs) {
    TensorContainer c;
    c.meta["kind"] = "calib-accumulator";
    c.meta["layer_count"] = accs.size();
    nlohmann::json per_layer = nlohmann::json::array();
    for (size_t l = 0; l < accs.size(); ++l) {
        c.add_matrix(layer_key(l, "sum_outer"), accs[l].sum_outer, "sum_outer");
        c.add_vector(layer_key(l, "sum_sq"), accs[l].sum_sq, "sum_sq");
        c.add_vector(layer_key(l, "sum_abs"), accs[l].sum_abs, "sum_abs");
        per_layer.push_back({{"count", accs[l].count}, {"dim", accs[l].dim}});
    }
    c.meta["layers"] = std::move(per_layer);
    c.write(path);
}

std::vector<CalibAccumulator> read_accumulator_file(const std::string& path) {
    TensorContainer c = TensorContainer::read(path);
    if (c.meta.value("kind", "") != "calib-accumulator")
        throw IoError("'" + path + "': not a calib-accumulator container");
    const size_t n = c.meta.at("layer_count").get<size_t>();
    std::vector<CalibAccumulator> accs;
    accs.reserve(n);
    for (size_t l = 0; l < n; ++l) {
        const auto& meta = c.meta.at("layers").at(l);
        CalibAccumulator acc(meta.at("dim").get<Index>());
        acc.count = meta.at("count").get<int64_t>();
        acc.sum_outer = c.matrix(layer_key(l, "sum_outer"));
        acc.sum_sq = c.vector(layer_key(l, "sum_sq"));
        acc.sum_abs = c.vector(layer_key(l, "sum_abs"));
        if (acc.sum_outer.rows() != acc.dim || acc.sum_sq.size() != acc.dim)
            throw IoError("'" + path + "': accumulator shape mismatch at layer " +
                          std::to_string(l));
        accs.push_back(std::move(acc));
    }
    return accs;
}

void write_model_file(const std::string& path, const SyntheticModel& model) {
    TensorContainer c;
    c.meta["kind"] = "model";
    c.meta["seed"] = model.seed;
    nlohmann::json nls = nlohmann::json::array();
    for (size_t l = 0; l < model.layers.size(); ++l) {
        c.add_matrix(layer_key(l, "weight"), model.layers[l].weight, "weight");
        nls.push_back(to_string(model.layers[l].nonlinearity));
    }
    c.meta["nonlinearities"] = std::move(nls);
    c.write(path);
}

SyntheticModel read_model_file(const std::string& path) {
    TensorContainer c = TensorContainer::read(path);
    if (c.meta.value("kind", "") != "model")
        throw IoError("'" + path + "': not a model container");
    SyntheticModel model;
    model.seed = c.meta.value("seed", 0ull);
    const auto& nls = c.meta.at("nonlinearities");
    for (size_t l = 0; l < nls.size(); ++l) {
        SyntheticModel::Layer layer;
        layer.weight = c.matrix(layer_key(l, "weight"));
        layer.nonlinearity = nonlinearity_from_string(nls.at(l).get<std::string>());
        model.layers.push_back(std::move(layer));
    }
    if (model.layers.empty()) throw IoError("'" + path + "': model has no layers");
    model.input_dim = model.layers.front().weight.rows();
    model.output_dim = model.layers.back().weight.cols();
    for (size_t l = 0; l + 1 < model.layers.size(); ++l)
        if (model.layers[l].weight.cols() != model.layers[l + 1].weight.rows())
            throw IoError("'" + path + "': layer dims do not chain at layer " +
                          std::to_string(l));
    return model;
}

void write_quantized_model_file(const std::string& path, const QuantizedModel& q,
                                const nlohmann::json& extra_meta) {
    TensorContainer c;
    c.meta = extra_meta;
    c.meta["kind"] = "quantized-model";
    nlohmann::json per_layer = nlohmann::json::array();
    for (size_t l = 0; l < q.layers.size(); ++l) {
        const ReconstructedLayer& layer = q.layers[l];
        const QuantizedTensor& t = layer.wq;
        const std::string code_dtype =
            (t.spec.format == QuantFormat::MXINT) ? "i8" : (t.spec.bits <= 15 ? "i16" : "i32");
        c.add_ints(layer_key(l, "codes"), t.codes, code_dtype, {t.rows, t.cols}, "codes");
        const int64_t bpr = t.blocks_per_row();
        if (t.spec.format == QuantFormat::MXINT) {
            std::vector<int32_t> exps(t.scales.size());
            for (size_t i = 0; i < t.scales.size(); ++i) exps[i] = t.scales[i].exponent;
            c.add_ints(layer_key(l, "scale_exponent"), exps, "i16", {t.rows, bpr}, "scales");
        } else {
            Matrix sc(t.rows, bpr);
            std::vector<int32_t> zps(t.scales.size());
            for (Index r = 0; r < t.rows; ++r)
                for (int64_t b = 0; b < bpr; ++b) {
                    sc(r, b) = t.scales[static_cast<size_t>(r) * bpr + b].scale;
                    zps[static_cast<size_t>(r) * bpr + b] =
                        t.scales[static_cast<size_t>(r) * bpr + b].zero_point;
                }
            c.add_matrix(layer_key(l, "scale"), sc, "scales");
            c.add_ints(layer_key(l, "zero_point"), zps, "i32", {t.rows, bpr}, "scales");
        }
        c.add_matrix(layer_key(l, "a_k"), layer.a_k, "a_k");
        c.add_matrix(layer_key(l, "b_k"), layer.b_k, "b_k");

        per_layer.push_back({{"spec", spec_to_json(t.spec)},
                             {"rank", layer.rank},
                             {"method", to_string(layer.method)},
                             {"nonlinearity", to_string(q.nonlinearities[l])},
                             {"eps_used", layer.meta.eps_used},
                             {"iterations", layer.meta.iterations},
                             {"weight_error_per_iter", layer.meta.weight_error_per_iter}});
    }
    c.meta["layers"] = std::move(per_layer);
    c.write(path);
}

QuantizedModel read_quantized_model_file(const std::string& path) {
    TensorContainer c = TensorContainer::read(path);
    if (c.meta.value("kind", "") != "quantized-model")
        throw IoError("'" + path + "': not a quantized-model container");
    QuantizedModel q;
    const auto& layers = c.meta.at("layers");
    for (size_t l = 0; l < layers.size(); ++l) {
        const auto& meta = layers.at(l);
        ReconstructedLayer layer;
        layer.wq.spec = spec_from_json(meta.at("spec"));
        const TensorEntry& codes_entry = c.entry(layer_key(l, "codes"));
        layer.wq.rows = codes_entry.shape.at(0);
        layer.wq.cols = codes_entry.shape.at(1);
        layer.wq.codes = c.ints(layer_key(l, "codes"));
        const int64_t bpr = layer.wq.blocks_per_row();
        layer.wq.scales.resize(static_cast<size_t>(layer.wq.rows) * bpr);
        if (layer.wq.spec.format == QuantFormat::MXINT) {
            std::vector<int32_t> exps = c.ints(layer_key(l, "scale_exponent"));
            for (size_t i = 0; i < exps.size(); ++i)
                layer.wq.scales[i].exponent = static_cast<int16_t>(exps[i]);
        } else {
            Matrix sc = c.matrix(layer_key(l, "scale"));
            std::vector<int32_t> zps = c.ints(layer_key(l, "zero_point"));
            for (size_t i = 0; i < layer.wq.scales.size(); ++i) {
                layer.wq.scales[i].scale = sc.data()[i];
                layer.wq.scales[i].zero_point = zps[i];
            }
        }
        layer.a_k = c.matrix(layer_key(l, "a_k"));
        layer.b_k = c.matrix(layer_key(l, "b_k"));
        layer.rank = meta.at("rank").get<Index>();
        layer.method = method_from_string(meta.at("method").get<std::string>());
        layer.meta.spec = layer.wq.spec;
        layer.meta.eps_used = meta.at("eps_used").get<double>();
        layer.meta.iterations = meta.at("iterations").get<int>();
        layer.meta.weight_error_per_iter =
            meta.at("weight_error_per_iter").get<std::vector<double>>();
        q.layers.push_back(std::move(layer));
        q.nonlinearities.push_back(
            nonlinearity_from_string(meta.at("nonlinearity").get<std::string>()));
    }
    if (q.layers.empty()) throw IoError("'" + path + "': quantized model has no layers");
    q.input_dim = q.layers.front().wq.rows;
    q.output_dim = q.layers.back().wq.cols;
    return q;
}

}  // namespace qera

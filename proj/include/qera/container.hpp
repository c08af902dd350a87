#pragma once

#include "qera/calibration.hpp"
#include "qera/harness.hpp"
#include "qera/reconstruct.hpp"

#include <json.hpp>

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace qera {

/// File-level failure (missing file, truncated payload, malformed header).
/// Maps to CLI exit code 3.
class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

/// One named tensor inside a container file. Offsets are relative to the
/// payload region that follows the JSON header; layout in docs/formats.md.
struct TensorEntry {
    std::string name;
    std::string dtype;  // f64 | f32 | i8 | i16 | i32
    std::vector<int64_t> shape;
    uint64_t byte_offset = 0;
    uint64_t byte_length = 0;
    std::string role;
};

size_t dtype_size(const std::string& dtype);

/// In-memory form of the "QERA" tensor container. Writing then reading
/// reproduces every payload byte exactly.
class TensorContainer {
public:
    void add_matrix(const std::string& name, const Matrix& m, const std::string& role);
    void add_vector(const std::string& name, const Vector& v, const std::string& role);
    void add_ints(const std::string& name, const std::vector<int32_t>& values,
                  const std::string& dtype, std::vector<int64_t> shape,
                  const std::string& role);

    bool has(const std::string& name) const;
    const TensorEntry& entry(const std::string& name) const;
    std::vector<std::string> names() const;  // insertion order

    Matrix matrix(const std::string& name) const;  // f64/f32 entries
    Vector vector(const std::string& name) const;
    std::vector<int32_t> ints(const std::string& name) const;  // i8/i16/i32

    nlohmann::json meta = nlohmann::json::object();

    void write(const std::string& path) const;
    static TensorContainer read(const std::string& path);

private:
    struct Stored {
        TensorEntry entry;
        std::vector<uint8_t> bytes;
    };
    const Stored& stored(const std::string& name) const;
    void add_raw(const std::string& name, const std::string& dtype,
                 std::vector<int64_t> shape, std::vector<uint8_t> bytes,
                 const std::string& role);

    std::vector<Stored> entries_;
    std::map<std::string, size_t> index_;
};

// File schemas on top of the container (docs/formats.md).

void write_stats_file(const std::string& path, const std::vector<CalibStats>& stats,
                      const nlohmann::json& extra_meta = nlohmann::json::object());
std::vector<CalibStats> read_stats_file(const std::string& path);

/// Raw accumulator sums, for sharded calibrate runs that merge later.
void write_accumulator_file(const std::string& path,
                            const std::vector<CalibAccumulator>& accs);
std::vector<CalibAccumulator> read_accumulator_file(const std::string& path);

void write_model_file(const std::string& path, const SyntheticModel& model);
SyntheticModel read_model_file(const std::string& path);

void write_quantized_model_file(const std::string& path, const QuantizedModel& q,
                                const nlohmann::json& extra_meta = nlohmann::json::object());
QuantizedModel read_quantized_model_file(const std::string& path);

}  // namespace qera

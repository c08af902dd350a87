#pragma once

#include "qera/matrix_core.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace qera {

enum class QuantFormat { MXINT, AFFINE_INT };

std::string to_string(QuantFormat f);
QuantFormat quant_format_from_string(const std::string& s);

/// Quantization scheme descriptor. Blocks run along the last axis (the
/// input-feature axis of x*W), ceil(cols/block_size) blocks per row.
struct QuantSpec {
    QuantFormat format = QuantFormat::MXINT;
    int bits = 4;
    int block_size = 32;

    /// MXINT: bits in [2,8], block_size in {16,32,64}. AFFINE_INT: bits in
    /// [2,16], block_size >= 1. Throws std::invalid_argument otherwise.
    void validate() const;

    /// Reported storage cost per weight including per-block metadata.
    /// MXINT: bits + 8/block_size (8-bit shared exponent).
    /// AFFINE_INT: bits + (32 + bits)/block_size (f32 scale + zero point);
    /// the codec layout is frozen in docs/formats.md.
    double average_bits() const;

    bool operator==(const QuantSpec&) const = default;
};

/// Per-block scale metadata. MXINT uses `exponent`; AFFINE_INT uses
/// `scale` and `zero_point`.
struct BlockScale {
    int16_t exponent = 0;
    double scale = 0.0;
    int32_t zero_point = 0;

    bool operator==(const BlockScale&) const = default;
};

/// Packed storage form of W_q: one signed code per element plus per-block
/// metadata, laid out row by row.
struct QuantizedTensor {
    QuantSpec spec;
    Index rows = 0;
    Index cols = 0;
    std::vector<int32_t> codes;       // rows*cols, row-major
    std::vector<BlockScale> scales;   // rows * ceil(cols/block_size)

    Index blocks_per_row() const {
        return (cols + spec.block_size - 1) / spec.block_size;
    }

    bool operator==(const QuantizedTensor&) const = default;
};

/// q(W): block-wise codec defined in docs/formats.md.
/// MXINT: shared exponent e = floor(log2(max|w|)) per block (0 for an
/// all-zero block, clamped to >= -126), step = 2^(e-(bits-2)),
/// code = clamp(round_half_to_even(w/step), -(2^(bits-1)-1), 2^(bits-1)-1).
/// The clamp is symmetric so round-trips are idempotent.
/// AFFINE_INT: scale = (max-min)/(2^bits-1) snapped to f32 precision
/// (1 if max == min), zero_point = round(-min/scale),
/// code = clamp(round((w-min)/scale), 0, 2^bits-1).
QuantizedTensor quantize(const Matrix& w, const QuantSpec& spec);

/// dq(W_q): MXINT w~ = code*step; AFFINE_INT w~ = (code-zp)*scale.
Matrix dequantize(const QuantizedTensor& t);

/// w - dq(q(w)).
Matrix quant_error(const Matrix& w, const QuantSpec& spec);

/// Ties-to-even rounding, independent of the FP environment.
double round_half_even(double x);

}  // namespace qera

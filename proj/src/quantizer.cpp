#include "qera/quantizer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace qera {

std::string to_string(QuantFormat f) {
    switch (f) {
        case QuantFormat::MXINT: return "mxint";
        case QuantFormat::AFFINE_INT: return "affine-int";
    }
    return "?";
}

QuantFormat quant_format_from_string(const std::string& s) {
    if (s == "mxint") return QuantFormat::MXINT;
    if (s == "affine-int") return QuantFormat::AFFINE_INT;
    throw std::invalid_argument("unknown quant format: " + s);
}

void QuantSpec::validate() const {
    if (format == QuantFormat::MXINT) {
        if (bits < 2 || bits > 8)
            throw std::invalid_argument("MXINT bits must be in [2,8], got " + std::to_string(bits));
        if (block_size != 16 && block_size != 32 && block_size != 64)
            throw std::invalid_argument("MXINT block_size must be 16, 32 or 64, got " +
                                        std::to_string(block_size));
    } else {
        if (bits < 2 || bits > 16)
            throw std::invalid_argument("AFFINE_INT bits must be in [2,16], got " +
                                        std::to_string(bits));
        if (block_size < 1)
            throw std::invalid_argument("block_size must be >= 1, got " +
                                        std::to_string(block_size));
    }
}

double QuantSpec::average_bits() const {
    if (format == QuantFormat::MXINT)
        return bits + 8.0 / block_size;
    return bits + (32.0 + bits) / block_size;
}

double round_half_even(double x) {
    const double f = std::floor(x);
    const double frac = x - f;
    if (frac > 0.5) return f + 1.0;
    if (frac < 0.5) return f;
    return (std::fmod(f, 2.0) == 0.0) ? f : f + 1.0;
}

namespace {

void quantize_block_mxint(const double* w, Index n, int bits,
                          int32_t* codes, BlockScale& scale) {
    double amax = 0.0;
    for (Index i = 0; i < n; ++i) amax = std::max(amax, std::abs(w[i]));
    int e = 0;
    if (amax > 0.0) {
        e = static_cast<int>(std::floor(std::log2(amax)));
        if (e < -126) e = -126;  // subnormal-range blocks pin the exponent
    }
    const double step = std::ldexp(1.0, e - (bits - 2));
    // Symmetric clamp: code -2^(bits-1) would dequantize to magnitude
    // 2^(e+1), bumping the shared exponent on requantization and breaking
    // q(dq(q(w))) == q(w).
    const double hi = std::ldexp(1.0, bits - 1) - 1.0;
    const double lo = -hi;
    for (Index i = 0; i < n; ++i) {
        double c = round_half_even(w[i] / step);
        c = std::clamp(c, lo, hi);
        codes[i] = static_cast<int32_t>(c);
    }
    scale.exponent = static_cast<int16_t>(e);
}

void quantize_block_affine(const double* w, Index n, int bits,
                           int32_t* codes, BlockScale& scale) {
    double mn = w[0], mx = w[0];
    for (Index i = 1; i < n; ++i) {
        mn = std::min(mn, w[i]);
        mx = std::max(mx, w[i]);
    }
    const double levels = std::ldexp(1.0, bits) - 1.0;
    // Scale snapped to f32 precision so grid values (code - zp) * s are
    // exact doubles; re-deriving the scale from a dequantized block then
    // reproduces it bit for bit (round-trip idempotence).
    const double s =
        (mx == mn) ? 1.0 : static_cast<double>(static_cast<float>((mx - mn) / levels));
    if (!(s > 0.0) || !std::isfinite(s))
        throw std::invalid_argument("affine quantize: block range under/overflows the scale");
    const double zp_real = std::round(-mn / s);
    if (std::abs(zp_real) > 1048576.0)
        throw std::invalid_argument("affine quantize: block dynamic range too extreme");
    const int32_t zp = static_cast<int32_t>(zp_real);
    for (Index i = 0; i < n; ++i) {
        // Min-referenced form of round(w/s) + zp: pins the block min to
        // code 0 and the max to the top code without rounding slack.
        double c = std::round((w[i] - mn) / s);
        c = std::clamp(c, 0.0, levels);
        codes[i] = static_cast<int32_t>(c);
    }
    scale.scale = s;
    scale.zero_point = zp;
}

}  // namespace

QuantizedTensor quantize(const Matrix& w, const QuantSpec& spec) {
    spec.validate();
    require_finite(w, "quantize");
    QuantizedTensor t;
    t.spec = spec;
    t.rows = w.rows();
    t.cols = w.cols();
    t.codes.resize(static_cast<size_t>(w.rows()) * w.cols());
    t.scales.resize(static_cast<size_t>(w.rows()) * t.blocks_per_row());

    const Index bpr = t.blocks_per_row();
    for (Index r = 0; r < w.rows(); ++r) {
        const double* row = w.data() + r * w.cols();
        int32_t* crow = t.codes.data() + r * w.cols();
        for (Index b = 0; b < bpr; ++b) {
            const Index start = b * spec.block_size;
            const Index len = std::min<Index>(spec.block_size, w.cols() - start);
            BlockScale& s = t.scales[static_cast<size_t>(r) * bpr + b];
            if (spec.format == QuantFormat::MXINT)
                quantize_block_mxint(row + start, len, spec.bits, crow + start, s);
            else
                quantize_block_affine(row + start, len, spec.bits, crow + start, s);
        }
    }
    return t;
}

Matrix dequantize(const QuantizedTensor& t) {
    Matrix w(t.rows, t.cols);
    const Index bpr = t.blocks_per_row();
    for (Index r = 0; r < t.rows; ++r) {
        const int32_t* crow = t.codes.data() + r * t.cols;
        double* row = w.data() + r * t.cols;
        for (Index b = 0; b < bpr; ++b) {
            const Index start = b * t.spec.block_size;
            const Index len = std::min<Index>(t.spec.block_size, t.cols - start);
            const BlockScale& s = t.scales[static_cast<size_t>(r) * bpr + b];
            if (t.spec.format == QuantFormat::MXINT) {
                const double step = std::ldexp(1.0, s.exponent - (t.spec.bits - 2));
                for (Index i = 0; i < len; ++i) row[start + i] = crow[start + i] * step;
            } else {
                for (Index i = 0; i < len; ++i)
                    row[start + i] = (crow[start + i] - s.zero_point) * s.scale;
            }
        }
    }
    return w;
}

Matrix quant_error(const Matrix& w, const QuantSpec& spec) {
    return w - dequantize(quantize(w, spec));
}

}  // namespace qera

#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <string_view>

namespace fxdetect {

// Signed fixed-point format: `width` total bits including sign, `frac_bits`
// fractional bits. Raw values are two's-complement integers in
// [-2^(width-1), 2^(width-1)-1]; a raw value v represents v * 2^-frac_bits.
struct QFormat {
    int width = 16;
    int frac_bits = 0;

    int int_bits() const { return width - 1 - frac_bits; }
    std::int64_t raw_min() const { return -(std::int64_t{1} << (width - 1)); }
    std::int64_t raw_max() const { return (std::int64_t{1} << (width - 1)) - 1; }
    double step() const { return std::ldexp(1.0, -frac_bits); }
    double real_min() const { return std::ldexp(static_cast<double>(raw_min()), -frac_bits); }
    double real_max() const { return std::ldexp(static_cast<double>(raw_max()), -frac_bits); }

    bool valid() const {
        return width >= 2 && width <= 32 && frac_bits >= 0 && frac_bits <= width - 1;
    }

    bool operator==(const QFormat&) const = default;
};

// Absolute-value range observed over a set of samples. max_abs only grows as
// samples are added; min_abs is recorded but does not influence format
// derivation.
struct DynamicRange {
    double min_abs = std::numeric_limits<double>::infinity();
    double max_abs = 0.0;

    bool empty() const { return min_abs > max_abs; }

    void include(double x) {
        const double a = std::fabs(x);
        if (a < min_abs) min_abs = a;
        if (a > max_abs) max_abs = a;
    }

    void merge(const DynamicRange& other) {
        if (other.min_abs < min_abs) min_abs = other.min_abs;
        if (other.max_abs > max_abs) max_abs = other.max_abs;
    }
};

// Largest frac_bits such that max_abs fits the positive raw range. max_abs = 0
// yields maximal precision (frac_bits = width-1). Throws when even frac_bits=0
// cannot hold max_abs; `context` names the offending layer/tensor in the
// message.
QFormat derive_qformat(double max_abs, int width, std::string_view context = {});
QFormat derive_qformat(const DynamicRange& range, int width, std::string_view context = {});

// Round-half-away-from-zero with saturation to the raw range.
std::int32_t quantize_value(double x, const QFormat& q);

// Exact inverse map, no rounding.
double dequantize_value(std::int64_t raw, const QFormat& q);

// Rescale a wide MAC accumulator (carrying in_q.frac_bits + w_q.frac_bits
// fractional bits) to out_q, rounding half away from zero and saturating.
std::int32_t requantize_accumulator(std::int64_t acc, const QFormat& in_q, const QFormat& w_q,
                                    const QFormat& out_q);

}  // namespace fxdetect

#include "fxdetect/qformat.hpp"

#include <sstream>
#include <stdexcept>

namespace fxdetect {

QFormat derive_qformat(double max_abs, int width, std::string_view context) {
    if (width < 2 || width > 32) {
        throw std::invalid_argument("derive_qformat: width " + std::to_string(width) +
                                    " outside [2, 32]");
    }
    if (!(max_abs >= 0.0)) {
        throw std::invalid_argument("derive_qformat: max_abs must be >= 0");
    }
    if (max_abs == 0.0) return QFormat{width, width - 1};

    const double top = static_cast<double>((std::int64_t{1} << (width - 1)) - 1);
    for (int frac = width - 1; frac >= 0; --frac) {
        if (max_abs <= std::ldexp(top, -frac)) return QFormat{width, frac};
    }

    std::ostringstream msg;
    msg << "range overflow: max_abs " << max_abs << " does not fit width " << width
        << " even with frac_bits 0";
    if (!context.empty()) msg << " (" << context << ")";
    throw std::range_error(msg.str());
}

QFormat derive_qformat(const DynamicRange& range, int width, std::string_view context) {
    return derive_qformat(range.empty() ? 0.0 : range.max_abs, width, context);
}

std::int32_t quantize_value(double x, const QFormat& q) {
    if (std::isnan(x)) return 0;
    const double scaled = std::ldexp(x, q.frac_bits);
    if (scaled >= static_cast<double>(q.raw_max())) return static_cast<std::int32_t>(q.raw_max());
    if (scaled <= static_cast<double>(q.raw_min())) return static_cast<std::int32_t>(q.raw_min());
    // llround rounds half away from zero
    return static_cast<std::int32_t>(std::llround(scaled));
}

double dequantize_value(std::int64_t raw, const QFormat& q) {
    return std::ldexp(static_cast<double>(raw), -q.frac_bits);
}

std::int32_t requantize_accumulator(std::int64_t acc, const QFormat& in_q, const QFormat& w_q,
                                    const QFormat& out_q) {
    const int shift = in_q.frac_bits + w_q.frac_bits - out_q.frac_bits;
    __int128 v;
    if (shift >= 0) {
        const __int128 d = __int128{1} << shift;
        v = acc >= 0 ? (acc + d / 2) / d : (acc - d / 2) / d;
    } else {
        v = static_cast<__int128>(acc) << (-shift);
    }
    if (v > out_q.raw_max()) return static_cast<std::int32_t>(out_q.raw_max());
    if (v < out_q.raw_min()) return static_cast<std::int32_t>(out_q.raw_min());
    return static_cast<std::int32_t>(v);
}

}  // namespace fxdetect

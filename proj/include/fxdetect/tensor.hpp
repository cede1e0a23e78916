#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "fxdetect/qformat.hpp"

namespace fxdetect {

struct Shape {
    int n = 0, c = 0, h = 0, w = 0;

    std::size_t count() const {
        return static_cast<std::size_t>(n) * c * h * w;
    }
    bool operator==(const Shape&) const = default;
};

enum class NumericKind { Real, Fixed };

// Dense NCHW tensor, row-major. Either real (double) or fixed-point raw
// int32 values with an attached QFormat.
struct Tensor {
    Shape shape{};
    NumericKind kind = NumericKind::Real;
    QFormat qf{};                    // meaningful only when kind == Fixed
    std::vector<double> vals;        // Real storage
    std::vector<std::int32_t> raw;   // Fixed storage

    static Tensor real(Shape s) {
        Tensor t;
        t.shape = s;
        t.kind = NumericKind::Real;
        t.vals.assign(s.count(), 0.0);
        return t;
    }

    static Tensor fixed(Shape s, QFormat q) {
        Tensor t;
        t.shape = s;
        t.kind = NumericKind::Fixed;
        t.qf = q;
        t.raw.assign(s.count(), 0);
        return t;
    }

    std::size_t index(int n_, int c_, int y, int x) const {
        return ((static_cast<std::size_t>(n_) * shape.c + c_) * shape.h + y) * shape.w + x;
    }

    double& at(int n_, int c_, int y, int x) { return vals[index(n_, c_, y, x)]; }
    double at(int n_, int c_, int y, int x) const { return vals[index(n_, c_, y, x)]; }
    std::int32_t& raw_at(int n_, int c_, int y, int x) { return raw[index(n_, c_, y, x)]; }
    std::int32_t raw_at(int n_, int c_, int y, int x) const { return raw[index(n_, c_, y, x)]; }

    std::size_t count() const { return shape.count(); }
};

// Elementwise quantize_value; shape preserved.
Tensor quantize_tensor(const Tensor& t, const QFormat& q);

// Elementwise dequantize_value.
Tensor dequantize_tensor(const Tensor& t);

// FXT1 blob: 32-byte little-endian header (magic "FXT1", u32 dtype code,
// u32 qformat width, u32 frac bits, 4 x u32 dims) followed by the flat
// payload. dtype 0 = real float64, dtype 1 = fixed int32 raw.
void write_tensor_blob(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor_blob(const std::filesystem::path& path);

// FNV-1a 64 over a file's bytes; used for manifest blob checksums.
std::uint64_t file_checksum(const std::filesystem::path& path);

}  // namespace fxdetect

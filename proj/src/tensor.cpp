#include "fxdetect/tensor.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

static_assert(std::endian::native == std::endian::little,
              "FXT1 blob I/O assumes a little-endian host");

namespace fxdetect {

Tensor quantize_tensor(const Tensor& t, const QFormat& q) {
    if (t.kind != NumericKind::Real) {
        throw std::invalid_argument("quantize_tensor: input must be a real tensor");
    }
    Tensor out = Tensor::fixed(t.shape, q);
    for (std::size_t i = 0; i < t.vals.size(); ++i) {
        out.raw[i] = quantize_value(t.vals[i], q);
    }
    return out;
}

Tensor dequantize_tensor(const Tensor& t) {
    if (t.kind != NumericKind::Fixed) {
        throw std::invalid_argument("dequantize_tensor: input must be a fixed tensor");
    }
    Tensor out = Tensor::real(t.shape);
    for (std::size_t i = 0; i < t.raw.size(); ++i) {
        out.vals[i] = dequantize_value(t.raw[i], t.qf);
    }
    return out;
}

namespace {

constexpr char kMagic[4] = {'F', 'X', 'T', '1'};
constexpr std::uint32_t kDtypeReal = 0;
constexpr std::uint32_t kDtypeFixed = 1;

void put_u32(char* p, std::uint32_t v) { std::memcpy(p, &v, 4); }
std::uint32_t get_u32(const char* p) {
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
}

}  // namespace

void write_tensor_blob(const std::filesystem::path& path, const Tensor& t) {
    char header[32] = {};
    std::memcpy(header, kMagic, 4);
    const bool fixed = t.kind == NumericKind::Fixed;
    put_u32(header + 4, fixed ? kDtypeFixed : kDtypeReal);
    put_u32(header + 8, fixed ? static_cast<std::uint32_t>(t.qf.width) : 0);
    put_u32(header + 12, fixed ? static_cast<std::uint32_t>(t.qf.frac_bits) : 0);
    put_u32(header + 16, static_cast<std::uint32_t>(t.shape.n));
    put_u32(header + 20, static_cast<std::uint32_t>(t.shape.c));
    put_u32(header + 24, static_cast<std::uint32_t>(t.shape.h));
    put_u32(header + 28, static_cast<std::uint32_t>(t.shape.w));

    const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot open for write: " + tmp.string());
        f.write(header, sizeof(header));
        if (fixed) {
            f.write(reinterpret_cast<const char*>(t.raw.data()),
                    static_cast<std::streamsize>(t.raw.size() * sizeof(std::int32_t)));
        } else {
            f.write(reinterpret_cast<const char*>(t.vals.data()),
                    static_cast<std::streamsize>(t.vals.size() * sizeof(double)));
        }
        if (!f) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Tensor read_tensor_blob(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open tensor blob: " + path.string());
    char header[32];
    f.read(header, sizeof(header));
    if (f.gcount() != sizeof(header) || std::memcmp(header, kMagic, 4) != 0) {
        throw std::runtime_error("not an FXT1 tensor blob: " + path.string());
    }
    const std::uint32_t dtype = get_u32(header + 4);
    const auto width = static_cast<int>(get_u32(header + 8));
    const auto frac = static_cast<int>(get_u32(header + 12));
    Shape shape{static_cast<int>(get_u32(header + 16)), static_cast<int>(get_u32(header + 20)),
                static_cast<int>(get_u32(header + 24)), static_cast<int>(get_u32(header + 28))};
    if (shape.n <= 0 || shape.c <= 0 || shape.h <= 0 || shape.w <= 0) {
        throw std::runtime_error("tensor blob has degenerate dims: " + path.string());
    }

    Tensor t;
    t.shape = shape;
    if (dtype == kDtypeReal) {
        t.kind = NumericKind::Real;
        t.vals.resize(shape.count());
        f.read(reinterpret_cast<char*>(t.vals.data()),
               static_cast<std::streamsize>(t.vals.size() * sizeof(double)));
    } else if (dtype == kDtypeFixed) {
        t.kind = NumericKind::Fixed;
        t.qf = QFormat{width, frac};
        if (!t.qf.valid()) {
            throw std::runtime_error("tensor blob has invalid qformat: " + path.string());
        }
        t.raw.resize(shape.count());
        f.read(reinterpret_cast<char*>(t.raw.data()),
               static_cast<std::streamsize>(t.raw.size() * sizeof(std::int32_t)));
    } else {
        throw std::runtime_error("unknown tensor blob dtype code: " + path.string());
    }
    if (!f) throw std::runtime_error("truncated tensor blob: " + path.string());

    if (t.kind == NumericKind::Fixed) {
        for (std::int32_t v : t.raw) {
            if (v < t.qf.raw_min() || v > t.qf.raw_max()) {
                throw std::runtime_error("raw value outside qformat range in blob: " +
                                         path.string());
            }
        }
    }
    return t;
}

std::uint64_t file_checksum(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for checksum: " + path.string());
    std::uint64_t hash = 0xcbf29ce484222325ull;
    char buf[4096];
    while (f.read(buf, sizeof(buf)) || f.gcount() > 0) {
        const std::streamsize got = f.gcount();
        for (std::streamsize i = 0; i < got; ++i) {
            hash ^= static_cast<unsigned char>(buf[i]);
            hash *= 0x100000001b3ull;
        }
        if (!f) break;
    }
    return hash;
}

}  // namespace fxdetect

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

#include "fxdetect/image.hpp"

namespace fxdetect {

namespace {

// next whitespace-delimited token, skipping '#' comment lines
std::string pnm_token(std::istream& in, const std::string& where) {
    std::string tok;
    for (;;) {
        const int c = in.get();
        if (c == EOF) throw std::runtime_error(where + ": truncated header");
        if (std::isspace(c)) continue;
        if (c == '#') {
            std::string skip;
            std::getline(in, skip);
            continue;
        }
        tok.push_back(static_cast<char>(c));
        break;
    }
    for (;;) {
        const int c = in.get();
        if (c == EOF || std::isspace(c)) break;
        tok.push_back(static_cast<char>(c));
    }
    return tok;
}

int pnm_int(std::istream& in, const std::string& where) {
    const std::string tok = pnm_token(in, where);
    try {
        return std::stoi(tok);
    } catch (...) {
        throw std::runtime_error(where + ": bad header field '" + tok + "'");
    }
}

Tensor load_pnm(std::ifstream& f, bool color, const std::string& where) {
    const int w = pnm_int(f, where);
    const int h = pnm_int(f, where);
    const int maxval = pnm_int(f, where);
    if (w < 1 || h < 1) throw std::runtime_error(where + ": bad dimensions");
    if (maxval < 1 || maxval > 255) {
        throw std::runtime_error(where + ": only 8-bit images supported (maxval " +
                                 std::to_string(maxval) + ")");
    }
    const int channels = color ? 3 : 1;
    std::vector<unsigned char> bytes(static_cast<std::size_t>(w) * h * channels);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (f.gcount() != static_cast<std::streamsize>(bytes.size())) {
        throw std::runtime_error(where + ": truncated pixel payload");
    }
    Tensor t = Tensor::real(Shape{1, channels, h, w});
    // PNM is pixel-interleaved; tensor storage is planar
    for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
    for (int c = 0; c < channels; ++c) {
        const auto v = bytes[(static_cast<std::size_t>(y) * w + x) * channels + c];
        t.at(0, c, y, x) = static_cast<double>(v) / maxval;
    }
    return t;
}

}  // namespace

Tensor load_image(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open image: " + path.string());
    char magic[4] = {};
    f.read(magic, 4);
    if (f.gcount() < 2) throw std::runtime_error("unreadable image header: " + path.string());
    if (magic[0] == 'F' && magic[1] == 'X' && magic[2] == 'T' && magic[3] == '1') {
        f.close();
        Tensor t = read_tensor_blob(path);
        return t.kind == NumericKind::Real ? t : dequantize_tensor(t);
    }
    if (magic[0] == 'P' && (magic[1] == '5' || magic[1] == '6')) {
        f.seekg(2);
        return load_pnm(f, magic[1] == '6', path.string());
    }
    throw std::runtime_error("unsupported image magic in " + path.string() +
                             " (expected P5, P6, or FXT1)");
}

void write_pgm(const std::filesystem::path& path, const Tensor& t) {
    if (t.kind != NumericKind::Real || t.shape.n != 1 || t.shape.c != 1) {
        throw std::invalid_argument("write_pgm: need a 1x1xHxW real tensor");
    }
    const auto tmp = path.parent_path() / (path.filename().string() + ".tmp");
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write image: " + tmp.string());
        f << "P5\n" << t.shape.w << " " << t.shape.h << "\n255\n";
        for (int y = 0; y < t.shape.h; ++y)
        for (int x = 0; x < t.shape.w; ++x) {
            const double v = std::clamp(t.at(0, 0, y, x), 0.0, 1.0);
            f.put(static_cast<char>(static_cast<int>(std::lround(v * 255.0))));
        }
        if (!f) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

}  // namespace fxdetect

#pragma once

// Grayscale raster with physical pixel spacing, plus binary PGM I/O. PGM is
// the interchange format for every image artifact this project writes; 16-bit
// samples follow the netpbm convention (most significant byte first).

#include <cmath>
#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace klp {

struct Raster {
    std::size_t width = 0;
    std::size_t height = 0;
    double spacing = 1.0;  // mm per pixel, isotropic
    std::vector<double> samples;  // row-major, height*width

    Raster() = default;
    Raster(std::size_t w, std::size_t h, double sp)
        : width(w), height(h), spacing(sp), samples(w * h, 0.0) {
        if (sp <= 0.0) throw std::invalid_argument("Raster: spacing must be positive");
    }

    double& at(std::size_t x, std::size_t y) { return samples[y * width + x]; }
    double at(std::size_t x, std::size_t y) const { return samples[y * width + x]; }
    std::size_t size() const { return samples.size(); }
};

namespace detail {

inline void write_pgm(const std::string& path, const Raster& img, unsigned maxval) {
    if (img.samples.size() != img.width * img.height) {
        throw std::invalid_argument("write_pgm: sample count does not match dimensions");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("write_pgm: cannot open " + path);
    out << "P5\n" << img.width << " " << img.height << "\n" << maxval << "\n";
    for (double v : img.samples) {
        long q = std::lround(v);
        if (q < 0) q = 0;
        if (q > static_cast<long>(maxval)) q = static_cast<long>(maxval);
        if (maxval > 255) {
            const auto u = static_cast<std::uint16_t>(q);
            out.put(static_cast<char>(u >> 8));
            out.put(static_cast<char>(u & 0xff));
        } else {
            out.put(static_cast<char>(q));
        }
    }
    if (!out) throw std::runtime_error("write_pgm: short write to " + path);
}

}  // namespace detail

inline void write_pgm8(const std::string& path, const Raster& img) {
    detail::write_pgm(path, img, 255);
}

inline void write_pgm16(const std::string& path, const Raster& img) {
    detail::write_pgm(path, img, 65535);
}

// Reads binary P5. The format carries no physical metadata, so the caller
// supplies the spacing (normally from the manifest).
inline Raster read_pgm(const std::string& path, double spacing) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("read_pgm: cannot open " + path);
    auto next_token = [&in, &path]() {
        std::string tok;
        while (true) {
            int c = in.get();
            if (c == std::char_traits<char>::eof())
                throw std::runtime_error("read_pgm: truncated header in " + path);
            if (c == '#') {
                while (c != '\n' && c != std::char_traits<char>::eof()) c = in.get();
                continue;
            }
            if (std::isspace(c)) {
                if (tok.empty()) continue;
                return tok;
            }
            tok.push_back(static_cast<char>(c));
        }
    };
    if (next_token() != "P5") throw std::runtime_error("read_pgm: " + path + " is not binary PGM");
    const std::size_t w = std::stoul(next_token());
    const std::size_t h = std::stoul(next_token());
    const unsigned maxval = static_cast<unsigned>(std::stoul(next_token()));
    if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) {
        throw std::runtime_error("read_pgm: bad header in " + path);
    }
    Raster img(w, h, spacing);
    const std::size_t bytes_per = maxval > 255 ? 2 : 1;
    std::vector<unsigned char> buf(w * h * bytes_per);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(in.gcount()) != buf.size()) {
        throw std::runtime_error("read_pgm: truncated pixel data in " + path);
    }
    for (std::size_t i = 0; i < w * h; ++i) {
        img.samples[i] = bytes_per == 2
                             ? static_cast<double>((buf[2 * i] << 8) | buf[2 * i + 1])
                             : static_cast<double>(buf[i]);
    }
    return img;
}

}  // namespace klp

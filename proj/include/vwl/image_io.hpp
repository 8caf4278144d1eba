#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "vwl/core.hpp"

namespace vwl {

// Binary PPM (P6) / PGM (P5) I/O. Images live in memory as H x W x 3 real
// tensors in [0,1]; on disk they are 8-bit. Values written are
// round(clamp(v)*255), so any tensor already quantized to 255ths
// round-trips exactly.

template <class T>
inline uint8_t to_byte(T x) {
    double v = static_cast<double>(x);
    if (v < 0.0) v = 0.0;
    if (v > 1.0) v = 1.0;
    return static_cast<uint8_t>(v * 255.0 + 0.5);
}

template <class T>
inline T from_byte(uint8_t b) {
    return static_cast<T>(b) / static_cast<T>(255);
}

// quantize to the exact grid of representable PPM intensities
template <class T>
inline T snap_to_byte_grid(T x) {
    return from_byte<T>(to_byte(x));
}

template <class T>
void write_ppm(const std::string& path, const Tensor<T>& img) {
    if (img.dims.size() != 3 || img.dim(2) != 3)
        throw ShapeError("write_ppm expects HxWx3, got " + shape_str(img.dims));
    const int h = img.dim(0), w = img.dim(1);
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path);
    out << "P6\n" << w << " " << h << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(w) * 3);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x)
            for (int c = 0; c < 3; ++c) row[static_cast<size_t>(x) * 3 + c] = to_byte(img(y, x, c));
        out.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!out) throw FormatError("short write: " + path);
}

namespace detail {
inline int read_pnm_token(std::istream& in) {
    // skips whitespace and '#' comments per the PNM spec
    int c = in.get();
    while (c != EOF) {
        if (c == '#') {
            while (c != EOF && c != '\n') c = in.get();
        } else if (!std::isspace(c)) {
            break;
        }
        c = in.get();
    }
    if (c == EOF) throw FormatError("truncated PNM header");
    int val = 0;
    bool any = false;
    while (c != EOF && std::isdigit(c)) {
        val = val * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw FormatError("malformed PNM header");
    return val;
}
}  // namespace detail

template <class T>
Tensor<T> read_ppm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    char m0 = static_cast<char>(in.get()), m1 = static_cast<char>(in.get());
    if (m0 != 'P' || m1 != '6') throw FormatError("not a binary PPM (P6): " + path);
    int w = detail::read_pnm_token(in);
    int h = detail::read_pnm_token(in);
    int maxv = detail::read_pnm_token(in);
    if (maxv != 255) throw FormatError("unsupported PPM maxval " + std::to_string(maxv));
    Tensor<T> img({h, w, 3});
    std::vector<uint8_t> buf(static_cast<size_t>(w) * h * 3);
    in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (in.gcount() != static_cast<std::streamsize>(buf.size()))
        throw FormatError("truncated PPM payload: " + path);
    for (size_t i = 0; i < buf.size(); ++i) img.v[i] = from_byte<T>(buf[i]);
    return img;
}

inline void write_pgm(const std::string& path, const std::vector<uint8_t>& mask, int h, int w) {
    if (static_cast<long long>(mask.size()) != static_cast<long long>(h) * w)
        throw ShapeError("mask size does not match " + std::to_string(h) + "x" + std::to_string(w));
    std::ofstream out(path, std::ios::binary);
    if (!out) throw FormatError("cannot open for writing: " + path);
    out << "P5\n" << w << " " << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
    if (!out) throw FormatError("short write: " + path);
}

inline std::vector<uint8_t> read_pgm(const std::string& path, int& h, int& w) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open: " + path);
    char m0 = static_cast<char>(in.get()), m1 = static_cast<char>(in.get());
    if (m0 != 'P' || m1 != '5') throw FormatError("not a binary PGM (P5): " + path);
    w = detail::read_pnm_token(in);
    h = detail::read_pnm_token(in);
    int maxv = detail::read_pnm_token(in);
    if (maxv != 255) throw FormatError("unsupported PGM maxval " + std::to_string(maxv));
    std::vector<uint8_t> mask(static_cast<size_t>(w) * h);
    in.read(reinterpret_cast<char*>(mask.data()), static_cast<std::streamsize>(mask.size()));
    if (in.gcount() != static_cast<std::streamsize>(mask.size()))
        throw FormatError("truncated PGM payload: " + path);
    return mask;
}

}  // namespace vwl

#pragma once

#include <cmath>
#include <fstream>
#include <string>

#include "kbdm/tensor.hpp"

namespace kbdm {

// Binary PGM (P5), 8-bit. Intensities map linearly between [0,1] and 0..255.

inline void write_pgm(const std::string& path, const Tensor& image) {
    if (image.rank() != 2) throw DataError("write_pgm: image must be 2-D");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw DataError("cannot open for writing: " + path);
    os << "P5\n" << image.cols() << " " << image.rows() << "\n255\n";
    for (double v : image.data) {
        double clamped = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
        unsigned char byte = static_cast<unsigned char>(std::lround(clamped * 255.0));
        os.write(reinterpret_cast<const char*>(&byte), 1);
    }
    if (!os) throw DataError("failed writing PGM: " + path);
}

namespace detail {

inline int next_pnm_token(std::istream& is, std::string& token) {
    token.clear();
    int c = is.get();
    while (c != EOF) {
        if (c == '#') {  // comment to end of line
            while (c != EOF && c != '\n') c = is.get();
        } else if (std::isspace(c)) {
            c = is.get();
        } else {
            break;
        }
    }
    while (c != EOF && !std::isspace(c)) {
        token.push_back(static_cast<char>(c));
        c = is.get();
    }
    return token.empty() ? EOF : 0;
}

}  // namespace detail

inline Tensor read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw DataError("cannot open: " + path);
    std::string tok;
    if (detail::next_pnm_token(is, tok) == EOF || tok != "P5") {
        throw DataError("not a binary PGM (P5): " + path);
    }
    long w = 0, h = 0, maxval = 0;
    try {
        if (detail::next_pnm_token(is, tok) == EOF) throw DataError("");
        w = std::stol(tok);
        if (detail::next_pnm_token(is, tok) == EOF) throw DataError("");
        h = std::stol(tok);
        if (detail::next_pnm_token(is, tok) == EOF) throw DataError("");
        maxval = std::stol(tok);
    } catch (const std::exception&) {
        throw DataError("malformed PGM header: " + path);
    }
    if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
        throw DataError("unsupported PGM geometry in " + path);
    }
    Tensor image({static_cast<std::size_t>(h), static_cast<std::size_t>(w)});
    for (double& v : image.data) {
        int c = is.get();
        if (c == EOF) throw DataError("truncated PGM: " + path);
        v = static_cast<double>(c) / static_cast<double>(maxval);
    }
    return image;
}

}  // namespace kbdm

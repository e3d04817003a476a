#include "tokendrop/pixmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace tokendrop {

namespace {

std::uint8_t quantize(double v) {
    const double clamped = std::min(1.0, std::max(0.0, v));
    return static_cast<std::uint8_t>(std::lround(clamped * 255.0));
}

void write_pixmap(const Image& img, const std::string& path, bool color) {
    if ((color && img.c != 3) || (!color && img.c != 1)) {
        throw std::invalid_argument("pixmap write: image has " + std::to_string(img.c) + " channels");
    }
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << (color ? "P6" : "P5") << "\n" << img.w << " " << img.h << "\n255\n";
    std::vector<std::uint8_t> bytes;
    bytes.reserve(img.pix.size());
    for (double v : img.pix) bytes.push_back(quantize(v));
    f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("short write to " + path);
}

int read_pnm_int(std::istream& in) {
    // skips whitespace and '#' comments
    int c = in.get();
    while (c == '#' || std::isspace(c)) {
        if (c == '#') {
            while (c != '\n' && c != EOF) c = in.get();
        }
        c = in.get();
    }
    int value = 0;
    bool any = false;
    while (std::isdigit(c)) {
        value = value * 10 + (c - '0');
        any = true;
        c = in.get();
    }
    if (!any) throw std::runtime_error("malformed pixmap header");
    return value;
}

}  // namespace

void write_pgm(const Image& img, const std::string& path) { write_pixmap(img, path, false); }
void write_ppm(const Image& img, const std::string& path) { write_pixmap(img, path, true); }

void write_mask_pgm(const Mask& mask, const std::string& path) {
    Image img;
    img.h = mask.h;
    img.w = mask.w;
    img.c = 1;
    img.pix.reserve(mask.fg.size());
    for (auto v : mask.fg) img.pix.push_back(v ? 1.0 : 0.0);
    write_pgm(img, path);
}

Image read_pixmap(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    char m0 = 0, m1 = 0;
    f.get(m0);
    f.get(m1);
    if (m0 != 'P' || (m1 != '5' && m1 != '6')) {
        throw std::runtime_error(path + ": not a binary P5/P6 pixmap");
    }
    const bool color = m1 == '6';
    Image img;
    img.w = read_pnm_int(f);
    img.h = read_pnm_int(f);
    const int maxval = read_pnm_int(f);
    if (maxval != 255) throw std::runtime_error(path + ": only maxval 255 is supported");
    img.c = color ? 3 : 1;
    const std::size_t n =
        static_cast<std::size_t>(img.h) * static_cast<std::size_t>(img.w) * static_cast<std::size_t>(img.c);
    std::vector<std::uint8_t> bytes(n);
    f.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(f.gcount()) != n) throw std::runtime_error(path + ": truncated pixel data");
    img.pix.reserve(n);
    for (std::uint8_t b : bytes) img.pix.push_back(static_cast<double>(b) / 255.0);
    return img;
}

Mask read_mask_pgm(const std::string& path) {
    const Image img = read_pixmap(path);
    if (img.c != 1) throw std::runtime_error(path + ": mask must be a P5 graymap");
    Mask mask;
    mask.h = img.h;
    mask.w = img.w;
    mask.fg.reserve(img.pix.size());
    for (double v : img.pix) {
        if (v != 0.0 && v != 1.0) {
            throw std::runtime_error(path + ": mask pixels must be 0 or 255");
        }
        mask.fg.push_back(v == 1.0 ? 1 : 0);
    }
    return mask;
}

Image to_rgb(const Image& img) {
    if (img.c == 3) return img;
    if (img.c != 1) throw std::invalid_argument("to_rgb: unsupported channel count");
    Image out;
    out.h = img.h;
    out.w = img.w;
    out.c = 3;
    out.pix.reserve(img.pix.size() * 3);
    for (double v : img.pix) {
        out.pix.push_back(v);
        out.pix.push_back(v);
        out.pix.push_back(v);
    }
    return out;
}

}  // namespace tokendrop

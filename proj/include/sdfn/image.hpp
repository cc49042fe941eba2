#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "sdfn/error.hpp"

namespace sdfn {

/// Grayscale image, row-major, intensities nominally in [0, 1].
struct Image {
    int width = 0;
    int height = 0;
    std::vector<double> pixels;

    Image() = default;
    Image(int w, int h, double fill = 0.0) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h, fill) {
        if (w <= 0 || h <= 0) throw ShapeError("image extents must be positive");
    }

    double& at(int x, int y) { return pixels[static_cast<std::size_t>(y) * width + x]; }
    double at(int x, int y) const { return pixels[static_cast<std::size_t>(y) * width + x]; }
    bool operator==(const Image&) const = default;
};

struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;

    BinaryMask() = default;
    BinaryMask(int w, int h) : width(w), height(h), bits(static_cast<std::size_t>(w) * h, 0) {
        if (w < 0 || h < 0) throw ShapeError("mask extents must be non-negative");
    }

    bool at(int x, int y) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int x, int y, bool v = true) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
    std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }
    bool operator==(const BinaryMask&) const = default;
};

inline BinaryMask threshold(const Image& img, double level = 0.5) {
    BinaryMask m(img.width, img.height);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) m.bits[i] = img.pixels[i] >= level ? 1 : 0;
    return m;
}

inline Image to_image(const BinaryMask& m) {
    Image img(m.width, m.height);
    for (std::size_t i = 0; i < m.bits.size(); ++i) img.pixels[i] = m.bits[i] ? 1.0 : 0.0;
    return img;
}

/// Bilinear resampling with corner-aligned sampling (output corners map onto
/// input corners) and no anti-alias prefilter.
inline Image resize_bilinear(const Image& src, int target_w, int target_h) {
    if (target_w <= 0 || target_h <= 0) throw ShapeError("resize_bilinear: target extents must be positive");
    if (src.width <= 0 || src.height <= 0) throw ShapeError("resize_bilinear: empty source image");
    Image out(target_w, target_h);
    const double sx = target_w > 1 ? static_cast<double>(src.width - 1) / (target_w - 1) : 0.0;
    const double sy = target_h > 1 ? static_cast<double>(src.height - 1) / (target_h - 1) : 0.0;
    for (int y = 0; y < target_h; ++y) {
        const double fy = y * sy;
        const int y0 = std::min(static_cast<int>(fy), src.height - 1);
        const int y1 = std::min(y0 + 1, src.height - 1);
        const double wy = fy - y0;
        for (int x = 0; x < target_w; ++x) {
            const double fx = x * sx;
            const int x0 = std::min(static_cast<int>(fx), src.width - 1);
            const int x1 = std::min(x0 + 1, src.width - 1);
            const double wx = fx - x0;
            const double top = src.at(x0, y0) * (1.0 - wx) + src.at(x1, y0) * wx;
            const double bottom = src.at(x0, y1) * (1.0 - wx) + src.at(x1, y1) * wx;
            out.at(x, y) = top * (1.0 - wy) + bottom * wy;
        }
    }
    return out;
}

inline BinaryMask resize_mask(const BinaryMask& m, int target_w, int target_h) {
    return threshold(resize_bilinear(to_image(m), target_w, target_h), 0.5);
}

/// Inclusive sub-rectangle copy.
inline Image crop(const Image& img, int x0, int y0, int x1, int y1) {
    if (x0 < 0 || y0 < 0 || x1 >= img.width || y1 >= img.height || x0 > x1 || y0 > y1)
        throw ShapeError("crop: rectangle outside image");
    Image out(x1 - x0 + 1, y1 - y0 + 1);
    for (int y = y0; y <= y1; ++y)
        std::copy_n(img.pixels.begin() + static_cast<std::ptrdiff_t>(y) * img.width + x0, out.width,
                    out.pixels.begin() + static_cast<std::ptrdiff_t>(y - y0) * out.width);
    return out;
}

// ---------------------------------------------------------------------------
// Netpbm I/O

namespace detail {

class PnmHeaderReader {
public:
    explicit PnmHeaderReader(const std::vector<unsigned char>& bytes) : bytes_(bytes) {}

    std::string magic() {
        if (bytes_.size() < 2) throw ParseError("missing magic number", pos_);
        std::string m{static_cast<char>(bytes_[0]), static_cast<char>(bytes_[1])};
        pos_ = 2;
        return m;
    }

    long number(const char* what) {
        skip_space_and_comments();
        const std::size_t start = pos_;
        long v = 0;
        while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
            v = v * 10 + (bytes_[pos_] - '0');
            if (v > 1'000'000'000) throw ParseError(std::string("header field too large: ") + what, start);
            ++pos_;
        }
        if (pos_ == start) throw ParseError(std::string("malformed header: expected ") + what, start);
        return v;
    }

    /// Consumes the single whitespace byte that separates header and raster.
    std::size_t raster_start() {
        if (pos_ >= bytes_.size() || !std::isspace(bytes_[pos_])) throw ParseError("malformed header terminator", pos_);
        return pos_ + 1;
    }

private:
    void skip_space_and_comments() {
        while (pos_ < bytes_.size()) {
            if (std::isspace(bytes_[pos_])) {
                ++pos_;
            } else if (bytes_[pos_] == '#') {
                while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
            } else {
                break;
            }
        }
    }

    const std::vector<unsigned char>& bytes_;
    std::size_t pos_ = 0;
};

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_all(const std::filesystem::path& path, const std::string& header, const std::vector<unsigned char>& body) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(header.data(), static_cast<std::streamsize>(header.size()));
    out.write(reinterpret_cast<const char*>(body.data()), static_cast<std::streamsize>(body.size()));
    if (!out) throw Error("write failed for " + path.string());
}

}  // namespace detail

/// Parses a binary (P5) PGM held in memory. Samples are scaled to [0, 1].
inline Image decode_pgm(const std::vector<unsigned char>& bytes) {
    detail::PnmHeaderReader reader(bytes);
    if (reader.magic() != "P5") throw ParseError("not a binary PGM (expected magic P5)", 0);
    const long w = reader.number("width");
    const long h = reader.number("height");
    const long maxval = reader.number("maxval");
    if (w <= 0 || h <= 0) throw ParseError("non-positive image extent", 2);
    if (maxval != 255 && maxval != 65535) throw ParseError("unsupported maxval " + std::to_string(maxval), 2);
    const std::size_t start = reader.raster_start();
    const std::size_t bytes_per_sample = maxval > 255 ? 2 : 1;
    const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h) * bytes_per_sample;
    if (bytes.size() < start + need)
        throw ParseError("truncated raster: expected " + std::to_string(need) + " bytes, file ends", bytes.size());
    Image img(static_cast<int>(w), static_cast<int>(h));
    const double scale = 1.0 / static_cast<double>(maxval);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) {
        unsigned v = bytes[start + i * bytes_per_sample];
        if (bytes_per_sample == 2) v = (v << 8) | bytes[start + i * 2 + 1];
        img.pixels[i] = v * scale;
    }
    return img;
}

inline Image read_pgm(const std::filesystem::path& path) {
    try {
        return decode_pgm(detail::read_all(path));
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what(), e.offset);
    }
}

inline unsigned quantize(double v, unsigned maxval) {
    const double c = std::clamp(v, 0.0, 1.0);
    return static_cast<unsigned>(std::lround(c * maxval));
}

/// Writes P5 PGM with maxval 255 (default) or 65535; values are clamped to [0, 1].
inline void write_pgm(const std::filesystem::path& path, const Image& img, unsigned maxval = 255) {
    if (maxval != 255 && maxval != 65535) throw ConfigError("write_pgm: maxval must be 255 or 65535");
    const std::string header =
        "P5\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n" + std::to_string(maxval) + "\n";
    std::vector<unsigned char> body;
    body.reserve(img.pixels.size() * (maxval > 255 ? 2 : 1));
    for (double v : img.pixels) {
        const unsigned q = quantize(v, maxval);
        if (maxval > 255) body.push_back(static_cast<unsigned char>(q >> 8));
        body.push_back(static_cast<unsigned char>(q & 0xFF));
    }
    detail::write_all(path, header, body);
}

inline void write_pgm(const std::filesystem::path& path, const BinaryMask& m) { write_pgm(path, to_image(m)); }

inline BinaryMask read_mask_pgm(const std::filesystem::path& path) { return threshold(read_pgm(path), 0.5); }

struct Rgb {
    std::uint8_t r = 0, g = 0, b = 0;
};

struct ColorImage {
    int width = 0;
    int height = 0;
    std::vector<Rgb> pixels;
};

inline void write_ppm(const std::filesystem::path& path, const ColorImage& img) {
    const std::string header = "P6\n" + std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    std::vector<unsigned char> body;
    body.reserve(img.pixels.size() * 3);
    for (const auto& p : img.pixels) {
        body.push_back(p.r);
        body.push_back(p.g);
        body.push_back(p.b);
    }
    detail::write_all(path, header, body);
}

}  // namespace sdfn

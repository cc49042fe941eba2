#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <optional>

#include "sdfn/image.hpp"
#include "sdfn/random.hpp"

namespace sdfn {

struct AugmentParams {
    double rotation_deg = 0.0;
    double shift_x = 0.0;  // fraction of width
    double shift_y = 0.0;  // fraction of height
    double zoom = 1.0;
    bool flip = false;

    bool is_identity() const { return rotation_deg == 0.0 && shift_x == 0.0 && shift_y == 0.0 && zoom == 1.0 && !flip; }
};

/// Sampling ranges; zero ranges disable a transform.
struct AugmentRanges {
    double max_rotation_deg = 10.0;
    double max_shift = 0.10;
    double min_zoom = 0.9;
    double max_zoom = 1.1;
    double flip_prob = 0.0;

    static AugmentRanges classification() { return {0.0, 0.0, 1.0, 1.0, 0.5}; }
    static AugmentRanges segmentation() { return {10.0, 0.10, 0.9, 1.1, 0.0}; }
    static AugmentRanges none() { return {0.0, 0.0, 1.0, 1.0, 0.0}; }

    AugmentParams sample(Rng& rng) const {
        AugmentParams p;
        if (max_rotation_deg > 0) p.rotation_deg = rng.uniform(-max_rotation_deg, max_rotation_deg);
        if (max_shift > 0) {
            p.shift_x = rng.uniform(-max_shift, max_shift);
            p.shift_y = rng.uniform(-max_shift, max_shift);
        }
        if (max_zoom > min_zoom) p.zoom = rng.uniform(min_zoom, max_zoom);
        if (flip_prob > 0) p.flip = rng.bernoulli(flip_prob);
        return p;
    }
};

inline Image flip_horizontal(const Image& img) {
    Image out = img;
    for (int y = 0; y < img.height; ++y)
        for (int x = 0; x < img.width; ++x) out.at(x, y) = img.at(img.width - 1 - x, y);
    return out;
}

namespace detail {

/// Rotation/shift/zoom about the image center, resampled bilinearly from the
/// inverse map. Samples outside the source take `fill`, or the nearest edge
/// pixel when `fill` is empty.
inline Image affine(const Image& src, const AugmentParams& p, std::optional<double> fill) {
    Image out(src.width, src.height);
    const double cx = (src.width - 1) / 2.0, cy = (src.height - 1) / 2.0;
    const double th = p.rotation_deg * std::numbers::pi / 180.0;
    const double c = std::cos(th), s = std::sin(th);
    const double tx = p.shift_x * src.width, ty = p.shift_y * src.height;
    auto sample = [&](int x, int y) {
        if (x >= 0 && y >= 0 && x < src.width && y < src.height) return src.at(x, y);
        if (fill) return *fill;
        return src.at(std::clamp(x, 0, src.width - 1), std::clamp(y, 0, src.height - 1));
    };
    for (int y = 0; y < src.height; ++y)
        for (int x = 0; x < src.width; ++x) {
            const double dx = (x - cx - tx) / p.zoom, dy = (y - cy - ty) / p.zoom;
            const double sx = cx + c * dx + s * dy, sy = cy - s * dx + c * dy;
            const double fx = std::floor(sx), fy = std::floor(sy);
            const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
            const double wx = sx - fx, wy = sy - fy;
            const double top = sample(x0, y0) * (1 - wx) + sample(x0 + 1, y0) * wx;
            const double bottom = sample(x0, y0 + 1) * (1 - wx) + sample(x0 + 1, y0 + 1) * wx;
            out.at(x, y) = top * (1 - wy) + bottom * wy;
        }
    return out;
}

}  // namespace detail

inline Image augment_image(const Image& img, const AugmentParams& p) {
    Image out = (p.rotation_deg == 0.0 && p.shift_x == 0.0 && p.shift_y == 0.0 && p.zoom == 1.0)
                    ? img
                    : detail::affine(img, p, std::nullopt);
    return p.flip ? flip_horizontal(out) : out;
}

/// Applies the same geometric transform to an image and its mask. Flips are
/// a classification-only augmentation and are not applied here.
inline std::pair<Image, BinaryMask> augment_pair(const Image& img, const BinaryMask& mask, AugmentParams p) {
    p.flip = false;
    if (p.is_identity()) return {img, mask};
    return {detail::affine(img, p, std::nullopt), threshold(detail::affine(to_image(mask), p, 0.0), 0.5)};
}

inline BinaryMask rotate_mask(const BinaryMask& mask, double degrees) {
    AugmentParams p;
    p.rotation_deg = degrees;
    return threshold(detail::affine(to_image(mask), p, 0.0), 0.5);
}

}  // namespace sdfn

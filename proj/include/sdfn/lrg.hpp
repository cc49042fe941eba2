#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "sdfn/error.hpp"
#include "sdfn/image.hpp"

namespace sdfn {

/// Inclusive pixel rectangle.
struct BoundingBox {
    int x0 = 0, y0 = 0, x1 = 0, y1 = 0;

    int width() const { return x1 - x0 + 1; }
    int height() const { return y1 - y0 + 1; }
    bool contains(int x, int y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
    bool contains(const BoundingBox& b) const { return b.x0 >= x0 && b.y0 >= y0 && b.x1 <= x1 && b.y1 <= y1; }
    bool valid_in(int w, int h) const { return 0 <= x0 && x0 <= x1 && x1 < w && 0 <= y0 && y0 <= y1 && y1 < h; }
    bool operator==(const BoundingBox&) const = default;
};

inline BoundingBox box_union(const BoundingBox& a, const BoundingBox& b) {
    return {std::min(a.x0, b.x0), std::min(a.y0, b.y0), std::max(a.x1, b.x1), std::max(a.y1, b.y1)};
}

struct Region {
    int label = 0;  // 1-based, raster order of the first pixel
    std::size_t area = 0;
    double cx = 0.0, cy = 0.0;
    BoundingBox box;
};

/// 4-connected component labeling (two-pass with union-find).
inline std::vector<Region> label_components(const BinaryMask& mask) {
    const int w = mask.width, h = mask.height;
    std::vector<int> provisional(static_cast<std::size_t>(w) * h, 0);
    std::vector<int> parent{0};
    auto find = [&](int a) {
        while (parent[a] != a) a = parent[a] = parent[parent[a]];
        return a;
    };
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!mask.at(x, y)) continue;
            const int up = y > 0 ? provisional[(y - 1) * w + x] : 0;
            const int left = x > 0 ? provisional[y * w + x - 1] : 0;
            int lbl;
            if (!up && !left) {
                lbl = static_cast<int>(parent.size());
                parent.push_back(lbl);
            } else if (up && left) {
                const int ru = find(up), rl = find(left);
                lbl = std::min(ru, rl);
                parent[std::max(ru, rl)] = lbl;
            } else {
                lbl = up ? up : left;
            }
            provisional[y * w + x] = lbl;
        }

    // Renumber roots by first appearance in raster order.
    std::vector<int> final_label(parent.size(), 0);
    std::vector<Region> regions;
    std::vector<double> sx, sy;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            const int p = provisional[y * w + x];
            if (!p) continue;
            const int root = find(p);
            if (!final_label[root]) {
                final_label[root] = static_cast<int>(regions.size()) + 1;
                Region r;
                r.label = final_label[root];
                r.box = {x, y, x, y};
                regions.push_back(r);
                sx.push_back(0.0);
                sy.push_back(0.0);
            }
            const std::size_t i = static_cast<std::size_t>(final_label[root]) - 1;
            Region& r = regions[i];
            ++r.area;
            sx[i] += x;
            sy[i] += y;
            r.box = box_union(r.box, {x, y, x, y});
        }
    for (std::size_t i = 0; i < regions.size(); ++i) {
        regions[i].cx = sx[i] / static_cast<double>(regions[i].area);
        regions[i].cy = sy[i] / static_cast<double>(regions[i].area);
    }
    return regions;
}

/// Keeps the two regions whose centroids lie nearest the image center.
/// Ties go to the larger area, then the smaller label. Output keeps label order.
inline std::vector<Region> select_two_central(const std::vector<Region>& regions, int width, int height) {
    if (regions.size() <= 2) return regions;
    const double cx = (width - 1) / 2.0, cy = (height - 1) / 2.0;
    std::vector<Region> sorted = regions;
    auto dist = [&](const Region& r) { return std::hypot(r.cx - cx, r.cy - cy); };
    std::sort(sorted.begin(), sorted.end(), [&](const Region& a, const Region& b) {
        const double da = dist(a), db = dist(b);
        if (da != db) return da < db;
        if (a.area != b.area) return a.area > b.area;
        return a.label < b.label;
    });
    sorted.resize(2);
    std::sort(sorted.begin(), sorted.end(), [](const Region& a, const Region& b) { return a.label < b.label; });
    return sorted;
}

/// Drops the smaller of two regions when its area is strictly below a third of the larger.
inline std::vector<Region> drop_minor_region(const std::vector<Region>& regions) {
    if (regions.size() != 2) throw ShapeError("drop_minor_region: expected exactly two regions, got " + std::to_string(regions.size()));
    const Region& a = regions[0];
    const Region& b = regions[1];
    const Region& larger = a.area >= b.area ? a : b;
    const Region& smaller = a.area >= b.area ? b : a;
    if (3 * smaller.area < larger.area) return {larger};
    return regions;
}

/// Union of the surviving tight boxes; a lone region is unioned with its
/// reflection about the vertical centerline (x' = W-1-x).
inline BoundingBox mirror_bound(const std::vector<Region>& regions, int width) {
    if (regions.empty()) throw Error("mirror_bound: no regions to bound");
    if (regions.size() > 2) throw ShapeError("mirror_bound: at most two regions expected");
    if (regions.size() == 2) return box_union(regions[0].box, regions[1].box);
    const BoundingBox& b = regions[0].box;
    const BoundingBox mirrored{width - 1 - b.x1, b.y0, width - 1 - b.x0, b.y1};
    return box_union(b, mirrored);
}

struct Margins {
    int left = 15, top = 15, right = 15, bottom = 20;
    bool operator==(const Margins&) const = default;
};

/// Margins quoted for 1024-pixel images.
inline constexpr Margins kReferenceMargins{15, 15, 15, 20};
inline constexpr int kMarginReferenceExtent = 1024;

/// Reference margins scaled to an image extent and rounded to the nearest
/// pixel; horizontal margins follow the width, vertical ones the height.
inline Margins scaled_margins(int width, int height, const Margins& reference = kReferenceMargins) {
    auto scale = [](int m, int extent) {
        return static_cast<int>(std::lround(static_cast<double>(m) * extent / kMarginReferenceExtent));
    };
    return {scale(reference.left, width), scale(reference.top, height), scale(reference.right, width),
            scale(reference.bottom, height)};
}

inline BoundingBox expand_box(const BoundingBox& b, int width, int height, const Margins& m) {
    if (!b.valid_in(width, height)) throw ShapeError("expand_box: box lies outside the image");
    return {std::max(0, b.x0 - m.left), std::max(0, b.y0 - m.top), std::min(width - 1, b.x1 + m.right),
            std::min(height - 1, b.y1 + m.bottom)};
}

/// Which post-processing rules fired for one image.
struct LrgStatus {
    bool fp_removed = false;
    bool mirrored = false;
    bool fallback = false;

    std::string str() const {
        if (fallback) return "fallback";
        if (fp_removed && mirrored) return "fp-removed+mirrored";
        if (fp_removed) return "fp-removed";
        if (mirrored) return "mirrored";
        return "clean";
    }

    static LrgStatus parse(const std::string& s) {
        LrgStatus st;
        if (s == "fallback") {
            st.fallback = true;
        } else if (s == "fp-removed+mirrored") {
            st.fp_removed = st.mirrored = true;
        } else if (s == "fp-removed") {
            st.fp_removed = true;
        } else if (s == "mirrored") {
            st.mirrored = true;
        } else if (s != "clean") {
            throw ParseError("unknown region status '" + s + "'", 0);
        }
        return st;
    }
    bool operator==(const LrgStatus&) const = default;
};

struct LungRegion {
    Image crop;
    BoundingBox box;
    LrgStatus status;
};

/// Box only (no crop), for callers that never need the pixels.
inline std::pair<BoundingBox, LrgStatus> lung_box(const BinaryMask& mask, const Margins& reference = kReferenceMargins) {
    LrgStatus status;
    const auto all = label_components(mask);
    if (all.empty()) {
        status.fallback = true;
        return {{0, 0, mask.width - 1, mask.height - 1}, status};
    }
    auto kept = select_two_central(all, mask.width, mask.height);
    status.fp_removed = kept.size() < all.size();
    if (kept.size() == 2) {
        auto survivors = drop_minor_region(kept);
        status.fp_removed = status.fp_removed || survivors.size() < kept.size();
        kept = std::move(survivors);
    }
    status.mirrored = kept.size() == 1;
    const BoundingBox tight = mirror_bound(kept, mask.width);
    return {expand_box(tight, mask.width, mask.height, scaled_margins(mask.width, mask.height, reference)), status};
}

/// Full region generator: mask post-processing, expansion, and crop of the
/// original image. An empty mask yields the whole image with status fallback.
inline LungRegion generate_lung_region(const Image& image, const BinaryMask& mask, const Margins& reference = kReferenceMargins) {
    if (image.width != mask.width || image.height != mask.height)
        throw ShapeError("generate_lung_region: image and mask extents differ");
    auto [box, status] = lung_box(mask, reference);
    return {crop(image, box.x0, box.y0, box.x1, box.y1), box, status};
}

}  // namespace sdfn

#pragma once

// Straight-line reference computations used by the test and verification
// suites. Nothing here shares code paths with the library implementations.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <numbers>
#include <vector>

namespace sdfn::oracle {

/// Direct six-loop cross-correlation over an NCHW buffer.
inline std::vector<double> conv2d_direct(const std::vector<double>& x, std::size_t n, std::size_t c, std::size_t h, std::size_t w,
                                         const std::vector<double>& k, std::size_t kout, std::size_t kh, std::size_t kw,
                                         const std::vector<double>& bias, std::size_t stride, std::size_t pad, std::size_t& oh,
                                         std::size_t& ow) {
    oh = (h + 2 * pad - kh) / stride + 1;
    ow = (w + 2 * pad - kw) / stride + 1;
    std::vector<double> y(n * kout * oh * ow, 0.0);
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t o = 0; o < kout; ++o)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    double acc = bias[o];
                    for (std::size_t ch = 0; ch < c; ++ch)
                        for (std::size_t i = 0; i < kh; ++i)
                            for (std::size_t j = 0; j < kw; ++j) {
                                const long iy = static_cast<long>(oy * stride + i) - static_cast<long>(pad);
                                const long ix = static_cast<long>(ox * stride + j) - static_cast<long>(pad);
                                if (iy < 0 || ix < 0 || iy >= static_cast<long>(h) || ix >= static_cast<long>(w)) continue;
                                acc += x[((b * c + ch) * h + iy) * w + ix] * k[((o * c + ch) * kh + i) * kw + j];
                            }
                    y[((b * kout + o) * oh + oy) * ow + ox] = acc;
                }
    return y;
}

/// -(1/N) Σ [y log q + (1-y) log(1-q)], q clamped to [eps, 1-eps].
inline double bce_direct(const std::vector<double>& y, const std::vector<double>& p, double eps = 1e-7) {
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) {
        const double q = std::min(std::max(p[i], eps), 1.0 - eps);
        s += y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
    }
    return -s / static_cast<double>(y.size());
}

/// Textbook Adam recurrence with inverse-time decayed rate, scalar by scalar.
struct AdamReference {
    double lr0, decay, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<double> m, v;
    int t = 0;

    void step(std::vector<double>& theta, const std::vector<double>& g) {
        if (m.empty()) {
            m.assign(theta.size(), 0.0);
            v.assign(theta.size(), 0.0);
        }
        const double lr = lr0 / (1.0 + decay * t);
        ++t;
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = beta1 * m[i] + (1 - beta1) * g[i];
            v[i] = beta2 * v[i] + (1 - beta2) * g[i] * g[i];
            const double mh = m[i] / (1 - std::pow(beta1, t));
            const double vh = v[i] / (1 - std::pow(beta2, t));
            theta[i] -= lr * mh / (std::sqrt(vh) + eps);
        }
    }
};

/// Mann-Whitney pair count: (concordant + ties/2) / (n_pos * n_neg).
inline double auc_pair_count(const std::vector<double>& scores, const std::vector<int>& labels) {
    double credit = 0.0;
    double pairs = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (labels[i] != 1) continue;
        for (std::size_t j = 0; j < scores.size(); ++j) {
            if (labels[j] != 0) continue;
            pairs += 1.0;
            if (scores[i] > scores[j]) credit += 1.0;
            else if (scores[i] == scores[j]) credit += 0.5;
        }
    }
    return credit / pairs;
}

/// Student-t density with `dof` degrees of freedom.
inline double t_density(double x, double dof) {
    const double log_norm = std::lgamma((dof + 1.0) / 2.0) - std::lgamma(dof / 2.0) - 0.5 * std::log(dof * std::numbers::pi);
    return std::exp(log_norm - (dof + 1.0) / 2.0 * std::log1p(x * x / dof));
}

/// Two-tailed p-value 1 - 2 * integral_0^|t| f(x) dx by composite Simpson.
inline double t_two_tailed_quadrature(double t, double dof, int intervals = 200000) {
    const double a = std::abs(t);
    if (a == 0.0) return 1.0;
    const double h = a / intervals;
    double s = t_density(0.0, dof) + t_density(a, dof);
    for (int i = 1; i < intervals; ++i) s += (i % 2 ? 4.0 : 2.0) * t_density(i * h, dof);
    return std::max(0.0, 1.0 - 2.0 * s * h / 3.0);
}

/// Weighted channel sum at every pixel, one explicit loop per index.
inline std::vector<double> cam_double_loop(const std::vector<double>& maps, std::size_t channels, std::size_t height, std::size_t width,
                                           const std::vector<double>& weights) {
    std::vector<double> out(height * width, 0.0);
    for (std::size_t y = 0; y < height; ++y)
        for (std::size_t x = 0; x < width; ++x) {
            double acc = 0.0;
            for (std::size_t j = 0; j < channels; ++j) acc += weights[j] * maps[(j * height + y) * width + x];
            out[y * width + x] = acc;
        }
    return out;
}

/// Corner-aligned bilinear sample of a row-major grid at (u, v) in source pixels.
inline double bilinear_at(const std::vector<double>& src, int w, int h, double u, double v) {
    const int x0 = std::min(static_cast<int>(std::floor(u)), w - 1), y0 = std::min(static_cast<int>(std::floor(v)), h - 1);
    const int x1 = std::min(x0 + 1, w - 1), y1 = std::min(y0 + 1, h - 1);
    const double ax = u - x0, ay = v - y0;
    return (1 - ay) * ((1 - ax) * src[y0 * w + x0] + ax * src[y0 * w + x1]) + ay * ((1 - ax) * src[y1 * w + x0] + ax * src[y1 * w + x1]);
}

inline std::vector<double> resize_direct(const std::vector<double>& src, int w, int h, int tw, int th) {
    std::vector<double> out(static_cast<std::size_t>(tw) * th);
    for (int y = 0; y < th; ++y)
        for (int x = 0; x < tw; ++x) {
            const double u = tw > 1 ? x * (w - 1.0) / (tw - 1.0) : 0.0;
            const double v = th > 1 ? y * (h - 1.0) / (th - 1.0) : 0.0;
            out[y * tw + x] = bilinear_at(src, w, h, u, v);
        }
    return out;
}

/// Resize h1 to the image, resize h2 to the box and add it there, then min-max to [0,255].
inline std::vector<double> fused_heatmap(const std::vector<double>& h1, int w1, int hh1, const std::vector<double>& h2, int w2, int hh2,
                                         std::array<int, 4> box, int width, int height) {
    std::vector<double> canvas = resize_direct(h1, w1, hh1, width, height);
    const int bw = box[2] - box[0] + 1, bh = box[3] - box[1] + 1;
    const std::vector<double> local = resize_direct(h2, w2, hh2, bw, bh);
    for (int y = 0; y < bh; ++y)
        for (int x = 0; x < bw; ++x) canvas[(box[1] + y) * width + box[0] + x] += local[y * bw + x];
    double lo = canvas[0], hi = canvas[0];
    for (double v : canvas) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (double& v : canvas) v = hi > lo ? (v - lo) / (hi - lo) * 255.0 : 0.0;
    return canvas;
}

/// 4-connected components by stack flood fill, in raster order of each
/// component's first pixel.
struct Component {
    long area = 0;
    double sum_x = 0, sum_y = 0;
    int x0, y0, x1, y1;
};

inline std::vector<Component> flood_fill_components(const std::vector<std::uint8_t>& bits, int w, int h) {
    std::vector<int> owner(bits.size(), -1);
    std::vector<Component> comps;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            if (!bits[y * w + x] || owner[y * w + x] >= 0) continue;
            Component c{0, 0, 0, x, y, x, y};
            const int id = static_cast<int>(comps.size());
            std::vector<std::pair<int, int>> stack{{x, y}};
            owner[y * w + x] = id;
            while (!stack.empty()) {
                auto [px, py] = stack.back();
                stack.pop_back();
                ++c.area;
                c.sum_x += px;
                c.sum_y += py;
                c.x0 = std::min(c.x0, px);
                c.x1 = std::max(c.x1, px);
                c.y0 = std::min(c.y0, py);
                c.y1 = std::max(c.y1, py);
                const int nx[4] = {px - 1, px + 1, px, px};
                const int ny[4] = {py, py, py - 1, py + 1};
                for (int k = 0; k < 4; ++k) {
                    if (nx[k] < 0 || ny[k] < 0 || nx[k] >= w || ny[k] >= h) continue;
                    const int q = ny[k] * w + nx[k];
                    if (bits[q] && owner[q] < 0) {
                        owner[q] = id;
                        stack.push_back({nx[k], ny[k]});
                    }
                }
            }
            comps.push_back(c);
        }
    return comps;
}

/// Lung-region box by direct transcription of the rules: flood-fill the
/// 4-connected components, keep the two whose centroids are nearest the
/// image center (ties: larger area, then earlier in raster order), drop the
/// second when its area is under a third of the first, mirror a lone region
/// about the vertical centerline, then widen by 15/15/15/20 pixels per 1024
/// (left/top/right/bottom) and clamp. No foreground gives the whole image.
inline std::array<int, 4> lung_region_box(const std::vector<std::uint8_t>& bits, int w, int h) {
    const auto comps = flood_fill_components(bits, w, h);
    if (comps.empty()) return {0, 0, w - 1, h - 1};

    const double mx = (w - 1) / 2.0, my = (h - 1) / 2.0;
    auto dist2 = [&](const Component& c) {
        const double dx = c.sum_x / c.area - mx, dy = c.sum_y / c.area - my;
        return dx * dx + dy * dy;
    };
    std::vector<int> kept;
    if (comps.size() <= 2) {
        for (int i = 0; i < static_cast<int>(comps.size()); ++i) kept.push_back(i);
    } else {
        std::vector<bool> taken(comps.size(), false);
        for (int round = 0; round < 2; ++round) {
            int best = -1;
            for (int i = 0; i < static_cast<int>(comps.size()); ++i) {
                if (taken[i]) continue;
                if (best < 0) {
                    best = i;
                    continue;
                }
                const double di = dist2(comps[i]), db = dist2(comps[best]);
                if (di < db || (di == db && comps[i].area > comps[best].area)) best = i;
            }
            taken[best] = true;
            kept.push_back(best);
        }
    }
    if (kept.size() == 2) {
        const long a = comps[kept[0]].area, b = comps[kept[1]].area;
        if (3 * std::min(a, b) < std::max(a, b)) kept = {a >= b ? kept[0] : kept[1]};
    }
    int x0 = w, y0 = h, x1 = -1, y1 = -1;
    for (int i : kept) {
        x0 = std::min(x0, comps[i].x0);
        y0 = std::min(y0, comps[i].y0);
        x1 = std::max(x1, comps[i].x1);
        y1 = std::max(y1, comps[i].y1);
    }
    if (kept.size() == 1) {
        const int mx0 = w - 1 - x1, mx1 = w - 1 - x0;
        x0 = std::min(x0, mx0);
        x1 = std::max(x1, mx1);
    }
    auto margin = [](int m, int extent) { return static_cast<int>(std::floor(m * extent / 1024.0 + 0.5)); };
    return {std::max(0, x0 - margin(15, w)), std::max(0, y0 - margin(15, h)), std::min(w - 1, x1 + margin(15, w)),
            std::min(h - 1, y1 + margin(20, h))};
}

}  // namespace sdfn::oracle

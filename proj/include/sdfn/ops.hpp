#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "sdfn/parallel.hpp"
#include "sdfn/tensor.hpp"

namespace sdfn {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMatrix>;
using ConstMatMap = Eigen::Map<const RowMatrix>;

inline void require_rank(const Tensor& t, std::size_t r, const char* what) {
    if (t.rank() != r)
        throw ShapeError(std::string(what) + ": expected rank " + std::to_string(r) + ", got " + shape_str(t.shape()));
}

struct ConvGeometry {
    std::size_t channels, height, width, kh, kw, stride, pad, out_h, out_w;
    std::size_t patch() const { return channels * kh * kw; }
    std::size_t out_plane() const { return out_h * out_w; }
    bool trivial() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
};

/// Output columns [lo, hi) whose input column ox*stride + j - pad is in range.
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t j, std::size_t pad, std::size_t stride, std::size_t extent,
                                                       std::size_t out) {
    const std::size_t lo = j >= pad ? 0 : (pad - j + stride - 1) / stride;
    if (extent + pad <= j) return {lo, lo};
    const std::size_t hi = std::min(out, (extent - 1 + pad - j) / stride + 1);
    return {lo, std::max(lo, hi)};
}

/// cols[(c*kh + i)*kw + j][oy*out_w + ox] = x[c][oy*s + i - p][ox*s + j - p] (0 outside).
inline void im2col(const double* x, const ConvGeometry& g, double* cols) {
    const std::size_t plane = g.out_plane();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t i = 0; i < g.kh; ++i) {
            const auto [ylo, yhi] = valid_range(i, g.pad, g.stride, g.height, g.out_h);
            for (std::size_t j = 0; j < g.kw; ++j) {
                const auto [xlo, xhi] = valid_range(j, g.pad, g.stride, g.width, g.out_w);
                double* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
                const double* src = x + c * g.height * g.width;
                for (std::size_t oy = 0; oy < g.out_h; ++oy) {
                    double* dst = row + oy * g.out_w;
                    if (oy < ylo || oy >= yhi) {
                        std::fill(dst, dst + g.out_w, 0.0);
                        continue;
                    }
                    const double* srow = src + (oy * g.stride + i - g.pad) * g.width;
                    std::fill(dst, dst + xlo, 0.0);
                    if (g.stride == 1) {
                        std::copy(srow + (xlo + j - g.pad), srow + (xhi + j - g.pad), dst + xlo);
                    } else {
                        for (std::size_t ox = xlo; ox < xhi; ++ox) dst[ox] = srow[ox * g.stride + j - g.pad];
                    }
                    std::fill(dst + xhi, dst + g.out_w, 0.0);
                }
            }
        }
}

inline void col2im_add(const double* cols, const ConvGeometry& g, double* x) {
    const std::size_t plane = g.out_plane();
    for (std::size_t c = 0; c < g.channels; ++c)
        for (std::size_t i = 0; i < g.kh; ++i) {
            const auto [ylo, yhi] = valid_range(i, g.pad, g.stride, g.height, g.out_h);
            for (std::size_t j = 0; j < g.kw; ++j) {
                const auto [xlo, xhi] = valid_range(j, g.pad, g.stride, g.width, g.out_w);
                const double* row = cols + ((c * g.kh + i) * g.kw + j) * plane;
                double* dst = x + c * g.height * g.width;
                for (std::size_t oy = ylo; oy < yhi; ++oy) {
                    double* drow = dst + (oy * g.stride + i - g.pad) * g.width;
                    const double* srow = row + oy * g.out_w;
                    for (std::size_t ox = xlo; ox < xhi; ++ox) drow[ox * g.stride + j - g.pad] += srow[ox];
                }
            }
        }
}

}  // namespace detail

/// Cross-correlation of x[N,C,H,W] with w[K,C,kh,kw] plus bias[K].
inline Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, std::size_t stride, std::size_t pad) {
    detail::require_rank(x, 4, "conv2d input");
    detail::require_rank(w, 4, "conv2d weights");
    detail::require_rank(bias, 1, "conv2d bias");
    if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
    const std::size_t n = x.dim(0), k = w.dim(0);
    if (w.dim(1) != x.dim(1))
        throw ShapeError("conv2d: input has " + std::to_string(x.dim(1)) + " channels, weights expect " +
                         std::to_string(w.dim(1)));
    if (bias.dim(0) != k) throw ShapeError("conv2d: bias length does not match output channels");
    detail::ConvGeometry g{x.dim(1), x.dim(2), x.dim(3), w.dim(2), w.dim(3), stride, pad, 0, 0};
    if (g.kh > g.height + 2 * pad || g.kw > g.width + 2 * pad)
        throw ConfigError("conv2d: kernel " + shape_str(w.shape()) + " larger than padded input " +
                          shape_str(x.shape()));
    g.out_h = (g.height + 2 * pad - g.kh) / stride + 1;
    g.out_w = (g.width + 2 * pad - g.kw) / stride + 1;

    const std::size_t plane = g.out_plane(), patch = g.patch(), in_sample = g.channels * g.height * g.width;
    std::vector<double> out(n * k * plane);
    const double* xp = x.data().data();
    const double* wp = w.data().data();
    const double* bp = bias.data().data();
    // Unfolded input columns, kept for the weight gradient when a tape is recorded.
    const bool recording = grad_enabled() && (x.requires_grad() || w.requires_grad() || bias.requires_grad());
    std::shared_ptr<double[]> cols;
    if (!g.trivial()) cols.reset(new double[(recording ? n : worker_count(n)) * patch * plane]);
    parallel_for_workers(n, [&](std::size_t s, std::size_t worker) {
        const double* colp = xp + s * in_sample;
        if (!g.trivial()) {
            double* buf = cols.get() + (recording ? s : worker) * patch * plane;
            detail::im2col(xp + s * in_sample, g, buf);
            colp = buf;
        }
        detail::MatMap y(out.data() + s * k * plane, k, plane);
        y.noalias() = detail::ConstMatMap(wp, k, patch) * detail::ConstMatMap(colp, patch, plane);
        for (std::size_t o = 0; o < k; ++o) y.row(o).array() += bp[o];
    });
    if (!recording) cols.reset();

    return detail::make_result(
        {n, k, g.out_h, g.out_w}, std::move(out), {x, w, bias}, [g, n, k, cols](detail::Node& self) {
            const std::size_t plane = g.out_plane(), patch = g.patch(), in_sample = g.channels * g.height * g.width;
            const auto& xv = self.inputs[0]->value;
            const auto& wv = self.inputs[1]->value;
            double* gx = detail::input_grad(self, 0);
            double* gw = detail::input_grad(self, 1);
            double* gb = detail::input_grad(self, 2);
            // Per-sample weight gradients, reduced afterwards in sample order.
            std::unique_ptr<double[]> gw_parts(gw ? new double[n * k * patch] : nullptr);
            std::unique_ptr<double[]> scratch(gx && !g.trivial() ? new double[worker_count(n) * patch * plane] : nullptr);
            parallel_for_workers(n, [&](std::size_t s, std::size_t worker) {
                detail::ConstMatMap gy(self.grad.data() + s * k * plane, k, plane);
                if (gw) {
                    const double* colp = g.trivial() ? xv.data() + s * in_sample : cols.get() + s * patch * plane;
                    detail::MatMap(gw_parts.get() + s * k * patch, k, patch).noalias() =
                        gy * detail::ConstMatMap(colp, patch, plane).transpose();
                }
                if (gx) {
                    if (g.trivial()) {
                        detail::MatMap(gx + s * in_sample, patch, plane).noalias() +=
                            detail::ConstMatMap(wv.data(), k, patch).transpose() * gy;
                    } else {
                        double* buf = scratch.get() + worker * patch * plane;
                        detail::MatMap(buf, patch, plane).noalias() = detail::ConstMatMap(wv.data(), k, patch).transpose() * gy;
                        detail::col2im_add(buf, g, gx + s * in_sample);
                    }
                }
            });
            if (gw)
                for (std::size_t s = 0; s < n; ++s)
                    for (std::size_t i = 0; i < k * patch; ++i) gw[i] += gw_parts[s * k * patch + i];
            if (gb)
                for (std::size_t s = 0; s < n; ++s)
                    for (std::size_t o = 0; o < k; ++o) {
                        const double* row = self.grad.data() + (s * k + o) * plane;
                        double acc = 0.0;
                        for (std::size_t p = 0; p < plane; ++p) acc += row[p];
                        gb[o] += acc;
                    }
        });
}

inline Tensor relu(const Tensor& x) {
    std::vector<double> out(x.size());
    const auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
    return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        double* g = detail::input_grad(self, 0);
        if (!g) return;
        const auto& in = self.inputs[0]->value;
        for (std::size_t i = 0; i < in.size(); ++i)
            if (in[i] > 0.0) g[i] += self.grad[i];
    });
}

/// Logistic function; results are kept strictly inside (0, 1).
inline Tensor sigmoid(const Tensor& x) {
    constexpr double hi = 1.0 - 0x1.0p-53;
    constexpr double lo = std::numeric_limits<double>::denorm_min();
    std::vector<double> out(x.size());
    const auto in = x.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = in[i];
        const double s = v >= 0.0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
        out[i] = std::clamp(s, lo, hi);
    }
    return detail::make_result(x.shape(), std::move(out), {x}, [](detail::Node& self) {
        double* g = detail::input_grad(self, 0);
        if (!g) return;
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            const double y = self.value[i];
            g[i] += self.grad[i] * y * (1.0 - y);
        }
    });
}

/// Per-channel batch normalization over (N, H, W) for rank-4 input, (N) for rank 2.
/// Training mode normalizes with batch statistics and folds them into the running
/// buffers with the given momentum; inference mode uses the running buffers.
inline Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Tensor& running_mean,
                         Tensor& running_var, bool training, double momentum = 0.9, double eps = 1e-5) {
    if (x.rank() != 4 && x.rank() != 2) throw ShapeError("batch_norm: expected rank 2 or 4, got " + shape_str(x.shape()));
    const std::size_t n = x.dim(0), c = x.dim(1);
    const std::size_t hw = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
    if (n == 0) throw ShapeError("batch_norm: empty batch");
    for (const Tensor* t : std::initializer_list<const Tensor*>{&gamma, &beta, &running_mean, &running_var})
        if (t->rank() != 1 || t->dim(0) != c) throw ShapeError("batch_norm: parameter length must equal channel count");
    const std::size_t m = n * hw;
    const auto xv = x.data();
    std::vector<double> mean(c), invstd(c);
    if (training) {
        for (std::size_t ch = 0; ch < c; ++ch) {
            double s = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const double* p = xv.data() + (b * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) s += p[i];
            }
            const double mu = s / static_cast<double>(m);
            double ss = 0.0;
            for (std::size_t b = 0; b < n; ++b) {
                const double* p = xv.data() + (b * c + ch) * hw;
                for (std::size_t i = 0; i < hw; ++i) ss += (p[i] - mu) * (p[i] - mu);
            }
            const double var = ss / static_cast<double>(m);
            mean[ch] = mu;
            invstd[ch] = 1.0 / std::sqrt(var + eps);
            const double unbiased = m > 1 ? ss / static_cast<double>(m - 1) : var;
            running_mean.data()[ch] = momentum * running_mean.data()[ch] + (1.0 - momentum) * mu;
            running_var.data()[ch] = momentum * running_var.data()[ch] + (1.0 - momentum) * unbiased;
        }
    } else {
        for (std::size_t ch = 0; ch < c; ++ch) {
            mean[ch] = running_mean.data()[ch];
            invstd[ch] = 1.0 / std::sqrt(running_var.data()[ch] + eps);
        }
    }
    std::vector<double> xhat(x.size()), out(x.size());
    const auto gv = gamma.data(), bv = beta.data();
    for (std::size_t b = 0; b < n; ++b)
        for (std::size_t ch = 0; ch < c; ++ch) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t i = 0; i < hw; ++i) {
                const double h = (xv[off + i] - mean[ch]) * invstd[ch];
                xhat[off + i] = h;
                out[off + i] = gv[ch] * h + bv[ch];
            }
        }
    return detail::make_result(
        x.shape(), std::move(out), {x, gamma, beta},
        [xhat = std::move(xhat), invstd = std::move(invstd), n, c, hw, m, training](detail::Node& self) {
            double* gx = detail::input_grad(self, 0);
            double* gg = detail::input_grad(self, 1);
            double* gb = detail::input_grad(self, 2);
            const auto& gamma_v = self.inputs[1]->value;
            const auto& dy = self.grad;
            for (std::size_t ch = 0; ch < c; ++ch) {
                double sum_dy = 0.0, sum_dy_xhat = 0.0;
                for (std::size_t b = 0; b < n; ++b) {
                    const std::size_t off = (b * c + ch) * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                        sum_dy += dy[off + i];
                        sum_dy_xhat += dy[off + i] * xhat[off + i];
                    }
                }
                if (gg) gg[ch] += sum_dy_xhat;
                if (gb) gb[ch] += sum_dy;
                if (!gx) continue;
                const double scale = gamma_v[ch] * invstd[ch];
                const double md = static_cast<double>(m);
                for (std::size_t b = 0; b < n; ++b) {
                    const std::size_t off = (b * c + ch) * hw;
                    for (std::size_t i = 0; i < hw; ++i) {
                        if (training)
                            gx[off + i] += scale * (dy[off + i] - sum_dy / md - xhat[off + i] * sum_dy_xhat / md);
                        else
                            gx[off + i] += scale * dy[off + i];
                    }
                }
            }
        });
}

/// Non-overlapping window×window mean pooling; trailing rows/columns that do not
/// fill a window are dropped.
inline Tensor avg_pool2d(const Tensor& x, std::size_t window) {
    detail::require_rank(x, 4, "avg_pool2d");
    if (window < 1) throw ConfigError("avg_pool2d: window must be >= 1");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / window, ow = w / window;
    if (oh == 0 || ow == 0) throw ConfigError("avg_pool2d: window larger than input " + shape_str(x.shape()));
    const double inv = 1.0 / static_cast<double>(window * window);
    std::vector<double> out(n * c * oh * ow, 0.0);
    const auto xv = x.data();
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                double s = 0.0;
                for (std::size_t i = 0; i < window; ++i)
                    for (std::size_t j = 0; j < window; ++j) s += xv[(p * h + oy * window + i) * w + ox * window + j];
                out[(p * oh + oy) * ow + ox] = s * inv;
            }
    return detail::make_result({n, c, oh, ow}, std::move(out), {x}, [n, c, h, w, oh, ow, window, inv](detail::Node& self) {
        double* g = detail::input_grad(self, 0);
        if (!g) return;
        for (std::size_t p = 0; p < n * c; ++p)
            for (std::size_t oy = 0; oy < oh; ++oy)
                for (std::size_t ox = 0; ox < ow; ++ox) {
                    const double d = self.grad[(p * oh + oy) * ow + ox] * inv;
                    for (std::size_t i = 0; i < window; ++i)
                        for (std::size_t j = 0; j < window; ++j) g[(p * h + oy * window + i) * w + ox * window + j] += d;
                }
    });
}

/// Non-overlapping window×window max pooling; trailing rows/columns that do not
/// fill a window are dropped. The gradient flows to the first maximum in
/// row-major window order.
inline Tensor max_pool2d(const Tensor& x, std::size_t window) {
    detail::require_rank(x, 4, "max_pool2d");
    if (window < 1) throw ConfigError("max_pool2d: window must be >= 1");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h / window, ow = w / window;
    if (oh == 0 || ow == 0) throw ConfigError("max_pool2d: window larger than input " + shape_str(x.shape()));
    std::vector<double> out(n * c * oh * ow);
    std::vector<std::size_t> argmax(out.size());
    const auto xv = x.data();
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t oy = 0; oy < oh; ++oy)
            for (std::size_t ox = 0; ox < ow; ++ox) {
                std::size_t best = (p * h + oy * window) * w + ox * window;
                for (std::size_t i = 0; i < window; ++i)
                    for (std::size_t j = 0; j < window; ++j) {
                        const std::size_t k = (p * h + oy * window + i) * w + ox * window + j;
                        if (xv[k] > xv[best]) best = k;
                    }
                const std::size_t o = (p * oh + oy) * ow + ox;
                out[o] = xv[best];
                argmax[o] = best;
            }
    return detail::make_result({n, c, oh, ow}, std::move(out), {x}, [argmax = std::move(argmax)](detail::Node& self) {
        double* g = detail::input_grad(self, 0);
        if (!g) return;
        for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
    });
}

/// Nearest-neighbour upsampling by an integer factor.
inline Tensor upsample_nearest(const Tensor& x, std::size_t factor) {
    detail::require_rank(x, 4, "upsample_nearest");
    if (factor < 1) throw ConfigError("upsample_nearest: factor must be >= 1");
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    const std::size_t oh = h * factor, ow = w * factor;
    std::vector<double> out(n * c * oh * ow);
    const auto xv = x.data();
    for (std::size_t p = 0; p < n * c; ++p)
        for (std::size_t y = 0; y < oh; ++y)
            for (std::size_t xx = 0; xx < ow; ++xx) out[(p * oh + y) * ow + xx] = xv[(p * h + y / factor) * w + xx / factor];
    return detail::make_result({n, c, oh, ow}, std::move(out), {x}, [n, c, h, w, oh, ow, factor](detail::Node& self) {
        double* g = detail::input_grad(self, 0);
        if (!g) return;
        for (std::size_t p = 0; p < n * c; ++p)
            for (std::size_t y = 0; y < oh; ++y)
                for (std::size_t xx = 0; xx < ow; ++xx)
                    g[(p * h + y / factor) * w + xx / factor] += self.grad[(p * oh + y) * ow + xx];
    });
}

/// Mean over each H×W plane: [N,C,H,W] -> [N,C].
inline Tensor global_average_pool(const Tensor& x) {
    detail::require_rank(x, 4, "global_average_pool");
    const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
    std::vector<double> out(n * c);
    const auto xv = x.data();
    for (std::size_t p = 0; p < n * c; ++p) {
        double s = 0.0;
        for (std::size_t i = 0; i < hw; ++i) s += xv[p * hw + i];
        out[p] = s / static_cast<double>(hw);
    }
    return detail::make_result({n, c}, std::move(out), {x}, [n, c, hw](detail::Node& self) {
        double* g = detail::input_grad(self, 0);
        if (!g) return;
        const double inv = 1.0 / static_cast<double>(hw);
        for (std::size_t p = 0; p < n * c; ++p)
            for (std::size_t i = 0; i < hw; ++i) g[p * hw + i] += self.grad[p] * inv;
    });
}

/// x[N,I] · wᵀ + b with w[O,I], b[O].
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
    detail::require_rank(x, 2, "linear input");
    detail::require_rank(w, 2, "linear weights");
    detail::require_rank(b, 1, "linear bias");
    const std::size_t n = x.dim(0), in = x.dim(1), out_dim = w.dim(0);
    if (w.dim(1) != in)
        throw ShapeError("linear: input width " + std::to_string(in) + " does not match weights " + shape_str(w.shape()));
    if (b.dim(0) != out_dim) throw ShapeError("linear: bias length does not match output width");
    std::vector<double> out(n * out_dim);
    detail::MatMap y(out.data(), n, out_dim);
    y.noalias() = detail::ConstMatMap(x.data().data(), n, in) * detail::ConstMatMap(w.data().data(), out_dim, in).transpose();
    for (std::size_t r = 0; r < n; ++r)
        for (std::size_t o = 0; o < out_dim; ++o) y(r, o) += b.data()[o];
    return detail::make_result({n, out_dim}, std::move(out), {x, w, b}, [n, in, out_dim](detail::Node& self) {
        detail::ConstMatMap gy(self.grad.data(), n, out_dim);
        if (double* gx = detail::input_grad(self, 0))
            detail::MatMap(gx, n, in).noalias() += gy * detail::ConstMatMap(self.inputs[1]->value.data(), out_dim, in);
        if (double* gw = detail::input_grad(self, 1))
            detail::MatMap(gw, out_dim, in).noalias() +=
                gy.transpose() * detail::ConstMatMap(self.inputs[0]->value.data(), n, in);
        if (double* gb = detail::input_grad(self, 2))
            for (std::size_t r = 0; r < n; ++r)
                for (std::size_t o = 0; o < out_dim; ++o) gb[o] += gy(r, o);
    });
}

/// Concatenation along the channel axis (axis 1) of rank-2 or rank-4 tensors.
inline Tensor concat(const std::vector<Tensor>& parts) {
    if (parts.empty()) throw ShapeError("concat: no inputs");
    const Shape& first = parts.front().shape();
    if (first.size() != 2 && first.size() != 4) throw ShapeError("concat: expected rank 2 or 4, got " + shape_str(first));
    const std::size_t n = first[0];
    const std::size_t inner = first.size() == 4 ? first[2] * first[3] : 1;
    std::size_t channels = 0;
    for (const auto& p : parts) {
        const Shape& s = p.shape();
        bool ok = s.size() == first.size() && s[0] == n;
        if (ok && s.size() == 4) ok = s[2] == first[2] && s[3] == first[3];
        if (!ok) throw ShapeError("concat: incompatible shapes " + shape_str(first) + " and " + shape_str(s));
        channels += s[1];
    }
    Shape out_shape = first;
    out_shape[1] = channels;
    std::vector<double> out(n * channels * inner);
    std::vector<std::size_t> widths;
    std::size_t offset = 0;
    for (const auto& p : parts) {
        const std::size_t w = p.dim(1) * inner;
        const auto v = p.data();
        for (std::size_t b = 0; b < n; ++b)
            std::copy_n(v.data() + b * w, w, out.data() + b * channels * inner + offset);
        widths.push_back(w);
        offset += w;
    }
    return detail::make_result(std::move(out_shape), std::move(out), parts, [widths, n, channels, inner](detail::Node& self) {
        std::size_t off = 0;
        for (std::size_t i = 0; i < widths.size(); ++i) {
            if (double* g = detail::input_grad(self, i))
                for (std::size_t b = 0; b < n; ++b) {
                    const double* src = self.grad.data() + b * channels * inner + off;
                    double* dst = g + b * widths[i];
                    for (std::size_t j = 0; j < widths[i]; ++j) dst[j] += src[j];
                }
            off += widths[i];
        }
    });
}

/// Elementwise product of equal-shape tensors.
inline Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() != b.shape()) throw ShapeError("mul: shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    std::vector<double> out(a.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * b.data()[i];
    return detail::make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
        const auto& av = self.inputs[0]->value;
        const auto& bv = self.inputs[1]->value;
        if (double* ga = detail::input_grad(self, 0))
            for (std::size_t i = 0; i < av.size(); ++i) ga[i] += self.grad[i] * bv[i];
        if (double* gb = detail::input_grad(self, 1))
            for (std::size_t i = 0; i < av.size(); ++i) gb[i] += self.grad[i] * av[i];
    });
}

inline Tensor sum(const Tensor& x) {
    double s = 0.0;
    for (double v : x.data()) s += v;
    return detail::make_result({1}, {s}, {x}, [](detail::Node& self) {
        if (double* g = detail::input_grad(self, 0))
            for (std::size_t i = 0; i < self.inputs[0]->value.size(); ++i) g[i] += self.grad[0];
    });
}

/// Clamp applied to probabilities before taking logarithms in the losses.
inline constexpr double kProbabilityEpsilon = 1e-7;

/// Mean binary cross-entropy between probabilities and 0/1 (or soft) targets.
/// Probabilities are clamped to [eps, 1-eps]; the clamp has zero derivative.
inline Tensor bce_loss(std::span<const double> truth, const Tensor& predicted) {
    if (truth.size() != predicted.size())
        throw ShapeError("bce_loss: " + std::to_string(truth.size()) + " targets for " +
                         std::to_string(predicted.size()) + " predictions");
    constexpr double eps = kProbabilityEpsilon;
    const auto p = predicted.data();
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double q = std::clamp(p[i], eps, 1.0 - eps);
        s += truth[i] * std::log(q) + (1.0 - truth[i]) * std::log(1.0 - q);
    }
    const double nn = static_cast<double>(p.size());
    std::vector<double> targets(truth.begin(), truth.end());
    return detail::make_result({1}, {-s / nn}, {predicted}, [targets = std::move(targets), nn](detail::Node& self) {
        double* g = detail::input_grad(self, 0);
        if (!g) return;
        const auto& pv = self.inputs[0]->value;
        const double scale = -self.grad[0] / nn;
        for (std::size_t i = 0; i < pv.size(); ++i) {
            const double q = pv[i];
            if (q < eps || q > 1.0 - eps) continue;
            g[i] += scale * (targets[i] / q - (1.0 - targets[i]) / (1.0 - q));
        }
    });
}

}  // namespace sdfn

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "sdfn/image.hpp"
#include "sdfn/ops.hpp"
#include "sdfn/random.hpp"

namespace sdfn {

/// Mean pixel-wise binary cross-entropy of a probability map against a mask.
inline Tensor pixelwise_ce(const BinaryMask& truth, const Tensor& predicted) {
    const std::size_t expected = static_cast<std::size_t>(truth.width) * truth.height;
    const bool spatial_ok = predicted.rank() >= 2 && predicted.dim(predicted.rank() - 1) == static_cast<std::size_t>(truth.width) &&
                            predicted.dim(predicted.rank() - 2) == static_cast<std::size_t>(truth.height);
    if (!spatial_ok || predicted.size() != expected)
        throw ShapeError("pixelwise_ce: mask " + std::to_string(truth.width) + "x" + std::to_string(truth.height) +
                         " does not match prediction " + shape_str(predicted.shape()));
    std::vector<double> targets(truth.bits.begin(), truth.bits.end());
    return bce_loss(targets, predicted);
}

/// Batched variant: masks[i] is the target for predicted[i, 0, :, :].
inline Tensor pixelwise_ce(std::span<const BinaryMask> truth, const Tensor& predicted) {
    if (predicted.rank() != 4 || predicted.dim(0) != truth.size() || predicted.dim(1) != 1)
        throw ShapeError("pixelwise_ce: expected prediction [N,1,H,W] for " + std::to_string(truth.size()) + " masks, got " +
                         shape_str(predicted.shape()));
    std::vector<double> targets;
    targets.reserve(predicted.size());
    for (const auto& m : truth) {
        if (static_cast<std::size_t>(m.width) != predicted.dim(3) || static_cast<std::size_t>(m.height) != predicted.dim(2))
            throw ShapeError("pixelwise_ce: mask extent does not match prediction");
        targets.insert(targets.end(), m.bits.begin(), m.bits.end());
    }
    return bce_loss(targets, predicted);
}

// ---------------------------------------------------------------------------
// Layer catalog

struct Conv2dSpec {
    std::size_t in_channels = 0, out_channels = 0, kernel = 3, stride = 1, pad = 1;
    bool bias = true;
};
struct BatchNormSpec {
    std::size_t channels = 0;
    double momentum = 0.9;
    double eps = 1e-5;
};
struct ReluSpec {};
struct AvgPoolSpec {
    std::size_t window = 2;
};
struct GlobalAvgPoolSpec {};
struct FullyConnectedSpec {
    std::size_t in_features = 0, out_features = 0;
};
struct ConcatSpec {};
struct SigmoidSpec {};
struct UpsampleSpec {
    std::size_t factor = 2;
};
struct MaxPoolSpec {
    std::size_t window = 2;
};

using LayerSpec = std::variant<Conv2dSpec, BatchNormSpec, ReluSpec, AvgPoolSpec, GlobalAvgPoolSpec, FullyConnectedSpec,
                               ConcatSpec, SigmoidSpec, UpsampleSpec, MaxPoolSpec>;

inline const char* layer_kind_name(const LayerSpec& spec) {
    constexpr const char* names[] = {"conv2d", "batch_norm", "relu",    "avg_pool2d", "global_avg_pool",
                                     "fully_connected", "concat", "sigmoid", "upsample", "max_pool2d"};
    return names[spec.index()];
}

inline void validate(const LayerSpec& spec) {
    std::visit(
        [](const auto& s) {
            using S = std::decay_t<decltype(s)>;
            if constexpr (std::is_same_v<S, Conv2dSpec>) {
                if (s.in_channels == 0 || s.out_channels == 0 || s.kernel == 0 || s.stride == 0)
                    throw ConfigError("conv2d spec needs positive channels, kernel and stride");
            } else if constexpr (std::is_same_v<S, BatchNormSpec>) {
                if (s.channels == 0 || s.eps <= 0.0 || s.momentum < 0.0 || s.momentum > 1.0)
                    throw ConfigError("batch_norm spec needs positive channels and eps, momentum in [0,1]");
            } else if constexpr (std::is_same_v<S, AvgPoolSpec>) {
                if (s.window == 0) throw ConfigError("avg_pool2d spec needs a positive window");
            } else if constexpr (std::is_same_v<S, MaxPoolSpec>) {
                if (s.window == 0) throw ConfigError("max_pool2d spec needs a positive window");
            } else if constexpr (std::is_same_v<S, FullyConnectedSpec>) {
                if (s.in_features == 0 || s.out_features == 0) throw ConfigError("fully_connected spec needs positive widths");
            } else if constexpr (std::is_same_v<S, UpsampleSpec>) {
                if (s.factor == 0) throw ConfigError("upsample spec needs a positive factor");
            }
        },
        spec);
}

/// A catalog layer plus its parameters (trainable) and buffers (running statistics).
struct Layer {
    LayerSpec spec;
    std::vector<Tensor> params;
    std::vector<Tensor> buffers;
};

/// He (fan-in) initialization for convolution and fully connected weights,
/// zero biases, unit BN scale.
inline Layer make_layer(const LayerSpec& spec, Rng& rng) {
    validate(spec);
    Layer layer{spec, {}, {}};
    auto he = [&rng](Shape shape, std::size_t fan_in) {
        Tensor w(std::move(shape), 0.0, true);
        const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
        for (double& v : w.data()) v = sd * rng.normal();
        return w;
    };
    if (const auto* c = std::get_if<Conv2dSpec>(&spec)) {
        layer.params.push_back(he({c->out_channels, c->in_channels, c->kernel, c->kernel}, c->in_channels * c->kernel * c->kernel));
        if (c->bias) layer.params.push_back(Tensor({c->out_channels}, 0.0, true));
    } else if (const auto* b = std::get_if<BatchNormSpec>(&spec)) {
        layer.params.push_back(Tensor({b->channels}, 1.0, true));
        layer.params.push_back(Tensor({b->channels}, 0.0, true));
        layer.buffers.push_back(Tensor({b->channels}, 0.0));
        layer.buffers.push_back(Tensor({b->channels}, 1.0));
    } else if (const auto* f = std::get_if<FullyConnectedSpec>(&spec)) {
        layer.params.push_back(he({f->out_features, f->in_features}, f->in_features));
        layer.params.push_back(Tensor({f->out_features}, 0.0, true));
    }
    return layer;
}

inline std::size_t layer_arity(const LayerSpec& spec) { return std::holds_alternative<ConcatSpec>(spec) ? 0 : 1; }

/// Applies a catalog layer. `training` selects batch statistics for batch_norm.
inline Tensor layer_forward(Layer& layer, std::span<const Tensor> inputs, bool training = false) {
    const std::size_t arity = layer_arity(layer.spec);
    if (arity == 0 ? inputs.empty() : inputs.size() != arity)
        throw ShapeError(std::string(layer_kind_name(layer.spec)) + ": wrong number of inputs (" +
                         std::to_string(inputs.size()) + ")");
    return std::visit(
        [&](const auto& s) -> Tensor {
            using S = std::decay_t<decltype(s)>;
            const Tensor& x = inputs.front();
            if constexpr (std::is_same_v<S, Conv2dSpec>) {
                if (!s.bias) return conv2d(x, layer.params[0], Tensor({s.out_channels}, 0.0), s.stride, s.pad);
                return conv2d(x, layer.params[0], layer.params[1], s.stride, s.pad);
            } else if constexpr (std::is_same_v<S, BatchNormSpec>) {
                return batch_norm(x, layer.params[0], layer.params[1], layer.buffers[0], layer.buffers[1], training, s.momentum,
                                  s.eps);
            } else if constexpr (std::is_same_v<S, ReluSpec>) {
                return relu(x);
            } else if constexpr (std::is_same_v<S, AvgPoolSpec>) {
                return avg_pool2d(x, s.window);
            } else if constexpr (std::is_same_v<S, GlobalAvgPoolSpec>) {
                return global_average_pool(x);
            } else if constexpr (std::is_same_v<S, FullyConnectedSpec>) {
                return linear(x, layer.params[0], layer.params[1]);
            } else if constexpr (std::is_same_v<S, ConcatSpec>) {
                return concat(std::vector<Tensor>(inputs.begin(), inputs.end()));
            } else if constexpr (std::is_same_v<S, SigmoidSpec>) {
                return sigmoid(x);
            } else if constexpr (std::is_same_v<S, MaxPoolSpec>) {
                return max_pool2d(x, s.window);
            } else {
                return upsample_nearest(x, s.factor);
            }
        },
        layer.spec);
}

inline Tensor layer_forward(Layer& layer, const Tensor& input, bool training = false) {
    return layer_forward(layer, std::span<const Tensor>(&input, 1), training);
}

// ---------------------------------------------------------------------------
// Parameter stores

struct NamedTensor {
    std::string name;
    Tensor tensor;
    bool trainable = true;
};

/// Ordered view of every persisted tensor of a model (declaration order).
using ParamList = std::vector<NamedTensor>;

inline void append_layer(ParamList& out, const std::string& prefix, const Layer& layer) {
    static constexpr const char* param_names[] = {"weight", "bias"};
    static constexpr const char* bn_names[] = {"gamma", "beta"};
    static constexpr const char* buffer_names[] = {"running_mean", "running_var"};
    const bool bn = std::holds_alternative<BatchNormSpec>(layer.spec);
    for (std::size_t i = 0; i < layer.params.size(); ++i)
        out.push_back({prefix + "." + (bn ? bn_names[i] : param_names[i]), layer.params[i], true});
    for (std::size_t i = 0; i < layer.buffers.size(); ++i) out.push_back({prefix + "." + buffer_names[i], layer.buffers[i], false});
}

inline std::vector<Tensor> trainable(const ParamList& list) {
    std::vector<Tensor> out;
    for (const auto& p : list)
        if (p.trainable) out.push_back(p.tensor);
    return out;
}

/// FNV-1a over the raw bytes of every tensor, in order.
inline std::uint64_t checksum(const ParamList& list) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& p : list) {
        const auto* bytes = reinterpret_cast<const unsigned char*>(p.tensor.data().data());
        for (std::size_t i = 0; i < p.tensor.size() * sizeof(double); ++i) {
            h ^= bytes[i];
            h *= 0x100000001b3ULL;
        }
    }
    return h;
}

inline void zero_grads(const ParamList& list) {
    for (const auto& p : list)
        if (p.trainable) {
            Tensor t = p.tensor;
            t.zero_grad();
        }
}

}  // namespace sdfn

#pragma once

#include <algorithm>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "sdfn/layers.hpp"
#include "sdfn/labels.hpp"

namespace sdfn {

/// Densely connected classifier. Each dense layer is BN-ReLU-conv3x3 producing
/// `growth_rate` channels that are concatenated onto its input; transitions
/// between blocks are BN-ReLU-conv1x1 (channel compression) followed by 2x2
/// average pooling. The feature maps handed to GAP are BN-ReLU of the last block.
struct DenseNetConfig {
    int input_size = 64;
    int stem_channels = 16;
    int stem_kernel = 3;
    int stem_stride = 2;
    bool stem_pool = false;
    int growth_rate = 8;
    std::vector<int> blocks{2, 2, 2};
    double compression = 0.5;
    int feature_dim = 32;
    int num_classes = kNumClasses;
    bool batch_norm = true;

    /// DenseNet-121 dimensions: 224 input, 7x7x1024 final feature maps.
    static DenseNetConfig full_scale() {
        DenseNetConfig c;
        c.input_size = 224;
        c.stem_channels = 64;
        c.stem_kernel = 7;
        c.stem_stride = 2;
        c.stem_pool = true;
        c.growth_rate = 32;
        c.blocks = {6, 12, 24, 16};
        c.feature_dim = 1024;
        return c;
    }

    int stem_extent() const {
        const int pad = stem_kernel / 2;
        const int e = (input_size + 2 * pad - stem_kernel) / stem_stride + 1;
        return stem_pool ? e / 2 : e;
    }

    int feature_extent() const {
        int e = stem_extent();
        for (std::size_t b = 0; b + 1 < blocks.size(); ++b) e /= 2;
        return e;
    }

    /// Channel count implied by the block arithmetic.
    int derived_feature_dim() const {
        int c = stem_channels;
        for (std::size_t b = 0; b < blocks.size(); ++b) {
            c += blocks[b] * growth_rate;
            if (b + 1 < blocks.size()) c = transition_channels(c);
        }
        return c;
    }

    int transition_channels(int c) const { return std::max(1, static_cast<int>(c * compression)); }

    void validate() const {
        if (input_size <= 0 || stem_channels <= 0 || stem_kernel <= 0 || stem_stride <= 0 || growth_rate <= 0 || blocks.empty())
            throw ConfigError("densenet config: sizes must be positive and at least one block is required");
        for (int b : blocks)
            if (b <= 0) throw ConfigError("densenet config: every block needs at least one layer");
        if (compression <= 0.0 || compression > 1.0) throw ConfigError("densenet config: compression must be in (0, 1]");
        if (num_classes != kNumClasses) throw ConfigError("densenet config: num_classes is fixed at 14");
        if (feature_extent() < 1) throw ConfigError("densenet config: input too small for the number of transitions");
        if (feature_dim != derived_feature_dim())
            throw ConfigError("densenet config: feature_dim " + std::to_string(feature_dim) + " but the architecture yields " +
                              std::to_string(derived_feature_dim()));
    }

    std::string echo() const {
        std::ostringstream os;
        os << "densenet input_size=" << input_size << " stem_channels=" << stem_channels << " stem_kernel=" << stem_kernel
           << " stem_stride=" << stem_stride << " stem_pool=" << stem_pool << " growth_rate=" << growth_rate << " blocks=";
        for (std::size_t i = 0; i < blocks.size(); ++i) os << (i ? "," : "") << blocks[i];
        os << " compression=" << compression << " feature_dim=" << feature_dim << " num_classes=" << num_classes
           << " batch_norm=" << batch_norm;
        return os.str();
    }
};

struct DenseNetOutput {
    Tensor feature_maps;  // [N,K,s,s]
    Tensor gap;           // [N,K]
    Tensor logits;        // [N,14]
    Tensor probs;         // [N,14]
};

class MiniDenseNet {
public:
    MiniDenseNet() = default;

    MiniDenseNet(DenseNetConfig config, std::uint64_t seed) : config_(std::move(config)) {
        config_.validate();
        Rng rng(seed);
        const auto c0 = static_cast<std::size_t>(config_.stem_channels);
        const auto k = static_cast<std::size_t>(config_.stem_kernel);
        stem_ = make_layer(Conv2dSpec{1, c0, k, static_cast<std::size_t>(config_.stem_stride), k / 2, !config_.batch_norm}, rng);
        std::size_t c = c0;
        for (std::size_t b = 0; b < config_.blocks.size(); ++b) {
            Block block;
            for (int l = 0; l < config_.blocks[b]; ++l) {
                DenseLayer dl;
                dl.in_channels = c;
                if (config_.batch_norm) dl.norm = make_layer(BatchNormSpec{c}, rng);
                dl.conv = make_layer(Conv2dSpec{c, static_cast<std::size_t>(config_.growth_rate), 3, 1, 1, !config_.batch_norm}, rng);
                block.layers.push_back(std::move(dl));
                c += static_cast<std::size_t>(config_.growth_rate);
            }
            if (b + 1 < config_.blocks.size()) {
                const auto out = static_cast<std::size_t>(config_.transition_channels(static_cast<int>(c)));
                if (config_.batch_norm) block.transition_norm = make_layer(BatchNormSpec{c}, rng);
                block.transition_conv = make_layer(Conv2dSpec{c, out, 1, 1, 0, !config_.batch_norm}, rng);
                c = out;
            }
            blocks_.push_back(std::move(block));
        }
        if (config_.batch_norm) final_norm_ = make_layer(BatchNormSpec{c}, rng);
        head_ = make_layer(FullyConnectedSpec{c, static_cast<std::size_t>(config_.num_classes)}, rng);
    }

    const DenseNetConfig& config() const { return config_; }

    DenseNetOutput forward(const Tensor& images, bool training = false) {
        if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != static_cast<std::size_t>(config_.input_size) ||
            images.dim(3) != static_cast<std::size_t>(config_.input_size))
            throw ShapeError("densenet: expected input [N,1," + std::to_string(config_.input_size) + "," +
                             std::to_string(config_.input_size) + "], got " + shape_str(images.shape()));
        Tensor x = layer_forward(stem_, images, training);
        if (config_.stem_pool) x = max_pool2d(x, 2);
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            auto& block = blocks_[b];
            for (auto& dl : block.layers) {
                if (x.dim(1) != dl.in_channels) throw AssertionFailure("densenet: dense connectivity channel count violated");
                Tensor h = bn_relu(dl.norm, x, training);
                h = layer_forward(dl.conv, h, training);
                x = concat({x, h});
            }
            if (b + 1 < blocks_.size()) {
                x = bn_relu(block.transition_norm, x, training);
                x = layer_forward(block.transition_conv, x, training);
                x = avg_pool2d(x, 2);
            }
        }
        DenseNetOutput out;
        out.feature_maps = bn_relu(final_norm_, x, training);
        out.gap = global_average_pool(out.feature_maps);
        out.logits = layer_forward(head_, out.gap, training);
        out.probs = sigmoid(out.logits);
        return out;
    }

    /// Input channel count seen by each dense layer, block by block.
    std::vector<std::vector<std::size_t>> dense_layer_inputs() const {
        std::vector<std::vector<std::size_t>> out;
        for (const auto& b : blocks_) {
            out.emplace_back();
            for (const auto& dl : b.layers) out.back().push_back(dl.in_channels);
        }
        return out;
    }

    const Layer& head() const { return head_; }
    Layer& head() { return head_; }

    ParamList parameters() const {
        ParamList list;
        append_layer(list, "stem", stem_);
        for (std::size_t b = 0; b < blocks_.size(); ++b) {
            const std::string pb = "block" + std::to_string(b);
            for (std::size_t l = 0; l < blocks_[b].layers.size(); ++l) {
                const std::string pl = pb + ".layer" + std::to_string(l);
                if (config_.batch_norm) append_layer(list, pl + ".norm", blocks_[b].layers[l].norm);
                append_layer(list, pl + ".conv", blocks_[b].layers[l].conv);
            }
            if (b + 1 < blocks_.size()) {
                if (config_.batch_norm) append_layer(list, pb + ".transition.norm", blocks_[b].transition_norm);
                append_layer(list, pb + ".transition.conv", blocks_[b].transition_conv);
            }
        }
        if (config_.batch_norm) append_layer(list, "final_norm", final_norm_);
        append_layer(list, "head", head_);
        return list;
    }

private:
    struct DenseLayer {
        std::size_t in_channels = 0;
        Layer norm;
        Layer conv;
    };
    struct Block {
        std::vector<DenseLayer> layers;
        Layer transition_norm;
        Layer transition_conv;
    };

    Tensor bn_relu(Layer& norm, const Tensor& x, bool training) {
        if (!config_.batch_norm) return relu(x);
        return relu(layer_forward(norm, x, training));
    }

    DenseNetConfig config_;
    Layer stem_;
    std::vector<Block> blocks_;
    Layer final_norm_;
    Layer head_;
};

}  // namespace sdfn

#pragma once

#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "sdfn/layers.hpp"

namespace sdfn {

/// Encoder-decoder segmenter: `depth` levels of (conv-BN-ReLU)x2 + 2x2 average
/// pooling, a bottleneck block, then nearest upsampling with skip concatenation
/// back to full resolution and a 1x1 conv + sigmoid head.
struct UNetConfig {
    int input_size = 64;
    int depth = 3;
    int base_channels = 8;
    bool batch_norm = true;

    void validate() const {
        if (input_size <= 0 || depth < 1 || base_channels <= 0) throw ConfigError("unet config: sizes must be positive");
        if (input_size % (1 << depth) != 0)
            throw ConfigError("unet config: input_size " + std::to_string(input_size) + " not divisible by 2^" +
                              std::to_string(depth));
    }

    std::string echo() const {
        std::ostringstream os;
        os << "unet input_size=" << input_size << " depth=" << depth << " base_channels=" << base_channels
           << " batch_norm=" << batch_norm;
        return os.str();
    }
};

class MiniUNet {
public:
    MiniUNet() = default;

    MiniUNet(UNetConfig config, std::uint64_t seed) : config_(config) {
        config_.validate();
        Rng rng(seed);
        std::size_t in = 1;
        for (int l = 0; l < config_.depth; ++l) {
            const auto c = channels_at(l);
            encoder_.push_back(make_block(in, c, rng));
            in = c;
        }
        bottleneck_ = make_block(in, channels_at(config_.depth), rng);
        in = channels_at(config_.depth);
        for (int l = config_.depth - 1; l >= 0; --l) {
            const auto c = channels_at(l);
            decoder_.push_back(make_block(in + c, c, rng));
            in = c;
        }
        head_ = make_layer(Conv2dSpec{in, 1, 1, 1, 0}, rng);
    }

    const UNetConfig& config() const { return config_; }

    /// Per-pixel probabilities, same extent as the input.
    Tensor forward(const Tensor& images, bool training = false) {
        if (images.rank() != 4 || images.dim(1) != 1 || images.dim(2) != static_cast<std::size_t>(config_.input_size) ||
            images.dim(3) != static_cast<std::size_t>(config_.input_size))
            throw ShapeError("unet: expected input [N,1," + std::to_string(config_.input_size) + "," +
                             std::to_string(config_.input_size) + "], got " + shape_str(images.shape()));
        std::vector<Tensor> skips;
        Tensor x = images;
        for (auto& block : encoder_) {
            x = run_block(block, x, training);
            skips.push_back(x);
            x = avg_pool2d(x, 2);
        }
        x = run_block(bottleneck_, x, training);
        for (std::size_t i = 0; i < decoder_.size(); ++i) {
            x = upsample_nearest(x, 2);
            x = concat({x, skips[skips.size() - 1 - i]});
            x = run_block(decoder_[i], x, training);
        }
        return sigmoid(layer_forward(head_, x, training));
    }

    ParamList parameters() const {
        ParamList list;
        auto add_block = [&](const std::string& prefix, const Block& b) {
            for (std::size_t i = 0; i < b.convs.size(); ++i) {
                append_layer(list, prefix + ".conv" + std::to_string(i), b.convs[i]);
                if (config_.batch_norm) append_layer(list, prefix + ".norm" + std::to_string(i), b.norms[i]);
            }
        };
        for (std::size_t i = 0; i < encoder_.size(); ++i) add_block("enc" + std::to_string(i), encoder_[i]);
        add_block("bottleneck", bottleneck_);
        for (std::size_t i = 0; i < decoder_.size(); ++i) add_block("dec" + std::to_string(i), decoder_[i]);
        append_layer(list, "head", head_);
        return list;
    }

private:
    struct Block {
        std::vector<Layer> convs;
        std::vector<Layer> norms;
    };

    std::size_t channels_at(int level) const { return static_cast<std::size_t>(config_.base_channels) << level; }

    Block make_block(std::size_t in, std::size_t out, Rng& rng) const {
        Block b;
        for (int i = 0; i < 2; ++i) {
            b.convs.push_back(make_layer(Conv2dSpec{i == 0 ? in : out, out, 3, 1, 1, !config_.batch_norm}, rng));
            if (config_.batch_norm) b.norms.push_back(make_layer(BatchNormSpec{out}, rng));
        }
        return b;
    }

    Tensor run_block(Block& b, Tensor x, bool training) {
        for (std::size_t i = 0; i < b.convs.size(); ++i) {
            x = layer_forward(b.convs[i], x, training);
            if (config_.batch_norm) x = layer_forward(b.norms[i], x, training);
            x = relu(x);
        }
        return x;
    }

    UNetConfig config_;
    std::vector<Block> encoder_;
    Block bottleneck_;
    std::vector<Block> decoder_;
    Layer head_;
};

}  // namespace sdfn

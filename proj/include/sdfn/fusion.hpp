#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "sdfn/augment.hpp"
#include "sdfn/densenet.hpp"
#include "sdfn/image.hpp"
#include "sdfn/lrg.hpp"
#include "sdfn/train.hpp"

namespace sdfn {

/// Two feature extractors (whole image, lung region) whose GAP vectors are
/// concatenated and fed to a 14-way fully connected fusion head.
struct SdfnModel {
    MiniDenseNet global;
    MiniDenseNet local;
    Layer fusion;  // weight [14, Kg+Kl], bias [14]
    bool global_frozen = true;
    bool local_frozen = true;

    SdfnModel() = default;
    SdfnModel(MiniDenseNet g, MiniDenseNet l, std::uint64_t seed) : global(std::move(g)), local(std::move(l)) {
        Rng rng(seed);
        fusion = make_layer(FullyConnectedSpec{feature_width(), kNumClasses}, rng);
    }

    std::size_t global_dim() const { return static_cast<std::size_t>(global.config().feature_dim); }
    std::size_t local_dim() const { return static_cast<std::size_t>(local.config().feature_dim); }
    std::size_t feature_width() const { return global_dim() + local_dim(); }

    Tensor& weight() { return fusion.params[0]; }
    Tensor& bias() { return fusion.params[1]; }
    const Tensor& weight() const { return fusion.params[0]; }
    const Tensor& bias() const { return fusion.params[1]; }

    ParamList fusion_parameters() const {
        ParamList list;
        append_layer(list, "fusion", fusion);
        return list;
    }

    std::string echo() const {
        return "global{" + global.config().echo() + "} local{" + local.config().echo() + "}";
    }
};

struct SdfnOutput {
    DenseNetOutput global;
    DenseNetOutput local;
    Tensor logits;  // [N,14]
    Tensor probs;   // [N,14]
};

/// probs = sigmoid(W · [GAP_global, GAP_local] + b), extractors in inference mode.
inline SdfnOutput sdfn_forward(SdfnModel& model, const Tensor& whole, const Tensor& crop) {
    if (whole.rank() != 4 || crop.rank() != 4 || whole.dim(0) != crop.dim(0))
        throw ShapeError("sdfn_forward: whole-image and crop batches must be [N,1,S,S] with equal N");
    SdfnOutput out;
    {
        NoGradGuard no_grad;
        out.global = model.global.forward(whole, false);
        out.local = model.local.forward(crop, false);
    }
    out.logits = layer_forward(model.fusion, concat({out.global.gap, out.local.gap}));
    out.probs = sigmoid(out.logits);
    return out;
}

// ---------------------------------------------------------------------------
// Fusion-head training on precomputed features

/// Concatenated GAP features per item; `flipped` holds the features of the
/// horizontally mirrored inputs for flip augmentation (may be empty).
struct FusionFeatures {
    std::vector<std::vector<double>> features;
    std::vector<std::vector<double>> flipped;
    std::vector<LabelVector> labels;
    std::vector<std::string> groups;
};

namespace detail {

inline Tensor feature_batch(const std::vector<std::vector<double>>& rows, std::span<const std::size_t> idx,
                            const std::vector<std::vector<double>>* alt = nullptr, const std::vector<bool>* use_alt = nullptr) {
    const std::size_t k = rows[idx[0]].size();
    Tensor t({idx.size(), k});
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& src = (alt && use_alt && (*use_alt)[b]) ? (*alt)[idx[b]] : rows[idx[b]];
        std::copy(src.begin(), src.end(), t.data().begin() + static_cast<std::ptrdiff_t>(b * k));
    }
    return t;
}

}  // namespace detail

/// Trains only `head` (a fully connected layer) with BCE and Adam, keeping
/// the epoch with the highest validation mean AUC.
inline TrainResult train_fusion_head(Layer& head, const FusionFeatures& data, const TrainConfig& cfg,
                                     const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (data.features.empty()) throw ConfigError("train_fusion: empty dataset");
    const bool can_flip = !data.flipped.empty() && cfg.augment && cfg.ranges.flip_prob > 0.0;
    auto [train_idx, val_idx] = grouped_holdout(data.groups, cfg.validation_fraction, mix_seed(cfg.seed, 101));
    ParamList params;
    append_layer(params, "fusion", head);
    std::vector<Tensor> weights = trainable(params);
    AdamState adam;
    adam.learning_rate = cfg.learning_rate;
    adam.decay = cfg.decay;
    PlateauScheduler plateau(cfg.plateau_patience, cfg.plateau_factor);

    std::vector<double> val_targets;
    std::vector<LabelVector> val_labels;
    for (auto i : val_idx) {
        val_targets.insert(val_targets.end(), data.labels[i].begin(), data.labels[i].end());
        val_labels.push_back(data.labels[i]);
    }

    TrainResult result;
    result.selector = "max_val_mean_auc";
    Snapshot best;
    double best_metric = -std::numeric_limits<double>::infinity();
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> order = train_idx;
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t batch_no = 0;
        for (const auto& b : detail::batches(order, static_cast<std::size_t>(cfg.batch_size))) {
            std::vector<bool> flip(b.size(), false);
            if (can_flip)
                for (std::size_t i = 0; i < b.size(); ++i) flip[i] = rng.bernoulli(cfg.ranges.flip_prob);
            std::vector<double> targets;
            for (auto i : b) targets.insert(targets.end(), data.labels[i].begin(), data.labels[i].end());
            zero_grads(params);
            Tensor loss = bce_loss(targets, sigmoid(layer_forward(head, detail::feature_batch(data.features, b, &data.flipped, &flip))));
            detail::check_finite_loss(loss.item(), epoch, batch_no++);
            loss.backward();
            adam_step(weights, adam);
            loss_sum += loss.item() * static_cast<double>(b.size());
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(train_idx.size());
        rec.learning_rate = adam.learning_rate;
        {
            NoGradGuard no_grad;
            const Tensor probs = sigmoid(layer_forward(head, detail::feature_batch(data.features, val_idx)));
            rec.val_loss = bce_loss(val_targets, probs).item();
            std::vector<LabelVector> p(val_idx.size());
            for (std::size_t i = 0; i < val_idx.size(); ++i)
                std::copy_n(probs.data().begin() + static_cast<std::ptrdiff_t>(i * kNumClasses), kNumClasses, p[i].begin());
            rec.val_mean_auc = detail::defined_mean_auc(p, val_labels);
        }
        detail::check_finite_loss(rec.val_loss, epoch, batch_no);
        const double metric = std::isnan(rec.val_mean_auc) ? -rec.val_loss : rec.val_mean_auc;
        if (metric > best_metric) {
            best_metric = metric;
            best = snapshot(params);
            result.best_epoch = epoch;
            result.best_metric = metric;
        }
        plateau.observe(rec.val_loss, adam);
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    restore(params, best);
    return result;
}

/// Whole images at the global input extent and crops at the local one.
struct FusionSet {
    std::vector<Image> whole;
    std::vector<Image> crops;
    std::vector<LabelVector> labels;
    std::vector<std::string> groups;
};

inline std::vector<std::vector<double>> fused_features(SdfnModel& model, const std::vector<Image>& whole,
                                                       const std::vector<Image>& crops) {
    const auto g = extract_features(model.global, whole);
    const auto l = extract_features(model.local, crops);
    std::vector<std::vector<double>> out(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) {
        out[i] = g[i];
        out[i].insert(out[i].end(), l[i].begin(), l[i].end());
    }
    return out;
}

struct FusionTrainResult {
    TrainResult train;
    std::uint64_t global_checksum_before = 0, global_checksum_after = 0;
    std::uint64_t local_checksum_before = 0, local_checksum_after = 0;
};

/// Third training stage: both extractors frozen, only the fusion head learns.
inline FusionTrainResult train_fusion(SdfnModel& model, const FusionSet& data, const TrainConfig& cfg,
                                      const EpochCallback& on_epoch = {}) {
    if (!model.global_frozen || !model.local_frozen) throw ConfigError("train_fusion: both feature extractors must be frozen");
    if (data.whole.empty()) throw ConfigError("train_fusion: empty dataset");
    if (data.whole.size() != data.crops.size() || data.whole.size() != data.labels.size())
        throw ShapeError("train_fusion: whole images, crops and labels differ in count");
    FusionTrainResult r;
    r.global_checksum_before = checksum(model.global.parameters());
    r.local_checksum_before = checksum(model.local.parameters());

    FusionFeatures f;
    f.features = fused_features(model, data.whole, data.crops);
    if (cfg.augment && cfg.ranges.flip_prob > 0.0) {
        std::vector<Image> fw, fc;
        for (const auto& im : data.whole) fw.push_back(flip_horizontal(im));
        for (const auto& im : data.crops) fc.push_back(flip_horizontal(im));
        f.flipped = fused_features(model, fw, fc);
    }
    f.labels = data.labels;
    f.groups = data.groups;
    r.train = train_fusion_head(model.fusion, f, cfg, on_epoch);

    r.global_checksum_after = checksum(model.global.parameters());
    r.local_checksum_after = checksum(model.local.parameters());
    if (r.global_checksum_after != r.global_checksum_before || r.local_checksum_after != r.local_checksum_before)
        throw AssertionFailure("train_fusion: frozen extractor parameters changed");
    return r;
}

// ---------------------------------------------------------------------------
// Class activation maps

/// Real-valued activation map; `rescaled` marks maps already mapped to [0,255].
struct Heatmap {
    Image map;
    bool rescaled = false;
};

/// Raw CAMs for class c: weighted sums of the final feature maps of each
/// extractor with that class's fusion weights (bias excluded).
inline std::pair<Heatmap, Heatmap> cam(const SdfnModel& model, const Tensor& global_maps, const Tensor& local_maps, std::size_t c,
                                       std::size_t item = 0) {
    if (c >= kNumClasses) throw ConfigError("cam: class index " + std::to_string(c) + " out of range");
    auto weighted = [&](const Tensor& maps, std::size_t offset) {
        const std::size_t k = maps.dim(1), h = maps.dim(2), w = maps.dim(3);
        if (item >= maps.dim(0)) throw ShapeError("cam: item index out of range");
        Image out(static_cast<int>(w), static_cast<int>(h));
        const auto fm = maps.data();
        const auto wt = model.weight().data();
        for (std::size_t j = 0; j < k; ++j) {
            const double omega = wt[c * model.feature_width() + offset + j];
            const double* f = fm.data() + (item * k + j) * h * w;
            for (std::size_t p = 0; p < h * w; ++p) out.pixels[p] += omega * f[p];
        }
        return Heatmap{out, false};
    };
    if (global_maps.dim(1) != model.global_dim() || local_maps.dim(1) != model.local_dim())
        throw ShapeError("cam: feature map channels do not match the fusion head");
    return {weighted(global_maps, 0), weighted(local_maps, model.global_dim())};
}

/// Registered sum of the two maps at image resolution, min-max scaled to
/// [0,255]. A constant fused map becomes all zeros.
inline Heatmap fuse_and_rescale(const Heatmap& h1, const Heatmap& h2, const BoundingBox& box, int width, int height) {
    if (!box.valid_in(width, height)) throw ShapeError("fuse_and_rescale: box outside the image");
    Image fused = resize_bilinear(h1.map, width, height);
    const Image local = resize_bilinear(h2.map, box.width(), box.height());
    for (int y = 0; y < box.height(); ++y)
        for (int x = 0; x < box.width(); ++x) fused.at(box.x0 + x, box.y0 + y) += local.at(x, y);
    const auto [lo, hi] = std::minmax_element(fused.pixels.begin(), fused.pixels.end());
    const double mn = *lo, mx = *hi;
    for (double& v : fused.pixels) v = mx > mn ? 255.0 * (v - mn) / (mx - mn) : 0.0;
    return {fused, true};
}

/// Jet colormap for t in [0,1].
inline Rgb jet(double t) {
    t = std::clamp(t, 0.0, 1.0);
    auto channel = [](double x) { return static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(1.5 - std::abs(x), 0.0, 1.0))); };
    return {channel(4.0 * t - 3.0), channel(4.0 * t - 2.0), channel(4.0 * t - 1.0)};
}

/// Heatmap colored with the jet map and blended at 50% over the grayscale image.
inline ColorImage overlay(const Image& base, const Heatmap& heat) {
    if (base.width != heat.map.width || base.height != heat.map.height) throw ShapeError("overlay: extents differ");
    ColorImage out{base.width, base.height, std::vector<Rgb>(base.pixels.size())};
    for (std::size_t i = 0; i < base.pixels.size(); ++i) {
        const Rgb c = jet(heat.map.pixels[i] / 255.0);
        const double g = 255.0 * std::clamp(base.pixels[i], 0.0, 1.0);
        auto mix = [g](std::uint8_t v) { return static_cast<std::uint8_t>(std::lround(0.5 * g + 0.5 * v)); };
        out.pixels[i] = {mix(c.r), mix(c.g), mix(c.b)};
    }
    return out;
}

}  // namespace sdfn

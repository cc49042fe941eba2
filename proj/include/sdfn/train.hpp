#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "sdfn/adam.hpp"
#include "sdfn/augment.hpp"
#include "sdfn/densenet.hpp"
#include "sdfn/image.hpp"
#include "sdfn/metrics.hpp"
#include "sdfn/unet.hpp"

namespace sdfn {

struct TrainConfig {
    double learning_rate = 1e-4;
    double decay = 1e-5;
    int batch_size = 16;
    int max_epochs = 100;
    int plateau_patience = 5;
    double plateau_factor = 10.0;
    std::uint64_t seed = 1;
    double validation_fraction = 0.1;
    bool augment = true;
    AugmentRanges ranges = AugmentRanges::classification();

    static TrainConfig classification() { return {}; }

    static TrainConfig segmentation() {
        TrainConfig c;
        c.learning_rate = 1e-3;
        c.batch_size = 8;
        c.ranges = AugmentRanges::segmentation();
        return c;
    }

    void validate() const {
        if (!(learning_rate > 0.0) || !(decay >= 0.0)) throw ConfigError("train config: learning_rate must be positive, decay non-negative");
        if (batch_size < 1 || max_epochs < 1 || plateau_patience < 1) throw ConfigError("train config: batch_size, max_epochs and plateau_patience must be positive");
        if (!(plateau_factor > 1.0)) throw ConfigError("train config: plateau_factor must exceed 1");
        if (!(validation_fraction > 0.0 && validation_fraction < 1.0)) throw ConfigError("train config: validation_fraction must lie in (0,1)");
    }

    std::string echo() const {
        std::ostringstream os;
        os.precision(17);
        os << "train learning_rate=" << learning_rate << " decay=" << decay << " batch_size=" << batch_size
           << " max_epochs=" << max_epochs << " plateau_patience=" << plateau_patience << " plateau_factor=" << plateau_factor
           << " seed=" << seed << " validation_fraction=" << validation_fraction << " augment=" << augment;
        return os.str();
    }
};

struct EpochRecord {
    int epoch = 0;  // 1-based
    double train_loss = 0.0;
    double val_loss = 0.0;
    double val_mean_auc = std::numeric_limits<double>::quiet_NaN();
    double learning_rate = 0.0;
};

struct TrainResult {
    std::vector<EpochRecord> history;
    int best_epoch = 0;
    double best_metric = 0.0;
    std::string selector;  // "max_val_mean_auc" or "min_val_loss"
};

/// Grouped hold-out: whole patients go to validation until `fraction` of the
/// patients (at least one) are held out. Both sides are sorted item indices.
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>> grouped_holdout(std::span<const std::string> groups,
                                                                                      double fraction, std::uint64_t seed) {
    std::vector<std::string> unique(groups.begin(), groups.end());
    std::sort(unique.begin(), unique.end());
    unique.erase(std::unique(unique.begin(), unique.end()), unique.end());
    if (unique.size() < 2) throw ConfigError("grouped_holdout: need at least two groups to form train and validation splits");
    Rng rng(seed);
    rng.shuffle(unique);
    const auto n_val = std::clamp<std::size_t>(static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(unique.size()))), 1,
                                               unique.size() - 1);
    const std::set<std::string> held(unique.begin(), unique.begin() + static_cast<std::ptrdiff_t>(n_val));
    std::vector<std::size_t> train, val;
    for (std::size_t i = 0; i < groups.size(); ++i) (held.count(groups[i]) ? val : train).push_back(i);
    return {train, val};
}

/// Index of the best epoch: argmax or argmin over `values`, first occurrence wins.
inline std::size_t select_checkpoint(std::span<const double> values, bool maximize) {
    if (values.empty()) throw Error("select_checkpoint: empty history");
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (maximize ? values[i] > values[best] : values[i] < values[best]) best = i;
    return best;
}

inline Tensor image_batch(const std::vector<Image>& images, std::span<const std::size_t> idx) {
    if (idx.empty()) throw ShapeError("image_batch: empty batch");
    const auto& first = images[idx[0]];
    Tensor t({idx.size(), 1, static_cast<std::size_t>(first.height), static_cast<std::size_t>(first.width)});
    auto d = t.data();
    for (std::size_t b = 0; b < idx.size(); ++b) {
        const auto& img = images[idx[b]];
        if (img.width != first.width || img.height != first.height) throw ShapeError("image_batch: images differ in extent");
        std::copy(img.pixels.begin(), img.pixels.end(), d.begin() + static_cast<std::ptrdiff_t>(b * img.pixels.size()));
    }
    return t;
}

/// Parameter values captured at the best epoch.
using Snapshot = std::vector<std::vector<double>>;

inline Snapshot snapshot(const ParamList& params) {
    Snapshot s;
    for (const auto& p : params) s.emplace_back(p.tensor.values());
    return s;
}

inline void restore(const ParamList& params, const Snapshot& s) {
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].tensor;
        std::copy(s[i].begin(), s[i].end(), t.data().begin());
    }
}

namespace detail {

inline void check_finite_loss(double loss, int epoch, std::size_t batch) {
    if (!std::isfinite(loss))
        throw NumericError("training diverged: non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                           std::to_string(batch) + "; lower the learning rate or check the inputs");
}

inline std::vector<std::vector<std::size_t>> batches(std::vector<std::size_t> order, std::size_t batch_size) {
    std::vector<std::vector<std::size_t>> out;
    for (std::size_t i = 0; i < order.size(); i += batch_size)
        out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                         order.begin() + static_cast<std::ptrdiff_t>(std::min(order.size(), i + batch_size)));
    return out;
}

/// Mean AUC over the classes whose validation labels contain both values.
inline double defined_mean_auc(const std::vector<LabelVector>& probs, const std::vector<LabelVector>& labels) {
    double sum = 0.0;
    int defined = 0;
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        std::vector<double> s;
        std::vector<int> y;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            s.push_back(probs[i][c]);
            y.push_back(labels[i][c] != 0.0);
        }
        const auto pos = std::count(y.begin(), y.end(), 1);
        if (pos == 0 || pos == static_cast<long>(y.size())) continue;
        sum += roc_auc(s, y).auc;
        ++defined;
    }
    return defined ? sum / defined : std::numeric_limits<double>::quiet_NaN();
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Inference helpers

inline std::vector<LabelVector> predict_probs(MiniDenseNet& net, const std::vector<Image>& images, std::size_t batch = 32) {
    NoGradGuard no_grad;
    std::vector<std::size_t> all(images.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<LabelVector> out;
    for (const auto& b : detail::batches(all, batch)) {
        const auto probs = net.forward(image_batch(images, b), false).probs;
        for (std::size_t i = 0; i < b.size(); ++i) {
            LabelVector v{};
            std::copy_n(probs.data().begin() + static_cast<std::ptrdiff_t>(i * kNumClasses), kNumClasses, v.begin());
            out.push_back(v);
        }
    }
    return out;
}

/// GAP feature vectors, one per image, in eval mode.
inline std::vector<std::vector<double>> extract_features(MiniDenseNet& net, const std::vector<Image>& images, std::size_t batch = 32) {
    NoGradGuard no_grad;
    std::vector<std::size_t> all(images.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<std::vector<double>> out;
    const auto k = static_cast<std::size_t>(net.config().feature_dim);
    for (const auto& b : detail::batches(all, batch)) {
        const auto gap = net.forward(image_batch(images, b), false).gap;
        for (std::size_t i = 0; i < b.size(); ++i)
            out.emplace_back(gap.data().begin() + static_cast<std::ptrdiff_t>(i * k), gap.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * k));
    }
    return out;
}

inline std::vector<Image> predict_masks(MiniUNet& net, const std::vector<Image>& images, std::size_t batch = 16) {
    NoGradGuard no_grad;
    std::vector<std::size_t> all(images.size());
    std::iota(all.begin(), all.end(), 0);
    std::vector<Image> out;
    for (const auto& b : detail::batches(all, batch)) {
        const auto probs = net.forward(image_batch(images, b), false);
        const std::size_t plane = probs.dim(2) * probs.dim(3);
        for (std::size_t i = 0; i < b.size(); ++i) {
            Image m(static_cast<int>(probs.dim(3)), static_cast<int>(probs.dim(2)));
            std::copy_n(probs.data().begin() + static_cast<std::ptrdiff_t>(i * plane), plane, m.pixels.begin());
            out.push_back(std::move(m));
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training loops

struct ClassificationSet {
    std::vector<Image> images;  // already at the network input extent
    std::vector<LabelVector> labels;
    std::vector<std::string> groups;  // patient identifiers
};

struct SegmentationSet {
    std::vector<Image> images;
    std::vector<BinaryMask> masks;
    std::vector<std::string> groups;
};

/// Called after each epoch; lets callers log progress.
using EpochCallback = std::function<void(const EpochRecord&)>;

/// Minimizes BCE with Adam, divides the rate on validation-loss plateaus and
/// restores the epoch with the highest validation mean AUC.
inline TrainResult train_classifier(MiniDenseNet& net, const ClassificationSet& data, const TrainConfig& cfg,
                                    const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (data.images.empty()) throw ConfigError("train_classifier: empty dataset");
    auto [train_idx, val_idx] = grouped_holdout(data.groups, cfg.validation_fraction, mix_seed(cfg.seed, 101));
    if (train_idx.empty() || val_idx.empty()) throw ConfigError("train_classifier: empty train or validation split");

    const ParamList params = net.parameters();
    std::vector<Tensor> weights = trainable(params);
    AdamState adam;
    adam.learning_rate = cfg.learning_rate;
    adam.decay = cfg.decay;
    PlateauScheduler plateau(cfg.plateau_patience, cfg.plateau_factor);
    const AugmentRanges ranges = cfg.augment ? cfg.ranges : AugmentRanges::none();

    std::vector<Image> val_images;
    std::vector<LabelVector> val_labels;
    for (auto i : val_idx) {
        val_images.push_back(data.images[i]);
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
        std::size_t seen = 0, batch_no = 0;
        for (const auto& b : detail::batches(order, static_cast<std::size_t>(cfg.batch_size))) {
            std::vector<Image> imgs;
            std::vector<double> targets;
            for (auto i : b) {
                imgs.push_back(augment_image(data.images[i], ranges.sample(rng)));
                targets.insert(targets.end(), data.labels[i].begin(), data.labels[i].end());
            }
            std::vector<std::size_t> local(b.size());
            std::iota(local.begin(), local.end(), 0);
            zero_grads(params);
            Tensor loss = bce_loss(targets, net.forward(image_batch(imgs, local), true).probs);
            detail::check_finite_loss(loss.item(), epoch, batch_no++);
            loss.backward();
            adam_step(weights, adam);
            loss_sum += loss.item() * static_cast<double>(b.size());
            seen += b.size();
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(seen);
        rec.learning_rate = adam.learning_rate;
        const auto probs = predict_probs(net, val_images);
        std::vector<double> flat_t, flat_p;
        for (std::size_t i = 0; i < probs.size(); ++i) {
            flat_t.insert(flat_t.end(), val_labels[i].begin(), val_labels[i].end());
            flat_p.insert(flat_p.end(), probs[i].begin(), probs[i].end());
        }
        rec.val_loss = bce_loss(flat_t, Tensor({flat_p.size()}, flat_p)).item();
        detail::check_finite_loss(rec.val_loss, epoch, batch_no);
        rec.val_mean_auc = detail::defined_mean_auc(probs, val_labels);
        // Without any class defined on validation the AUC is unusable; fall back to loss.
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

/// Minimizes pixelwise cross-entropy and keeps the epoch with the smallest validation loss.
inline TrainResult train_segmenter(MiniUNet& net, const SegmentationSet& data, const TrainConfig& cfg,
                                   const EpochCallback& on_epoch = {}) {
    cfg.validate();
    if (data.images.empty()) throw ConfigError("train_segmenter: empty dataset");
    auto [train_idx, val_idx] = grouped_holdout(data.groups, cfg.validation_fraction, mix_seed(cfg.seed, 101));
    if (train_idx.empty() || val_idx.empty()) throw ConfigError("train_segmenter: empty train or validation split");

    const ParamList params = net.parameters();
    std::vector<Tensor> weights = trainable(params);
    AdamState adam;
    adam.learning_rate = cfg.learning_rate;
    adam.decay = cfg.decay;
    PlateauScheduler plateau(cfg.plateau_patience, cfg.plateau_factor);
    const AugmentRanges ranges = cfg.augment ? cfg.ranges : AugmentRanges::none();

    TrainResult result;
    result.selector = "min_val_loss";
    Snapshot best;
    double best_loss = std::numeric_limits<double>::infinity();
    for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
        Rng rng(mix_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
        std::vector<std::size_t> order = train_idx;
        rng.shuffle(order);
        double loss_sum = 0.0;
        std::size_t seen = 0, batch_no = 0;
        for (const auto& b : detail::batches(order, static_cast<std::size_t>(cfg.batch_size))) {
            std::vector<Image> imgs;
            std::vector<BinaryMask> masks;
            for (auto i : b) {
                auto [img, mask] = augment_pair(data.images[i], data.masks[i], ranges.sample(rng));
                imgs.push_back(std::move(img));
                masks.push_back(std::move(mask));
            }
            std::vector<std::size_t> local(b.size());
            std::iota(local.begin(), local.end(), 0);
            zero_grads(params);
            Tensor loss = pixelwise_ce(masks, net.forward(image_batch(imgs, local), true));
            detail::check_finite_loss(loss.item(), epoch, batch_no++);
            loss.backward();
            adam_step(weights, adam);
            loss_sum += loss.item() * static_cast<double>(b.size());
            seen += b.size();
        }

        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(seen);
        rec.learning_rate = adam.learning_rate;
        {
            NoGradGuard no_grad;
            double total = 0.0;
            for (const auto& b : detail::batches(val_idx, 16)) {
                std::vector<BinaryMask> masks;
                for (auto i : b) masks.push_back(data.masks[i]);
                total += pixelwise_ce(masks, net.forward(image_batch(data.images, b), false)).item() * static_cast<double>(b.size());
            }
            rec.val_loss = total / static_cast<double>(val_idx.size());
        }
        detail::check_finite_loss(rec.val_loss, epoch, batch_no);
        if (rec.val_loss < best_loss) {
            best_loss = rec.val_loss;
            best = snapshot(params);
            result.best_epoch = epoch;
            result.best_metric = rec.val_loss;
        }
        plateau.observe(rec.val_loss, adam);
        result.history.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    restore(params, best);
    return result;
}

}  // namespace sdfn

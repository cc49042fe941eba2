#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "sdfn/grad_check.hpp"
#include "sdfn/pipeline.hpp"
#include "sdfn/testing/oracles.hpp"

namespace sdfn::acceptance {

struct CriterionResult {
    int id = 0;
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

struct Outcome {
    bool passed = false;
    std::string detail;
};

namespace detail {

inline std::string fmt(double v, int precision = 3) {
    std::ostringstream os;
    os << std::setprecision(precision) << v;
    return os.str();
}

inline Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) v = scale * rng.uniform(-1.0, 1.0);
    return t;
}

inline double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

/// Filled ellipse of random size and position, OR-ed into the mask.
inline void draw_blob(BinaryMask& m, Rng& rng, double max_radius) {
    const double cx = rng.uniform(0, m.width), cy = rng.uniform(0, m.height);
    const double ax = rng.uniform(0.5, max_radius), ay = rng.uniform(0.5, max_radius);
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x) {
            const double u = (x - cx) / ax, v = (y - cy) / ay;
            if (u * u + v * v <= 1.0) m.set(x, y);
        }
}

inline BinaryMask random_mask(int w, int h, Rng& rng, double density) {
    BinaryMask m(w, h);
    for (auto& b : m.bits) b = rng.bernoulli(density) ? 1 : 0;
    return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// 1. Gradients

inline Outcome check_gradients() {
    Rng rng(41);
    double worst = 0.0;
    std::string worst_kind;
    auto check = [&](Layer layer, std::vector<Tensor> inputs, bool training) {
        std::vector<Tensor> wrt = inputs;
        for (auto& p : layer.params) wrt.push_back(p);
        const Tensor probe_weights = detail::random_tensor(layer_forward(layer, inputs, training).shape(), rng);
        auto loss = [&] { return sum(mul(layer_forward(layer, inputs, training), probe_weights)); };
        const double err = grad_check(loss, wrt).max_relative_error;
        if (err >= worst) {
            worst = err;
            worst_kind = layer_kind_name(layer.spec) + std::string(training ? " (train)" : "");
        }
    };
    check(make_layer(Conv2dSpec{2, 3, 3, 2, 1}, rng), {detail::random_tensor({2, 2, 7, 7}, rng)}, false);
    check(make_layer(Conv2dSpec{3, 2, 1, 1, 0}, rng), {detail::random_tensor({2, 3, 4, 5}, rng)}, false);
    {
        Layer bn = make_layer(BatchNormSpec{3}, rng);
        for (double& v : bn.params[0].data()) v = rng.uniform(0.5, 1.5);
        check(bn, {detail::random_tensor({4, 3, 3, 3}, rng)}, true);
        check(bn, {detail::random_tensor({4, 3, 3, 3}, rng)}, false);
    }
    check(make_layer(ReluSpec{}, rng), {detail::random_tensor({2, 3, 4, 4}, rng)}, false);
    check(make_layer(AvgPoolSpec{2}, rng), {detail::random_tensor({2, 2, 5, 6}, rng)}, false);
    check(make_layer(MaxPoolSpec{2}, rng), {detail::random_tensor({2, 2, 5, 6}, rng)}, false);
    check(make_layer(GlobalAvgPoolSpec{}, rng), {detail::random_tensor({2, 3, 4, 5}, rng)}, false);
    check(make_layer(FullyConnectedSpec{6, 4}, rng), {detail::random_tensor({3, 6}, rng)}, false);
    check(make_layer(ConcatSpec{}, rng), {detail::random_tensor({2, 2, 3, 3}, rng), detail::random_tensor({2, 3, 3, 3}, rng)}, false);
    check(make_layer(SigmoidSpec{}, rng), {detail::random_tensor({2, 7}, rng, 3.0)}, false);
    check(make_layer(UpsampleSpec{2}, rng), {detail::random_tensor({1, 2, 3, 3}, rng)}, false);

    DenseNetConfig cfg;
    cfg.input_size = 16;
    cfg.stem_channels = 4;
    cfg.growth_rate = 3;
    cfg.blocks = {2, 2};
    cfg.feature_dim = cfg.derived_feature_dim();
    MiniDenseNet net(cfg, 7);
    Tensor images({3, 1, 16, 16});
    for (double& v : images.data()) v = rng.uniform();
    std::vector<double> y(3 * kNumClasses);
    for (auto& v : y) v = rng.bernoulli(0.3);
    auto loss = [&] { return bce_loss(y, net.forward(images, true).probs); };
    const double composite = grad_check(loss, trainable(net.parameters())).max_relative_error;
    return {worst < 1e-6 && composite < 1e-4,
            "max layer error " + detail::fmt(worst) + " (" + worst_kind + "), classifier loss " + detail::fmt(composite)};
}

// ---------------------------------------------------------------------------
// 2. Lung region generator against the rule transcription

inline Outcome check_lrg(const Margins& reference, int masks = 1200) {
    Rng rng(2024);
    std::size_t mismatches = 0;
    std::array<int, 4> by_components{};  // 0, 1, 2, 3+
    std::string first_mismatch;
    for (int i = 0; i < masks; ++i) {
        const int w = static_cast<int>(rng.integer(20, 160)), h = static_cast<int>(rng.integer(20, 160));
        BinaryMask m(w, h);
        switch (i % 5) {
            case 0:
                if (rng.bernoulli(0.5)) detail::draw_blob(m, rng, 0.4 * std::min(w, h));
                break;
            case 1:
            case 2:
                for (int b = 0; b < 2; ++b) detail::draw_blob(m, rng, 0.25 * std::min(w, h));
                break;
            case 3:
                for (int b = 0, n = static_cast<int>(rng.integer(3, 7)); b < n; ++b) detail::draw_blob(m, rng, 0.2 * std::min(w, h));
                break;
            default:
                m = detail::random_mask(w, h, rng, rng.uniform(0.0, 0.06));
                break;
        }
        const auto n = label_components(m).size();
        ++by_components[std::min<std::size_t>(n, 3)];
        const auto got = lung_box(m, reference).first;
        const auto want = oracle::lung_region_box(m.bits, w, h);
        if (got.x0 != want[0] || got.y0 != want[1] || got.x1 != want[2] || got.y1 != want[3]) {
            if (!mismatches)
                first_mismatch = "; first mismatch on mask " + std::to_string(i) + " (" + std::to_string(w) + "x" + std::to_string(h) + ")";
            ++mismatches;
        }
    }
    const bool coverage = *std::min_element(by_components.begin(), by_components.end()) >= 50;
    return {mismatches == 0 && coverage, std::to_string(mismatches) + " mismatches over " + std::to_string(masks) + " masks (components 0/1/2/3+: " +
                                             std::to_string(by_components[0]) + "/" + std::to_string(by_components[1]) + "/" +
                                             std::to_string(by_components[2]) + "/" + std::to_string(by_components[3]) + ")" + first_mismatch};
}

// ---------------------------------------------------------------------------
// 3. Closed-form metric values

inline Outcome check_closed_forms() {
    std::vector<std::string> failures;
    auto expect = [&](bool ok, const std::string& what) {
        if (!ok) failures.push_back(what);
    };
    auto near = [](double a, double b) { return std::abs(a - b) <= 1e-12; };
    auto rect = [](int w, int h, int x0, int y0, int x1, int y1) {
        BinaryMask m(w, h);
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x) m.set(x, y);
        return m;
    };
    const BinaryMask a = rect(30, 30, 0, 0, 9, 9);     // 100 pixels
    const BinaryMask b = rect(30, 30, 5, 0, 14, 9);    // 100 pixels, 50 shared with a
    const BinaryMask c = rect(30, 30, 20, 20, 29, 29);  // disjoint from a
    const BinaryMask empty(30, 30);
    expect(dice(a, a) == 1.0, "dice(X,X)");
    expect(dice(a, c) == 0.0, "dice disjoint");
    expect(near(dice(a, b), 0.5), "dice overlap 50");
    expect(iou(a, a) == 1.0, "iou(X,X)");
    expect(near(iou(a, b), 1.0 / 3.0), "iou overlap 50");
    expect(dice(empty, empty) == 1.0 && iou(empty, empty) == 1.0, "both empty");

    const Tensor s = sigmoid(Tensor({3}, std::vector<double>{0.0, std::log(3.0), -40.0}));
    expect(near(s.data()[0], 0.5), "sigmoid(0)");
    expect(near(s.data()[1], 0.75), "sigmoid(ln 3)");
    expect(s.data()[2] > 0.0 && s.data()[2] <= 1e-15, "sigmoid(-40)");

    Rng rng(3);
    std::vector<double> y(kNumClasses);
    for (auto& v : y) v = rng.bernoulli(0.5);
    expect(near(bce_loss(y, Tensor({kNumClasses}, 0.5)).item(), std::log(2.0)), "bce at 0.5");
    expect(bce_loss(y, Tensor({kNumClasses}, y)).item() <= -std::log(1.0 - 1e-7) + 1e-15, "bce perfect");
    const BinaryMask small = rect(8, 8, 2, 2, 5, 6);
    Tensor half({1, 1, 8, 8}, 0.5);
    expect(near(pixelwise_ce(small, half).item(), std::log(2.0)), "pixelwise ce at 0.5");
    std::vector<double> exact(small.bits.begin(), small.bits.end());
    expect(pixelwise_ce(small, Tensor({1, 1, 8, 8}, exact)).item() <= -std::log(1.0 - 1e-7) + 1e-15, "pixelwise ce perfect");

    double worst_identity = 0.0;
    for (int i = 0; i < 1000; ++i) {
        const BinaryMask x = detail::random_mask(16, 16, rng, rng.uniform(0.05, 0.9));
        const BinaryMask z = detail::random_mask(16, 16, rng, rng.uniform(0.05, 0.9));
        const double j = iou(x, z);
        worst_identity = std::max(worst_identity, std::abs(dice(x, z) - 2.0 * j / (1.0 + j)));
    }
    expect(worst_identity <= 1e-12, "DSC-IoU identity");
    std::string detail = failures.empty() ? "all closed-form examples hold" : "failed:";
    for (const auto& f : failures) detail += " " + f + ";";
    return {failures.empty(), detail + " identity error " + detail::fmt(worst_identity)};
}

// ---------------------------------------------------------------------------
// 4. AUC

/// Reference per-class AUCs of the fused model on the full-size dataset.
inline constexpr std::array<double, kNumClasses> kReferenceSdfnAuc{0.781, 0.885, 0.832, 0.700, 0.815, 0.765, 0.719,
                                                                  0.866, 0.743, 0.842, 0.921, 0.835, 0.791, 0.911};

inline Outcome check_auc() {
    Rng rng(4);
    double worst = 0.0, worst_area = 0.0;
    for (int set = 0; set < 100; ++set) {
        const auto n = static_cast<std::size_t>(rng.integer(2, 200));
        std::vector<double> scores(n);
        std::vector<int> labels(n);
        const double grid = static_cast<double>(rng.integer(2, 20));
        for (std::size_t i = 0; i < n; ++i) {
            labels[i] = rng.bernoulli(0.4) ? 1 : 0;
            scores[i] = std::round(rng.uniform(0.0, 1.0) * grid) / grid + 0.1 * labels[i];
        }
        labels[0] = 1;
        labels[1] = 0;
        const auto r = roc_auc(scores, labels);
        worst = std::max(worst, std::abs(r.auc - oracle::auc_pair_count(scores, labels)));
        worst_area = std::max(worst_area, std::abs(r.auc - r.curve.trapezoid_area()));
    }
    const double reference_mean = mean_auc(kReferenceSdfnAuc);
    return {worst <= 1e-9 && worst_area <= 1e-9 && std::abs(reference_mean - 0.815) <= 0.0005,
            "rank vs pair counting " + detail::fmt(worst) + ", curve area " + detail::fmt(worst_area) + ", reference mean " +
                detail::fmt(reference_mean, 6)};
}

// ---------------------------------------------------------------------------
// 5. Paired t-test p-values

inline Outcome check_ttest() {
    Rng rng(5);
    double worst = 0.0;
    int checked = 0;
    for (std::size_t n : {5, 14, 30})
        for (int rep = 0; rep < 10; ++rep) {
            std::vector<double> a(n), b(n);
            const double shift = rng.uniform(-0.6, 0.6);
            for (std::size_t i = 0; i < n; ++i) {
                a[i] = rng.normal();
                b[i] = a[i] + shift + rng.normal();
            }
            const auto r = paired_t_test(a, b);
            worst = std::max(worst, std::abs(r.p - oracle::t_two_tailed_quadrature(r.t, static_cast<double>(r.dof))));
            ++checked;
        }
    return {worst <= 1e-8, std::to_string(checked) + " tests, max |p - quadrature| " + detail::fmt(worst)};
}

// ---------------------------------------------------------------------------
// 6. Class activation maps

inline DenseNetConfig tiny_extractor(int input_size) {
    DenseNetConfig c;
    c.input_size = input_size;
    c.stem_channels = 4;
    c.growth_rate = 3;
    c.blocks = {2, 2};
    c.feature_dim = c.derived_feature_dim();
    return c;
}

inline Outcome check_cam(int models = 100) {
    double worst_oracle = 0.0, worst_identity = 0.0, worst_fuse = 0.0;
    for (int m = 0; m < models; ++m) {
        Rng rng(mix_seed(6, static_cast<std::uint64_t>(m)));
        SdfnModel model(MiniDenseNet(tiny_extractor(16), rng.next()), MiniDenseNet(tiny_extractor(12), rng.next()), rng.next());
        for (double& v : model.weight().data()) v = rng.normal();
        for (double& v : model.bias().data()) v = rng.normal();
        Tensor whole({1, 1, 16, 16}), crop_t({1, 1, 12, 12});
        for (double& v : whole.data()) v = rng.uniform();
        for (double& v : crop_t.data()) v = rng.uniform();
        NoGradGuard no_grad;
        const auto out = sdfn_forward(model, whole, crop_t);
        const auto& gm = out.global.feature_maps;
        const auto& lm = out.local.feature_maps;
        const std::size_t kg = gm.dim(1), kl = lm.dim(1);
        for (std::size_t c = 0; c < kNumClasses; ++c) {
            const auto [h1, h2] = cam(model, gm, lm, c);
            const auto wt = model.weight().data();
            std::vector<double> wg(wt.begin() + static_cast<std::ptrdiff_t>(c * (kg + kl)),
                                   wt.begin() + static_cast<std::ptrdiff_t>(c * (kg + kl) + kg));
            std::vector<double> wl(wt.begin() + static_cast<std::ptrdiff_t>(c * (kg + kl) + kg),
                                   wt.begin() + static_cast<std::ptrdiff_t>((c + 1) * (kg + kl)));
            const auto o1 = oracle::cam_double_loop(gm.values(), kg, gm.dim(2), gm.dim(3), wg);
            const auto o2 = oracle::cam_double_loop(lm.values(), kl, lm.dim(2), lm.dim(3), wl);
            for (std::size_t p = 0; p < o1.size(); ++p) worst_oracle = std::max(worst_oracle, std::abs(o1[p] - h1.map.pixels[p]));
            for (std::size_t p = 0; p < o2.size(); ++p) worst_oracle = std::max(worst_oracle, std::abs(o2[p] - h2.map.pixels[p]));
            auto mean = [](const Image& i) { return std::accumulate(i.pixels.begin(), i.pixels.end(), 0.0) / static_cast<double>(i.pixels.size()); };
            const double rebuilt = mean(h1.map) + mean(h2.map) + model.bias().data()[c];
            worst_identity = std::max(worst_identity, std::abs(rebuilt - out.logits.data()[c]));
            if (c == 0) {
                const int W = 40, H = 36;
                const BoundingBox box{static_cast<int>(rng.integer(0, 10)), static_cast<int>(rng.integer(0, 10)),
                                      static_cast<int>(rng.integer(20, 39)), static_cast<int>(rng.integer(20, 35))};
                const auto fused = fuse_and_rescale(h1, h2, box, W, H);
                const auto want = oracle::fused_heatmap(h1.map.pixels, h1.map.width, h1.map.height, h2.map.pixels, h2.map.width,
                                                        h2.map.height, {box.x0, box.y0, box.x1, box.y1}, W, H);
                for (std::size_t p = 0; p < want.size(); ++p) worst_fuse = std::max(worst_fuse, std::abs(want[p] - fused.map.pixels[p]));
            }
        }
    }
    return {worst_oracle <= 1e-12 && worst_identity <= 1e-10 && worst_fuse <= 1e-9,
            std::to_string(models) + " models: weighted-sum error " + detail::fmt(worst_oracle) + ", GAP exchange error " +
                detail::fmt(worst_identity) + ", fused-map error " + detail::fmt(worst_fuse)};
}

// ---------------------------------------------------------------------------
// 7. Freeze invariant

inline Outcome check_freeze() {
    PhantomSpec spec;
    spec.extent = 64;
    spec.patients = 25;
    const auto corpus = generate_corpus(spec, 77);
    FusionSet data;
    for (const auto& r : corpus) {
        data.whole.push_back(resize_bilinear(r.image, 32, 32));
        data.crops.push_back(resize_bilinear(generate_lung_region(r.image, r.lung_mask).crop, 32, 32));
        data.labels.push_back(r.labels);
        data.groups.push_back(r.patient_id);
    }
    SdfnModel model(MiniDenseNet(tiny_extractor(32), 1), MiniDenseNet(tiny_extractor(32), 2), 3);
    const Snapshot global_before = snapshot(model.global.parameters()), local_before = snapshot(model.local.parameters());
    TrainConfig cfg = TrainConfig::classification();
    cfg.max_epochs = 5;
    cfg.learning_rate = 1e-2;
    const auto r = train_fusion(model, data, cfg);
    const bool bitwise = snapshot(model.global.parameters()) == global_before && snapshot(model.local.parameters()) == local_before;
    const bool sums = r.global_checksum_before == r.global_checksum_after && r.local_checksum_before == r.local_checksum_after;
    const bool moved = r.train.history.front().train_loss != r.train.history.back().train_loss;
    return {bitwise && sums && moved, std::string("5 epochs on ") + std::to_string(corpus.size()) + " phantoms; checksums global " +
                                         hex64(r.global_checksum_after) + " local " + hex64(r.local_checksum_after) +
                                         (bitwise ? ", parameters bit-identical" : ", PARAMETERS CHANGED") +
                                         (moved ? "" : ", fusion head did not train")};
}

// ---------------------------------------------------------------------------
// 8. Segmenter capability

struct SegmenterRun {
    int train_images = 400;
    int held_out_images = 100;
    int extent = 64;
    std::uint64_t seed = 8;
    UNetConfig net;
    TrainConfig train = TrainConfig::segmentation();
    double min_dice = 0.95;
    double max_seconds = 600.0;

    SegmenterRun() { train.max_epochs = 20; }
};

inline Outcome check_segmenter(const SegmenterRun& run = {}, std::ostream* log = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    PhantomSpec spec;
    spec.extent = run.extent;
    spec.patients = (run.train_images + run.held_out_images) / spec.images_per_patient;
    const auto corpus = generate_corpus(spec, run.seed);
    SegmentationSet train;
    std::vector<Image> test_images;
    std::vector<BinaryMask> test_masks;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const Image img = resize_bilinear(corpus[i].image, run.net.input_size, run.net.input_size);
        const BinaryMask mask = resize_mask(corpus[i].lung_mask, run.net.input_size, run.net.input_size);
        if (static_cast<int>(i) < run.train_images) {
            train.images.push_back(img);
            train.masks.push_back(mask);
            train.groups.push_back(corpus[i].patient_id);
        } else {
            test_images.push_back(img);
            test_masks.push_back(mask);
        }
    }
    MiniUNet net(run.net, mix_seed(run.seed, 1));
    TrainConfig cfg = run.train;
    cfg.seed = mix_seed(run.seed, 2);
    const auto result = train_segmenter(net, train, cfg, [&](const EpochRecord& e) {
        if (log) *log << "  segmenter epoch " << e.epoch << " val_loss " << detail::fmt(e.val_loss, 4) << "\n";
    });
    std::vector<BinaryMask> predicted;
    for (const auto& p : predict_masks(net, test_images)) predicted.push_back(threshold(p, 0.5));
    const double dsc = mean_dice(predicted, test_masks);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {dsc >= run.min_dice && seconds < run.max_seconds && cfg.max_epochs <= 50,
            "held-out DSC " + detail::fmt(dsc, 4) + " on " + std::to_string(test_images.size()) + " images after " +
                std::to_string(cfg.max_epochs) + " epochs (kept " + std::to_string(result.best_epoch) + "), " + detail::fmt(seconds, 3) + " s"};
}

// ---------------------------------------------------------------------------
// 9. Whole-image vs lung-region vs fused, on phantoms with planted tiny lesions

struct DirectionalRun {
    int patients = 500;
    int images_per_patient = 4;
    int extent = 256;
    double small_lesion_min = 2.0;
    double small_lesion_max = 3.0;
    double test_fraction = 0.2;
    int segmenter_images = 400;
    UNetConfig segmenter;
    TrainConfig segmenter_train = TrainConfig::segmentation();
    DenseNetConfig global;
    DenseNetConfig local;
    TrainConfig extractor_train = TrainConfig::classification();
    TrainConfig fusion_train = TrainConfig::classification();
    std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
    double min_local_gain = 0.03;
    double fused_slack = 0.005;
    double max_seconds = 3600.0;

    DirectionalRun() {
        local.input_size = 96;
        local.feature_dim = local.derived_feature_dim();
        segmenter_train.max_epochs = 6;
        extractor_train.learning_rate = 3e-3;
        extractor_train.max_epochs = 8;
        fusion_train.learning_rate = 1e-3;
        fusion_train.max_epochs = 30;
    }
};

struct TrialResult {
    EvalReport report;
    double lung_dice = 0.0;
    double seconds = 0.0;
};

/// One full in-memory run: corpus, segmenter, lung regions, both extractors,
/// fusion head and test-split evaluation.
inline TrialResult run_directional_trial(const DirectionalRun& run, std::uint64_t seed, std::ostream* log = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    auto say = [&](const std::string& s) {
        if (log)
            *log << "  [seed " << seed << ", " << std::fixed << std::setprecision(0)
                 << std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() << std::defaultfloat << " s] " << s << "\n"
                 << std::flush;
    };
    PhantomSpec spec;
    spec.extent = run.extent;
    spec.patients = run.patients;
    spec.images_per_patient = run.images_per_patient;
    spec.small_lesion_min = run.small_lesion_min;
    spec.small_lesion_max = run.small_lesion_max;
    const auto corpus = generate_corpus(spec, seed);
    std::vector<std::string> groups;
    for (const auto& r : corpus) groups.push_back(r.patient_id);
    const auto [train, test] = grouped_holdout(groups, run.test_fraction, derived_seed(seed, SeedUse::TestSplit));
    say("generated " + std::to_string(corpus.size()) + " phantoms");

    const int s = run.segmenter.input_size;
    SegmentationSet seg;
    for (std::size_t k = 0; k < train.size() && static_cast<int>(k) < run.segmenter_images; ++k) {
        const auto& r = corpus[train[k]];
        seg.images.push_back(resize_bilinear(r.image, s, s));
        seg.masks.push_back(resize_mask(r.lung_mask, s, s));
        seg.groups.push_back(r.patient_id);
    }
    MiniUNet unet(run.segmenter, derived_seed(seed, SeedUse::SegmenterInit));
    TrainConfig seg_cfg = run.segmenter_train;
    seg_cfg.seed = derived_seed(seed, SeedUse::SegmenterTrain);
    train_segmenter(unet, seg, seg_cfg);

    std::vector<Image> whole(corpus.size()), crops(corpus.size());
    std::vector<double> dsc(corpus.size());
    constexpr std::size_t kChunk = 64;
    for (std::size_t start = 0; start < corpus.size(); start += kChunk) {
        std::vector<Image> originals;
        for (std::size_t i = start; i < std::min(corpus.size(), start + kChunk); ++i) originals.push_back(corpus[i].image);
        const auto masks = segment_lungs(unet, originals);
        const auto regions = lung_regions(originals, masks);
        parallel_for(originals.size(), [&](std::size_t k) {
            whole[start + k] = resize_bilinear(originals[k], run.global.input_size, run.global.input_size);
            crops[start + k] = resize_bilinear(regions[k].crop, run.local.input_size, run.local.input_size);
            dsc[start + k] = dice(masks[k], corpus[start + k].lung_mask);
        });
    }
    TrialResult result;
    result.lung_dice = std::accumulate(dsc.begin(), dsc.end(), 0.0) / static_cast<double>(dsc.size());
    say("lung regions ready, segmenter DSC " + detail::fmt(result.lung_dice, 4));

    auto pick = [](const std::vector<Image>& v, const std::vector<std::size_t>& idx) {
        std::vector<Image> out;
        for (auto i : idx) out.push_back(v[i]);
        return out;
    };
    std::vector<LabelVector> train_labels, test_labels;
    std::vector<std::string> train_groups, test_groups, test_ids;
    for (auto i : train) {
        train_labels.push_back(corpus[i].labels);
        train_groups.push_back(corpus[i].patient_id);
    }
    for (auto i : test) {
        test_labels.push_back(corpus[i].labels);
        test_groups.push_back(corpus[i].patient_id);
        test_ids.push_back(corpus[i].image_id);
    }
    auto train_view = [&](const DenseNetConfig& cfg, const std::vector<Image>& images, SeedUse init, SeedUse fit) {
        MiniDenseNet net(cfg, derived_seed(seed, init));
        TrainConfig tc = run.extractor_train;
        tc.seed = derived_seed(seed, fit);
        train_classifier(net, ClassificationSet{pick(images, train), train_labels, train_groups}, tc);
        return net;
    };
    MiniDenseNet g = train_view(run.global, whole, SeedUse::GlobalInit, SeedUse::GlobalTrain);
    say("whole-image extractor trained");
    MiniDenseNet l = train_view(run.local, crops, SeedUse::LocalInit, SeedUse::LocalTrain);
    say("lung-region extractor trained");
    SdfnModel model(std::move(g), std::move(l), derived_seed(seed, SeedUse::FusionInit));
    TrainConfig fc = run.fusion_train;
    fc.seed = derived_seed(seed, SeedUse::FusionTrain);
    train_fusion(model, FusionSet{pick(whole, train), pick(crops, train), train_labels, train_groups}, fc);
    result.report = evaluate_models(model, pick(whole, test), pick(crops, test), test_labels, test_ids, test_groups, 5,
                                    derived_seed(seed, SeedUse::Folds));
    result.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const std::size_t nod = index_of(Pathology::Nodule), emph = index_of(Pathology::Emphysema);
    say("nodule AUC whole/region/fused " + detail::fmt(result.report.method(kWholeImageMethod).auc[nod]) + "/" +
        detail::fmt(result.report.method(kLungRegionMethod).auc[nod]) + "/" + detail::fmt(result.report.method(kFusedMethod).auc[nod]) +
        ", emphysema " + detail::fmt(result.report.method(kWholeImageMethod).auc[emph]) + "/" +
        detail::fmt(result.report.method(kLungRegionMethod).auc[emph]) + "/" + detail::fmt(result.report.method(kFusedMethod).auc[emph]) +
        ", mean " + detail::fmt(result.report.method(kWholeImageMethod).mean) + "/" + detail::fmt(result.report.method(kLungRegionMethod).mean) +
        "/" + detail::fmt(result.report.method(kFusedMethod).mean));
    return result;
}

inline Outcome check_directional(const DirectionalRun& run = {}, std::ostream* log = nullptr) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::size_t nod = index_of(Pathology::Nodule), emph = index_of(Pathology::Emphysema);
    std::vector<double> g_nod, l_nod, g_emph, l_emph, g_mean, l_mean, f_mean;
    for (auto seed : run.seeds) {
        const auto r = run_directional_trial(run, seed, log).report;
        g_nod.push_back(r.method(kWholeImageMethod).auc[nod]);
        l_nod.push_back(r.method(kLungRegionMethod).auc[nod]);
        g_emph.push_back(r.method(kWholeImageMethod).auc[emph]);
        l_emph.push_back(r.method(kLungRegionMethod).auc[emph]);
        g_mean.push_back(r.method(kWholeImageMethod).mean);
        l_mean.push_back(r.method(kLungRegionMethod).mean);
        f_mean.push_back(r.method(kFusedMethod).mean);
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    using detail::median;
    const bool a = median(l_nod) - median(g_nod) >= run.min_local_gain;
    const bool b = median(g_emph) > median(l_emph);
    const bool c = median(f_mean) >= std::max(median(g_mean), median(l_mean)) - run.fused_slack;
    const bool fast = seconds <= run.max_seconds;
    return {a && b && c && fast,
            "median over " + std::to_string(run.seeds.size()) + " seeds: nodule whole " + detail::fmt(median(g_nod)) + " vs region " +
                detail::fmt(median(l_nod)) + (a ? "" : " [FAIL]") + "; emphysema whole " + detail::fmt(median(g_emph)) + " vs region " +
                detail::fmt(median(l_emph)) + (b ? "" : " [FAIL]") + "; mean whole " + detail::fmt(median(g_mean)) + ", region " +
                detail::fmt(median(l_mean)) + ", fused " + detail::fmt(median(f_mean)) + (c ? "" : " [FAIL]") + "; " +
                detail::fmt(seconds, 4) + " s" + (fast ? "" : " [over budget]")};
}

// ---------------------------------------------------------------------------
// 10. End-to-end determinism through the command stages

/// Small but complete configuration for exercising every stage quickly.
inline nlohmann::json smoke_config_json(std::uint64_t seed) {
    nlohmann::json dn = {{"input_size", 32}, {"stem_channels", 8}, {"growth_rate", 4}, {"blocks", {2, 2}}};
    nlohmann::json quick = {{"max_epochs", 2}, {"learning_rate", 1e-3}, {"batch_size", 16}};
    return {{"seed", seed},
            {"paths", {{"corpus", "corpus"}, {"weights", "weights"}, {"reports", "reports"}}},
            {"phantom", {{"extent", 64}, {"patients", 40}, {"images_per_patient", 4}}},
            {"split", {{"test_fraction", 0.3}, {"folds", 5}}},
            {"segmenter", {{"input_size", 32}, {"depth", 2}, {"base_channels", 4}}},
            {"global", dn},
            {"local", dn},
            {"train", {{"segmenter", {{"max_epochs", 2}, {"batch_size", 8}}}, {"extractor", quick}, {"fusion", quick}}}};
}

inline void run_all_stages(const PipelineConfig& cfg, std::ostream& log) {
    stage_gen_data(cfg, log);
    stage_train_seg(cfg, log);
    stage_run_lrg(cfg, log);
    stage_train_extractor(cfg, "global", log);
    stage_train_extractor(cfg, "local", log);
    stage_train_fusion(cfg, log);
    stage_evaluate(cfg, log);
    stage_cam(cfg, {}, {}, log);
}

/// Relative path -> file bytes for every regular file under `root`.
inline std::map<std::string, std::string> tree_contents(const std::filesystem::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
        if (!e.is_regular_file()) continue;
        std::ifstream in(e.path(), std::ios::binary);
        out[std::filesystem::relative(e.path(), root).generic_string()] =
            std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }
    return out;
}

inline Outcome check_determinism(const std::filesystem::path& work_dir, std::uint64_t seed = 10) {
    std::array<std::map<std::string, std::string>, 2> trees;
    std::ostringstream sink;
    for (int run = 0; run < 2; ++run) {
        const auto dir = work_dir / ("run" + std::to_string(run));
        std::filesystem::remove_all(dir);
        std::filesystem::create_directories(dir);
        {
            std::ofstream(dir / "config.json") << smoke_config_json(seed).dump(2) << "\n";
        }
        run_all_stages(load_pipeline_config(dir / "config.json"), sink);
        trees[static_cast<std::size_t>(run)] = tree_contents(dir);
    }
    std::size_t differing = 0, checkpoints = 0, heatmaps = 0, reports = 0;
    std::string first;
    for (const auto& [path, bytes] : trees[0]) {
        const auto it = trees[1].find(path);
        if (it == trees[1].end() || it->second != bytes) {
            if (!differing) first = " (first: " + path + ")";
            ++differing;
        }
        if (path.ends_with(".sdfw")) ++checkpoints;
        if (path.rfind("reports/cam/", 0) == 0) ++heatmaps;
        if (path.rfind("reports/", 0) == 0) ++reports;
    }
    if (trees[1].size() != trees[0].size()) ++differing;
    const bool complete = checkpoints == 4 && heatmaps > 0 && reports > 0;
    return {differing == 0 && complete, std::to_string(trees[0].size()) + " files compared (" + std::to_string(checkpoints) +
                                            " checkpoints, " + std::to_string(heatmaps) + " heatmap files), " + std::to_string(differing) +
                                            " differ" + first};
}

// ---------------------------------------------------------------------------
// Suite

struct Options {
    Margins lrg_reference = kReferenceMargins;  // margins handed to the generator under test
    std::vector<int> criteria;                  // empty runs every criterion
    std::filesystem::path work_dir = std::filesystem::temp_directory_path() / "sdfn-verify";
    std::ostream* log = nullptr;
};

struct Criterion {
    int id;
    const char* name;
    std::function<Outcome(const Options&)> run;
};

inline std::vector<Criterion> criteria() {
    return {
        {1, "gradient correctness", [](const Options&) { return check_gradients(); }},
        {2, "lung region oracle equivalence", [](const Options& o) { return check_lrg(o.lrg_reference); }},
        {3, "closed-form metric values", [](const Options&) { return check_closed_forms(); }},
        {4, "AUC oracle equivalence", [](const Options&) { return check_auc(); }},
        {5, "t-test oracle", [](const Options&) { return check_ttest(); }},
        {6, "CAM correctness", [](const Options&) { return check_cam(); }},
        {7, "freeze invariant", [](const Options&) { return check_freeze(); }},
        {8, "segmenter capability", [](const Options& o) { return check_segmenter({}, o.log); }},
        {9, "directional fusion claim", [](const Options& o) { return check_directional({}, o.log); }},
        {10, "end-to-end determinism", [](const Options& o) { return check_determinism(o.work_dir); }},
    };
}

/// Runs the selected criteria, printing one PASS/FAIL line per criterion to `out`.
inline std::vector<CriterionResult> run_suite(const Options& options, std::ostream& out) {
    std::vector<CriterionResult> results;
    for (const auto& c : criteria()) {
        if (!options.criteria.empty() && std::find(options.criteria.begin(), options.criteria.end(), c.id) == options.criteria.end())
            continue;
        CriterionResult r{c.id, c.name, false, "", 0.0};
        const auto t0 = std::chrono::steady_clock::now();
        try {
            const Outcome o = c.run(options);
            r.passed = o.passed;
            r.detail = o.detail;
        } catch (const std::exception& e) {
            r.detail = std::string("error: ") + e.what();
        }
        r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        out << (r.passed ? "PASS" : "FAIL") << " [" << r.id << "] " << r.name << ": " << r.detail << " (" << std::fixed
            << std::setprecision(1) << r.seconds << std::defaultfloat << " s)\n"
            << std::flush;
        results.push_back(r);
    }
    return results;
}

}  // namespace sdfn::acceptance

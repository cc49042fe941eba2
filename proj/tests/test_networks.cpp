#include <gtest/gtest.h>

#include <filesystem>

#include "sdfn/checkpoint.hpp"
#include "sdfn/densenet.hpp"
#include "sdfn/lrg.hpp"
#include "sdfn/phantom.hpp"
#include "sdfn/train.hpp"
#include "sdfn/unet.hpp"

using namespace sdfn;

namespace {

DenseNetConfig small_densenet(int input = 32) {
    DenseNetConfig c;
    c.input_size = input;
    c.stem_channels = 8;
    c.growth_rate = 4;
    c.blocks = {2, 2};
    c.feature_dim = c.derived_feature_dim();
    return c;
}

UNetConfig small_unet() {
    UNetConfig c;
    c.input_size = 32;
    c.depth = 2;
    c.base_channels = 4;
    return c;
}

std::vector<PhantomRecord> phantoms(int patients, std::uint64_t seed = 21) {
    PhantomSpec spec;
    spec.extent = 64;
    spec.patients = patients;
    return generate_corpus(spec, seed);
}

ClassificationSet classification_set(const std::vector<PhantomRecord>& corpus, int size) {
    ClassificationSet s;
    for (const auto& r : corpus) {
        s.images.push_back(resize_bilinear(r.image, size, size));
        s.labels.push_back(r.labels);
        s.groups.push_back(r.patient_id);
    }
    return s;
}

SegmentationSet segmentation_set(const std::vector<PhantomRecord>& corpus, int size) {
    SegmentationSet s;
    for (const auto& r : corpus) {
        s.images.push_back(resize_bilinear(r.image, size, size));
        s.masks.push_back(resize_mask(r.lung_mask, size, size));
        s.groups.push_back(r.patient_id);
    }
    return s;
}

}  // namespace

TEST(DenseNet, OutputShapesAndRange) {
    DenseNetConfig c = small_densenet();
    c.stem_channels = 48;
    c.growth_rate = 8;
    c.blocks = {2};
    c.feature_dim = c.derived_feature_dim();
    ASSERT_EQ(c.feature_dim, 64);
    MiniDenseNet net(c, 1);
    Rng rng(1);
    Tensor x({3, 1, 32, 32});
    for (double& v : x.data()) v = rng.uniform();
    NoGradGuard g;
    const auto out = net.forward(x);
    EXPECT_EQ(out.gap.shape(), (Shape{3, 64}));
    EXPECT_EQ(out.probs.shape(), (Shape{3, kNumClasses}));
    for (double p : out.probs.data()) EXPECT_TRUE(p > 0.0 && p < 1.0);
    EXPECT_EQ(out.feature_maps.dim(2), static_cast<std::size_t>(c.feature_extent()));
}

TEST(DenseNet, IdenticalImagesGiveIdenticalRows) {
    MiniDenseNet net(small_densenet(), 2);
    Rng rng(2);
    Tensor x({2, 1, 32, 32});
    for (std::size_t i = 0; i < 32 * 32; ++i) x.data()[i] = x.data()[i + 32 * 32] = rng.uniform();
    NoGradGuard g;
    const auto p = net.forward(x).probs;
    for (std::size_t k = 0; k < kNumClasses; ++k) EXPECT_EQ(p.data()[k], p.data()[kNumClasses + k]);
}

TEST(DenseNet, FullScaleFeatureMapsAreSevenBySeven) {
    const auto c = DenseNetConfig::full_scale();
    EXPECT_EQ(c.feature_extent(), 7);
    EXPECT_EQ(c.derived_feature_dim(), 1024);
}

TEST(DenseNet, DenseConnectivityChannelCounts) {
    const auto c = small_densenet();
    MiniDenseNet net(c, 3);
    const auto inputs = net.dense_layer_inputs();
    ASSERT_EQ(inputs.size(), 2u);
    EXPECT_EQ(inputs[0], (std::vector<std::size_t>{8, 12}));
    EXPECT_EQ(inputs[1][1], inputs[1][0] + 4);
}

TEST(DenseNet, ConfigErrors) {
    DenseNetConfig c = small_densenet();
    c.feature_dim = 5;
    EXPECT_THROW(c.validate(), ConfigError);
    MiniDenseNet net(small_densenet(), 1);
    EXPECT_THROW(net.forward(Tensor({1, 1, 16, 16})), ShapeError);
}

TEST(UNet, ShapeAndRange) {
    MiniUNet net(small_unet(), 4);
    Rng rng(4);
    Tensor x({2, 1, 32, 32});
    for (double& v : x.data()) v = rng.uniform();
    NoGradGuard g;
    const Tensor y = net.forward(x);
    EXPECT_EQ(y.shape(), x.shape());
    for (double p : y.data()) EXPECT_TRUE(p > 0.0 && p < 1.0);
    UNetConfig bad = small_unet();
    bad.input_size = 30;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(Plateau, RateDropsEveryFiveStalledEpochs) {
    PlateauScheduler s(5, 10.0);
    AdamState st;
    st.learning_rate = 1.0;
    std::vector<int> drops;
    for (int epoch = 1; epoch <= 16; ++epoch)
        if (s.observe(1.0 + 0.01 * epoch, st)) drops.push_back(epoch);
    EXPECT_EQ(drops, (std::vector<int>{6, 11, 16}));
    EXPECT_NEAR(st.learning_rate, 1e-3, 1e-15);
}

TEST(Training, CheckpointSelectionPicksArgmin) {
    const std::vector<double> losses{3, 2, 4, 1, 5};
    EXPECT_EQ(select_checkpoint(losses, false) + 1, 4u);
    EXPECT_EQ(select_checkpoint(losses, true) + 1, 5u);
    EXPECT_EQ(select_checkpoint(std::vector<double>{2, 1, 1}, false), 1u);
}

TEST(Training, SegmenterLossDecreasesOnSmallSubset) {
    const auto data = segmentation_set(phantoms(5), 32);
    MiniUNet net(small_unet(), 5);
    TrainConfig cfg = TrainConfig::segmentation();
    cfg.max_epochs = 5;
    cfg.validation_fraction = 0.2;
    const auto r = train_segmenter(net, data, cfg);
    ASSERT_EQ(r.history.size(), 5u);
    EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
    EXPECT_EQ(r.selector, "min_val_loss");
}

TEST(Training, ClassifierLossDecreasesOnSmallSubset) {
    const auto data = classification_set(phantoms(5), 32);
    MiniDenseNet net(small_densenet(), 6);
    TrainConfig cfg;
    cfg.learning_rate = 1e-3;
    cfg.max_epochs = 10;
    cfg.validation_fraction = 0.2;
    const auto r = train_classifier(net, data, cfg);
    ASSERT_EQ(r.history.size(), 10u);
    EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
    EXPECT_GE(r.best_epoch, 1);
}

TEST(Training, SameSeedGivesBitwiseIdenticalParameters) {
    const auto data = classification_set(phantoms(4), 32);
    TrainConfig cfg;
    cfg.max_epochs = 2;
    cfg.validation_fraction = 0.25;
    MiniDenseNet a(small_densenet(), 7), b(small_densenet(), 7);
    train_classifier(a, data, cfg);
    train_classifier(b, data, cfg);
    EXPECT_EQ(snapshot(a.parameters()), snapshot(b.parameters()));
    EXPECT_EQ(checksum(a.parameters()), checksum(b.parameters()));
}

TEST(Training, IdentityAugmentationMatchesNoAugmentation) {
    const auto data = classification_set(phantoms(4), 32);
    TrainConfig plain;
    plain.max_epochs = 2;
    plain.validation_fraction = 0.25;
    plain.augment = false;
    TrainConfig identity = plain;
    identity.augment = true;
    identity.ranges = AugmentRanges::none();
    MiniDenseNet a(small_densenet(), 8), b(small_densenet(), 8);
    train_classifier(a, data, plain);
    train_classifier(b, data, identity);
    EXPECT_EQ(snapshot(a.parameters()), snapshot(b.parameters()));
}

TEST(Training, ConfigValidation) {
    TrainConfig c;
    c.plateau_factor = 1.0;
    EXPECT_THROW(c.validate(), ConfigError);
    c = TrainConfig{};
    c.validation_fraction = 0.0;
    EXPECT_THROW(c.validate(), ConfigError);
}

TEST(Checkpoint, RoundTripAndMismatches) {
    const auto dir = std::filesystem::temp_directory_path() / "sdfn_test_ckpt";
    std::filesystem::remove_all(dir);
    const auto cfg = small_densenet();
    MiniDenseNet a(cfg, 9), b(cfg, 10);
    ASSERT_NE(checksum(a.parameters()), checksum(b.parameters()));
    save_checkpoint(dir / "a.sdfw", "extractor-global", cfg.echo(), a.parameters(), {{"best_epoch", "3"}});
    const auto meta = load_checkpoint(dir / "a.sdfw", "extractor-global", cfg.echo(), b.parameters());
    EXPECT_EQ(meta.at("best_epoch"), "3");
    EXPECT_EQ(checksum(a.parameters()), checksum(b.parameters()));
    EXPECT_THROW(load_checkpoint(dir / "a.sdfw", "extractor-local", cfg.echo(), b.parameters()), ConfigError);
    DenseNetConfig other = cfg;
    other.growth_rate = 6;
    other.feature_dim = other.derived_feature_dim();
    MiniDenseNet c(other, 1);
    EXPECT_THROW(load_checkpoint(dir / "a.sdfw", "extractor-global", other.echo(), c.parameters()), ConfigError);
    std::filesystem::resize_file(dir / "a.sdfw", std::filesystem::file_size(dir / "a.sdfw") - 8);
    EXPECT_THROW(load_checkpoint(dir / "a.sdfw", "extractor-global", cfg.echo(), b.parameters()), ParseError);
    std::filesystem::remove_all(dir);
}

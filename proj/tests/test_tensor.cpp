#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "sdfn/adam.hpp"
#include "sdfn/densenet.hpp"
#include "sdfn/grad_check.hpp"
#include "sdfn/layers.hpp"
#include "sdfn/testing/oracles.hpp"

using namespace sdfn;

namespace {

Tensor random_tensor(Shape shape, Rng& rng, double scale = 1.0, bool requires_grad = false) {
    Tensor t(std::move(shape), 0.0, requires_grad);
    for (double& v : t.data()) v = scale * rng.uniform(-1.0, 1.0);
    return t;
}

/// Scalar probe of a tensor: Σ out ⊙ R with a fixed random R.
Tensor probe(const Tensor& out, const Tensor& weights) { return sum(mul(out, weights)); }

}  // namespace

TEST(Conv2d, ScalarProduct) {
    Tensor x({1, 1, 1, 1}, 3.0), w({1, 1, 1, 1}, 2.0), b({1}, 0.0);
    Tensor y = conv2d(x, w, b, 1, 0);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 1, 1}));
    EXPECT_EQ(y.item(), 6.0);
}

TEST(Conv2d, AveragingKernelPreservesConstantInterior) {
    Tensor x({1, 1, 6, 6}, 0.7), w({1, 1, 3, 3}, 1.0 / 9.0), b({1}, 0.0);
    Tensor y = conv2d(x, w, b, 1, 1);
    for (int r = 1; r < 5; ++r)
        for (int c = 1; c < 5; ++c) EXPECT_NEAR(y.data()[r * 6 + c], 0.7, 1e-15);
}

TEST(Conv2d, MatchesDirectLoopOracle) {
    Rng rng(11);
    Tensor x = random_tensor({2, 3, 8, 8}, rng), w = random_tensor({4, 3, 3, 3}, rng), b = random_tensor({4}, rng);
    Tensor y = conv2d(x, w, b, 2, 1);
    std::size_t oh = 0, ow = 0;
    auto ref = oracle::conv2d_direct(x.values(), 2, 3, 8, 8, w.values(), 4, 3, 3, b.values(), 2, 1, oh, ow);
    ASSERT_EQ(y.shape(), (Shape{2, 4, oh, ow}));
    for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(y.data()[i], ref[i], 1e-12);
}

TEST(Conv2d, Errors) {
    Tensor x({1, 2, 4, 4}), w({1, 3, 3, 3}), b({1});
    EXPECT_THROW(conv2d(x, w, b, 1, 1), ShapeError);
    Tensor w2({1, 2, 7, 7}), b2({1});
    EXPECT_THROW(conv2d(x, w2, b2, 1, 1), ConfigError);
}

TEST(Conv2d, Linearity) {
    Rng rng(5);
    for (int trial = 0; trial < 10; ++trial) {
        Tensor a = random_tensor({1, 2, 7, 6}, rng), c = random_tensor({1, 2, 7, 6}, rng);
        Tensor w = random_tensor({3, 2, 3, 3}, rng), zero({3}, 0.0);
        const double alpha = rng.uniform(-2, 2), beta = rng.uniform(-2, 2);
        Tensor mix({1, 2, 7, 6});
        for (std::size_t i = 0; i < mix.size(); ++i) mix.data()[i] = alpha * a.data()[i] + beta * c.data()[i];
        Tensor lhs = conv2d(mix, w, zero, 2, 1), ya = conv2d(a, w, zero, 2, 1), yc = conv2d(c, w, zero, 2, 1);
        for (std::size_t i = 0; i < lhs.size(); ++i) EXPECT_NEAR(lhs.data()[i], alpha * ya.data()[i] + beta * yc.data()[i], 1e-10);
    }
}

TEST(Layers, Relu) {
    Rng rng(0);
    Layer l = make_layer(ReluSpec{}, rng);
    Tensor y = layer_forward(l, Tensor({3}, std::vector<double>{-1, 0, 2}));
    EXPECT_EQ(y.values(), (std::vector<double>{0, 0, 2}));
}

TEST(Layers, ConcatChannelCount) {
    Rng rng(0);
    Layer l = make_layer(ConcatSpec{}, rng);
    std::vector<Tensor> in{Tensor({1, 1024}, 1.0), Tensor({1, 1024}, 2.0)};
    Tensor y = layer_forward(l, in);
    EXPECT_EQ(y.shape(), (Shape{1, 2048}));
    EXPECT_EQ(y.data()[1023], 1.0);
    EXPECT_EQ(y.data()[1024], 2.0);
    std::vector<Tensor> maps{Tensor({2, 3, 4, 4}), Tensor({2, 5, 4, 4})};
    EXPECT_EQ(layer_forward(l, maps).dim(1), 8u);
    std::vector<Tensor> bad{Tensor({2, 3, 4, 4}), Tensor({2, 5, 3, 4})};
    EXPECT_THROW(layer_forward(l, bad), ShapeError);
}

TEST(Layers, BatchNormMomentsMatchOracle) {
    Rng rng(3);
    Layer bn = make_layer(BatchNormSpec{3}, rng);
    for (std::size_t c = 0; c < 3; ++c) {
        bn.params[0].data()[c] = 0.5 + 0.5 * c;  // scale
        bn.params[1].data()[c] = -1.0 + c;       // shift
    }
    Tensor x = random_tensor({4, 3, 5, 5}, rng, 20.0);
    Tensor y = layer_forward(bn, x, /*training=*/true);
    for (std::size_t c = 0; c < 3; ++c) {
        double mean = 0.0, var = 0.0;
        const double m = 4 * 25;
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t i = 0; i < 25; ++i) mean += y.data()[(b * 3 + c) * 25 + i];
        mean /= m;
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t i = 0; i < 25; ++i) var += std::pow(y.data()[(b * 3 + c) * 25 + i] - mean, 2);
        var /= m;
        double in_mean = 0.0, in_var = 0.0;
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t i = 0; i < 25; ++i) in_mean += x.data()[(b * 3 + c) * 25 + i] / m;
        for (std::size_t b = 0; b < 4; ++b)
            for (std::size_t i = 0; i < 25; ++i) in_var += std::pow(x.data()[(b * 3 + c) * 25 + i] - in_mean, 2) / m;
        const double gamma = bn.params[0].data()[c];
        EXPECT_NEAR(var, gamma * gamma * in_var / (in_var + 1e-5), 1e-10);
        EXPECT_NEAR(mean, bn.params[1].data()[c], 1e-6);
        EXPECT_NEAR(var, std::pow(bn.params[0].data()[c], 2), 1e-6);
    }
    // Running statistics moved towards the batch statistics with momentum 0.9.
    EXPECT_NE(bn.buffers[0].data()[0], 0.0);
}

TEST(Layers, BatchNormInferenceUsesRunningStatistics) {
    Rng rng(1);
    Layer bn = make_layer(BatchNormSpec{2}, rng);
    bn.buffers[0].data()[0] = 1.0;
    bn.buffers[1].data()[0] = 4.0 - 1e-5;
    Tensor x({1, 2, 1, 1}, std::vector<double>{3.0, 0.0});
    Tensor y = layer_forward(bn, x, false);
    EXPECT_NEAR(y.data()[0], 1.0, 1e-12);
}

TEST(Layers, EmptyBatchRejected) { EXPECT_THROW(Tensor({0, 2, 2, 2}), ShapeError); }

TEST(Layers, ArityChecked) {
    Rng rng(0);
    Layer l = make_layer(ReluSpec{}, rng);
    std::vector<Tensor> two{Tensor({1}), Tensor({1})};
    EXPECT_THROW(layer_forward(l, two), ShapeError);
    EXPECT_THROW(make_layer(Conv2dSpec{1, 0, 3, 1, 1}, rng), ConfigError);
}

TEST(MaxPool, ForwardAndGradientRouting) {
    Tensor x({1, 1, 2, 4}, std::vector<double>{1, 5, 2, 2, 3, -1, 2, 0}, true);
    Tensor y = max_pool2d(x, 2);
    EXPECT_EQ(std::vector<double>(y.data().begin(), y.data().end()), (std::vector<double>{5, 2}));
    sum(y).backward();
    EXPECT_EQ(std::vector<double>(x.grad().begin(), x.grad().end()), (std::vector<double>{0, 1, 1, 0, 0, 0, 0, 0}));
    EXPECT_THROW(max_pool2d(x, 3), ConfigError);
}

TEST(GlobalAveragePool, Examples) {
    EXPECT_EQ(global_average_pool(Tensor({1, 1, 3, 3}, 4.25)).item(), 4.25);
    EXPECT_EQ(global_average_pool(Tensor({1, 1, 2, 2}, std::vector<double>{1, 2, 3, 4})).item(), 2.5);
}

TEST(GlobalAveragePool, MatchesPlaneMeanAndStaysInRange) {
    Rng rng(9);
    Tensor x = random_tensor({2, 8, 7, 7}, rng);
    Tensor y = global_average_pool(x);
    ASSERT_EQ(y.shape(), (Shape{2, 8}));
    for (std::size_t p = 0; p < 16; ++p) {
        double s = 0.0, lo = 1e9, hi = -1e9;
        for (std::size_t i = 0; i < 49; ++i) {
            const double v = x.data()[p * 49 + i];
            s += v;
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        EXPECT_NEAR(y.data()[p], s / 49.0, 1e-12);
        EXPECT_GE(y.data()[p], lo);
        EXPECT_LE(y.data()[p], hi);
    }
}

TEST(Sigmoid, Examples) {
    Tensor y = sigmoid(Tensor({3}, std::vector<double>{0.0, std::log(3.0), -40.0}));
    EXPECT_EQ(y.data()[0], 0.5);
    EXPECT_NEAR(y.data()[1], 0.75, 1e-15);
    EXPECT_GT(y.data()[2], 0.0);
    EXPECT_LE(y.data()[2], 1e-15);
    EXPECT_TRUE(std::isfinite(y.data()[2]));
    Tensor big = sigmoid(Tensor({2}, std::vector<double>{60.0, -800.0}));
    EXPECT_LT(big.data()[0], 1.0);
    EXPECT_GT(big.data()[1], 0.0);
}

TEST(Sigmoid, Monotone) {
    Rng rng(2);
    for (int i = 0; i < 1000; ++i) {
        double a = rng.uniform(-30, 30), b = rng.uniform(-30, 30);
        if (a == b) continue;
        if (a > b) std::swap(a, b);
        Tensor y = sigmoid(Tensor({2}, std::vector<double>{a, b}));
        EXPECT_LT(y.data()[0], y.data()[1]);
    }
}

TEST(BceLoss, Examples) {
    std::vector<double> y{1, 0, 1, 1, 0, 0, 0, 1, 0, 1, 0, 0, 1, 0};
    EXPECT_NEAR(bce_loss(y, Tensor({14}, 0.5)).item(), std::log(2.0), 1e-15);
    Tensor exact({14});
    for (std::size_t i = 0; i < 14; ++i) exact.data()[i] = y[i];
    EXPECT_LE(bce_loss(y, exact).item(), -std::log1p(-1e-7) + 1e-18);
    EXPECT_THROW(bce_loss(y, Tensor({13}, 0.5)), ShapeError);
}

TEST(BceLoss, MatchesDirectFormulaAndIsMinimalAtTruth) {
    Rng rng(4);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> y(14), p(14);
        for (std::size_t i = 0; i < 14; ++i) {
            y[i] = rng.bernoulli(0.4) ? 1.0 : 0.0;
            p[i] = rng.uniform();
        }
        const double loss = bce_loss(y, Tensor({14}, p)).item();
        EXPECT_NEAR(loss, oracle::bce_direct(y, p), 1e-12);
        EXPECT_GE(loss, 0.0);
        EXPECT_LT(bce_loss(y, Tensor({14}, y)).item(), loss);
    }
}

TEST(PixelwiseCe, Examples) {
    Rng rng(8);
    BinaryMask m(16, 16);
    for (auto& b : m.bits) b = rng.bernoulli(0.3);
    EXPECT_NEAR(pixelwise_ce(m, Tensor({1, 1, 16, 16}, 0.5)).item(), std::log(2.0), 1e-12);
    Tensor exact({1, 1, 16, 16});
    for (std::size_t i = 0; i < 256; ++i) exact.data()[i] = m.bits[i];
    EXPECT_LE(pixelwise_ce(m, exact).item(), -std::log1p(-1e-7) + 1e-18);
    Tensor p({1, 1, 16, 16});
    std::vector<double> y(256), pv(256);
    for (std::size_t i = 0; i < 256; ++i) {
        pv[i] = p.data()[i] = rng.uniform();
        y[i] = m.bits[i];
    }
    EXPECT_NEAR(pixelwise_ce(m, p).item(), oracle::bce_direct(y, pv), 1e-12);
    EXPECT_THROW(pixelwise_ce(m, Tensor({1, 1, 16, 15}, 0.5)), ShapeError);
}

TEST(Backward, Examples) {
    Tensor w = Tensor::scalar(1.7, true), x = Tensor::scalar(3.0);
    mul(w, x).backward();
    EXPECT_EQ(w.grad()[0], 3.0);

    Tensor v = Tensor::scalar(0.0, true);
    sum(sigmoid(v)).backward();
    EXPECT_DOUBLE_EQ(v.grad()[0], 0.25);
}

TEST(Backward, AccumulatesAcrossCalls) {
    Tensor w = Tensor::scalar(2.0, true), x = Tensor::scalar(3.0);
    Tensor loss = mul(w, x);
    loss.backward();
    loss.backward();
    EXPECT_EQ(w.grad()[0], 6.0);
    w.zero_grad();
    loss.backward();
    EXPECT_EQ(w.grad()[0], 3.0);
}

TEST(Backward, Errors) {
    Tensor w({2}, 1.0, true);
    EXPECT_THROW(relu(w).backward(), ShapeError);
    Tensor leaf = Tensor::scalar(1.0, true);
    EXPECT_THROW(leaf.backward(), Error);
}

TEST(Backward, CompositeMatchesFiniteDifferences) {
    Rng rng(21);
    Tensor x = random_tensor({2, 2, 6, 6}, rng);
    Tensor w = random_tensor({3, 2, 3, 3}, rng, 0.5), b = random_tensor({3}, rng, 0.1);
    Tensor fw = random_tensor({14, 3}, rng, 0.5), fb = random_tensor({14}, rng, 0.1);
    std::vector<double> y(28);
    for (auto& v : y) v = rng.bernoulli(0.5);
    auto loss = [&] {
        Tensor h = global_average_pool(relu(conv2d(x, w, b, 1, 1)));
        return bce_loss(y, sigmoid(linear(h, fw, fb)));
    };
    EXPECT_LT(grad_check(loss, {w, b, fw, fb}, 1e-5).max_relative_error, 1e-4);
}

TEST(Adam, ZeroGradientIsIdentity) {
    AdamState st;
    std::vector<double> theta{1.0, -2.0, 3.0};
    std::vector<double> zero(3, 0.0);
    std::vector<std::span<double>> p{theta};
    std::vector<std::span<const double>> g{zero};
    for (int i = 0; i < 20; ++i) adam_step(p, g, st);
    EXPECT_EQ(theta, (std::vector<double>{1.0, -2.0, 3.0}));
    EXPECT_EQ(st.step_count, 20u);
}

TEST(Adam, FirstStepMovesByLearningRate) {
    AdamState st;
    st.learning_rate = 1e-3;
    std::vector<double> theta{0.5}, grad{0.37};
    std::vector<std::span<double>> p{theta};
    std::vector<std::span<const double>> g{grad};
    adam_step(p, g, st);
    EXPECT_NEAR(0.5 - theta[0], 1e-3 * 0.37 / (0.37 + 1e-8), 1e-15);
}

TEST(Adam, MatchesReferenceRecurrenceOnQuadratic) {
    AdamState st;
    st.learning_rate = 0.05;
    st.decay = 1e-2;
    oracle::AdamReference ref{0.05, 1e-2};
    std::vector<double> theta{1.0, -3.0}, ref_theta = theta;
    for (int step = 0; step < 10; ++step) {
        std::vector<double> g{2.0 * theta[0], 6.0 * theta[1]};  // ∇(x² + 3y²)
        std::vector<double> rg{2.0 * ref_theta[0], 6.0 * ref_theta[1]};
        std::vector<std::span<double>> p{theta};
        std::vector<std::span<const double>> gs{g};
        adam_step(p, gs, st);
        ref.step(ref_theta, rg);
    }
    EXPECT_NEAR(theta[0], ref_theta[0], 1e-12);
    EXPECT_NEAR(theta[1], ref_theta[1], 1e-12);
}

TEST(Adam, Errors) {
    AdamState st;
    std::vector<double> theta{1.0}, bad{std::nan("")}, two{1.0, 2.0};
    std::vector<std::span<double>> p{theta};
    std::vector<std::span<const double>> g{bad};
    EXPECT_THROW(adam_step(p, g, st), NumericError);
    std::vector<std::span<const double>> g2{two};
    EXPECT_THROW(adam_step(p, g2, st), ShapeError);
}

TEST(GradCheck, LinearLayerIsExact) {
    Rng rng(31);
    Tensor x = random_tensor({3, 5}, rng), w = random_tensor({4, 5}, rng), b = random_tensor({4}, rng);
    Tensor r = random_tensor({3, 4}, rng);
    auto loss = [&] { return probe(linear(x, w, b), r); };
        // Exact for any step on a map that is linear in each perturbed element; a
    // wide step keeps cancellation error out of the comparison.
    EXPECT_LT(grad_check(loss, {x, w, b}, 1e-2).max_relative_error, 1e-9);
}

TEST(GradCheck, EveryCatalogLayer) {
    Rng rng(41);
    auto check = [&](Layer& layer, std::vector<Tensor> inputs, bool training) {
        std::vector<Tensor> wrt = inputs;
        for (auto& p : layer.params) wrt.push_back(p);
        Tensor out = layer_forward(layer, inputs, training);
        Tensor r = random_tensor(out.shape(), rng);
        auto loss = [&] { return probe(layer_forward(layer, inputs, training), r); };
        return grad_check(loss, wrt).max_relative_error;
    };
    {
        Layer l = make_layer(Conv2dSpec{2, 3, 3, 2, 1}, rng);
        EXPECT_LT(check(l, {random_tensor({2, 2, 7, 7}, rng)}, false), 1e-6) << "conv2d";
    }
    {
        Layer l = make_layer(BatchNormSpec{3}, rng);
        for (double& v : l.params[0].data()) v = rng.uniform(0.5, 1.5);
        EXPECT_LT(check(l, {random_tensor({4, 3, 3, 3}, rng)}, true), 1e-6) << "batch_norm train";
        EXPECT_LT(check(l, {random_tensor({4, 3, 3, 3}, rng)}, false), 1e-6) << "batch_norm eval";
    }
    {
        Layer l = make_layer(ReluSpec{}, rng);
        EXPECT_LT(check(l, {random_tensor({2, 3, 4, 4}, rng)}, false), 1e-6) << "relu";
    }
    {
        Layer l = make_layer(AvgPoolSpec{2}, rng);
        EXPECT_LT(check(l, {random_tensor({2, 2, 5, 6}, rng)}, false), 1e-6) << "avg_pool2d";
    }
    {
        Layer l = make_layer(MaxPoolSpec{2}, rng);
        EXPECT_LT(check(l, {random_tensor({2, 2, 5, 6}, rng)}, false), 1e-6) << "max_pool2d";
    }
    {
        Layer l = make_layer(GlobalAvgPoolSpec{}, rng);
        EXPECT_LT(check(l, {random_tensor({2, 3, 4, 5}, rng)}, false), 1e-6) << "gap";
    }
    {
        Layer l = make_layer(FullyConnectedSpec{6, 4}, rng);
        EXPECT_LT(check(l, {random_tensor({3, 6}, rng)}, false), 1e-6) << "fully_connected";
    }
    {
        Layer l = make_layer(ConcatSpec{}, rng);
        EXPECT_LT(check(l, {random_tensor({2, 2, 3, 3}, rng), random_tensor({2, 3, 3, 3}, rng)}, false), 1e-6) << "concat";
    }
    {
        Layer l = make_layer(SigmoidSpec{}, rng);
        EXPECT_LT(check(l, {random_tensor({2, 7}, rng, 3.0)}, false), 1e-6) << "sigmoid";
    }
    {
        Layer l = make_layer(UpsampleSpec{2}, rng);
        EXPECT_LT(check(l, {random_tensor({1, 2, 3, 3}, rng)}, false), 1e-6) << "upsample";
    }
}

TEST(GradCheck, MiniClassifierLoss) {
    DenseNetConfig cfg;
    cfg.input_size = 16;
    cfg.stem_channels = 4;
    cfg.growth_rate = 3;
    cfg.blocks = {2, 2};
    cfg.feature_dim = cfg.derived_feature_dim();
    MiniDenseNet net(cfg, 7);
    Rng rng(51);
    Tensor images({3, 1, 16, 16});
    for (double& v : images.data()) v = rng.uniform();
    std::vector<double> y(3 * 14);
    for (auto& v : y) v = rng.bernoulli(0.3);
    auto loss = [&] { return bce_loss(y, net.forward(images, true).probs); };
    EXPECT_LT(grad_check(loss, trainable(net.parameters())).max_relative_error, 1e-4);
}

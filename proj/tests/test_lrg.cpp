#include <gtest/gtest.h>

#include "sdfn/lrg.hpp"
#include "sdfn/phantom.hpp"
#include "sdfn/testing/oracles.hpp"

using namespace sdfn;

namespace {

void fill_rect(BinaryMask& m, int x0, int y0, int x1, int y1) {
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) m.set(x, y);
}

Region region(int label, std::size_t area, double cx, double cy, BoundingBox box = {}) {
    Region r;
    r.label = label;
    r.area = area;
    r.cx = cx;
    r.cy = cy;
    r.box = box;
    return r;
}

}  // namespace

TEST(Components, EmptyMaskHasNone) { EXPECT_TRUE(label_components(BinaryMask(10, 7)).empty()); }

TEST(Components, TwoRectangles) {
    BinaryMask m(40, 30);
    fill_rect(m, 2, 3, 11, 8);     // 10x6
    fill_rect(m, 20, 10, 34, 24);  // 15x15
    const auto r = label_components(m);
    ASSERT_EQ(r.size(), 2u);
    EXPECT_EQ(r[0].area, 60u);
    EXPECT_DOUBLE_EQ(r[0].cx, 6.5);
    EXPECT_DOUBLE_EQ(r[0].cy, 5.5);
    EXPECT_EQ(r[0].box, (BoundingBox{2, 3, 11, 8}));
    EXPECT_EQ(r[1].area, 225u);
    EXPECT_DOUBLE_EQ(r[1].cx, 27.0);
    EXPECT_DOUBLE_EQ(r[1].cy, 17.0);
}

TEST(Components, DiagonalNeighboursAreSeparate) {
    BinaryMask m(3, 3);
    m.set(0, 0);
    m.set(1, 1);
    EXPECT_EQ(label_components(m).size(), 2u);
}

TEST(Components, MatchFloodFillOnRandomMasks) {
    Rng rng(250);
    for (int i = 0; i < 200; ++i) {
        const int w = static_cast<int>(rng.integer(1, 60)), h = static_cast<int>(rng.integer(1, 60));
        BinaryMask m(w, h);
        const double density = rng.uniform(0.0, 0.7);
        for (auto& b : m.bits) b = rng.bernoulli(density) ? 1 : 0;
        const auto got = label_components(m);
        const auto want = oracle::flood_fill_components(m.bits, w, h);
        ASSERT_EQ(got.size(), want.size()) << "mask " << i;
        for (std::size_t k = 0; k < got.size(); ++k) {
            EXPECT_EQ(static_cast<long>(got[k].area), want[k].area);
            EXPECT_NEAR(got[k].cx, want[k].sum_x / want[k].area, 1e-12);
            EXPECT_NEAR(got[k].cy, want[k].sum_y / want[k].area, 1e-12);
            EXPECT_EQ(got[k].box, (BoundingBox{want[k].x0, want[k].y0, want[k].x1, want[k].y1}));
        }
    }
}

TEST(SelectTwoCentral, DropsFarRegion) {
    const std::vector<Region> in{region(1, 100, 300, 500), region(2, 100, 700, 500), region(3, 100, 100, 50)};
    const auto out = select_two_central(in, 1024, 1024);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].label, 1);
    EXPECT_EQ(out[1].label, 2);
}

TEST(SelectTwoCentral, TwoRegionsUnchanged) {
    const std::vector<Region> in{region(1, 10, 0, 0), region(2, 20, 1000, 1000)};
    const auto out = select_two_central(in, 1024, 1024);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_EQ(out[0].label, 1);
    EXPECT_EQ(out[1].label, 2);
}

TEST(SelectTwoCentral, ExternalAirBlobRemovedFromPhantomMask) {
    PhantomSpec spec;
    spec.extent = 128;
    const auto rec = generate_phantom(spec, 3, 0);
    BinaryMask with_blob = rec.lung_mask;
    fill_rect(with_blob, 0, 0, 5, 5);
    ASSERT_EQ(label_components(with_blob).size(), label_components(rec.lung_mask).size() + 1);
    const auto [clean_box, clean_status] = lung_box(rec.lung_mask);
    const auto [box, status] = lung_box(with_blob);
    EXPECT_EQ(box, clean_box);
    EXPECT_TRUE(status.fp_removed);
}

TEST(DropMinorRegion, ThirdRule) {
    EXPECT_EQ(drop_minor_region({region(1, 4000, 0, 0), region(2, 1200, 0, 0)}).size(), 1u);
    EXPECT_EQ(drop_minor_region({region(1, 1200, 0, 0), region(2, 4000, 0, 0)})[0].label, 2);
    EXPECT_EQ(drop_minor_region({region(1, 4000, 0, 0), region(2, 1500, 0, 0)}).size(), 2u);
    EXPECT_EQ(drop_minor_region({region(1, 700, 0, 0), region(2, 700, 0, 0)}).size(), 2u);
    EXPECT_THROW(drop_minor_region({region(1, 700, 0, 0)}), ShapeError);
}

TEST(MirrorBound, LoneRegionReflected) {
    EXPECT_EQ(mirror_bound({region(1, 1, 0, 0, {100, 200, 400, 800})}, 1024), (BoundingBox{100, 200, 923, 800}));
}

TEST(MirrorBound, TwoRegionsUnioned) {
    EXPECT_EQ(mirror_bound({region(1, 1, 0, 0, {100, 200, 400, 800}), region(2, 1, 0, 0, {620, 210, 920, 790})}, 1024),
              (BoundingBox{100, 200, 920, 800}));
}

TEST(MirrorBound, PartlyMissedLungRecovered) {
    PhantomSpec spec;
    spec.extent = 128;
    const auto rec = generate_phantom(spec, 5, 0);
    const auto lungs = label_components(rec.lung_mask);
    ASSERT_EQ(lungs.size(), 2u);
    BinaryMask one_lung(rec.lung_mask.width, rec.lung_mask.height);
    const BoundingBox keep = lungs[0].box;
    for (int y = 0; y < one_lung.height; ++y)
        for (int x = 0; x < one_lung.width; ++x)
            if (keep.contains(x, y) && rec.lung_mask.at(x, y)) one_lung.set(x, y);
    const auto [box, status] = lung_box(one_lung);
    EXPECT_TRUE(status.mirrored);
    const BoundingBox reflected{127 - keep.x1, keep.y0, 127 - keep.x0, keep.y1};
    EXPECT_TRUE(box.contains(keep));
    EXPECT_TRUE(box.contains(reflected));
}

TEST(ExpandBox, ReferenceMargins) {
    EXPECT_EQ(expand_box({100, 120, 400, 500}, 1024, 1024, scaled_margins(1024, 1024)), (BoundingBox{85, 105, 415, 520}));
    EXPECT_EQ(expand_box({5, 3, 1020, 1015}, 1024, 1024, scaled_margins(1024, 1024)), (BoundingBox{0, 0, 1023, 1023}));
}

TEST(ExpandBox, MarginsScaleWithExtent) {
    const Margins m = scaled_margins(512, 512);
    EXPECT_EQ(m, (Margins{8, 8, 8, 10}));
    EXPECT_EQ(expand_box({100, 120, 400, 500}, 512, 512, m), (BoundingBox{92, 112, 408, 510}));
    for (int extent : {64, 100, 256, 333, 2048}) {
        const Margins s = scaled_margins(extent, extent);
        EXPECT_EQ(s.left, static_cast<int>(std::floor(15.0 * extent / 1024 + 0.5)));
        EXPECT_EQ(s.bottom, static_cast<int>(std::floor(20.0 * extent / 1024 + 0.5)));
    }
    EXPECT_THROW(expand_box({5, 5, 600, 10}, 512, 512, m), ShapeError);
}

TEST(LungRegion, EnclosesGroundTruthLungs) {
    PhantomSpec spec;
    spec.extent = 128;
    for (std::size_t i = 0; i < 20; ++i) {
        const auto rec = generate_phantom(spec, 11, i);
        const auto r = generate_lung_region(rec.image, rec.lung_mask);
        for (int y = 0; y < 128; ++y)
            for (int x = 0; x < 128; ++x)
                if (rec.lung_mask.at(x, y)) ASSERT_TRUE(r.box.contains(x, y)) << "image " << i;
        EXPECT_EQ(r.crop.width, r.box.width());
        EXPECT_EQ(r.crop.height, r.box.height());
        EXPECT_EQ(r.crop.at(0, 0), rec.image.at(r.box.x0, r.box.y0));
    }
}

TEST(LungRegion, EmptyMaskFallsBackToWholeImage) {
    Image img(20, 16, 0.3);
    const auto r = generate_lung_region(img, BinaryMask(20, 16));
    EXPECT_EQ(r.box, (BoundingBox{0, 0, 19, 15}));
    EXPECT_TRUE(r.status.fallback);
    EXPECT_EQ(r.status.str(), "fallback");
    EXPECT_EQ(r.crop, img);
}

TEST(LungRegion, ExtentMismatchRejected) { EXPECT_THROW(generate_lung_region(Image(10, 10), BinaryMask(10, 9)), ShapeError); }

TEST(LrgStatus, RoundTrip) {
    for (const char* s : {"clean", "fp-removed", "mirrored", "fp-removed+mirrored", "fallback"})
        EXPECT_EQ(LrgStatus::parse(s).str(), s);
    EXPECT_THROW(LrgStatus::parse("odd"), ParseError);
}

TEST(LungRegion, MatchesRuleTranscription) {
    Rng rng(99);
    for (int i = 0; i < 300; ++i) {
        const int w = static_cast<int>(rng.integer(8, 120)), h = static_cast<int>(rng.integer(8, 120));
        BinaryMask m(w, h);
        const double density = rng.uniform(0.0, 0.1);
        for (auto& b : m.bits) b = rng.bernoulli(density) ? 1 : 0;
        const auto got = lung_box(m).first;
        const auto want = oracle::lung_region_box(m.bits, w, h);
        ASSERT_EQ(got, (BoundingBox{want[0], want[1], want[2], want[3]})) << "mask " << i;
    }
}

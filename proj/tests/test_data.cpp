#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "sdfn/augment.hpp"
#include "sdfn/image.hpp"
#include "sdfn/lrg.hpp"
#include "sdfn/manifest.hpp"
#include "sdfn/metrics.hpp"
#include "sdfn/phantom.hpp"
#include "sdfn/testing/oracles.hpp"
#include "sdfn/train.hpp"

using namespace sdfn;

namespace {

std::filesystem::path scratch(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("sdfn_test_" + name);
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

Image random_image(int w, int h, Rng& rng) {
    Image img(w, h);
    for (double& v : img.pixels) v = rng.uniform();
    return img;
}

BoundingBox mask_bounds(const BinaryMask& m) {
    BoundingBox b{m.width, m.height, -1, -1};
    for (int y = 0; y < m.height; ++y)
        for (int x = 0; x < m.width; ++x)
            if (m.at(x, y)) b = box_union(b, {x, y, x, y});
    return b;
}

}  // namespace

TEST(Phantom, SameSeedGivesIdenticalCorpus) {
    PhantomSpec spec;
    spec.extent = 64;
    spec.patients = 5;
    const auto a = generate_corpus(spec, 9), b = generate_corpus(spec, 9);
    ASSERT_EQ(a.size(), 20u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].image, b[i].image);
        EXPECT_EQ(a[i].lung_mask, b[i].lung_mask);
        EXPECT_EQ(a[i].labels, b[i].labels);
        EXPECT_EQ(a[i].lesions, b[i].lesions);
    }
    EXPECT_NE(generate_corpus(spec, 10)[0].image, a[0].image);
}

TEST(Phantom, ImagesOfOnePatientShareAPatientId) {
    PhantomSpec spec;
    spec.extent = 32;
    spec.patients = 3;
    spec.images_per_patient = 2;
    const auto c = generate_corpus(spec, 1);
    EXPECT_EQ(c[0].patient_id, c[1].patient_id);
    EXPECT_NE(c[1].patient_id, c[2].patient_id);
    std::set<std::string> ids;
    for (const auto& r : c) ids.insert(r.image_id);
    EXPECT_EQ(ids.size(), c.size());
}

TEST(Phantom, ValuesInRangeAndTwoLungs) {
    PhantomSpec spec;
    spec.extent = 128;
    spec.patients = 5;
    for (const auto& r : generate_corpus(spec, 2)) {
        for (double v : r.image.pixels) ASSERT_TRUE(v >= 0.0 && v <= 1.0);
        EXPECT_EQ(label_components(r.lung_mask).size(), 2u) << r.image_id;
    }
}

TEST(Phantom, LungConfinedLesionsStayInsideLungFields) {
    PhantomSpec spec;
    spec.extent = 128;
    spec.patients = 30;
    spec.misalignment_prob = 0.0;
    std::size_t checked = 0;
    for (const auto& r : generate_corpus(spec, 3)) {
        const BoundingBox lungs = mask_bounds(r.lung_mask);
        for (const auto& l : r.lesions) {
            if (!kLungConfined[l.cls]) continue;
            ++checked;
            EXPECT_TRUE(lungs.contains(l.box)) << r.image_id << " class " << kClassNames[l.cls];
            bool touches = false;
            for (int y = l.box.y0; y <= l.box.y1 && !touches; ++y)
                for (int x = l.box.x0; x <= l.box.x1 && !touches; ++x) touches = r.lung_mask.at(x, y);
            EXPECT_TRUE(touches) << r.image_id;
        }
    }
    EXPECT_GT(checked, 100u);
}

TEST(Phantom, LabelsAgreeWithLesionBoxes) {
    PhantomSpec spec;
    spec.extent = 64;
    spec.patients = 20;
    for (const auto& r : generate_corpus(spec, 4)) {
        LabelVector from_boxes{};
        for (const auto& l : r.lesions) from_boxes[l.cls] = 1.0;
        EXPECT_EQ(from_boxes, r.labels) << r.image_id;
    }
}

TEST(Phantom, PrevalenceWithinBinomialBounds) {
    PhantomSpec spec;
    spec.extent = 96;
    spec.patients = 500;
    spec.prevalence[index_of(Pathology::Nodule)] = 0.1;
    spec.prevalence[index_of(Pathology::Hernia)] = 0.05;
    const auto corpus = generate_corpus(spec, 5);
    const double n = static_cast<double>(corpus.size());
    for (std::size_t c = 0; c < kNumClasses; ++c) {
        double k = 0;
        for (const auto& r : corpus) k += r.labels[c];
        const double p = spec.prevalence[c];
        EXPECT_LE(std::abs(k - n * p), 3.0 * std::sqrt(n * p * (1 - p))) << kClassNames[c] << " observed " << k / n;
    }
}

TEST(PhantomSpec, FileRoundTripAndValidation) {
    const auto dir = scratch("spec");
    PhantomSpec spec;
    spec.extent = 100;
    spec.prevalence[3] = 0.35;
    spec.noise = 0.0;
    write_phantom_spec(dir / "p.spec", spec);
    const auto back = read_phantom_spec(dir / "p.spec");
    EXPECT_EQ(back.to_map(), spec.to_map());
    std::ofstream(dir / "bad.spec") << "extent = 8\n";
    EXPECT_THROW(read_phantom_spec(dir / "bad.spec").validate(), ConfigError);
    std::ofstream(dir / "unknown.spec") << "colour = 3\n";
    EXPECT_THROW(read_phantom_spec(dir / "unknown.spec"), ConfigError);
    std::filesystem::remove_all(dir);
}

TEST(Resize, IdentityAndConstant) {
    Rng rng(1);
    const Image img = random_image(13, 9, rng);
    EXPECT_EQ(resize_bilinear(img, 13, 9), img);
    const Image flat(7, 5, 0.375);
    for (auto [w, h] : {std::pair{3, 3}, {20, 11}, {1, 1}})
        for (double v : resize_bilinear(flat, w, h).pixels) EXPECT_DOUBLE_EQ(v, 0.375);
}

TEST(Resize, UpscaleMatchesHandEvaluatedBilinear) {
    Image src(2, 2);
    src.pixels = {0.0, 0.3, 0.6, 0.9};
    const Image out = resize_bilinear(src, 4, 4);
    // Corner-aligned: output x maps to x/3 in source coordinates.
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            const double u = x / 3.0, v = y / 3.0;
            const double want = (1 - u) * (1 - v) * 0.0 + u * (1 - v) * 0.3 + (1 - u) * v * 0.6 + u * v * 0.9;
            EXPECT_NEAR(out.at(x, y), want, 1e-12);
        }
    Rng rng(2);
    const Image r = random_image(11, 7, rng);
    const auto direct = oracle::resize_direct(r.pixels, 11, 7, 19, 23);
    const Image got = resize_bilinear(r, 19, 23);
    for (std::size_t i = 0; i < direct.size(); ++i) EXPECT_NEAR(got.pixels[i], direct[i], 1e-12);
}

TEST(Augment, IdentityAndFlipInvolution) {
    Rng rng(3);
    const Image img = random_image(16, 12, rng);
    EXPECT_EQ(augment_image(img, AugmentParams{}), img);
    AugmentParams flip;
    flip.flip = true;
    const Image once = augment_image(img, flip);
    EXPECT_NE(once, img);
    EXPECT_EQ(once.at(0, 3), img.at(15, 3));
    EXPECT_EQ(augment_image(once, flip), img);
    BinaryMask m(16, 12);
    m.set(2, 2);
    EXPECT_EQ(augment_pair(img, m, AugmentParams{}).second, m);
    EXPECT_TRUE(AugmentRanges::none().sample(rng).is_identity());
}

TEST(Augment, RotationRoundTripKeepsMask) {
    PhantomSpec spec;
    spec.extent = 256;
    const BinaryMask m = generate_phantom(spec, 1, 0).lung_mask;
    const BinaryMask back = rotate_mask(rotate_mask(m, 10.0), -10.0);
    EXPECT_GE(dice(m, back), 0.97);
}

TEST(Augment, SampledParametersStayInRange) {
    Rng rng(4);
    const auto r = AugmentRanges::segmentation();
    for (int i = 0; i < 200; ++i) {
        const auto p = r.sample(rng);
        EXPECT_LE(std::abs(p.rotation_deg), r.max_rotation_deg);
        EXPECT_LE(std::abs(p.shift_x), r.max_shift);
        EXPECT_GE(p.zoom, r.min_zoom);
        EXPECT_LE(p.zoom, r.max_zoom);
        EXPECT_FALSE(p.flip);
    }
}

TEST(Pgm, RoundTripAndHeader) {
    const auto dir = scratch("pgm");
    Image img(5, 3);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) img.pixels[i] = static_cast<double>(i * 17 % 256) / 255.0;
    write_pgm(dir / "a.pgm", img);
    EXPECT_EQ(read_pgm(dir / "a.pgm"), img);

    const std::string bytes = std::string("P5 2 2 255\n") + '\x00' + '\x40' + '\x80' + '\xff';
    std::ofstream(dir / "b.pgm", std::ios::binary) << bytes;
    const Image b = read_pgm(dir / "b.pgm");
    EXPECT_EQ(b.width, 2);
    EXPECT_EQ(b.height, 2);
    EXPECT_DOUBLE_EQ(b.pixels[3], 1.0);
    std::filesystem::remove_all(dir);
}

TEST(Pgm, TruncatedFileNamesOffset) {
    const std::string header = "P5\n4 4\n255\n";
    std::vector<unsigned char> bytes(header.begin(), header.end());
    bytes.resize(bytes.size() + 5, 7);
    try {
        decode_pgm(bytes);
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_EQ(e.offset, bytes.size());
        EXPECT_NE(std::string(e.what()).find("truncated"), std::string::npos);
    }
    EXPECT_THROW(decode_pgm({'P', '6', ' ', '1'}), ParseError);
}

TEST(Manifest, CorpusRoundTrip) {
    const auto dir = scratch("manifest");
    PhantomSpec spec;
    spec.extent = 32;
    spec.patients = 25;
    const auto corpus = generate_corpus(spec, 6);
    const auto rows = write_corpus(dir, spec, corpus);
    ASSERT_EQ(rows.size(), 100u);
    EXPECT_EQ(read_manifest(dir / "manifest.csv"), rows);
    EXPECT_EQ(read_mask_pgm(dir / rows[7].mask_path), corpus[7].lung_mask);
    const Image img = read_pgm(dir / rows[7].image_path);
    for (std::size_t i = 0; i < img.pixels.size(); ++i) EXPECT_NEAR(img.pixels[i], corpus[7].image.pixels[i], 0.5 / 255 + 1e-12);
    std::filesystem::remove_all(dir);
}

TEST(Manifest, ColumnOrderViolationNamesColumn) {
    const auto dir = scratch("manifest_bad");
    std::ofstream(dir / "manifest.csv") << "patient_id,image_id\n";
    try {
        read_manifest(dir / "manifest.csv");
        FAIL();
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("image_id"), std::string::npos);
    }
    std::filesystem::remove_all(dir);
}

TEST(Manifest, MissingManifestNamesGenData) {
    try {
        read_manifest(std::filesystem::temp_directory_path() / "sdfn_no_such_dir" / "manifest.csv");
        FAIL();
    } catch (const PrerequisiteError& e) {
        EXPECT_NE(std::string(e.what()).find("gen-data"), std::string::npos);
    }
}

TEST(Split, NoPatientSpansTrainAndTest) {
    PhantomSpec spec;
    spec.extent = 32;
    spec.patients = 60;
    std::vector<std::string> groups;
    for (const auto& r : generate_corpus(spec, 7)) groups.push_back(r.patient_id);
    const auto [train, test] = grouped_holdout(groups, 0.2, 11);
    std::set<std::string> train_patients, test_patients;
    for (auto i : train) train_patients.insert(groups[i]);
    for (auto i : test) test_patients.insert(groups[i]);
    EXPECT_EQ(train.size() + test.size(), groups.size());
    for (const auto& p : test_patients) EXPECT_FALSE(train_patients.count(p)) << p;
    EXPECT_NEAR(static_cast<double>(test.size()) / groups.size(), 0.2, 0.05);
}

#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "kbdm/synthdata.hpp"

namespace kbdm {
namespace {

double mean_extraction_error(const SyntheticSample& s) {
    const std::vector<ExtractedJoint> found =
        extract_keypoints(s.image, s.archetype, s.orientation, s.scale);
    double total = 0.0;
    for (std::size_t j = 0; j < kJointCount; ++j) {
        EXPECT_TRUE(found[j].ok);
        const double dx = found[j].x - s.keypoints[j].x;
        const double dy = found[j].y - s.keypoints[j].y;
        total += std::sqrt(dx * dx + dy * dy);
    }
    return total / static_cast<double>(kJointCount);
}

TEST(Archetypes, NamedLookupsAndMirroring) {
    EXPECT_EQ(archetypes().size(), 4u);
    EXPECT_EQ(archetype_id("standing"), 0u);
    EXPECT_EQ(orientation_id("left-facing"), 1u);
    EXPECT_THROW(archetype_id("flying"), ConfigError);
    EXPECT_THROW(orientation_id("upside-down"), ConfigError);

    const auto right = oriented_template(0, 0);
    const auto left = oriented_template(0, 1);
    for (std::size_t j = 0; j < kJointCount; ++j) {
        EXPECT_DOUBLE_EQ(left[j].x, static_cast<double>(kImageSize - 1) - right[j].x);
        EXPECT_DOUBLE_EQ(left[j].y, right[j].y);
    }
    EXPECT_THROW(oriented_template(0, 0, -1.0), ConfigError);
}

TEST(Archetypes, ScalingContractsAboutTheImageCenter) {
    const auto full = oriented_template(2, 0, 1.0);
    const auto half = oriented_template(2, 0, 0.5);
    const double c = (static_cast<double>(kImageSize) - 1.0) / 2.0;
    for (std::size_t j = 0; j < kJointCount; ++j) {
        EXPECT_NEAR(half[j].x - c, 0.5 * (full[j].x - c), 1e-12);
        EXPECT_NEAR(half[j].y - c, 0.5 * (full[j].y - c), 1e-12);
    }
}

TEST(ScaleLabel, PercentEncoding) {
    EXPECT_EQ(scale_label(1.0), "scale-100");
    EXPECT_EQ(scale_label(0.75), "scale-075");
}

TEST(MakeSample, KeypointsStayInBoundsUnderHeavyJitter) {
    Rng root(99);
    for (int i = 0; i < 200; ++i) {
        const SyntheticSample s = make_sample(i % 4, i % 2, 1.0, root.split(i), 6);
        for (const Point& p : s.keypoints) {
            EXPECT_GE(p.x, 1.0);
            EXPECT_LE(p.x, 30.0);
            EXPECT_GE(p.y, 1.0);
            EXPECT_LE(p.y, 30.0);
        }
    }
}

TEST(MakeSample, PoseImagePositiveExactlyOnSkeleton) {
    const SyntheticSample s = make_sample(1, 0, 1.0, Rng(5), 0);
    int on = 0;
    for (double v : s.pose_image.data) {
        EXPECT_TRUE(v == 0.0 || v > 0.0);
        if (v > 0.0) ++on;
    }
    EXPECT_GT(on, 10);                                        // a real skeleton
    EXPECT_LT(on, static_cast<int>(kImageSize * kImageSize) / 4);  // and a sparse one

    // Every keypoint lies on a positive pose pixel.
    for (const Point& p : s.keypoints) {
        const auto x = static_cast<std::size_t>(std::lround(p.x));
        const auto y = static_cast<std::size_t>(std::lround(p.y));
        EXPECT_GT(s.pose_image.at(y, x), 0.0);
    }
}

TEST(MakeSample, BodyForegroundCoversPoseForeground) {
    Rng root(7);
    for (int i = 0; i < 32; ++i) {
        const SyntheticSample s = make_sample(i % 4, (i / 4) % 2, 1.0, root.split(i), 2);
        int pose_fg = 0, covered = 0;
        for (std::size_t p = 0; p < s.pose_image.numel(); ++p) {
            if (s.pose_image.data[p] <= 0.0) continue;
            ++pose_fg;
            if (s.image.data[p] > 0.1) ++covered;
        }
        ASSERT_GT(pose_fg, 0);
        EXPECT_GE(static_cast<double>(covered) / pose_fg, 0.8)
            << "sample " << i << ": body misses the skeleton";
    }
}

TEST(MakeSample, LabelsFollowArchetypeOrientationAndOptionalScale) {
    const SyntheticSample plain = make_sample(2, 1, 1.0, Rng(1), 2);
    ASSERT_EQ(plain.labels.size(), 2u);
    EXPECT_EQ(plain.labels[0], "waving");
    EXPECT_EQ(plain.labels[1], "left-facing");

    const SyntheticSample scaled = make_sample(2, 1, 0.8, Rng(1), 2, true);
    ASSERT_EQ(scaled.labels.size(), 3u);
    EXPECT_EQ(scaled.labels[2], "scale-080");
}

TEST(GenerateCorpus, PureFunctionOfConfig) {
    CorpusConfig cfg;
    cfg.count = 24;
    cfg.seed = 11;
    const std::vector<SyntheticSample> a = generate_corpus(cfg);
    const std::vector<SyntheticSample> b = generate_corpus(cfg);
    ASSERT_EQ(a.size(), 24u);
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].labels, b[i].labels);
        for (std::size_t p = 0; p < a[i].image.numel(); ++p)
            ASSERT_EQ(a[i].image.data[p], b[i].image.data[p]);
    }
}

TEST(GenerateCorpus, CoversEveryLabelCombination) {
    CorpusConfig cfg;
    cfg.count = 50;
    cfg.seed = 3;
    const std::vector<SyntheticSample> corpus = generate_corpus(cfg);
    std::map<std::string, int> seen;
    for (const SyntheticSample& s : corpus) seen[s.labels[0] + "|" + s.labels[1]] += 1;
    const int combos = 4 * 2;
    EXPECT_EQ(static_cast<int>(seen.size()), combos);
    for (const auto& [combo, count] : seen)
        EXPECT_GE(count, cfg.count / (2 * combos)) << combo;
}

TEST(GenerateCorpus, ScaleComponentAppearsOnlyWithMultipleScales) {
    CorpusConfig cfg;
    cfg.count = 8;
    ASSERT_EQ(generate_corpus(cfg).front().labels.size(), 2u);
    cfg.scales = {1.0, 0.75};
    const std::vector<SyntheticSample> scaled = generate_corpus(cfg);
    ASSERT_EQ(scaled.front().labels.size(), 3u);
    EXPECT_EQ(scaled[0].labels[2], "scale-100");
    EXPECT_EQ(scaled[1].labels[2], "scale-075");
}

TEST(GenerateCorpus, RejectsBadConfigs) {
    CorpusConfig cfg;
    cfg.count = 0;
    EXPECT_THROW(generate_corpus(cfg), ConfigError);
    cfg.count = 4;
    cfg.scales = {-1.0};
    EXPECT_THROW(generate_corpus(cfg), ConfigError);
    cfg.scales = {1.0};
    cfg.archetype_names.clear();
    EXPECT_THROW(generate_corpus(cfg), ConfigError);
}

TEST(ExtractKeypoints, NoiseFloorBelowOnePixelOverHundredSamples) {
    CorpusConfig cfg;
    cfg.count = 100;
    cfg.seed = 7;
    const std::vector<SyntheticSample> corpus = generate_corpus(cfg);
    double total = 0.0;
    for (const SyntheticSample& s : corpus) total += mean_extraction_error(s);
    const double noise_floor = total / static_cast<double>(corpus.size());
    EXPECT_LE(noise_floor, 1.0) << "evaluator noise floor too high";
}

TEST(ExtractKeypoints, BlankImageMarksEveryJointFailed) {
    const std::vector<ExtractedJoint> found = extract_keypoints(Tensor({32, 32}), 0, 0);
    ASSERT_EQ(found.size(), kJointCount);
    for (const ExtractedJoint& j : found) EXPECT_FALSE(j.ok);
}

TEST(ExtractKeypoints, ShiftEquivariantWithinHalfPixel) {
    const SyntheticSample s = make_sample(0, 0, 1.0, Rng(9), 0);
    Tensor shifted({kImageSize, kImageSize});
    for (std::size_t r = 0; r < kImageSize; ++r)
        for (std::size_t c = 2; c < kImageSize; ++c) shifted.at(r, c) = s.image.at(r, c - 2);

    const std::vector<ExtractedJoint> base =
        extract_keypoints(s.image, s.archetype, s.orientation);
    const std::vector<ExtractedJoint> moved =
        extract_keypoints(shifted, s.archetype, s.orientation);
    for (std::size_t j = 0; j < kJointCount; ++j) {
        ASSERT_TRUE(base[j].ok);
        ASSERT_TRUE(moved[j].ok);
        EXPECT_NEAR(moved[j].x - base[j].x, 2.0, 0.5) << "joint " << j;
        EXPECT_NEAR(moved[j].y - base[j].y, 0.0, 0.5) << "joint " << j;
    }
}

TEST(Drawing, BresenhamEndpointsAndSoftStrokeWidth) {
    Tensor img({16, 16});
    draw_line(img, Point{2, 3}, Point{12, 9});
    EXPECT_GT(img.at(3, 2), 0.0);
    EXPECT_GT(img.at(9, 12), 0.0);

    Tensor soft({16, 16});
    draw_soft_segment(soft, Point{2, 8}, Point{13, 8}, 0.5);
    EXPECT_GT(soft.at(8, 7), 0.9);   // on the stroke
    EXPECT_GT(soft.at(9, 7), 0.0);   // within the soft falloff
    EXPECT_EQ(soft.at(12, 7), 0.0);  // well outside
}

}  // namespace
}  // namespace kbdm

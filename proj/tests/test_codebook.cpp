#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <vector>

#include "kbdm/codebook.hpp"
#include "kbdm/grad_check.hpp"
#include "kbdm/rng.hpp"

namespace kbdm {
namespace {

ImageFeatureGrid grid_from(Tensor features, std::size_t gh = 1, std::size_t gw = 0) {
    if (gw == 0) {
        gh = features.rows();
        gw = 1;
    }
    return ImageFeatureGrid{std::move(features), gh, gw};
}

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Tensor t({r, c});
    for (double& v : t.data) v = rng.uniform(-scale, scale);
    return t;
}

// 200 points around the four unit-square corners, the clustering benchmark.
std::vector<ImageFeatureGrid> corner_cluster_corpus(std::uint64_t seed, double sigma = 0.05,
                                                    int count = 200) {
    const double centers[4][2] = {{0, 0}, {0, 1}, {1, 0}, {1, 1}};
    Rng rng(seed);
    std::vector<ImageFeatureGrid> corpus;
    corpus.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        const double* c = centers[i % 4];
        Tensor row({1, 2});
        row.at(0, 0) = c[0] + sigma * rng.normal();
        row.at(0, 1) = c[1] + sigma * rng.normal();
        corpus.push_back(grid_from(std::move(row)));
    }
    return corpus;
}

// Classic alternating assign/update clustering, run to convergence: the
// reference answer for the codebook trainer.
double lloyd_reference_error(const std::vector<ImageFeatureGrid>& corpus, std::size_t k) {
    Codebook cb(k, corpus.front().dim());
    init_codebook_from_corpus(corpus, cb);
    Tensor& centers = cb.entries.value;
    const std::size_t c = cb.C;
    for (int iter = 0; iter < 200; ++iter) {
        Tensor sums({k, c});
        std::vector<std::size_t> counts(k, 0);
        for (const ImageFeatureGrid& g : corpus) {
            const TokenIndexVector a = assign_indices(pairwise_sq_distance(g, cb));
            for (std::size_t i = 0; i < g.tokens(); ++i) {
                ++counts[a[i]];
                for (std::size_t d = 0; d < c; ++d) sums.at(a[i], d) += g.features.at(i, d);
            }
        }
        double shift = 0.0;
        for (std::size_t j = 0; j < k; ++j) {
            if (counts[j] == 0) continue;
            for (std::size_t d = 0; d < c; ++d) {
                const double next = sums.at(j, d) / static_cast<double>(counts[j]);
                shift += std::abs(next - centers.at(j, d));
                centers.at(j, d) = next;
            }
        }
        if (shift < 1e-12) break;
    }
    double total = 0.0;
    std::size_t n = 0;
    for (const ImageFeatureGrid& g : corpus) {
        const TokenIndexVector a = assign_indices(pairwise_sq_distance(g, cb));
        total += codebook_loss(quantize_gather(a, cb), g) * static_cast<double>(g.tokens());
        n += g.tokens();
    }
    return total / static_cast<double>(n);
}

double mean_quantization_error(const std::vector<ImageFeatureGrid>& corpus, const Codebook& cb) {
    double total = 0.0;
    std::size_t n = 0;
    for (const ImageFeatureGrid& g : corpus) {
        const TokenIndexVector a = assign_indices(pairwise_sq_distance(g, cb));
        total += codebook_loss(quantize_gather(a, cb), g) * static_cast<double>(g.tokens());
        n += g.tokens();
    }
    return total / static_cast<double>(n);
}

TEST(PairwiseDistance, HandWorkedExample) {
    const ImageFeatureGrid z = grid_from(Tensor::matrix(2, 2, {0.1, 0.1, 0.9, 0.8}));
    Codebook cb(2, 2);
    cb.entries.value = Tensor::matrix(2, 2, {0, 0, 1, 1});
    const DistanceMatrix d = pairwise_sq_distance(z, cb);
    EXPECT_NEAR(d.values.at(0, 0), 0.02, 1e-12);
    EXPECT_NEAR(d.values.at(0, 1), 1.62, 1e-12);
    EXPECT_NEAR(d.values.at(1, 0), 1.45, 1e-12);
    EXPECT_NEAR(d.values.at(1, 1), 0.05, 1e-12);
    const TokenIndexVector a = assign_indices(d);
    ASSERT_EQ(a.size(), 2u);
    EXPECT_EQ(a[0], 0u);
    EXPECT_EQ(a[1], 1u);
}

TEST(PairwiseDistance, SelfRowsHaveZeroDistance) {
    Rng rng(3);
    Codebook cb(4, 3);
    cb.entries.value = random_matrix(4, 3, rng);
    const ImageFeatureGrid z = grid_from(cb.entries.value);
    const DistanceMatrix d = pairwise_sq_distance(z, cb);
    for (std::size_t i = 0; i < 4; ++i) {
        EXPECT_NEAR(d.values.at(i, i), 0.0, 1e-12);
        EXPECT_EQ(assign_indices(d)[i], i);
    }
}

TEST(PairwiseDistance, MatchesBruteForceLoopOnRandomInstances) {
    Rng rng(41);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 1 + rng.next_below(16);
        const std::size_t k = 2 + rng.next_below(15);
        const std::size_t c = 1 + rng.next_below(16);
        const ImageFeatureGrid z = grid_from(random_matrix(n, c, rng, 2.0));
        Codebook cb(k, c);
        cb.entries.value = random_matrix(k, c, rng, 2.0);
        const DistanceMatrix d = pairwise_sq_distance(z, cb);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < k; ++j) {
                double direct = 0.0;
                for (std::size_t dd = 0; dd < c; ++dd) {
                    const double diff = z.features.at(i, dd) - cb.entries.value.at(j, dd);
                    direct += diff * diff;
                }
                ASSERT_NEAR(d.values.at(i, j), direct, 1e-10);
                ASSERT_GE(d.values.at(i, j), -1e-9);
            }
        }
    }
}

TEST(PairwiseDistance, DimensionMismatchNamesBothWidths) {
    const ImageFeatureGrid z = grid_from(Tensor({2, 3}));
    Codebook cb(2, 4);
    try {
        pairwise_sq_distance(z, cb);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("3"), std::string::npos);
        EXPECT_NE(msg.find("4"), std::string::npos);
    }
}

TEST(AssignIndices, TieBreaksToLowestIndexAndPermutesWithColumns) {
    DistanceMatrix tie;
    tie.values = Tensor::matrix(1, 3, {0.5, 0.5, 0.5});
    EXPECT_EQ(assign_indices(tie)[0], 0u);

    Rng rng(42);
    const ImageFeatureGrid z = grid_from(random_matrix(6, 3, rng));
    Codebook cb(5, 3);
    cb.entries.value = random_matrix(5, 3, rng);
    const TokenIndexVector a = assign_indices(pairwise_sq_distance(z, cb));

    // Reverse the codebook rows; argmin indices must map through the reversal.
    Codebook rev(5, 3);
    for (std::size_t j = 0; j < 5; ++j)
        for (std::size_t d = 0; d < 3; ++d)
            rev.entries.value.at(j, d) = cb.entries.value.at(4 - j, d);
    const TokenIndexVector b = assign_indices(pairwise_sq_distance(z, rev));
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(b[i], 4 - a[i]);
}

TEST(OneHot, BuildsUnitRowsAndValidatesIndices) {
    const OneHotAssignment o = one_hot({0, 1}, 2);
    EXPECT_DOUBLE_EQ(o.matrix.at(0, 0), 1.0);
    EXPECT_DOUBLE_EQ(o.matrix.at(0, 1), 0.0);
    EXPECT_DOUBLE_EQ(o.matrix.at(1, 1), 1.0);

    const OneHotAssignment mid = one_hot({1, 1}, 3);
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_DOUBLE_EQ(mid.matrix.at(i, 1), 1.0);
        double sum = 0.0;
        for (std::size_t j = 0; j < 3; ++j) sum += mid.matrix.at(i, j);
        EXPECT_DOUBLE_EQ(sum, 1.0);
    }
    EXPECT_THROW(one_hot({3}, 3), IndexError);
}

TEST(Quantize, MatmulAndGatherAgreeExactly) {
    Rng rng(43);
    Codebook cb(4, 3);
    cb.entries.value = random_matrix(4, 3, rng);

    const OneHotAssignment eye = one_hot({0, 1, 2, 3}, 4);
    const Tensor via_matmul = quantize(eye, cb);
    for (std::size_t i = 0; i < via_matmul.numel(); ++i)
        EXPECT_EQ(via_matmul.data[i], cb.entries.value.data[i]);

    const TokenIndexVector a = {2, 0, 3, 3, 1};
    const Tensor gathered = quantize_gather(a, cb);
    const Tensor multiplied = quantize(one_hot(a, 4), cb);
    for (std::size_t i = 0; i < gathered.numel(); ++i)
        EXPECT_EQ(gathered.data[i], multiplied.data[i]);
}

TEST(Quantize, FullChainSelectsTrueNearestEntry) {
    Rng rng(44);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = 1 + rng.next_below(12);
        const std::size_t k = 2 + rng.next_below(10);
        const std::size_t c = 1 + rng.next_below(8);
        const ImageFeatureGrid z = grid_from(random_matrix(n, c, rng));
        Codebook cb(k, c);
        cb.entries.value = random_matrix(k, c, rng);
        const TokenIndexVector a = assign_indices(pairwise_sq_distance(z, cb));
        for (std::size_t i = 0; i < n; ++i) {
            double best = 1e300;
            std::size_t best_j = 0;
            for (std::size_t j = 0; j < k; ++j) {
                double dist = 0.0;
                for (std::size_t d = 0; d < c; ++d) {
                    const double diff = z.features.at(i, d) - cb.entries.value.at(j, d);
                    dist += diff * diff;
                }
                if (dist < best) {
                    best = dist;
                    best_j = j;
                }
            }
            ASSERT_EQ(a[i], best_j);
        }
    }
}

TEST(CodebookLoss, HandValueAndZeroAtFixedPoint) {
    const ImageFeatureGrid z = grid_from(Tensor::matrix(2, 2, {0.1, 0.1, 0.9, 0.8}));
    const Tensor z_q = Tensor::matrix(2, 2, {0, 0, 1, 1});
    EXPECT_NEAR(codebook_loss(z_q, z), 0.0175, 1e-15);
    EXPECT_DOUBLE_EQ(codebook_loss(z.features, z), 0.0);
}

TEST(CodebookLoss, GradientMatchesFiniteDifferencesAndSkipsUnselectedRows) {
    for (std::uint64_t seed = 50; seed < 60; ++seed) {
        Rng rng(seed);
        const std::size_t n = 5, k = 4, c = 3;
        const ImageFeatureGrid z = grid_from(random_matrix(n, c, rng));
        Codebook cb(k, c);
        cb.entries.value = random_matrix(k, c, rng);

        // Assignments are recomputed inside the objective; within finite-diff
        // epsilon of a generic point they are locally constant.
        const auto loss = [&] {
            const TokenIndexVector a = assign_indices(pairwise_sq_distance(z, cb));
            return codebook_loss(quantize_gather(a, cb), z);
        };
        TokenIndexVector assigned;
        const auto grads = [&] {
            cb.entries.zero_grad();
            assigned = assign_indices(pairwise_sq_distance(z, cb));
            const Tensor z_q = quantize_gather(assigned, cb);
            codebook_loss_backward(assigned, z_q, z, cb, 1.0);
        };
        EXPECT_LE(finite_diff_check(loss, grads, {&cb.entries}), 1e-6) << "seed " << seed;

        std::vector<bool> used(k, false);
        for (std::size_t idx : assigned) used[idx] = true;
        for (std::size_t j = 0; j < k; ++j) {
            if (used[j]) continue;
            for (std::size_t d = 0; d < c; ++d) EXPECT_EQ(cb.entries.grad.at(j, d), 0.0);
        }
    }
}

TEST(CodebookLoss, BatchGradientIsPermutationInvariant) {
    Rng rng(61);
    std::vector<ImageFeatureGrid> batch;
    for (int i = 0; i < 6; ++i) batch.push_back(grid_from(random_matrix(3, 2, rng)));
    Codebook cb(4, 2);
    cb.entries.value = random_matrix(4, 2, rng);

    const auto summed_grad = [&](const std::vector<std::size_t>& order) {
        cb.entries.zero_grad();
        for (std::size_t s : order) {
            const TokenIndexVector a = assign_indices(pairwise_sq_distance(batch[s], cb));
            codebook_loss_backward(a, quantize_gather(a, cb), batch[s], cb, 1.0);
        }
        return cb.entries.grad;
    };
    const Tensor forward_order = summed_grad({0, 1, 2, 3, 4, 5});
    const Tensor shuffled = summed_grad({4, 2, 5, 0, 3, 1});
    for (std::size_t i = 0; i < forward_order.numel(); ++i)
        EXPECT_NEAR(forward_order.data[i], shuffled.data[i], 1e-12);
}

TEST(Training, CorpusAtCentersIsAFixedPoint) {
    std::vector<ImageFeatureGrid> corpus;
    const double centers[3][2] = {{0, 0}, {5, 0}, {0, 5}};
    for (int rep = 0; rep < 4; ++rep)
        for (const auto& c : centers)
            corpus.push_back(grid_from(Tensor::matrix(1, 2, {c[0], c[1]})));
    Codebook cb(3, 2);
    init_codebook_from_corpus(corpus, cb);
    Rng rng(1);
    CodebookTrainConfig cfg;
    cfg.epochs = 1;
    cfg.weight_decay = 0.0;
    const TrainReport report = train_codebook(corpus, cb, cfg, rng);
    EXPECT_DOUBLE_EQ(report.epoch_losses.front(), 0.0);
}

TEST(Training, InitRequiresEnoughDistinctRows) {
    std::vector<ImageFeatureGrid> corpus;
    for (int i = 0; i < 10; ++i)
        corpus.push_back(grid_from(Tensor::matrix(1, 2, {double(i % 2), 0.0})));
    Codebook cb(4, 2);
    EXPECT_THROW(init_codebook_from_corpus(corpus, cb), ConfigError);
    CodebookTrainConfig cfg;
    Rng rng(1);
    std::vector<ImageFeatureGrid> empty;
    EXPECT_THROW(train_codebook(empty, cb, cfg, rng), ConfigError);
}

TEST(Training, MatchesClusteringReferenceOnCornerGaussians) {
    const std::vector<ImageFeatureGrid> corpus = corner_cluster_corpus(7);
    const double reference = lloyd_reference_error(corpus, 4);
    ASSERT_GT(reference, 0.0);

    Codebook cb(4, 2);
    init_codebook_from_corpus(corpus, cb);
    Rng rng(7);
    CodebookTrainConfig cfg;  // 30 epochs, lr 1e-3, cosine decay
    const TrainReport report = train_codebook(corpus, cb, cfg, rng);
    const double final_error = mean_quantization_error(corpus, cb);
    EXPECT_LE(final_error, 1.5 * reference)
        << "final " << final_error << " vs reference " << reference;
    EXPECT_LE(report.epoch_losses.back(), report.epoch_losses.front());
}

TEST(Training, DeadEntriesAreReseededFromCorpus) {
    // Two tight clusters but K=3; the third entry starts far away, is never
    // assigned, and must be pulled back onto a corpus row after an epoch.
    std::vector<ImageFeatureGrid> corpus;
    Rng data_rng(2);
    for (int i = 0; i < 20; ++i) {
        const double cx = (i % 2 == 0) ? 0.0 : 1.0;
        corpus.push_back(grid_from(
            Tensor::matrix(1, 2, {cx + 0.01 * data_rng.normal(), 0.01 * data_rng.normal()})));
    }
    Codebook cb(3, 2);
    init_codebook_from_corpus(corpus, cb);
    cb.entries.value.at(2, 0) = 50.0;  // exile one entry
    cb.entries.value.at(2, 1) = 50.0;
    Rng rng(3);
    CodebookTrainConfig cfg;
    cfg.epochs = 2;
    train_codebook(corpus, cb, cfg, rng);
    EXPECT_LT(std::abs(cb.entries.value.at(2, 0)), 2.0);
    EXPECT_LT(std::abs(cb.entries.value.at(2, 1)), 2.0);
}

TEST(FeatureMap, ShapesProjectionAndSpatialSensitivity) {
    const Tensor projection = make_feature_projection(16, 1234);
    EXPECT_EQ(projection.shape, (Shape{4, 16}));
    const Tensor again = make_feature_projection(16, 1234);
    for (std::size_t i = 0; i < projection.numel(); ++i)
        EXPECT_EQ(projection.data[i], again.data[i]);

    Tensor image({32, 32});
    const ImageFeatureGrid blank = patch_features(image, 4, projection);
    EXPECT_EQ(blank.grid_h, 8u);
    EXPECT_EQ(blank.grid_w, 8u);
    EXPECT_EQ(blank.features.shape, (Shape{64, 16}));
    for (double v : blank.features.data) EXPECT_DOUBLE_EQ(v, 0.0);

    // Light up the top-left patch only; exactly that token moves.
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t c = 0; c < 4; ++c) image.at(r, c) = 1.0;
    const ImageFeatureGrid lit = patch_features(image, 4, projection);
    double token0 = 0.0, far_token = 0.0;
    for (std::size_t d = 0; d < 16; ++d) {
        token0 += std::abs(lit.features.at(0, d));
        far_token += std::abs(lit.features.at(63, d));
    }
    EXPECT_GT(token0, 1e-6);
    EXPECT_DOUBLE_EQ(far_token, 0.0);

    EXPECT_THROW(patch_features(Tensor({30, 32}), 4, projection), ConfigError);
}

TEST(FeatureMap, BlurPreservesConstantsAndMass) {
    Tensor flat = Tensor::full({8, 8}, 0.25);
    const Tensor blurred = blur3(flat);
    for (double v : blurred.data) EXPECT_NEAR(v, 0.25, 1e-12);

    Tensor spike({8, 8});
    spike.at(4, 4) = 1.0;
    const Tensor spread = blur3(spike);
    EXPECT_LT(spread.at(4, 4), 1.0);
    EXPECT_GT(spread.at(4, 5), 0.0);
    double mass = 0.0;
    for (double v : spread.data) mass += v;
    EXPECT_NEAR(mass, 1.0, 1e-12);  // interior spike: kernel preserves total mass
}

}  // namespace
}  // namespace kbdm

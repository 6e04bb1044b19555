#include <gtest/gtest.h>

#include <cmath>
#include <cstdint>
#include <vector>

#include "kbdm/grad_check.hpp"
#include "kbdm/mlp.hpp"
#include "kbdm/optim.hpp"
#include "kbdm/rng.hpp"
#include "kbdm/tensor.hpp"

namespace kbdm {
namespace {

Tensor random_matrix(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
    Tensor t({r, c});
    for (double& v : t.data) v = rng.uniform(-scale, scale);
    return t;
}

TEST(Tensor, ShapeAccessorsAndIndexing) {
    Tensor t = Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6});
    EXPECT_EQ(t.rows(), 2u);
    EXPECT_EQ(t.cols(), 3u);
    EXPECT_EQ(t.numel(), 6u);
    EXPECT_DOUBLE_EQ(t.at(1, 2), 6.0);
    t.at(0, 1) = 9.0;
    EXPECT_DOUBLE_EQ(t.data[1], 9.0);
}

TEST(Tensor, ArithmeticAndHadamard) {
    Tensor a = Tensor::row({1, 2, 3});
    Tensor b = Tensor::row({4, 5, 6});
    Tensor sum = a + b;
    EXPECT_DOUBLE_EQ(sum[0], 5.0);
    EXPECT_DOUBLE_EQ(sum[2], 9.0);
    Tensor prod = hadamard(a, b);
    EXPECT_DOUBLE_EQ(prod[1], 10.0);
    Tensor scaled = 2.0 * a;
    EXPECT_DOUBLE_EQ(scaled[2], 6.0);
    EXPECT_THROW(a += Tensor::row({1, 2}), DimensionError);
}

TEST(Tensor, CheckFiniteRejectsNanAndInf) {
    Tensor t = Tensor::row({1.0, 2.0});
    EXPECT_NO_THROW(check_finite(t, "ok"));
    t[1] = std::nan("");
    EXPECT_THROW(check_finite(t, "nan"), NumericError);
    t[1] = INFINITY;
    EXPECT_THROW(check_finite(t, "inf"), NumericError);
    EXPECT_THROW(check_finite(std::nan(""), "scalar"), NumericError);
}

TEST(Matmul, IdentityAndDotProduct) {
    Tensor eye = Tensor::matrix(2, 2, {1, 0, 0, 1});
    Tensor b = Tensor::matrix(2, 2, {3, 4, 5, 6});
    Tensor out = matmul(eye, b);
    for (std::size_t i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(out.data[i], b.data[i]);

    Tensor row = Tensor::matrix(1, 2, {1, 2});
    Tensor col = Tensor::matrix(2, 1, {3, 4});
    EXPECT_DOUBLE_EQ(matmul(row, col).at(0, 0), 11.0);
}

TEST(Matmul, ShapeMismatchNamesShapes) {
    Tensor a({2, 3});
    Tensor b({4, 2});
    try {
        matmul(a, b);
        FAIL() << "expected DimensionError";
    } catch (const DimensionError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("3"), std::string::npos);
        EXPECT_NE(msg.find("4"), std::string::npos);
    }
}

TEST(Matmul, AssociativityOnRandomMatrices) {
    Rng rng(21);
    for (int trial = 0; trial < 20; ++trial) {
        Tensor a = random_matrix(3, 4, rng);
        Tensor b = random_matrix(4, 5, rng);
        Tensor c = random_matrix(5, 2, rng);
        Tensor left = matmul(matmul(a, b), c);
        Tensor right = matmul(a, matmul(b, c));
        for (std::size_t i = 0; i < left.numel(); ++i)
            EXPECT_NEAR(left.data[i], right.data[i], 1e-9);
    }
}

TEST(Matmul, BackwardMatchesFiniteDifferences) {
    Rng rng(22);
    Parameter a("a", random_matrix(3, 4, rng));
    Parameter b("b", random_matrix(4, 2, rng));
    const auto loss = [&] {
        const Tensor out = matmul(a.value, b.value);
        double s = 0.0;
        for (double v : out.data) s += v;
        return s;
    };
    const auto grads = [&] {
        a.zero_grad();
        b.zero_grad();
        const Tensor dout = Tensor::full({3, 2}, 1.0);
        matmul_backward(a.value, b.value, dout, &a.grad, &b.grad);
    };
    EXPECT_LE(finite_diff_check(loss, grads, {&a, &b}), 1e-6);
}

TEST(Softmax, UniformSaturationAndClosedForm) {
    Tensor flat = softmax_rows(Tensor::matrix(1, 2, {0, 0}));
    EXPECT_DOUBLE_EQ(flat.at(0, 0), 0.5);

    Tensor huge = softmax_rows(Tensor::matrix(1, 2, {1000, 1000}));
    EXPECT_TRUE(huge.finite());
    EXPECT_DOUBLE_EQ(huge.at(0, 0), 0.5);

    Tensor skew = softmax_rows(Tensor::matrix(1, 2, {0.0, std::log(3.0)}));
    EXPECT_NEAR(skew.at(0, 0), 0.25, 1e-12);
    EXPECT_NEAR(skew.at(0, 1), 0.75, 1e-12);
}

TEST(Softmax, RowsSumToOneAndEntriesInOpenInterval) {
    Rng rng(23);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = random_matrix(4, 6, rng, 8.0);
        Tensor y = softmax_rows(x);
        for (std::size_t i = 0; i < y.rows(); ++i) {
            double sum = 0.0;
            for (std::size_t j = 0; j < y.cols(); ++j) {
                EXPECT_GT(y.at(i, j), 0.0);
                EXPECT_LT(y.at(i, j), 1.0);
                sum += y.at(i, j);
            }
            EXPECT_NEAR(sum, 1.0, 1e-12);
        }
    }
}

TEST(Softmax, BackwardMatchesFiniteDifferences) {
    Rng rng(24);
    Parameter x("x", random_matrix(3, 5, rng));
    const Tensor weights = random_matrix(3, 5, rng);
    const auto loss = [&] {
        const Tensor y = softmax_rows(x.value);
        double s = 0.0;
        for (std::size_t i = 0; i < y.numel(); ++i) s += y.data[i] * weights.data[i];
        return s;
    };
    const auto grads = [&] {
        x.zero_grad();
        const Tensor y = softmax_rows(x.value);
        x.grad = softmax_rows_backward(y, weights);
    };
    EXPECT_LE(finite_diff_check(loss, grads, {&x}), 1e-8);
}

TEST(Mse, HandValuesAndGradient) {
    Tensor a = Tensor::matrix(2, 2, {0, 0, 1, 1});
    EXPECT_DOUBLE_EQ(mse(a, a), 0.0);
    EXPECT_DOUBLE_EQ(mse(Tensor::matrix(1, 2, {0, 0}), Tensor::matrix(1, 2, {1, 1})), 1.0);

    Tensor target = Tensor::matrix(2, 2, {0.1, 0.1, 0.9, 0.8});
    EXPECT_NEAR(mse(a, target), 0.0175, 1e-15);

    Tensor g = mse_backward(a, target);
    for (std::size_t i = 0; i < 4; ++i)
        EXPECT_NEAR(g.data[i], 2.0 * (a.data[i] - target.data[i]) / 4.0, 1e-15);
    EXPECT_THROW(mse(a, Tensor::row({1, 2})), DimensionError);
}

TEST(CrossEntropy, HandValuesAndErrors) {
    EXPECT_NEAR(cross_entropy(Tensor::matrix(1, 2, {0, 0}), {0}), std::log(2.0), 1e-12);
    EXPECT_NEAR(cross_entropy(Tensor::matrix(1, 2, {30, -30}), {0}), 0.0, 1e-12);

    // Independently evaluated: mean of log(1+e^-1) and log(1+e^-2).
    const double expected = 0.5 * (std::log1p(std::exp(-1.0)) + std::log1p(std::exp(-2.0)));
    EXPECT_NEAR(cross_entropy(Tensor::matrix(2, 2, {1, 2, 3, 1}), {1, 0}), expected, 1e-12);
    EXPECT_NEAR(expected, 0.22009484928059765, 1e-15);

    try {
        cross_entropy(Tensor::matrix(2, 2, {0, 0, 0, 0}), {0, 5});
        FAIL() << "expected IndexError";
    } catch (const IndexError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("1"), std::string::npos);  // row
        EXPECT_NE(msg.find("5"), std::string::npos);  // offending value
    }
}

TEST(CrossEntropy, BackwardMatchesFiniteDifferences) {
    Rng rng(25);
    Parameter logits("logits", random_matrix(4, 6, rng, 2.0));
    const std::vector<std::size_t> targets = {1, 0, 5, 3};
    const auto loss = [&] { return cross_entropy(logits.value, targets); };
    const auto grads = [&] {
        logits.zero_grad();
        logits.grad = cross_entropy_backward(logits.value, targets);
    };
    EXPECT_LE(finite_diff_check(loss, grads, {&logits}), 1e-8);
}

TEST(Rng, DeterministicAndPureFunctionOfCounter) {
    Rng a(42), b(42);
    for (int i = 0; i < 100; ++i) EXPECT_EQ(a.next_u64(), b.next_u64());

    Rng c(42);
    std::vector<double> first;
    for (int i = 0; i < 8; ++i) first.push_back(c.normal());
    c.counter = 0;
    for (int i = 0; i < 8; ++i) EXPECT_DOUBLE_EQ(c.normal(), first[i]);
}

TEST(Rng, SplitGivesIndependentStreamsWithoutTouchingParent) {
    Rng root(7);
    const std::uint64_t counter_before = root.counter;
    Rng s1 = root.split(1);
    Rng s2 = root.split(2);
    EXPECT_EQ(root.counter, counter_before);
    EXPECT_NE(s1.seed, s2.seed);

    int same = 0;
    for (int i = 0; i < 64; ++i) same += (s1.next_u64() == s2.next_u64()) ? 1 : 0;
    EXPECT_EQ(same, 0);

    // Splitting twice with the same id reproduces the stream.
    Rng again = root.split(1);
    Rng s1_fresh = root.split(1);
    for (int i = 0; i < 16; ++i) EXPECT_EQ(again.next_u64(), s1_fresh.next_u64());
}

TEST(Rng, UniformBoundsAndMoments) {
    Rng rng(8);
    double sum = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double u = rng.uniform();
        ASSERT_GE(u, 0.0);
        ASSERT_LT(u, 1.0);
        sum += u;
    }
    EXPECT_NEAR(sum / n, 0.5, 0.01);
}

TEST(Rng, NormalMoments) {
    Rng rng(9);
    const int n = 20000;
    double sum = 0.0, sq = 0.0;
    for (int i = 0; i < n; ++i) {
        const double x = rng.normal();
        sum += x;
        sq += x * x;
    }
    const double mean = sum / n;
    EXPECT_NEAR(mean, 0.0, 0.03);
    EXPECT_NEAR(std::sqrt(sq / n - mean * mean), 1.0, 0.03);
}

TEST(Rng, NextBelowStaysInRangeAndHitsAllResidues) {
    Rng rng(10);
    std::vector<int> seen(5, 0);
    for (int i = 0; i < 2000; ++i) {
        const std::uint64_t v = rng.next_below(5);
        ASSERT_LT(v, 5u);
        ++seen[static_cast<std::size_t>(v)];
    }
    for (int count : seen) EXPECT_GT(count, 200);
}

TEST(Mlp, ZeroWeightsGiveZeroOutputAndIdentityPassesThrough) {
    Rng rng(11);
    Mlp net = Mlp::make({3, 4, 2}, rng, "z");
    for (Parameter* p : net.parameters()) p->value.fill(0.0);
    const Tensor out = net.forward(Tensor::matrix(2, 3, {1, -2, 3, 4, 5, -6}), Activation::relu);
    for (double v : out.data) EXPECT_DOUBLE_EQ(v, 0.0);

    Mlp ident = Mlp::make({2, 2}, rng, "i");
    ident.layers[0].w.value = Tensor::matrix(2, 2, {1, 0, 0, 1});
    ident.layers[0].b.value.fill(0.0);
    const Tensor x = Tensor::matrix(1, 2, {-3.5, 2.25});
    const Tensor y = ident.forward(x, Activation::none);
    EXPECT_DOUBLE_EQ(y.at(0, 0), -3.5);
    EXPECT_DOUBLE_EQ(y.at(0, 1), 2.25);
}

TEST(Mlp, ShapeChainBreakThrows) {
    Rng rng(12);
    Mlp net = Mlp::make({3, 4, 2}, rng, "c");
    EXPECT_THROW(net.forward(Tensor::matrix(1, 5, {1, 2, 3, 4, 5}), Activation::none),
                 DimensionError);
}

TEST(Mlp, TwoLayerGradientMatchesFiniteDifferences) {
    for (std::uint64_t seed = 31; seed < 36; ++seed) {
        Rng rng(seed);
        Mlp net = Mlp::make({4, 5, 3}, rng, "g");
        const Tensor x = random_matrix(2, 4, rng);
        const Tensor target = random_matrix(2, 3, rng);
        const auto loss = [&] { return mse(net.forward(x, Activation::none), target); };
        const auto grads = [&] {
            net.zero_grad();
            Mlp::Cache cache;
            const Tensor out = net.forward(x, Activation::none, &cache);
            net.backward(cache, mse_backward(out, target));
        };
        EXPECT_LE(finite_diff_check(loss, grads, net.parameters()), 1e-6) << "seed " << seed;
    }
}

TEST(FiniteDiff, QuadraticIsExactAndEpsilonIsValidated) {
    Parameter x("x", Tensor::row({1.0, -2.0, 0.5}));
    const auto loss = [&] {
        double s = 0.0;
        for (double v : x.value.data) s += v * v;
        return s;
    };
    const auto grads = [&] {
        x.zero_grad();
        for (std::size_t i = 0; i < 3; ++i) x.grad[i] = 2.0 * x.value[i];
    };
    EXPECT_LE(finite_diff_check(loss, grads, {&x}), 1e-8);
    EXPECT_THROW(finite_diff_check(loss, grads, {&x}, 1e-2), ConfigError);
    EXPECT_THROW(finite_diff_check(loss, grads, {&x}, 1e-8), ConfigError);
}

TEST(InitUniform, RespectsGlorotBounds) {
    Rng rng(13);
    const Tensor w = init_uniform({64, 32}, 64, 32, rng);
    const double bound = std::sqrt(6.0 / (64.0 + 32.0));
    double max_abs = 0.0;
    for (double v : w.data) max_abs = std::max(max_abs, std::abs(v));
    EXPECT_LE(max_abs, bound);
    EXPECT_GT(max_abs, 0.5 * bound);  // draws actually spread through the range
}

TEST(Adam, MinimizesQuadraticAndStaysDeterministic) {
    const Tensor target = Tensor::row({0.3, -1.2, 2.5});
    const auto run = [&] {
        Parameter x("x", Tensor::row({0, 0, 0}));
        Adam opt(AdamConfig{.lr = 0.05});
        for (int i = 0; i < 400; ++i) {
            x.zero_grad();
            x.grad = mse_backward(x.value, target);
            opt.step({&x});
        }
        return x.value;
    };
    const Tensor a = run();
    const Tensor b = run();
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(a[i], target[i], 1e-3);
        EXPECT_DOUBLE_EQ(a[i], b[i]);  // bit-identical rerun
    }
}

TEST(Adam, DecoupledWeightDecayShrinksParametersWithZeroGradient) {
    Parameter x("x", Tensor::row({1.0, -1.0}));
    Adam opt(AdamConfig{.lr = 0.1, .weight_decay = 0.5});
    x.zero_grad();
    opt.step({&x});
    EXPECT_LT(std::abs(x.value[0]), 1.0);
    EXPECT_LT(std::abs(x.value[1]), 1.0);
}

TEST(CosineDecay, StartsAtOneAndDecaysMonotonically) {
    EXPECT_DOUBLE_EQ(cosine_decay(0, 10), 1.0);
    EXPECT_NEAR(cosine_decay(10, 10), 0.0, 1e-12);
    for (int e = 1; e <= 10; ++e) EXPECT_LT(cosine_decay(e, 10), cosine_decay(e - 1, 10));
    EXPECT_DOUBLE_EQ(cosine_decay(3, 0), 1.0);
}

}  // namespace
}  // namespace kbdm

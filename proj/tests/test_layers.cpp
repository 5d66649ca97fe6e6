#include <doctest.h>

#include <cmath>
#include <random>

#include "ecnn/errors.hpp"
#include "ecnn/layers.hpp"
#include "test_support.hpp"

using namespace ecnn;
using test::max_rel_error;
using test::numeric_gradient;
using test::project;
using test::random_tensor;
using test::rel_error;

namespace {

// direct convolution per the definition, independent of the im2col path
Tensor conv_oracle(const Tensor& x, const ConvParams& p) {
    const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const int f = p.weights.extent(0), hh = p.weights.extent(2), ww = p.weights.extent(3);
    const int oh = 1 + (h + 2 * p.pad - hh) / p.stride;
    const int ow = 1 + (w + 2 * p.pad - ww) / p.stride;
    Tensor out({n, f, oh, ow});
    for (int in = 0; in < n; ++in)
        for (int fi = 0; fi < f; ++fi)
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j) {
                    double acc = p.bias[fi];
                    for (int ci = 0; ci < c; ++ci)
                        for (int a = 0; a < hh; ++a)
                            for (int b = 0; b < ww; ++b) {
                                const int ih = i * p.stride + a - p.pad;
                                const int iw = j * p.stride + b - p.pad;
                                if (ih < 0 || ih >= h || iw < 0 || iw >= w) continue;
                                acc += x.at(in, ci, ih, iw) * p.weights.at(fi, ci, a, b);
                            }
                    out.at(in, fi, i, j) = acc;
                }
    return out;
}

}  // namespace

TEST_CASE("conv2d scalar 1x1 kernel is scaling plus bias") {
    const Tensor x = random_tensor({2, 1, 3, 3}, 1);
    ConvParams p;
    p.weights = Tensor({1, 1, 1, 1}, 2.0);
    p.bias = Tensor({1}, 0.5);
    const Tensor out = conv2d_forward(x, p);
    for (std::int64_t i = 0; i < x.size(); ++i) {
        CHECK(out[i] == doctest::Approx(2.0 * x[i] + 0.5));
    }
}

TEST_CASE("conv2d shape arithmetic for the 32-filter stack") {
    ConvParams p;
    p.weights = random_tensor({32, 1, 3, 3}, 2, 0.1);
    p.bias = Tensor({32});
    p.stride = 1;
    p.pad = 1;
    const Tensor out = conv2d_forward(Tensor({4, 1, 48, 48}, 0.25), p);
    CHECK(out.shape() == std::vector<int>{4, 32, 48, 48});
}

TEST_CASE("conv2d matches the nested-loop oracle on random cases") {
    std::mt19937_64 rng(7);
    for (int tc = 0; tc < 20; ++tc) {
        const int n = 1 + static_cast<int>(rng() % 3);
        const int c = 1 + static_cast<int>(rng() % 4);
        const int f = 1 + static_cast<int>(rng() % 4);
        const int k = 1 + 2 * static_cast<int>(rng() % 3);  // 1, 3 or 5
        const int stride = 1 + static_cast<int>(rng() % 2);
        const int pad = static_cast<int>(rng() % 3);
        int h = k + stride * (1 + static_cast<int>(rng() % 4)) - 2 * pad;
        int w = k + stride * (1 + static_cast<int>(rng() % 4)) - 2 * pad;
        if (h < 1 || w < 1) {
            --tc;
            continue;
        }
        CAPTURE(n); CAPTURE(c); CAPTURE(f); CAPTURE(k);
        CAPTURE(stride); CAPTURE(pad); CAPTURE(h); CAPTURE(w);

        const Tensor x = random_tensor({n, c, h, w}, 1000 + tc);
        ConvParams p;
        p.weights = random_tensor({f, c, k, k}, 2000 + tc);
        p.bias = random_tensor({f}, 3000 + tc);
        p.stride = stride;
        p.pad = pad;

        const Tensor fast = conv2d_forward(x, p);
        const Tensor slow = conv_oracle(x, p);
        REQUIRE(fast.shape() == slow.shape());
        double worst = 0.0;
        for (std::int64_t i = 0; i < fast.size(); ++i) {
            worst = std::max(worst, std::abs(fast[i] - slow[i]));
        }
        CHECK(worst < 1e-10);
    }
}

TEST_CASE("conv2d gradients match finite differences") {
    const Tensor x = random_tensor({2, 3, 8, 8}, 42);
    ConvParams p;
    p.weights = random_tensor({4, 3, 3, 3}, 43, 0.5);
    p.bias = random_tensor({4}, 44);
    p.stride = 1;
    p.pad = 1;

    ConvCache cache;
    const Tensor out = conv2d_forward(x, p, &cache);
    const Tensor r = random_tensor(out.shape(), 45);
    const ConvGrads g = conv2d_backward(r, cache);

    const auto dx_fd = numeric_gradient(
        [&](const Tensor& probe) { return project(conv_oracle(probe, p), r); }, x);
    CHECK(max_rel_error(g.dx, dx_fd) < 1e-6);

    const auto dw_fd = numeric_gradient(
        [&](const Tensor& probe) {
            ConvParams q = p;
            q.weights = probe;
            return project(conv_oracle(x, q), r);
        },
        p.weights);
    CHECK(max_rel_error(g.dweights, dw_fd) < 1e-6);

    const auto db_fd = numeric_gradient(
        [&](const Tensor& probe) {
            ConvParams q = p;
            q.bias = probe;
            return project(conv_oracle(x, q), r);
        },
        p.bias);
    CHECK(max_rel_error(g.dbias, db_fd) < 1e-6);
}

TEST_CASE("conv2d error cases") {
    ConvParams p;
    p.weights = Tensor({2, 3, 3, 3});
    p.bias = Tensor({2});
    CHECK_THROWS_AS(conv2d_forward(Tensor({1, 2, 8, 8}), p), ShapeError);
    p.weights = Tensor({2, 1, 3, 3});
    p.stride = 2;  // (8 + 0 - 3) % 2 != 0
    CHECK_THROWS_AS(conv2d_forward(Tensor({1, 1, 8, 8}), p), ConfigError);
}

TEST_CASE("relu") {
    SUBCASE("clamps negatives") {
        const Tensor x({3}, {-1.0, 0.0, 2.0});
        const Tensor out = relu_forward(x);
        CHECK(out[0] == 0.0);
        CHECK(out[1] == 0.0);
        CHECK(out[2] == 2.0);
    }
    SUBCASE("all-negative input gives zero output and zero gradient") {
        const Tensor x({2, 3}, -2.0);
        ReluCache cache;
        const Tensor out = relu_forward(x, &cache);
        const Tensor dx = relu_backward(random_tensor({2, 3}, 5), cache);
        for (std::int64_t i = 0; i < x.size(); ++i) {
            CHECK(out[i] == 0.0);
            CHECK(dx[i] == 0.0);
        }
    }
    SUBCASE("gradient matches finite differences away from the kink") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            Tensor x = random_tensor({4, 5}, 60 + seed);
            for (std::int64_t i = 0; i < x.size(); ++i) {
                if (std::abs(x[i]) < 1e-4) x[i] = 0.01;  // keep clear of the kink
            }
            ReluCache cache;
            const Tensor out = relu_forward(x, &cache);
            const Tensor r = random_tensor(out.shape(), 70 + seed);
            const Tensor dx = relu_backward(r, cache);
            const auto fd = numeric_gradient(
                [&](const Tensor& probe) { return project(relu_forward(probe), r); }, x);
            CHECK(max_rel_error(dx, fd) < 1e-6);
        }
    }
}

TEST_CASE("maxpool2x2") {
    SUBCASE("hand example") {
        const Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
        const Tensor out = maxpool2x2_forward(x);
        CHECK(out.shape() == std::vector<int>{1, 1, 1, 1});
        CHECK(out[0] == 4.0);
    }
    SUBCASE("halves 48x48") {
        CHECK(maxpool2x2_forward(Tensor({2, 3, 48, 48})).shape() ==
              std::vector<int>{2, 3, 24, 24});
    }
    SUBCASE("odd extent is rejected") {
        CHECK_THROWS_AS(maxpool2x2_forward(Tensor({1, 1, 3, 4})), ShapeError);
    }
    SUBCASE("backward matches finite differences on tie-free input") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const Tensor x = random_tensor({2, 2, 4, 4}, 80 + seed);
            PoolCache cache;
            const Tensor out = maxpool2x2_forward(x, &cache);
            const Tensor r = random_tensor(out.shape(), 90 + seed);
            const Tensor dx = maxpool2x2_backward(r, cache);
            const auto fd = numeric_gradient(
                [&](const Tensor& probe) { return project(maxpool2x2_forward(probe), r); }, x);
            CHECK(max_rel_error(dx, fd) < 1e-6);
        }
    }
    SUBCASE("routing deposits each upstream gradient exactly once") {
        const Tensor x = random_tensor({1, 2, 6, 6}, 17);
        PoolCache cache;
        const Tensor out = maxpool2x2_forward(x, &cache);
        Tensor dout(out.shape());
        for (std::int64_t i = 0; i < dout.size(); ++i) dout[i] = 0.5 + (i % 7) * 0.25;
        const Tensor dx = maxpool2x2_backward(dout, cache);
        double sum_dx = 0.0, sum_dout = 0.0;
        for (std::int64_t i = 0; i < dx.size(); ++i) sum_dx += std::abs(dx[i]);
        for (std::int64_t i = 0; i < dout.size(); ++i) sum_dout += std::abs(dout[i]);
        CHECK(sum_dx == doctest::Approx(sum_dout));
    }
    SUBCASE("row-major scan order wins ties") {
        const Tensor x({1, 1, 2, 2}, {7.0, 7.0, 7.0, 7.0});
        PoolCache cache;
        maxpool2x2_forward(x, &cache);
        CHECK(cache.argmax[0] == 0);
    }
}

TEST_CASE("batchnorm normalizes and updates running stats") {
    const int n = 64, d = 5;
    const Tensor x = random_tensor({n, d}, 123, 3.0);
    // eps = 0 so the unit-variance claim is about the biased variance alone
    BatchNormState s = BatchNormState::make(d, 0.9, 0.0);
    BnCache cache;
    const Tensor out = batchnorm_forward(x, s, Mode::train, &cache);

    for (int j = 0; j < d; ++j) {
        double mean = 0.0, var = 0.0;
        for (int i = 0; i < n; ++i) mean += out.at(i, j);
        mean /= n;
        for (int i = 0; i < n; ++i) var += (out.at(i, j) - mean) * (out.at(i, j) - mean);
        var /= n;
        CHECK(std::abs(mean) < 1e-10);
        CHECK(std::abs(var - 1.0) < 1e-8);
    }
}

TEST_CASE("batchnorm constant column becomes beta") {
    const int n = 6, d = 3;
    Tensor x({n, d});
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < d; ++j) x.at(i, j) = 4.0;  // zero variance everywhere
    BatchNormState s = BatchNormState::make(d);
    for (int j = 0; j < d; ++j) s.beta[j] = 5.0;
    const Tensor out = batchnorm_forward(x, s, Mode::train);
    for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(5.0));
}

TEST_CASE("batchnorm gradients match finite differences") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const int n = 6, d = 4;
        const Tensor x = random_tensor({n, d}, 200 + seed, 2.0);
        BatchNormState s = BatchNormState::make(d);
        for (int j = 0; j < d; ++j) {
            s.gamma[j] = 1.0 + 0.1 * j;
            s.beta[j] = -0.2 * j;
        }
        BnCache cache;
        const Tensor out = batchnorm_forward(x, s, Mode::train, &cache);
        const Tensor r = random_tensor(out.shape(), 300 + seed);
        const BnGrads g = batchnorm_backward(r, cache);

        const auto run = [&](const Tensor& probe_x, const Tensor& gamma, const Tensor& beta) {
            BatchNormState tmp = BatchNormState::make(d);
            tmp.gamma = gamma;
            tmp.beta = beta;
            return project(batchnorm_forward(probe_x, tmp, Mode::train), r);
        };
        CHECK(max_rel_error(g.dx, numeric_gradient([&](const Tensor& p) {
                  return run(p, s.gamma, s.beta);
              }, x)) < 1e-6);
        CHECK(max_rel_error(g.dgamma, numeric_gradient([&](const Tensor& p) {
                  return run(x, p, s.beta);
              }, s.gamma)) < 1e-6);
        CHECK(max_rel_error(g.dbeta, numeric_gradient([&](const Tensor& p) {
                  return run(x, s.gamma, p);
              }, s.beta)) < 1e-6);
    }
}

TEST_CASE("batchnorm eval uses running statistics") {
    const int d = 3;
    BatchNormState s = BatchNormState::make(d);
    const Tensor x = random_tensor({8, d}, 55, 2.0);
    batchnorm_forward(x, s, Mode::train);  // populate running stats
    const Tensor running_mean = s.running_mean;

    const Tensor probe = random_tensor({4, d}, 56);
    const Tensor out = batchnorm_eval(probe, s);
    for (int i = 0; i < 4; ++i)
        for (int j = 0; j < d; ++j) {
            const double expect = (probe.at(i, j) - s.running_mean[j]) /
                                  std::sqrt(s.running_var[j] + s.eps);
            CHECK(out.at(i, j) == doctest::Approx(expect));
        }
    for (int j = 0; j < d; ++j) CHECK(s.running_mean[j] == running_mean[j]);  // untouched
    CHECK_THROWS_AS(batchnorm_forward(Tensor({1, 3}), s, Mode::train), ConfigError);
}

TEST_CASE("spatial batchnorm equals the reshape construction bitwise") {
    const Tensor x = random_tensor({2, 3, 4, 4}, 77, 2.0);
    BatchNormState s1 = BatchNormState::make(3);
    BatchNormState s2 = BatchNormState::make(3);
    for (int j = 0; j < 3; ++j) {
        s1.gamma[j] = s2.gamma[j] = 0.5 + j;
        s1.beta[j] = s2.beta[j] = 0.1 * j;
    }

    const Tensor spatial = spatial_batchnorm_forward(x, s1, Mode::train);
    const Tensor via_reshape =
        rows_to_nchw(batchnorm_forward(nchw_to_rows(x), s2, Mode::train), x.shape());
    for (std::int64_t i = 0; i < spatial.size(); ++i) CHECK(spatial[i] == via_reshape[i]);
    for (int j = 0; j < 3; ++j) {
        CHECK(s1.running_mean[j] == s2.running_mean[j]);
        CHECK(s1.running_var[j] == s2.running_var[j]);
    }
}

TEST_CASE("spatial batchnorm zeroes channel-constant input") {
    Tensor x({2, 2, 3, 3});
    for (int n = 0; n < 2; ++n)
        for (int c = 0; c < 2; ++c)
            for (int p = 0; p < 9; ++p) {
                x[static_cast<std::int64_t>((n * 2 + c) * 9 + p)] = 3.0 * (c + 1);
            }
    BatchNormState s = BatchNormState::make(2);
    const Tensor out = spatial_batchnorm_forward(x, s, Mode::train);
    for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == doctest::Approx(0.0));
}

TEST_CASE("spatial batchnorm gradient check") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const Tensor x = random_tensor({2, 3, 4, 4}, 400 + seed, 1.5);
        BatchNormState s = BatchNormState::make(3);
        BnCache cache;
        const Tensor out = spatial_batchnorm_forward(x, s, Mode::train, &cache);
        const Tensor r = random_tensor(out.shape(), 500 + seed);
        const BnGrads g = spatial_batchnorm_backward(r, cache);
        const auto fd = numeric_gradient(
            [&](const Tensor& probe) {
                BatchNormState tmp = BatchNormState::make(3);
                return project(spatial_batchnorm_forward(probe, tmp, Mode::train), r);
            },
            x);
        CHECK(max_rel_error(g.dx, fd) < 1e-6);
    }
}

TEST_CASE("dropout") {
    const Tensor x = random_tensor({10, 10}, 31);
    SUBCASE("eval mode is the exact identity") {
        const Tensor out = dropout_forward(x, {0.5, Mode::eval, 1});
        for (std::int64_t i = 0; i < x.size(); ++i) CHECK(out[i] == x[i]);
    }
    SUBCASE("p_keep one is the identity in both modes") {
        for (const Mode mode : {Mode::train, Mode::eval}) {
            const Tensor out = dropout_forward(x, {1.0, mode, 1});
            for (std::int64_t i = 0; i < x.size(); ++i) CHECK(out[i] == x[i]);
        }
    }
    SUBCASE("train mode preserves the mean") {
        const int n = 100000;
        const Tensor ones({n}, 1.0);
        const Tensor out = dropout_forward(ones, {0.5, Mode::train, 99});
        double mean = 0.0;
        for (std::int64_t i = 0; i < n; ++i) mean += out[i];
        mean /= n;
        CHECK(std::abs(mean - 1.0) < 3.0 / std::sqrt(static_cast<double>(n)));
    }
    SUBCASE("backward reuses the forward mask") {
        DropoutCache cache;
        const Tensor out = dropout_forward(x, {0.5, Mode::train, 7}, &cache);
        const Tensor dout = random_tensor(x.shape(), 32);
        const Tensor dx = dropout_backward(dout, cache);
        for (std::int64_t i = 0; i < x.size(); ++i) {
            if (out[i] == 0.0 && x[i] != 0.0) CHECK(dx[i] == 0.0);
            else CHECK(dx[i] == doctest::Approx(dout[i] * 2.0));
        }
    }
    SUBCASE("bad p_keep is rejected") {
        CHECK_THROWS_AS(dropout_forward(x, {0.0, Mode::train, 1}), ConfigError);
        CHECK_THROWS_AS(dropout_forward(x, {1.5, Mode::train, 1}), ConfigError);
    }
}

TEST_CASE("affine") {
    SUBCASE("identity weights flatten the input") {
        const Tensor x = random_tensor({2, 2, 2}, 61);  // flattens to [2,4]
        Tensor w({4, 4}, 0.0);
        for (int i = 0; i < 4; ++i) w.at(i, i) = 1.0;
        const Tensor out = affine_forward(x, w, Tensor({4}, 0.0));
        for (std::int64_t i = 0; i < x.size(); ++i) CHECK(out[i] == doctest::Approx(x[i]));
    }
    SUBCASE("width arithmetic for the deep stack") {
        const Tensor out = affine_forward(Tensor({128, 512, 3, 3}, 0.1),
                                          Tensor({4608, 256}, 0.01), Tensor({256}));
        CHECK(out.shape() == std::vector<int>{128, 256});
    }
    SUBCASE("gradients match finite differences") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            const Tensor x = random_tensor({3, 2, 2}, 600 + seed);
            const Tensor w = random_tensor({4, 5}, 700 + seed);
            const Tensor b = random_tensor({5}, 800 + seed);
            AffineCache cache;
            const Tensor out = affine_forward(x, w, b, &cache);
            const Tensor r = random_tensor(out.shape(), 900 + seed);
            const AffineGrads g = affine_backward(r, cache);

            CHECK(max_rel_error(g.dx, numeric_gradient([&](const Tensor& p) {
                      return project(affine_forward(p, w, b), r);
                  }, x)) < 1e-6);
            CHECK(max_rel_error(g.dweights, numeric_gradient([&](const Tensor& p) {
                      return project(affine_forward(x, p, b), r);
                  }, w)) < 1e-6);
            CHECK(max_rel_error(g.dbias, numeric_gradient([&](const Tensor& p) {
                      return project(affine_forward(x, w, p), r);
                  }, b)) < 1e-6);
            CHECK(g.dx.shape() == x.shape());
        }
    }
    SUBCASE("width mismatch is rejected") {
        CHECK_THROWS_AS(affine_forward(Tensor({2, 3}), Tensor({4, 5}), Tensor({5})), ShapeError);
    }
}

TEST_CASE("softmax loss") {
    SUBCASE("uniform scores over seven classes give ln 7") {
        const Tensor scores({4, 7}, 0.8);
        const std::vector<int> labels{0, 3, 5, 6};
        const SoftmaxResult r = softmax_loss(scores, labels);
        CHECK(std::abs(r.loss - std::log(7.0)) < 1e-9);
    }
    SUBCASE("a saturated correct class drives the loss to zero") {
        Tensor scores({2, 7}, 0.0);
        scores.at(0, 2) = 100.0;
        scores.at(1, 5) = 100.0;
        const SoftmaxResult r = softmax_loss(scores, {2, 5});
        CHECK(r.loss < 1e-6);
    }
    SUBCASE("dscores rows sum to zero and match finite differences") {
        const Tensor scores = random_tensor({5, 7}, 1001);
        const std::vector<int> labels{1, 0, 6, 3, 3};
        const SoftmaxResult r = softmax_loss(scores, labels);
        for (int i = 0; i < 5; ++i) {
            double row = 0.0;
            for (int j = 0; j < 7; ++j) row += r.dscores.at(i, j);
            CHECK(std::abs(row) < 1e-12);
        }
        const auto fd = numeric_gradient(
            [&](const Tensor& probe) { return softmax_loss(probe, labels).loss; }, scores);
        CHECK(max_rel_error(r.dscores, fd) < 1e-7);
    }
    SUBCASE("invariant to per-row shifts") {
        const Tensor scores = random_tensor({3, 7}, 1002);
        Tensor shifted = scores;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 7; ++j) shifted.at(i, j) += 5.0 * (i + 1);
        const std::vector<int> labels{0, 4, 2};
        CHECK(std::abs(softmax_loss(scores, labels).loss -
                       softmax_loss(shifted, labels).loss) < 1e-12);
    }
    SUBCASE("label range is validated") {
        CHECK_THROWS_AS(softmax_loss(Tensor({1, 7}), {7}), DataError);
        CHECK_THROWS_AS(softmax_loss(Tensor({1, 7}), {-1}), DataError);
    }
}

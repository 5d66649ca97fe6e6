#include <doctest.h>

#include <cmath>

#include "ecnn/errors.hpp"
#include "ecnn/hog.hpp"
#include "test_support.hpp"

using namespace ecnn;
using test::random_tensor;

TEST_CASE("gradients of a constant image are zero") {
    Tensor gx, gy;
    image_gradients(Tensor({1, 48, 48}, 9.0), gx, gy);
    for (std::int64_t i = 0; i < gx.size(); ++i) {
        CHECK(gx[i] == 0.0);
        CHECK(gy[i] == 0.0);
    }
}

TEST_CASE("horizontal ramp has un-halved central differences") {
    Tensor img({1, 8, 8});
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) img[static_cast<std::int64_t>(y) * 8 + x] = x;
    Tensor gx, gy;
    image_gradients(img, gx, gy);
    for (int y = 0; y < 8; ++y)
        for (int x = 1; x < 7; ++x) {
            CHECK(gx[static_cast<std::int64_t>(y) * 8 + x] == 2.0);
            CHECK(gy[static_cast<std::int64_t>(y) * 8 + x] == 0.0);
        }
    // replicated border: single-sided difference
    for (int y = 0; y < 8; ++y) {
        CHECK(gx[static_cast<std::int64_t>(y) * 8 + 0] == 1.0);
        CHECK(gx[static_cast<std::int64_t>(y) * 8 + 7] == 1.0);
    }
}

TEST_CASE("gradients match a per-pixel oracle on a random image") {
    const Tensor img = random_tensor({1, 5, 5}, 3, 10.0);
    Tensor gx, gy;
    image_gradients(img, gx, gy);
    for (int y = 0; y < 5; ++y)
        for (int x = 0; x < 5; ++x) {
            const auto px = [&](int yy, int xx) {
                yy = std::clamp(yy, 0, 4);
                xx = std::clamp(xx, 0, 4);
                return img[static_cast<std::int64_t>(yy) * 5 + xx];
            };
            CHECK(gx[static_cast<std::int64_t>(y) * 5 + x] == px(y, x + 1) - px(y, x - 1));
            CHECK(gy[static_cast<std::int64_t>(y) * 5 + x] == px(y + 1, x) - px(y - 1, x));
        }
}

TEST_CASE("cell histograms") {
    const HogConfig cfg;
    SUBCASE("zero gradients give zero histograms") {
        const Tensor cells =
            cell_histograms(Tensor({1, 48, 48}, 0.0), Tensor({1, 48, 48}, 0.0), cfg);
        CHECK(cells.shape() == std::vector<int>{6, 6, 9});
        for (std::int64_t i = 0; i < cells.size(); ++i) CHECK(cells[i] == 0.0);
    }
    SUBCASE("angle exactly on a bin center lands in that bin alone") {
        // one pixel with gradient at 30 degrees, magnitude 1: bin centers sit
        // at 10,30,...,170 so bin 1 takes everything
        Tensor gx({1, 48, 48}, 0.0), gy({1, 48, 48}, 0.0);
        gx[0] = std::cos(30.0 * M_PI / 180.0);
        gy[0] = std::sin(30.0 * M_PI / 180.0);
        const Tensor cells = cell_histograms(gx, gy, cfg);
        CHECK(cells.at(0, 0, 1) == doctest::Approx(1.0));
        for (int b = 0; b < 9; ++b) {
            if (b != 1) CHECK(cells.at(0, 0, b) == doctest::Approx(0.0));
        }
    }
    SUBCASE("angle between centers splits linearly") {
        // 20 degrees sits halfway between the 10 and 30 degree centers
        Tensor gx({1, 48, 48}, 0.0), gy({1, 48, 48}, 0.0);
        gx[0] = 2.0 * std::cos(20.0 * M_PI / 180.0);
        gy[0] = 2.0 * std::sin(20.0 * M_PI / 180.0);
        const Tensor cells = cell_histograms(gx, gy, cfg);
        CHECK(cells.at(0, 0, 0) == doctest::Approx(1.0));
        CHECK(cells.at(0, 0, 1) == doctest::Approx(1.0));
    }
}

TEST_CASE("block normalization") {
    const HogConfig cfg;
    SUBCASE("zero cells give a zero vector") {
        const Tensor out = block_normalize(Tensor({6, 6, 9}, 0.0), cfg);
        REQUIRE(out.size() == 900);
        for (std::int64_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0);
    }
    SUBCASE("one-hot energy normalizes its blocks to unit vectors") {
        Tensor cells({6, 6, 9}, 0.0);
        cells.at(0, 0, 4) = 123.0;
        const Tensor out = block_normalize(cells, cfg);
        // cell (0,0) appears only in block (0,0); its sub-vector has norm 1
        double sq = 0.0;
        for (int i = 0; i < 36; ++i) sq += out[i] * out[i];
        CHECK(std::sqrt(sq) == doctest::Approx(1.0).epsilon(1e-9));
    }
    SUBCASE("every block norm is at most one") {
        Tensor cells = random_tensor({6, 6, 9}, 8);
        for (std::int64_t i = 0; i < cells.size(); ++i) cells[i] = std::abs(cells[i]);
        const Tensor out = block_normalize(cells, cfg);
        for (int blk = 0; blk < 25; ++blk) {
            double sq = 0.0;
            for (int i = 0; i < 36; ++i) sq += out[blk * 36 + i] * out[blk * 36 + i];
            CHECK(std::sqrt(sq) <= 1.0 + 1e-9);
        }
    }
}

TEST_CASE("hog_extract length and invariances") {
    const HogConfig cfg;
    CHECK(hog_length(cfg) == 900);

    Tensor img = random_tensor({1, 48, 48}, 13, 40.0);
    for (std::int64_t i = 0; i < img.size(); ++i) img[i] += 128.0;
    const Tensor base = hog_extract(img, cfg);
    REQUIRE(base.size() == 900);

    SUBCASE("brightness shifts do not change the descriptor") {
        Tensor shifted = img;
        for (std::int64_t i = 0; i < shifted.size(); ++i) shifted[i] += 17.5;
        const Tensor moved = hog_extract(shifted, cfg);
        for (std::int64_t i = 0; i < base.size(); ++i) {
            CHECK(std::abs(base[i] - moved[i]) < 1e-12);
        }
    }
    SUBCASE("all-zero image maps to the zero vector") {
        const Tensor zero = hog_extract(Tensor({1, 48, 48}, 0.0), cfg);
        for (std::int64_t i = 0; i < zero.size(); ++i) CHECK(zero[i] == 0.0);
    }
    SUBCASE("output is non-negative and finite") {
        for (std::int64_t i = 0; i < base.size(); ++i) {
            CHECK(base[i] >= 0.0);
            CHECK(std::isfinite(base[i]));
        }
    }
    SUBCASE("horizontal flips preserve total energy") {
        Tensor flipped({1, 48, 48});
        for (int y = 0; y < 48; ++y)
            for (int x = 0; x < 48; ++x) {
                flipped[static_cast<std::int64_t>(y) * 48 + x] =
                    img[static_cast<std::int64_t>(y) * 48 + 47 - x];
            }
        const Tensor other = hog_extract(flipped, cfg);
        double e1 = 0.0, e2 = 0.0;
        for (std::int64_t i = 0; i < base.size(); ++i) {
            e1 += base[i] * base[i];
            e2 += other[i] * other[i];
        }
        CHECK(std::abs(e1 - e2) < 1e-9);
    }
    SUBCASE("wrong image size is rejected") {
        CHECK_THROWS_AS(hog_extract(Tensor({1, 47, 47}, 1.0), cfg), ShapeError);
    }
}

TEST_CASE("a vertical step edge concentrates energy in the wrap pair of bins") {
    Tensor img({1, 48, 48});
    for (int y = 0; y < 48; ++y)
        for (int x = 0; x < 48; ++x) {
            img[static_cast<std::int64_t>(y) * 48 + x] = x < 24 ? 0.0 : 200.0;
        }
    Tensor gx, gy;
    image_gradients(img, gx, gy);
    const Tensor cells = cell_histograms(gx, gy, HogConfig{});
    // the edge at column 24 lands in cell columns 2 and 3; gradient direction
    // is 0 degrees, which splits between bins 0 and 8
    for (const int cx : {2, 3}) {
        double total = 0.0, wrap_pair = 0.0;
        for (int b = 0; b < 9; ++b) {
            total += cells.at(3, cx, b);
        }
        wrap_pair = cells.at(3, cx, 0) + cells.at(3, cx, 8);
        REQUIRE(total > 0.0);
        CHECK(wrap_pair / total > 0.99);
    }
}

TEST_CASE("hog_batch stacks per-image vectors") {
    const Tensor images = random_tensor({3, 1, 48, 48}, 5, 30.0);
    const Tensor rows = hog_batch(images);
    REQUIRE(rows.shape() == std::vector<int>{3, 900});
    Tensor one({1, 48, 48},
               std::vector<double>(images.data() + 2304, images.data() + 2 * 2304));
    const Tensor expect = hog_extract(one);
    for (int j = 0; j < 900; ++j) CHECK(rows.at(1, j) == expect[j]);
}

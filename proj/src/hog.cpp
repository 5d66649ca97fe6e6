#include "ecnn/hog.hpp"

#include <algorithm>
#include <cmath>

#include "ecnn/errors.hpp"

namespace ecnn {

namespace {

constexpr double kPi = 3.14159265358979323846;

// accept [H,W] or [1,H,W]
const double* plane_of(const Tensor& img, int& h, int& w) {
    if (img.rank() == 2) {
        h = img.extent(0);
        w = img.extent(1);
    } else if (img.rank() == 3 && img.extent(0) == 1) {
        h = img.extent(1);
        w = img.extent(2);
    } else {
        throw ShapeError("expected a single-channel image, got " + img.shape_str());
    }
    return img.data();
}

}  // namespace

int hog_length(const HogConfig& cfg) {
    const int cells = cfg.image / cfg.cell;
    const int blocks = cells - cfg.block + 1;
    return blocks * blocks * cfg.block * cfg.block * cfg.bins;
}

void image_gradients(const Tensor& img, Tensor& gx, Tensor& gy) {
    int h = 0, w = 0;
    const double* p = plane_of(img, h, w);
    gx = Tensor(img.shape());
    gy = Tensor(img.shape());
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const int xl = std::max(0, x - 1), xr = std::min(w - 1, x + 1);
            const int yu = std::max(0, y - 1), yd = std::min(h - 1, y + 1);
            gx[static_cast<std::int64_t>(y) * w + x] = p[y * w + xr] - p[y * w + xl];
            gy[static_cast<std::int64_t>(y) * w + x] = p[yd * w + x] - p[yu * w + x];
        }
    }
}

Tensor cell_histograms(const Tensor& gx, const Tensor& gy, const HogConfig& cfg) {
    int h = 0, w = 0;
    const double* px = plane_of(gx, h, w);
    int h2 = 0, w2 = 0;
    const double* py = plane_of(gy, h2, w2);
    if (h != h2 || w != w2) throw ShapeError("gradient planes differ in shape");
    if (h != cfg.image || w != cfg.image) {
        throw ShapeError("expected a " + std::to_string(cfg.image) + "x" +
                         std::to_string(cfg.image) + " image, got " + gx.shape_str());
    }
    if (h % cfg.cell != 0) throw ShapeError("image extent not divisible by cell size");

    const int cells = h / cfg.cell;
    const double bin_width = 180.0 / cfg.bins;
    Tensor hist({cells, cells, cfg.bins}, 0.0);

    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const double dx = px[y * w + x];
            const double dy = py[y * w + x];
            const double mag = std::sqrt(dx * dx + dy * dy);
            if (mag == 0.0) continue;
            double angle = std::atan2(dy, dx) * 180.0 / kPi;  // (-180,180]
            if (angle < 0.0) angle += 180.0;                  // unsigned orientation
            if (angle >= 180.0) angle -= 180.0;

            // linear split between the two nearest bin centers, wrapping mod 180
            const double f = angle / bin_width - 0.5;
            const int lower = static_cast<int>(std::floor(f));
            const double frac = f - lower;
            const int b0 = (lower % cfg.bins + cfg.bins) % cfg.bins;
            const int b1 = (b0 + 1) % cfg.bins;
            const int cy = y / cfg.cell, cx = x / cfg.cell;
            hist.at(cy, cx, b0) += mag * (1.0 - frac);
            hist.at(cy, cx, b1) += mag * frac;
        }
    }
    return hist;
}

Tensor block_normalize(const Tensor& cells, const HogConfig& cfg) {
    if (cells.rank() != 3 || cells.extent(2) != cfg.bins) {
        throw ShapeError("expected [cells,cells,bins] histograms, got " + cells.shape_str());
    }
    const int grid = cells.extent(0);
    const int blocks = grid - cfg.block + 1;
    const int block_len = cfg.block * cfg.block * cfg.bins;
    Tensor out({blocks * blocks * block_len});

    std::int64_t o = 0;
    for (int by = 0; by < blocks; ++by) {
        for (int bx = 0; bx < blocks; ++bx) {
            const std::int64_t start = o;
            double sq = 0.0;
            for (int cy = 0; cy < cfg.block; ++cy) {
                for (int cx = 0; cx < cfg.block; ++cx) {
                    for (int b = 0; b < cfg.bins; ++b) {
                        const double v = cells.at(by + cy, bx + cx, b);
                        out[o++] = v;
                        sq += v * v;
                    }
                }
            }
            const double inv = 1.0 / std::sqrt(sq + cfg.norm_eps * cfg.norm_eps);
            for (std::int64_t i = start; i < o; ++i) out[i] *= inv;
        }
    }
    return out;
}

Tensor hog_extract(const Tensor& img, const HogConfig& cfg) {
    Tensor gx, gy;
    image_gradients(img, gx, gy);
    return block_normalize(cell_histograms(gx, gy, cfg), cfg);
}

Tensor hog_batch(const Tensor& images, const HogConfig& cfg) {
    if (images.rank() != 4 || images.extent(1) != 1) {
        throw ShapeError("hog_batch needs [N,1,H,W] images, got " + images.shape_str());
    }
    const int n = images.extent(0);
    const int h = images.extent(2), w = images.extent(3);
    const int len = hog_length(cfg);
    Tensor out({n, len});
    parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
        for (std::int64_t i = lo; i < hi; ++i) {
            Tensor img({1, h, w},
                       std::vector<double>(images.data() + i * h * w,
                                           images.data() + (i + 1) * h * w));
            const Tensor vec = hog_extract(img, cfg);
            std::copy(vec.data(), vec.data() + len, out.data() + i * len);
        }
    });
    return out;
}

}  // namespace ecnn

#include "ecnn/visualization.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ecnn/errors.hpp"
#include "ecnn/layers.hpp"

namespace ecnn {

namespace {

struct DreamCaches {
    std::vector<ConvCache> conv;
    std::vector<ReluCache> relu;
    std::vector<PoolCache> pool;
};

// eval-mode conv-stack forward through layer `last`, keeping what the input
// gradient needs; returns the post-ReLU activation of layer `last`
Tensor conv_stack_forward(const Model& m, const Tensor& x, int last, DreamCaches* caches) {
    Tensor cur = x;
    for (int i = 0; i <= last; ++i) {
        const ConvLayer& layer = m.conv[static_cast<std::size_t>(i)];
        cur = conv2d_forward(cur, layer.params, caches ? &caches->conv[i] : nullptr);
        if (layer.spec.has_bn) cur = spatial_batchnorm_eval(cur, layer.bn);
        cur = relu_forward(cur, caches ? &caches->relu[i] : nullptr);
        if (i < last && layer.spec.has_pool) {
            cur = maxpool2x2_forward(cur, caches ? &caches->pool[i] : nullptr);
        }
    }
    return cur;
}

// eval-mode spatial BN backward: out = scale*x + shift, so dx = dout*scale
Tensor bn_eval_backward(const Tensor& dout, const BatchNormState& s) {
    const int n = dout.extent(0), c = dout.extent(1);
    const int hw = dout.extent(2) * dout.extent(3);
    Tensor dx(dout.shape());
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const double scale = s.gamma[ic] / std::sqrt(s.running_var[ic] + s.eps);
            const double* src = dout.data() + (static_cast<std::size_t>(in) * c + ic) * hw;
            double* dst = dx.data() + (static_cast<std::size_t>(in) * c + ic) * hw;
            for (int p = 0; p < hw; ++p) dst[p] = src[p] * scale;
        }
    return dx;
}

}  // namespace

std::vector<Tensor> capture_activations(const Model& m, const Tensor& x) {
    std::vector<Tensor> acts;
    Tensor cur = x;
    for (const ConvLayer& layer : m.conv) {
        cur = conv2d_forward(cur, layer.params);
        if (layer.spec.has_bn) cur = spatial_batchnorm_eval(cur, layer.bn);
        cur = relu_forward(cur);
        acts.push_back(cur);
        if (layer.spec.has_pool) cur = maxpool2x2_forward(cur);
    }
    return acts;
}

ByteImage render_grid(const std::vector<Tensor>& tiles, int cols, int gap) {
    if (tiles.empty()) throw UsageError("render_grid needs at least one tile");
    if (cols < 1) throw UsageError("render_grid needs cols >= 1");
    const int th = tiles[0].extent(0), tw = tiles[0].extent(1);
    for (const Tensor& t : tiles) {
        if (t.rank() != 2 || t.extent(0) != th || t.extent(1) != tw) {
            throw UsageError("render_grid tiles must share one 2D shape");
        }
    }
    const int count = static_cast<int>(tiles.size());
    const int rows = (count + cols - 1) / cols;

    ByteImage img;
    img.width = cols * tw + (cols - 1) * gap;
    img.height = rows * th + (rows - 1) * gap;
    img.pixels.assign(static_cast<std::size_t>(img.width) * img.height, 0);

    for (int t = 0; t < count; ++t) {
        const Tensor& tile = tiles[static_cast<std::size_t>(t)];
        const double mn = *std::min_element(tile.data(), tile.data() + tile.size());
        const double mx = *std::max_element(tile.data(), tile.data() + tile.size());
        const int oy = (t / cols) * (th + gap);
        const int ox = (t % cols) * (tw + gap);
        for (int y = 0; y < th; ++y)
            for (int x = 0; x < tw; ++x) {
                double v = 128.0;  // constant tile renders mid-gray
                if (mx > mn) v = (tile.at(y, x) - mn) / (mx - mn) * 255.0;
                img.pixels[static_cast<std::size_t>(oy + y) * img.width + ox + x] =
                    static_cast<std::uint8_t>(std::lround(v));
            }
    }
    return img;
}

std::vector<Tensor> weight_tiles(const Model& m) {
    if (m.conv.empty()) throw UsageError("model has no conv layers");
    const Tensor& w = m.conv[0].params.weights;  // [F,C,HH,WW]
    const int f = w.extent(0), c = w.extent(1), hh = w.extent(2), ww = w.extent(3);
    std::vector<Tensor> tiles;
    tiles.reserve(static_cast<std::size_t>(f));
    for (int fi = 0; fi < f; ++fi) {
        Tensor tile({hh, ww}, 0.0);
        for (int ci = 0; ci < c; ++ci)
            for (int y = 0; y < hh; ++y)
                for (int x = 0; x < ww; ++x) tile.at(y, x) += w.at(fi, ci, y, x) / c;
        tiles.push_back(std::move(tile));
    }
    return tiles;
}

std::vector<Tensor> activation_tiles(const Tensor& activation, int max_channels) {
    if (activation.rank() != 4 || activation.extent(0) != 1) {
        throw UsageError("activation_tiles needs a [1,C,H,W] activation");
    }
    const int c = std::min(activation.extent(1), max_channels);
    const int h = activation.extent(2), w = activation.extent(3);
    std::vector<Tensor> tiles;
    for (int ci = 0; ci < c; ++ci) {
        Tensor tile({h, w});
        std::copy(activation.data() + static_cast<std::size_t>(ci) * h * w,
                  activation.data() + static_cast<std::size_t>(ci + 1) * h * w, tile.data());
        tiles.push_back(std::move(tile));
    }
    return tiles;
}

double dream_objective(const Model& m, const Tensor& raw_img, const NormState& norm, int layer) {
    if (layer < 0 || layer >= static_cast<int>(m.conv.size())) {
        throw UsageError("invalid conv layer index " + std::to_string(layer));
    }
    Tensor x = raw_img;
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] -= norm.mean_image[i];
    const Tensor act = conv_stack_forward(m, x, layer, nullptr);
    double obj = 0.0;
    for (std::int64_t i = 0; i < act.size(); ++i) obj += 0.5 * act[i] * act[i];
    return obj;
}

Tensor deepdream(const Model& m, const Tensor& raw_img, const NormState& norm, int layer,
                 int steps, double step_size) {
    if (layer < 0 || layer >= static_cast<int>(m.conv.size())) {
        throw UsageError("invalid conv layer index " + std::to_string(layer));
    }
    if (raw_img.rank() != 4 || raw_img.extent(0) != 1) {
        throw UsageError("deepdream expects one [1,1,H,W] image");
    }

    Tensor img = raw_img;
    for (int step = 0; step < steps; ++step) {
        Tensor x = img;
        for (std::int64_t i = 0; i < x.size(); ++i) x[i] -= norm.mean_image[i];

        DreamCaches caches;
        caches.conv.resize(static_cast<std::size_t>(layer) + 1);
        caches.relu.resize(static_cast<std::size_t>(layer) + 1);
        caches.pool.resize(static_cast<std::size_t>(layer) + 1);
        const Tensor act = conv_stack_forward(m, x, layer, &caches);

        // d(0.5*sum a^2)/da = a, then back through the stack to the input
        Tensor grad = act;
        for (int i = layer; i >= 0; --i) {
            const ConvLayer& l = m.conv[static_cast<std::size_t>(i)];
            if (i < layer && l.spec.has_pool) grad = maxpool2x2_backward(grad, caches.pool[i]);
            grad = relu_backward(grad, caches.relu[i]);
            if (l.spec.has_bn) grad = bn_eval_backward(grad, l.bn);
            grad = conv2d_backward(grad, caches.conv[i]).dx;
        }

        double gmax = 0.0;
        for (std::int64_t i = 0; i < grad.size(); ++i) gmax = std::max(gmax, std::abs(grad[i]));
        const double scale = step_size / (gmax + 1e-8);
        for (std::int64_t i = 0; i < img.size(); ++i) {
            img[i] = std::clamp(img[i] + scale * grad[i], 0.0, 255.0);
        }
    }
    return img;
}

void write_pgm(const ByteImage& img, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot write " + path);
    os << "P5\n" << img.width << ' ' << img.height << "\n255\n";
    os.write(reinterpret_cast<const char*>(img.pixels.data()),
             static_cast<std::streamsize>(img.pixels.size()));
    if (!os) throw IoError("failed writing " + path);
}

ByteImage read_pgm(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open " + path);
    std::string magic;
    is >> magic;
    if (magic != "P5") throw DataError("not a binary PGM: " + path);
    ByteImage img;
    int maxval = 0;
    is >> img.width >> img.height >> maxval;
    if (maxval != 255) throw DataError("unsupported PGM maxval in " + path);
    is.get();  // single whitespace after header
    img.pixels.resize(static_cast<std::size_t>(img.width) * img.height);
    if (!is.read(reinterpret_cast<char*>(img.pixels.data()),
                 static_cast<std::streamsize>(img.pixels.size()))) {
        throw DataError("truncated PGM: " + path);
    }
    return img;
}

double mean_abs_laplacian(const Tensor& filters) {
    if (filters.rank() != 4) throw UsageError("expected [F,C,HH,WW] filters");
    const int f = filters.extent(0), c = filters.extent(1);
    const int hh = filters.extent(2), ww = filters.extent(3);
    if (hh < 3 || ww < 3) throw UsageError("filters too small for a Laplacian");
    double sum = 0.0;
    std::int64_t count = 0;
    for (int fi = 0; fi < f; ++fi)
        for (int ci = 0; ci < c; ++ci)
            for (int y = 1; y + 1 < hh; ++y)
                for (int x = 1; x + 1 < ww; ++x) {
                    const double lap = filters.at(fi, ci, y - 1, x) + filters.at(fi, ci, y + 1, x) +
                                       filters.at(fi, ci, y, x - 1) + filters.at(fi, ci, y, x + 1) -
                                       4.0 * filters.at(fi, ci, y, x);
                    sum += std::abs(lap);
                    ++count;
                }
    return sum / static_cast<double>(count);
}

}  // namespace ecnn

#include "ecnn/netspec.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <random>
#include <sstream>

#include "ecnn/errors.hpp"

namespace ecnn {

namespace {

struct Segment {
    std::string text;
    std::size_t offset;
};

std::vector<Segment> split(const std::string& s, char delim) {
    std::vector<Segment> out;
    std::size_t start = 0;
    while (true) {
        const std::size_t pos = s.find(delim, start);
        if (pos == std::string::npos) {
            out.push_back({s.substr(start), start});
            return out;
        }
        out.push_back({s.substr(start, pos - start), start});
        start = pos + 1;
    }
}

int parse_int(const std::string& field, std::size_t offset) {
    int value = 0;
    const auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), value);
    if (ec != std::errc() || ptr != field.data() + field.size()) {
        throw ParseError("expected integer, got '" + field + "'", offset);
    }
    return value;
}

double parse_real(const std::string& field, std::size_t offset) {
    try {
        std::size_t pos = 0;
        const double v = std::stod(field, &pos);
        if (pos != field.size()) throw std::invalid_argument(field);
        return v;
    } catch (const std::exception&) {
        throw ParseError("expected number, got '" + field + "'", offset);
    }
}

LayerSpec parse_conv_segment(const Segment& seg) {
    LayerSpec layer;
    layer.kind = LayerSpec::Kind::conv;
    const auto fields = split(seg.text.substr(5), ',');  // past "conv:"
    const std::size_t base = seg.offset + 5;

    const auto dims = split(fields[0].text, 'x');
    if (dims.size() != 3) {
        throw ParseError("conv layer needs <F>x<K>x<K>, got '" + fields[0].text + "'",
                         base + fields[0].offset);
    }
    layer.width = parse_int(dims[0].text, base + dims[0].offset);
    layer.kernel = parse_int(dims[1].text, base + dims[1].offset);
    const int k2 = parse_int(dims[2].text, base + dims[2].offset);
    if (layer.kernel != k2) {
        throw ParseError("conv kernel must be square", base + dims[2].offset);
    }
    if (layer.width < 1 || layer.kernel < 1) {
        throw ParseError("conv extents must be positive", base + fields[0].offset);
    }

    for (std::size_t i = 1; i < fields.size(); ++i) {
        const std::string& opt = fields[i].text;
        const std::size_t at = base + fields[i].offset;
        if (opt == "sbn") {
            if (layer.has_bn) throw ParseError("duplicate 'sbn'", at);
            layer.has_bn = true;
        } else if (opt == "pool") {
            if (layer.has_pool) throw ParseError("duplicate 'pool'", at);
            layer.has_pool = true;
        } else if (opt.rfind("drop", 0) == 0) {
            if (layer.dropout > 0.0) throw ParseError("duplicate 'drop'", at);
            layer.dropout = parse_real(opt.substr(4), at + 4);
            if (layer.dropout <= 0.0 || layer.dropout > 1.0) {
                throw ParseError("dropout p_keep must be in (0,1]", at + 4);
            }
        } else if (opt.size() > 1 && opt[0] == 's' &&
                   std::isdigit(static_cast<unsigned char>(opt[1]))) {
            layer.stride = parse_int(opt.substr(1), at + 1);
            if (layer.stride < 1) throw ParseError("stride must be positive", at + 1);
        } else {
            throw ParseError("unknown conv option '" + opt + "'", at);
        }
    }
    return layer;
}

LayerSpec parse_fc_segment(const Segment& seg) {
    LayerSpec layer;
    layer.kind = LayerSpec::Kind::fc;
    const auto fields = split(seg.text.substr(3), ',');  // past "fc:"
    const std::size_t base = seg.offset + 3;

    layer.width = parse_int(fields[0].text, base + fields[0].offset);
    if (layer.width < 1) throw ParseError("fc width must be positive", base + fields[0].offset);

    for (std::size_t i = 1; i < fields.size(); ++i) {
        const std::string& opt = fields[i].text;
        const std::size_t at = base + fields[i].offset;
        if (opt == "bn") {
            if (layer.has_bn) throw ParseError("duplicate 'bn'", at);
            layer.has_bn = true;
        } else if (opt.rfind("drop", 0) == 0) {
            if (layer.dropout > 0.0) throw ParseError("duplicate 'drop'", at);
            layer.dropout = parse_real(opt.substr(4), at + 4);
            if (layer.dropout <= 0.0 || layer.dropout > 1.0) {
                throw ParseError("dropout p_keep must be in (0,1]", at + 4);
            }
        } else if (opt == "pool") {
            throw ParseError("pool is not allowed on fc layers", at);
        } else {
            throw ParseError("unknown fc option '" + opt + "'", at);
        }
    }
    return layer;
}

std::uint64_t mix64(std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

std::uint64_t dropout_seed(std::uint64_t model_seed, std::uint64_t layer_tag,
                           std::uint64_t salt) {
    return mix64(model_seed ^ mix64(layer_tag ^ mix64(salt)));
}

std::string layer_name(const char* prefix, std::size_t index) {
    std::ostringstream os;
    os << prefix << (index + 1 < 10 ? "0" : "") << index + 1;
    return os.str();
}

Tensor take_columns(const Tensor& x, int first, int count) {
    const int n = x.extent(0), d = x.extent(1);
    Tensor out({n, count});
    for (int i = 0; i < n; ++i) {
        const double* src = x.data() + static_cast<std::size_t>(i) * d + first;
        std::copy(src, src + count, out.data() + static_cast<std::size_t>(i) * count);
    }
    return out;
}

constexpr int kDefaultHogDim = 900;

}  // namespace

ArchSpec parse_arch(const std::string& text) {
    ArchSpec spec;
    const auto segments = split(text, '|');
    enum Phase { conv_phase, fc_phase, tail_phase };
    Phase phase = conv_phase;
    bool saw_classes = false;

    for (std::size_t i = 0; i < segments.size(); ++i) {
        const Segment& seg = segments[i];
        if (seg.text.empty()) throw ParseError("empty segment", seg.offset);

        if (seg.text.rfind("conv:", 0) == 0) {
            if (phase != conv_phase) {
                throw ParseError("conv layer after fc layers", seg.offset);
            }
            spec.conv_layers.push_back(parse_conv_segment(seg));
        } else if (seg.text.rfind("fc:", 0) == 0) {
            if (phase == tail_phase) throw ParseError("fc layer after tail options", seg.offset);
            phase = fc_phase;
            spec.fc_layers.push_back(parse_fc_segment(seg));
        } else if (seg.text.rfind("classes:", 0) == 0) {
            if (saw_classes) throw ParseError("duplicate 'classes'", seg.offset);
            phase = tail_phase;
            saw_classes = true;
            spec.num_classes = parse_int(seg.text.substr(8), seg.offset + 8);
            if (spec.num_classes < 2) {
                throw ParseError("classes must be at least 2", seg.offset + 8);
            }
        } else if (seg.text == "hog") {
            if (i + 1 != segments.size()) throw ParseError("'hog' must be last", seg.offset);
            spec.hog_concat = true;
        } else {
            throw ParseError("unknown segment '" + seg.text + "'", seg.offset);
        }
    }

    if (spec.conv_layers.empty()) {
        throw ParseError("architecture needs at least one conv layer", 0);
    }
    return spec;
}

std::string arch_to_string(const ArchSpec& spec) {
    std::ostringstream os;
    bool first = true;
    auto sep = [&] {
        if (!first) os << '|';
        first = false;
    };
    for (const LayerSpec& l : spec.conv_layers) {
        sep();
        os << "conv:" << l.width << 'x' << l.kernel << 'x' << l.kernel;
        if (l.stride != 1) os << ",s" << l.stride;
        if (l.has_bn) os << ",sbn";
        if (l.dropout > 0.0) os << ",drop" << l.dropout;
        if (l.has_pool) os << ",pool";
    }
    for (const LayerSpec& l : spec.fc_layers) {
        sep();
        os << "fc:" << l.width;
        if (l.has_bn) os << ",bn";
        if (l.dropout > 0.0) os << ",drop" << l.dropout;
    }
    if (spec.num_classes != 7) {
        sep();
        os << "classes:" << spec.num_classes;
    }
    if (spec.hog_concat) {
        sep();
        os << "hog";
    }
    return os.str();
}

Model build_model(const ArchSpec& spec, std::uint64_t seed, int hog_dim, int input_h,
                  int input_w) {
    if (spec.conv_layers.empty()) throw ConfigError("model needs at least one conv layer");
    if (spec.num_classes < 2) throw ConfigError("model needs at least two classes");

    Model m;
    m.spec = spec;
    m.seed = seed;
    m.input_h = input_h;
    m.input_w = input_w;
    m.hog_dim = spec.hog_concat ? (hog_dim < 0 ? kDefaultHogDim : hog_dim) : 0;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, 1.0);
    auto he_fill = [&](Tensor& t, int fan_in) {
        const double stddev = std::sqrt(2.0 / fan_in);
        for (std::int64_t i = 0; i < t.size(); ++i) t[i] = gauss(rng) * stddev;
    };

    int c = m.input_channels, h = input_h, w = input_w;
    for (const LayerSpec& l : spec.conv_layers) {
        ConvLayer layer;
        layer.spec = l;
        const int pad = l.kernel / 2;  // "same" padding for odd kernels at stride 1
        const int oh = conv_out_extent(h, l.kernel, l.stride, pad);
        const int ow = conv_out_extent(w, l.kernel, l.stride, pad);
        layer.params.stride = l.stride;
        layer.params.pad = pad;
        layer.params.weights = Tensor({l.width, c, l.kernel, l.kernel});
        he_fill(layer.params.weights, c * l.kernel * l.kernel);
        layer.params.bias = Tensor({l.width}, 0.0);
        if (l.has_bn) layer.bn = BatchNormState::make(l.width);
        c = l.width;
        h = oh;
        w = ow;
        if (l.has_pool) {
            if (h % 2 != 0 || w % 2 != 0) {
                throw ConfigError("pooling needs even spatial extent, got " + std::to_string(h) +
                                  "x" + std::to_string(w));
            }
            h /= 2;
            w /= 2;
        }
        if (h < 1 || w < 1) throw ConfigError("conv stack shrinks spatial extent to zero");
        m.conv.push_back(std::move(layer));
    }

    m.conv_out_chw = {c, h, w};
    m.conv_out_width = c * h * w;

    int in_width = m.conv_out_width + m.hog_dim;
    for (const LayerSpec& l : spec.fc_layers) {
        FcLayer layer;
        layer.spec = l;
        layer.weights = Tensor({in_width, l.width});
        he_fill(layer.weights, in_width);
        layer.bias = Tensor({l.width}, 0.0);
        if (l.has_bn) layer.bn = BatchNormState::make(l.width);
        in_width = l.width;
        m.fc.push_back(std::move(layer));
    }

    // small-scale init for the classifier so an untrained model scores near
    // uniform and the initial loss lands at ln(num_classes)
    m.final_w = Tensor({in_width, spec.num_classes});
    for (std::int64_t i = 0; i < m.final_w.size(); ++i) m.final_w[i] = gauss(rng) * 1e-3;
    m.final_b = Tensor({spec.num_classes}, 0.0);
    return m;
}

std::map<std::string, Tensor*> Model::param_map() {
    std::map<std::string, Tensor*> out;
    for (std::size_t i = 0; i < conv.size(); ++i) {
        const std::string base = layer_name("conv", i);
        out[base + "_w"] = &conv[i].params.weights;
        out[base + "_b"] = &conv[i].params.bias;
        if (conv[i].spec.has_bn) {
            out[base + "_gamma"] = &conv[i].bn.gamma;
            out[base + "_beta"] = &conv[i].bn.beta;
        }
    }
    for (std::size_t i = 0; i < fc.size(); ++i) {
        const std::string base = layer_name("fc", i);
        out[base + "_w"] = &fc[i].weights;
        out[base + "_b"] = &fc[i].bias;
        if (fc[i].spec.has_bn) {
            out[base + "_gamma"] = &fc[i].bn.gamma;
            out[base + "_beta"] = &fc[i].bn.beta;
        }
    }
    out["final_w"] = &final_w;
    out["final_b"] = &final_b;
    return out;
}

std::map<std::string, const Tensor*> Model::param_map() const {
    std::map<std::string, const Tensor*> out;
    for (auto& [name, tensor] : const_cast<Model*>(this)->param_map()) out[name] = tensor;
    return out;
}

std::map<std::string, Tensor*> Model::buffer_map() {
    std::map<std::string, Tensor*> out;
    for (std::size_t i = 0; i < conv.size(); ++i) {
        if (!conv[i].spec.has_bn) continue;
        const std::string base = layer_name("conv", i);
        out[base + "_running_mean"] = &conv[i].bn.running_mean;
        out[base + "_running_var"] = &conv[i].bn.running_var;
    }
    for (std::size_t i = 0; i < fc.size(); ++i) {
        if (!fc[i].spec.has_bn) continue;
        const std::string base = layer_name("fc", i);
        out[base + "_running_mean"] = &fc[i].bn.running_mean;
        out[base + "_running_var"] = &fc[i].bn.running_var;
    }
    return out;
}

std::map<std::string, const Tensor*> Model::buffer_map() const {
    std::map<std::string, const Tensor*> out;
    for (auto& [name, tensor] : const_cast<Model*>(this)->buffer_map()) out[name] = tensor;
    return out;
}

std::int64_t Model::param_count() const {
    std::int64_t n = 0;
    for (auto& [name, tensor] : param_map()) n += tensor->size();
    return n;
}

namespace {

void check_forward_inputs(const Model& m, const Tensor& x, const Tensor* hog) {
    if (x.rank() != 4 || x.extent(1) != m.input_channels) {
        throw ShapeError("model input must be [N," + std::to_string(m.input_channels) +
                         ",H,W], got " + x.shape_str());
    }
    if (m.spec.hog_concat) {
        if (!hog) throw ShapeError("model expects hog features, none given");
        if (hog->rank() != 2 || hog->extent(0) != x.extent(0) ||
            hog->extent(1) != m.hog_dim) {
            throw ShapeError("hog features must be [" + std::to_string(x.extent(0)) + "," +
                             std::to_string(m.hog_dim) + "], got " + hog->shape_str());
        }
    } else if (hog) {
        throw ShapeError("model does not take hog features");
    }
}

}  // namespace

Tensor forward_eval(const Model& m, const Tensor& x, const Tensor* hog) {
    check_forward_inputs(m, x, hog);
    Tensor cur = x;
    for (const ConvLayer& layer : m.conv) {
        cur = conv2d_forward(cur, layer.params);
        if (layer.spec.has_bn) cur = spatial_batchnorm_eval(cur, layer.bn);
        cur = relu_forward(cur);
        if (layer.spec.has_pool) cur = maxpool2x2_forward(cur);
    }
    const int n = cur.extent(0);
    Tensor flat = cur.reshaped({n, m.conv_out_width});
    if (m.spec.hog_concat) flat = concat_features(flat, *hog);
    for (const FcLayer& layer : m.fc) {
        flat = affine_forward(flat, layer.weights, layer.bias);
        if (layer.spec.has_bn) flat = batchnorm_eval(flat, layer.bn);
        flat = relu_forward(flat);
    }
    return affine_forward(flat, m.final_w, m.final_b);
}

Tensor forward(Model& m, const Tensor& x, const Tensor* hog, Mode mode,
               std::uint64_t dropout_salt, Caches* caches) {
    if (mode == Mode::eval) return forward_eval(m, x, hog);
    check_forward_inputs(m, x, hog);

    if (caches) {
        caches->conv_blocks.assign(m.conv.size(), {});
        caches->fc_blocks.assign(m.fc.size(), {});
        caches->batch = x.extent(0);
    }

    Tensor cur = x;
    for (std::size_t i = 0; i < m.conv.size(); ++i) {
        ConvLayer& layer = m.conv[i];
        Caches::ConvBlock* blk = caches ? &caches->conv_blocks[i] : nullptr;
        cur = conv2d_forward(cur, layer.params, blk ? &blk->conv : nullptr);
        if (layer.spec.has_bn) {
            cur = spatial_batchnorm_forward(cur, layer.bn, Mode::train,
                                            blk ? &blk->bn : nullptr);
        }
        cur = relu_forward(cur, blk ? &blk->relu : nullptr);
        if (layer.spec.dropout > 0.0) {
            DropoutConfig cfg{layer.spec.dropout, Mode::train,
                              dropout_seed(m.seed, i, dropout_salt)};
            cur = dropout_forward(cur, cfg, blk ? &blk->drop : nullptr);
        }
        if (layer.spec.has_pool) cur = maxpool2x2_forward(cur, blk ? &blk->pool : nullptr);
    }

    const int n = cur.extent(0);
    Tensor flat = cur.reshaped({n, m.conv_out_width});
    if (m.spec.hog_concat) flat = concat_features(flat, *hog);
    if (caches) caches->conv_flat_shape = {n, m.conv_out_width};

    for (std::size_t i = 0; i < m.fc.size(); ++i) {
        FcLayer& layer = m.fc[i];
        Caches::FcBlock* blk = caches ? &caches->fc_blocks[i] : nullptr;
        flat = affine_forward(flat, layer.weights, layer.bias, blk ? &blk->affine : nullptr);
        if (layer.spec.has_bn) {
            flat = batchnorm_forward(flat, layer.bn, Mode::train, blk ? &blk->bn : nullptr);
        }
        flat = relu_forward(flat, blk ? &blk->relu : nullptr);
        if (layer.spec.dropout > 0.0) {
            DropoutConfig cfg{layer.spec.dropout, Mode::train,
                              dropout_seed(m.seed, 1000 + i, dropout_salt)};
            flat = dropout_forward(flat, cfg, blk ? &blk->drop : nullptr);
        }
    }

    Tensor scores =
        affine_forward(flat, m.final_w, m.final_b, caches ? &caches->final_affine : nullptr);
    if (caches) caches->valid = true;
    return scores;
}

GradMap backward(const Model& m, const Tensor& dscores, Caches& caches) {
    if (!caches.valid) {
        throw UsageError("backward needs the caches of the immediately preceding forward");
    }
    caches.valid = false;

    GradMap g;
    AffineGrads fg = affine_backward(dscores, caches.final_affine);
    g["final_w"] = std::move(fg.dweights);
    g["final_b"] = std::move(fg.dbias);
    Tensor cur = std::move(fg.dx);

    for (std::size_t ri = m.fc.size(); ri-- > 0;) {
        const FcLayer& layer = m.fc[ri];
        Caches::FcBlock& blk = caches.fc_blocks[ri];
        const std::string base = layer_name("fc", ri);
        if (layer.spec.dropout > 0.0) cur = dropout_backward(cur, blk.drop);
        cur = relu_backward(cur, blk.relu);
        if (layer.spec.has_bn) {
            BnGrads bg = batchnorm_backward(cur, blk.bn);
            g[base + "_gamma"] = std::move(bg.dgamma);
            g[base + "_beta"] = std::move(bg.dbeta);
            cur = std::move(bg.dx);
        }
        AffineGrads ag = affine_backward(cur, blk.affine);
        g[base + "_w"] = std::move(ag.dweights);
        g[base + "_b"] = std::move(ag.dbias);
        cur = std::move(ag.dx);
    }

    // hog features are constants; only the conv slice of the concat flows back
    if (m.spec.hog_concat) cur = take_columns(cur, 0, m.conv_out_width);
    cur = cur.reshaped({caches.batch, m.conv_out_chw[0], m.conv_out_chw[1], m.conv_out_chw[2]});

    for (std::size_t ri = m.conv.size(); ri-- > 0;) {
        const ConvLayer& layer = m.conv[ri];
        Caches::ConvBlock& blk = caches.conv_blocks[ri];
        const std::string base = layer_name("conv", ri);
        if (layer.spec.has_pool) cur = maxpool2x2_backward(cur, blk.pool);
        if (layer.spec.dropout > 0.0) cur = dropout_backward(cur, blk.drop);
        cur = relu_backward(cur, blk.relu);
        if (layer.spec.has_bn) {
            BnGrads bg = spatial_batchnorm_backward(cur, blk.bn);
            g[base + "_gamma"] = std::move(bg.dgamma);
            g[base + "_beta"] = std::move(bg.dbeta);
            cur = std::move(bg.dx);
        }
        ConvGrads cg = conv2d_backward(cur, blk.conv);
        g[base + "_w"] = std::move(cg.dweights);
        g[base + "_b"] = std::move(cg.dbias);
        cur = std::move(cg.dx);
    }
    return g;
}

}  // namespace ecnn

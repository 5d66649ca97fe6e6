#include "ecnn/layers.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

#include "ecnn/errors.hpp"

namespace ecnn {

namespace {

// fixed-partition parallel loop that also hands the worker index to the body,
// for per-worker accumulator buffers
void for_worker_ranges(std::int64_t n,
                       const std::function<void(int, std::int64_t, std::int64_t)>& body,
                       int workers) {
    workers = static_cast<int>(std::min<std::int64_t>(workers, n));
    if (workers <= 1) {
        if (n > 0) body(0, 0, n);
        return;
    }
    const std::int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    for (int t = 1; t < workers; ++t) {
        const std::int64_t lo = t * chunk;
        const std::int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, t, lo, hi] { body(t, lo, hi); });
    }
    body(0, 0, std::min(n, chunk));
    for (auto& th : pool) th.join();
}

// gather one sample's receptive fields into cols [C*HH*WW, OH*OW],
// zero-padding out-of-range reads
void im2col(const double* x, int c, int h, int w, int hh, int ww, int stride, int pad,
            int oh, int ow, double* cols) {
    for (int ic = 0; ic < c; ++ic) {
        for (int a = 0; a < hh; ++a) {
            for (int b = 0; b < ww; ++b) {
                double* row = cols + (static_cast<std::size_t>(ic) * hh * ww + a * ww + b) *
                                         (static_cast<std::size_t>(oh) * ow);
                for (int i = 0; i < oh; ++i) {
                    const int ih = i * stride + a - pad;
                    if (ih < 0 || ih >= h) {
                        std::fill(row + static_cast<std::size_t>(i) * ow,
                                  row + static_cast<std::size_t>(i) * ow + ow, 0.0);
                        continue;
                    }
                    const double* xrow = x + (static_cast<std::size_t>(ic) * h + ih) * w;
                    for (int j = 0; j < ow; ++j) {
                        const int iw = j * stride + b - pad;
                        row[static_cast<std::size_t>(i) * ow + j] =
                            (iw >= 0 && iw < w) ? xrow[iw] : 0.0;
                    }
                }
            }
        }
    }
}

// scatter-add of dcols back onto one sample's dx
void col2im(const double* dcols, int c, int h, int w, int hh, int ww, int stride, int pad,
            int oh, int ow, double* dx) {
    for (int ic = 0; ic < c; ++ic) {
        for (int a = 0; a < hh; ++a) {
            for (int b = 0; b < ww; ++b) {
                const double* row = dcols + (static_cast<std::size_t>(ic) * hh * ww + a * ww + b) *
                                                (static_cast<std::size_t>(oh) * ow);
                for (int i = 0; i < oh; ++i) {
                    const int ih = i * stride + a - pad;
                    if (ih < 0 || ih >= h) continue;
                    double* xrow = dx + (static_cast<std::size_t>(ic) * h + ih) * w;
                    for (int j = 0; j < ow; ++j) {
                        const int iw = j * stride + b - pad;
                        if (iw >= 0 && iw < w) xrow[iw] += row[static_cast<std::size_t>(i) * ow + j];
                    }
                }
            }
        }
    }
}

}  // namespace

int conv_out_extent(int in, int kernel, int stride, int pad) {
    const int span = in + 2 * pad - kernel;
    if (span < 0 || span % stride != 0) {
        throw ConfigError("conv output extent not integral: in=" + std::to_string(in) +
                          " kernel=" + std::to_string(kernel) + " stride=" +
                          std::to_string(stride) + " pad=" + std::to_string(pad));
    }
    return 1 + span / stride;
}

Tensor conv2d_forward(const Tensor& x, const ConvParams& p, ConvCache* cache) {
    if (x.rank() != 4) throw ShapeError("conv2d input must be rank 4, got " + x.shape_str());
    if (p.weights.rank() != 4) throw ShapeError("conv weights must be rank 4");
    const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const int f = p.weights.extent(0), wc = p.weights.extent(1);
    const int hh = p.weights.extent(2), ww = p.weights.extent(3);
    if (wc != c) {
        throw ShapeError("conv channels mismatch: input " + x.shape_str() + " vs weights " +
                         p.weights.shape_str());
    }
    if (p.bias.rank() != 1 || p.bias.extent(0) != f) throw ShapeError("conv bias must be [F]");
    const int oh = conv_out_extent(h, hh, p.stride, p.pad);
    const int ow = conv_out_extent(w, ww, p.stride, p.pad);

    Tensor out({n, f, oh, ow});
    const int ckk = c * hh * ww;
    const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;

    parallel_for(n, [&](std::int64_t lo, std::int64_t hi) {
        std::vector<double> cols(static_cast<std::size_t>(ckk) * ohw);
        for (std::int64_t s = lo; s < hi; ++s) {
            const double* xs = x.data() + s * c * h * w;
            double* os = out.data() + s * f * ohw;
            im2col(xs, c, h, w, hh, ww, p.stride, p.pad, oh, ow, cols.data());
            for (int fi = 0; fi < f; ++fi) {
                std::fill(os + fi * ohw, os + (fi + 1) * ohw, p.bias[fi]);
            }
            detail::gemm_nn(p.weights.data(), ckk, cols.data(), static_cast<int>(ohw), os,
                            static_cast<int>(ohw), f, ckk, static_cast<int>(ohw));
        }
    });

    if (cache) {
        cache->x = x;
        cache->weights = p.weights;
        cache->stride = p.stride;
        cache->pad = p.pad;
    }
    return out;
}

ConvGrads conv2d_backward(const Tensor& dout, const ConvCache& cache) {
    const Tensor& x = cache.x;
    const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    const int f = cache.weights.extent(0);
    const int hh = cache.weights.extent(2), ww = cache.weights.extent(3);
    const int oh = dout.extent(2), ow = dout.extent(3);
    if (dout.rank() != 4 || dout.extent(0) != n || dout.extent(1) != f) {
        throw ShapeError("conv backward dout shape mismatch: " + dout.shape_str());
    }
    const int ckk = c * hh * ww;
    const std::int64_t ohw = static_cast<std::int64_t>(oh) * ow;

    ConvGrads g;
    g.dx = Tensor(x.shape());
    g.dweights = Tensor(cache.weights.shape());
    g.dbias = Tensor({f});

    const int workers = intraop_threads();
    std::vector<std::vector<double>> dw_parts(static_cast<std::size_t>(workers),
                                              std::vector<double>(static_cast<std::size_t>(f) * ckk, 0.0));
    std::vector<std::vector<double>> db_parts(static_cast<std::size_t>(workers),
                                              std::vector<double>(static_cast<std::size_t>(f), 0.0));

    for_worker_ranges(
        n,
        [&](int worker, std::int64_t lo, std::int64_t hi) {
            std::vector<double> cols(static_cast<std::size_t>(ckk) * ohw);
            std::vector<double> dcols(static_cast<std::size_t>(ckk) * ohw);
            double* dwp = dw_parts[static_cast<std::size_t>(worker)].data();
            double* dbp = db_parts[static_cast<std::size_t>(worker)].data();
            for (std::int64_t s = lo; s < hi; ++s) {
                const double* xs = x.data() + s * c * h * w;
                const double* ds = dout.data() + s * f * ohw;
                im2col(xs, c, h, w, hh, ww, cache.stride, cache.pad, oh, ow, cols.data());
                // dW += dout_s cols^T, db += row sums
                detail::gemm_nt(ds, static_cast<int>(ohw), cols.data(), static_cast<int>(ohw),
                                dwp, ckk, f, static_cast<int>(ohw), ckk);
                for (int fi = 0; fi < f; ++fi) {
                    double acc = 0.0;
                    const double* dr = ds + fi * ohw;
                    for (std::int64_t j = 0; j < ohw; ++j) acc += dr[j];
                    dbp[fi] += acc;
                }
                // dcols = W^T dout_s, scattered back to dx
                std::fill(dcols.begin(), dcols.end(), 0.0);
                detail::gemm_tn(cache.weights.data(), ckk, ds, static_cast<int>(ohw),
                                dcols.data(), static_cast<int>(ohw), ckk, f,
                                static_cast<int>(ohw));
                col2im(dcols.data(), c, h, w, hh, ww, cache.stride, cache.pad, oh, ow,
                       g.dx.data() + s * c * h * w);
            }
        },
        workers);

    // reduce per-worker partials in worker order
    for (int t = 0; t < workers; ++t) {
        const auto& dwp = dw_parts[static_cast<std::size_t>(t)];
        const auto& dbp = db_parts[static_cast<std::size_t>(t)];
        for (std::size_t i = 0; i < dwp.size(); ++i) g.dweights[static_cast<std::int64_t>(i)] += dwp[i];
        for (std::size_t i = 0; i < dbp.size(); ++i) g.dbias[static_cast<std::int64_t>(i)] += dbp[i];
    }
    return g;
}

Tensor relu_forward(const Tensor& x, ReluCache* cache) {
    Tensor out(x.shape());
    const std::int64_t n = x.size();
    if (cache) {
        cache->positive.assign(static_cast<std::size_t>(n), 0);
        cache->shape = x.shape();
    }
    for (std::int64_t i = 0; i < n; ++i) {
        const double v = x[i];
        if (v > 0.0) {
            out[i] = v;
            if (cache) cache->positive[static_cast<std::size_t>(i)] = 1;
        }
    }
    return out;
}

Tensor relu_backward(const Tensor& dout, const ReluCache& cache) {
    if (dout.shape() != cache.shape) throw UsageError("relu backward shape mismatch");
    Tensor dx(dout.shape());
    for (std::int64_t i = 0; i < dout.size(); ++i) {
        if (cache.positive[static_cast<std::size_t>(i)]) dx[i] = dout[i];
    }
    return dx;
}

Tensor maxpool2x2_forward(const Tensor& x, PoolCache* cache) {
    if (x.rank() != 4) throw ShapeError("maxpool input must be rank 4");
    const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    if (h % 2 != 0 || w % 2 != 0) {
        throw ShapeError("maxpool2x2 needs even spatial extents, got " + x.shape_str());
    }
    const int oh = h / 2, ow = w / 2;
    Tensor out({n, c, oh, ow});
    if (cache) {
        cache->argmax.assign(static_cast<std::size_t>(out.size()), 0);
        cache->in_shape = x.shape();
    }
    std::int64_t oidx = 0;
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const double* plane = x.data() + (static_cast<std::size_t>(in) * c + ic) * h * w;
            const std::int64_t base = (static_cast<std::int64_t>(in) * c + ic) * h * w;
            for (int i = 0; i < oh; ++i)
                for (int j = 0; j < ow; ++j, ++oidx) {
                    // first element in row-major scan order wins ties
                    int bi = 2 * i, bj = 2 * j;
                    double best = plane[bi * w + bj];
                    for (int a = 0; a < 2; ++a)
                        for (int b = 0; b < 2; ++b) {
                            const double v = plane[(2 * i + a) * w + 2 * j + b];
                            if (v > best) {
                                best = v;
                                bi = 2 * i + a;
                                bj = 2 * j + b;
                            }
                        }
                    out[oidx] = best;
                    if (cache) {
                        cache->argmax[static_cast<std::size_t>(oidx)] =
                            static_cast<std::int32_t>(base + bi * w + bj);
                    }
                }
        }
    return out;
}

Tensor maxpool2x2_backward(const Tensor& dout, const PoolCache& cache) {
    if (static_cast<std::size_t>(dout.size()) != cache.argmax.size()) {
        throw UsageError("maxpool backward cache mismatch");
    }
    Tensor dx(cache.in_shape);
    for (std::int64_t i = 0; i < dout.size(); ++i) {
        dx[cache.argmax[static_cast<std::size_t>(i)]] += dout[i];
    }
    return dx;
}

BatchNormState BatchNormState::make(int d, double momentum, double eps) {
    BatchNormState s;
    s.gamma = Tensor({d}, 1.0);
    s.beta = Tensor({d}, 0.0);
    s.running_mean = Tensor({d}, 0.0);
    s.running_var = Tensor({d}, 0.0);
    s.momentum = momentum;
    s.eps = eps;
    return s;
}

Tensor batchnorm_forward(const Tensor& x, BatchNormState& s, Mode mode, BnCache* cache) {
    if (mode == Mode::eval) return batchnorm_eval(x, s);
    if (x.rank() != 2) throw ShapeError("batchnorm input must be [N,D]");
    const int n = x.extent(0), d = x.extent(1);
    if (n < 2) throw ConfigError("batchnorm train mode needs N >= 2, got N=" + std::to_string(n));
    if (s.gamma.extent(0) != d) throw ShapeError("batchnorm state width mismatch");

    Tensor mean({d}, 0.0), var({d}, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* row = x.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) mean[j] += row[j];
    }
    for (int j = 0; j < d; ++j) mean[j] /= n;
    for (int i = 0; i < n; ++i) {
        const double* row = x.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            const double dv = row[j] - mean[j];
            var[j] += dv * dv;
        }
    }
    for (int j = 0; j < d; ++j) var[j] /= n;  // biased variance

    Tensor ivar({d});
    for (int j = 0; j < d; ++j) ivar[j] = 1.0 / std::sqrt(var[j] + s.eps);

    Tensor xhat({n, d}), out({n, d});
    for (int i = 0; i < n; ++i) {
        const double* row = x.data() + static_cast<std::size_t>(i) * d;
        double* xh = xhat.data() + static_cast<std::size_t>(i) * d;
        double* o = out.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            xh[j] = (row[j] - mean[j]) * ivar[j];
            o[j] = s.gamma[j] * xh[j] + s.beta[j];
        }
    }

    for (int j = 0; j < d; ++j) {
        s.running_mean[j] = s.momentum * s.running_mean[j] + (1.0 - s.momentum) * mean[j];
        s.running_var[j] = s.momentum * s.running_var[j] + (1.0 - s.momentum) * var[j];
    }

    if (cache) {
        cache->xhat = std::move(xhat);
        cache->ivar = std::move(ivar);
        cache->gamma = s.gamma;
        cache->x_shape = x.shape();
    }
    return out;
}

Tensor batchnorm_eval(const Tensor& x, const BatchNormState& s) {
    if (x.rank() != 2) throw ShapeError("batchnorm input must be [N,D]");
    const int n = x.extent(0), d = x.extent(1);
    if (s.gamma.extent(0) != d) throw ShapeError("batchnorm state width mismatch");
    Tensor out({n, d});
    std::vector<double> scale(static_cast<std::size_t>(d)), shift(static_cast<std::size_t>(d));
    for (int j = 0; j < d; ++j) {
        const double iv = 1.0 / std::sqrt(s.running_var[j] + s.eps);
        scale[static_cast<std::size_t>(j)] = s.gamma[j] * iv;
        shift[static_cast<std::size_t>(j)] = s.beta[j] - s.gamma[j] * iv * s.running_mean[j];
    }
    for (int i = 0; i < n; ++i) {
        const double* row = x.data() + static_cast<std::size_t>(i) * d;
        double* o = out.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            o[j] = scale[static_cast<std::size_t>(j)] * row[j] + shift[static_cast<std::size_t>(j)];
        }
    }
    return out;
}

BnGrads batchnorm_backward(const Tensor& dout, const BnCache& cache) {
    const int n = dout.extent(0), d = dout.extent(1);
    if (!dout.same_shape(cache.xhat)) throw UsageError("batchnorm backward cache mismatch");

    BnGrads g;
    g.dgamma = Tensor({d}, 0.0);
    g.dbeta = Tensor({d}, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* dr = dout.data() + static_cast<std::size_t>(i) * d;
        const double* xh = cache.xhat.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            g.dgamma[j] += dr[j] * xh[j];
            g.dbeta[j] += dr[j];
        }
    }

    // dxhat = dout * gamma;
    // dx = ivar/N * (N*dxhat - sum(dxhat) - xhat * sum(dxhat*xhat))
    g.dx = Tensor({n, d});
    for (int i = 0; i < n; ++i) {
        const double* dr = dout.data() + static_cast<std::size_t>(i) * d;
        const double* xh = cache.xhat.data() + static_cast<std::size_t>(i) * d;
        double* dx = g.dx.data() + static_cast<std::size_t>(i) * d;
        for (int j = 0; j < d; ++j) {
            const double gj = cache.gamma[j];
            dx[j] = (cache.ivar[j] / n) *
                    (n * gj * dr[j] - gj * g.dbeta[j] - xh[j] * gj * g.dgamma[j]);
        }
    }
    return g;
}

Tensor nchw_to_rows(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("nchw_to_rows needs rank-4 input");
    const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    Tensor rows({n * h * w, c});
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            const double* plane = x.data() + (static_cast<std::size_t>(in) * c + ic) * h * w;
            double* base = rows.data() + static_cast<std::size_t>(in) * h * w * c + ic;
            for (int p = 0; p < h * w; ++p) base[static_cast<std::size_t>(p) * c] = plane[p];
        }
    return rows;
}

Tensor rows_to_nchw(const Tensor& rows, const std::vector<int>& nchw_shape) {
    const int n = nchw_shape[0], c = nchw_shape[1], h = nchw_shape[2], w = nchw_shape[3];
    if (rows.rank() != 2 || rows.extent(0) != n * h * w || rows.extent(1) != c) {
        throw ShapeError("rows_to_nchw shape mismatch");
    }
    Tensor x(nchw_shape);
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic) {
            double* plane = x.data() + (static_cast<std::size_t>(in) * c + ic) * h * w;
            const double* base = rows.data() + static_cast<std::size_t>(in) * h * w * c + ic;
            for (int p = 0; p < h * w; ++p) plane[p] = base[static_cast<std::size_t>(p) * c];
        }
    return x;
}

Tensor spatial_batchnorm_forward(const Tensor& x, BatchNormState& s, Mode mode, BnCache* cache) {
    if (x.rank() != 4) throw ShapeError("spatial batchnorm input must be [N,C,H,W]");
    const Tensor rows = nchw_to_rows(x);
    const Tensor out_rows = batchnorm_forward(rows, s, mode, cache);
    if (cache) cache->x_shape = x.shape();
    return rows_to_nchw(out_rows, x.shape());
}

Tensor spatial_batchnorm_eval(const Tensor& x, const BatchNormState& s) {
    if (x.rank() != 4) throw ShapeError("spatial batchnorm input must be [N,C,H,W]");
    return rows_to_nchw(batchnorm_eval(nchw_to_rows(x), s), x.shape());
}

BnGrads spatial_batchnorm_backward(const Tensor& dout, const BnCache& cache) {
    if (dout.rank() != 4) throw ShapeError("spatial batchnorm dout must be [N,C,H,W]");
    BnGrads g = batchnorm_backward(nchw_to_rows(dout), cache);
    g.dx = rows_to_nchw(g.dx, dout.shape());
    return g;
}

Tensor dropout_forward(const Tensor& x, const DropoutConfig& cfg, DropoutCache* cache) {
    if (cfg.p_keep <= 0.0 || cfg.p_keep > 1.0) {
        throw ConfigError("dropout p_keep must be in (0,1], got " + std::to_string(cfg.p_keep));
    }
    if (cache) {
        cache->p_keep = cfg.p_keep;
        cache->keep.clear();
    }
    if (cfg.mode == Mode::eval || cfg.p_keep == 1.0) return x;

    Tensor out(x.shape());
    std::mt19937_64 rng(cfg.rng_seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double inv = 1.0 / cfg.p_keep;
    if (cache) cache->keep.assign(static_cast<std::size_t>(x.size()), 0);
    for (std::int64_t i = 0; i < x.size(); ++i) {
        if (uni(rng) < cfg.p_keep) {
            out[i] = x[i] * inv;
            if (cache) cache->keep[static_cast<std::size_t>(i)] = 1;
        }
    }
    return out;
}

Tensor dropout_backward(const Tensor& dout, const DropoutCache& cache) {
    if (cache.keep.empty()) return dout;  // identity forward
    if (static_cast<std::size_t>(dout.size()) != cache.keep.size()) {
        throw UsageError("dropout backward cache mismatch");
    }
    Tensor dx(dout.shape());
    const double inv = 1.0 / cache.p_keep;
    for (std::int64_t i = 0; i < dout.size(); ++i) {
        if (cache.keep[static_cast<std::size_t>(i)]) dx[i] = dout[i] * inv;
    }
    return dx;
}

Tensor affine_forward(const Tensor& x, const Tensor& w, const Tensor& b, AffineCache* cache) {
    if (x.rank() < 2) throw ShapeError("affine input must have a leading batch axis");
    if (w.rank() != 2) throw ShapeError("affine weights must be [D,H]");
    const int n = x.extent(0);
    const std::int64_t d64 = x.size() / n;
    const int d = w.extent(0), h = w.extent(1);
    if (d64 != d) {
        throw ShapeError("affine input width " + std::to_string(d64) + " does not match weights " +
                         w.shape_str());
    }
    if (b.rank() != 1 || b.extent(0) != h) throw ShapeError("affine bias must be [H]");

    Tensor x_flat = x.reshaped({n, d});
    Tensor out({n, h});
    for (int i = 0; i < n; ++i) {
        std::copy(b.data(), b.data() + h, out.data() + static_cast<std::size_t>(i) * h);
    }
    detail::pgemm_nn(x_flat.data(), w.data(), out.data(), n, d, h);

    if (cache) {
        cache->x_shape = x.shape();
        cache->weights = w;
        cache->x_flat = std::move(x_flat);
    }
    return out;
}

AffineGrads affine_backward(const Tensor& dout, const AffineCache& cache) {
    const int n = cache.x_flat.extent(0), d = cache.x_flat.extent(1);
    const int h = cache.weights.extent(1);
    if (dout.rank() != 2 || dout.extent(0) != n || dout.extent(1) != h) {
        throw UsageError("affine backward dout shape mismatch");
    }
    AffineGrads g;
    Tensor dx_flat({n, d});
    detail::pgemm_nt(dout.data(), cache.weights.data(), dx_flat.data(), n, h, d);
    g.dx = dx_flat.reshaped(cache.x_shape);
    g.dweights = Tensor({d, h});
    detail::pgemm_tn(cache.x_flat.data(), dout.data(), g.dweights.data(), d, n, h);
    g.dbias = Tensor({h}, 0.0);
    for (int i = 0; i < n; ++i) {
        const double* dr = dout.data() + static_cast<std::size_t>(i) * h;
        for (int j = 0; j < h; ++j) g.dbias[j] += dr[j];
    }
    return g;
}

SoftmaxResult softmax_loss(const Tensor& scores, const std::vector<int>& labels) {
    if (scores.rank() != 2) throw ShapeError("softmax_loss scores must be [N,K]");
    const int n = scores.extent(0), k = scores.extent(1);
    if (static_cast<int>(labels.size()) != n) {
        throw DataError("softmax_loss got " + std::to_string(labels.size()) + " labels for " +
                        std::to_string(n) + " rows");
    }
    for (int i = 0; i < n; ++i) {
        if (labels[static_cast<std::size_t>(i)] < 0 || labels[static_cast<std::size_t>(i)] >= k) {
            throw DataError("label " + std::to_string(labels[static_cast<std::size_t>(i)]) +
                            " out of range [0," + std::to_string(k) + ") at row " +
                            std::to_string(i));
        }
    }

    SoftmaxResult r;
    r.dscores = Tensor({n, k});
    double loss = 0.0;
    for (int i = 0; i < n; ++i) {
        const double* row = scores.data() + static_cast<std::size_t>(i) * k;
        double* drow = r.dscores.data() + static_cast<std::size_t>(i) * k;
        const double mx = *std::max_element(row, row + k);
        double sum = 0.0;
        for (int j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
        const int y = labels[static_cast<std::size_t>(i)];
        loss += -(row[y] - mx) + std::log(sum);
        for (int j = 0; j < k; ++j) {
            const double p = std::exp(row[j] - mx) / sum;
            drow[j] = (p - (j == y ? 1.0 : 0.0)) / n;
        }
    }
    r.loss = loss / n;
    return r;
}

}  // namespace ecnn

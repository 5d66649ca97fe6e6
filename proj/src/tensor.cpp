#include "ecnn/tensor.hpp"

#include <algorithm>
#include <cstdlib>
#include <sstream>
#include <thread>

#include "ecnn/errors.hpp"

namespace ecnn {

std::int64_t Tensor::shape_product(const std::vector<int>& shape) {
    std::int64_t n = 1;
    for (int e : shape) n *= e;
    return n;
}

Tensor::Tensor(std::vector<int> shape, double fill) : shape_(std::move(shape)) {
    if (shape_.empty()) throw ShapeError("tensor shape must be non-empty");
    for (int e : shape_) {
        if (e < 0) throw ShapeError("negative extent in shape " + shape_str());
    }
    data_.assign(static_cast<std::size_t>(shape_product(shape_)), fill);
}

Tensor::Tensor(std::vector<int> shape, std::vector<double> values) : shape_(std::move(shape)) {
    if (shape_.empty()) throw ShapeError("tensor shape must be non-empty");
    for (int e : shape_) {
        if (e < 0) throw ShapeError("negative extent in shape " + shape_str());
    }
    if (shape_product(shape_) != static_cast<std::int64_t>(values.size())) {
        throw ShapeError("value list has " + std::to_string(values.size()) + " entries, shape " +
                         shape_str() + " needs " + std::to_string(shape_product(shape_)));
    }
    data_ = std::move(values);
}

Tensor Tensor::reshaped(std::vector<int> new_shape) const {
    if (shape_product(new_shape) != size()) {
        throw ShapeError("cannot reshape " + shape_str() + " to new element count");
    }
    Tensor out;
    out.shape_ = std::move(new_shape);
    out.data_ = data_;
    return out;
}

std::string Tensor::shape_str() const {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape_.size(); ++i) {
        if (i) os << ',';
        os << shape_[i];
    }
    os << ']';
    return os.str();
}

namespace detail {

// 4-row panels with a blocked j loop keep the C tile and one B row hot in L1;
// the inner loop vectorizes under -O3.
void gemm_nn(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
             int m, int k, int n) {
    constexpr int MR = 4;
    constexpr int NB = 512;
    for (int j0 = 0; j0 < n; j0 += NB) {
        const int jn = std::min(n, j0 + NB);
        int i = 0;
        for (; i + MR <= m; i += MR) {
            double* c0 = c + static_cast<std::size_t>(i) * ldc;
            double* c1 = c0 + ldc;
            double* c2 = c1 + ldc;
            double* c3 = c2 + ldc;
            const double* a0 = a + static_cast<std::size_t>(i) * lda;
            for (int t = 0; t < k; ++t) {
                const double* br = b + static_cast<std::size_t>(t) * ldb;
                const double av0 = a0[t];
                const double av1 = a0[lda + t];
                const double av2 = a0[2 * static_cast<std::size_t>(lda) + t];
                const double av3 = a0[3 * static_cast<std::size_t>(lda) + t];
                for (int j = j0; j < jn; ++j) {
                    const double bv = br[j];
                    c0[j] += av0 * bv;
                    c1[j] += av1 * bv;
                    c2[j] += av2 * bv;
                    c3[j] += av3 * bv;
                }
            }
        }
        for (; i < m; ++i) {
            double* cr = c + static_cast<std::size_t>(i) * ldc;
            const double* ar = a + static_cast<std::size_t>(i) * lda;
            for (int t = 0; t < k; ++t) {
                const double* br = b + static_cast<std::size_t>(t) * ldb;
                const double av = ar[t];
                for (int j = j0; j < jn; ++j) cr[j] += av * br[j];
            }
        }
    }
}

// A^T B: for a fixed t both a-row and b-row are contiguous, so this is the
// same outer-product pattern with the broadcasts taken from A's row t.
void gemm_tn(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
             int m, int k, int n) {
    constexpr int MR = 4;
    constexpr int NB = 512;
    for (int j0 = 0; j0 < n; j0 += NB) {
        const int jn = std::min(n, j0 + NB);
        int i = 0;
        for (; i + MR <= m; i += MR) {
            double* c0 = c + static_cast<std::size_t>(i) * ldc;
            double* c1 = c0 + ldc;
            double* c2 = c1 + ldc;
            double* c3 = c2 + ldc;
            for (int t = 0; t < k; ++t) {
                const double* ar = a + static_cast<std::size_t>(t) * lda + i;
                const double* br = b + static_cast<std::size_t>(t) * ldb;
                const double av0 = ar[0];
                const double av1 = ar[1];
                const double av2 = ar[2];
                const double av3 = ar[3];
                for (int j = j0; j < jn; ++j) {
                    const double bv = br[j];
                    c0[j] += av0 * bv;
                    c1[j] += av1 * bv;
                    c2[j] += av2 * bv;
                    c3[j] += av3 * bv;
                }
            }
        }
        for (; i < m; ++i) {
            double* cr = c + static_cast<std::size_t>(i) * ldc;
            for (int t = 0; t < k; ++t) {
                const double av = a[static_cast<std::size_t>(t) * lda + i];
                const double* br = b + static_cast<std::size_t>(t) * ldb;
                for (int j = j0; j < jn; ++j) cr[j] += av * br[j];
            }
        }
    }
}

// A B^T reduces over contiguous rows of both operands: plain dot products.
void gemm_nt(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
             int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const double* ar = a + static_cast<std::size_t>(i) * lda;
        double* cr = c + static_cast<std::size_t>(i) * ldc;
        for (int j = 0; j < n; ++j) {
            const double* br = b + static_cast<std::size_t>(j) * ldb;
            double acc = 0.0;
            for (int t = 0; t < k; ++t) acc += ar[t] * br[t];
            cr[j] += acc;
        }
    }
}

namespace {
constexpr std::int64_t kParallelGemmCutoff = 1 << 16;
}

void pgemm_nn(const double* a, const double* b, double* c, int m, int k, int n) {
    if (m >= 2 * intraop_threads() &&
        static_cast<std::int64_t>(m) * k * n > kParallelGemmCutoff) {
        parallel_for(m, [&](std::int64_t lo, std::int64_t hi) {
            gemm_nn(a + lo * k, k, b, n, c + lo * n, n, static_cast<int>(hi - lo), k, n);
        });
    } else {
        gemm_nn(a, k, b, n, c, n, m, k, n);
    }
}

void pgemm_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    if (m >= 2 * intraop_threads() &&
        static_cast<std::int64_t>(m) * k * n > kParallelGemmCutoff) {
        parallel_for(m, [&](std::int64_t lo, std::int64_t hi) {
            gemm_tn(a + lo, m, b, n, c + lo * n, n, static_cast<int>(hi - lo), k, n);
        });
    } else {
        gemm_tn(a, m, b, n, c, n, m, k, n);
    }
}

void pgemm_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    if (m >= 2 * intraop_threads() &&
        static_cast<std::int64_t>(m) * k * n > kParallelGemmCutoff) {
        parallel_for(m, [&](std::int64_t lo, std::int64_t hi) {
            gemm_nt(a + lo * k, k, b, k, c + lo * n, n, static_cast<int>(hi - lo), k, n);
        });
    } else {
        gemm_nt(a, k, b, k, c, n, m, k, n);
    }
}

}  // namespace detail

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("matmul needs rank-2 operands, got " + a.shape_str() + " and " +
                         b.shape_str());
    }
    if (a.extent(1) != b.extent(0)) {
        throw ShapeError("matmul inner extents differ: " + a.shape_str() + " x " + b.shape_str());
    }
    const int m = a.extent(0), k = a.extent(1), n = b.extent(1);
    Tensor c({m, n}, 0.0);
    detail::pgemm_nn(a.data(), b.data(), c.data(), m, k, n);
    return c;
}

Tensor pad2d(const Tensor& x, int p) {
    if (x.rank() != 4) throw ShapeError("pad2d needs rank-4 input, got " + x.shape_str());
    if (p < 0) throw ShapeError("pad2d needs non-negative padding");
    if (p == 0) return x;
    const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    Tensor out({n, c, h + 2 * p, w + 2 * p}, 0.0);
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic)
            for (int ih = 0; ih < h; ++ih) {
                const double* src =
                    x.data() + ((static_cast<std::size_t>(in) * c + ic) * h + ih) * w;
                double* dst = out.data() +
                              ((static_cast<std::size_t>(in) * c + ic) * (h + 2 * p) + ih + p) *
                                  (w + 2 * p) +
                              p;
                std::copy(src, src + w, dst);
            }
    return out;
}

Tensor hflip(const Tensor& x) {
    if (x.rank() != 4) throw ShapeError("hflip needs rank-4 input, got " + x.shape_str());
    const int n = x.extent(0), c = x.extent(1), h = x.extent(2), w = x.extent(3);
    Tensor out(x.shape());
    for (int in = 0; in < n; ++in)
        for (int ic = 0; ic < c; ++ic)
            for (int ih = 0; ih < h; ++ih) {
                const double* src =
                    x.data() + ((static_cast<std::size_t>(in) * c + ic) * h + ih) * w;
                double* dst = out.data() + ((static_cast<std::size_t>(in) * c + ic) * h + ih) * w;
                for (int iw = 0; iw < w; ++iw) dst[iw] = src[w - 1 - iw];
            }
    return out;
}

Tensor concat_features(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2) {
        throw ShapeError("concat_features needs rank-2 operands");
    }
    if (a.extent(0) != b.extent(0)) {
        throw ShapeError("concat_features row counts differ: " + a.shape_str() + " vs " +
                         b.shape_str());
    }
    const int n = a.extent(0), da = a.extent(1), db = b.extent(1);
    Tensor out({n, da + db});
    for (int i = 0; i < n; ++i) {
        std::copy(a.data() + static_cast<std::size_t>(i) * da,
                  a.data() + static_cast<std::size_t>(i) * da + da,
                  out.data() + static_cast<std::size_t>(i) * (da + db));
        std::copy(b.data() + static_cast<std::size_t>(i) * db,
                  b.data() + static_cast<std::size_t>(i) * db + db,
                  out.data() + static_cast<std::size_t>(i) * (da + db) + da);
    }
    return out;
}

int intraop_threads() {
    static const int n = [] {
        if (const char* env = std::getenv("ECNN_INTRAOP_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) return std::min(v, 64);
        }
        const unsigned hw = std::thread::hardware_concurrency();
        return static_cast<int>(std::clamp(hw, 1u, 16u));
    }();
    return n;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body) {
    const int workers = static_cast<int>(std::min<std::int64_t>(intraop_threads(), n));
    if (workers <= 1) {
        if (n > 0) body(0, n);
        return;
    }
    const std::int64_t chunk = (n + workers - 1) / workers;
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers) - 1);
    for (int t = 1; t < workers; ++t) {
        const std::int64_t lo = t * chunk;
        const std::int64_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&body, lo, hi] { body(lo, hi); });
    }
    body(0, std::min(n, chunk));
    for (auto& th : pool) th.join();
}

}  // namespace ecnn

#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace ecnn {

// Dense row-major N-dimensional array of doubles. The one value type used for
// images, features, weights and gradients throughout the library.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(std::vector<int> shape, double fill = 0.0);
    Tensor(std::vector<int> shape, std::vector<double> values);

    const std::vector<int>& shape() const { return shape_; }
    int rank() const { return static_cast<int>(shape_.size()); }
    int extent(int axis) const { return shape_[static_cast<std::size_t>(axis)]; }
    std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }
    std::vector<double>& vec() { return data_; }
    const std::vector<double>& vec() const { return data_; }

    double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
    double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

    // row-major element access
    double& at(int i) { return data_[static_cast<std::size_t>(i)]; }
    double& at(int i, int j) { return data_[idx2(i, j)]; }
    double& at(int i, int j, int k) { return data_[idx3(i, j, k)]; }
    double& at(int i, int j, int k, int l) { return data_[idx4(i, j, k, l)]; }
    double at(int i) const { return data_[static_cast<std::size_t>(i)]; }
    double at(int i, int j) const { return data_[idx2(i, j)]; }
    double at(int i, int j, int k) const { return data_[idx3(i, j, k)]; }
    double at(int i, int j, int k, int l) const { return data_[idx4(i, j, k, l)]; }

    // same data, new shape; element count must match
    Tensor reshaped(std::vector<int> new_shape) const;

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
    std::string shape_str() const;

    static std::int64_t shape_product(const std::vector<int>& shape);

private:
    std::size_t idx2(int i, int j) const {
        return static_cast<std::size_t>(i) * shape_[1] + j;
    }
    std::size_t idx3(int i, int j, int k) const {
        return (static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k;
    }
    std::size_t idx4(int i, int j, int k, int l) const {
        return ((static_cast<std::size_t>(i) * shape_[1] + j) * shape_[2] + k) * shape_[3] + l;
    }

    std::vector<int> shape_;
    std::vector<double> data_;
};

// c[i,j] = sum_t a[i,t] * b[t,j]; both rank-2, inner extents must match
Tensor matmul(const Tensor& a, const Tensor& b);

// zero border of width p on both spatial axes of an [N,C,H,W] tensor
Tensor pad2d(const Tensor& x, int p);

// out[n,c,h,w] = x[n,c,h,W-1-w]
Tensor hflip(const Tensor& x);

// row-wise concatenation [N,Da] + [N,Db] -> [N,Da+Db], a's columns first
Tensor concat_features(const Tensor& a, const Tensor& b);

namespace detail {

// serial GEMM kernels over row-major buffers with explicit leading
// dimensions; all accumulate into C
void gemm_nn(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
             int m, int k, int n);  // C += A B, A is [m,k]
void gemm_tn(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
             int m, int k, int n);  // C += A^T B, A is [k,m]
void gemm_nt(const double* a, int lda, const double* b, int ldb, double* c, int ldc,
             int m, int k, int n);  // C += A B^T, B is [n,k]

// parallel front-ends over packed matrices (ld == row width); split on m
void pgemm_nn(const double* a, const double* b, double* c, int m, int k, int n);
void pgemm_tn(const double* a, const double* b, double* c, int m, int k, int n);
void pgemm_nt(const double* a, const double* b, double* c, int m, int k, int n);

}  // namespace detail

// fixed-partition parallel loop: index range [0,n) is split into contiguous
// chunks, one per worker. Results are bitwise deterministic for a fixed
// thread count because every index is processed by exactly one worker.
void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& body);

// worker count used by parallel_for: ECNN_INTRAOP_THREADS if set, else
// hardware concurrency (clamped to [1,16])
int intraop_threads();

}  // namespace ecnn

#pragma once

#include <cstdint>
#include <vector>

#include "ecnn/tensor.hpp"

namespace ecnn {

enum class Mode { train, eval };

// ---------------------------------------------------------------- conv2d ---

struct ConvParams {
    Tensor weights;  // [F,C,HH,WW]
    Tensor bias;     // [F]
    int stride = 1;
    int pad = 0;
};

struct ConvCache {
    Tensor x;        // input, unpadded; im2col is recomputed in backward
    Tensor weights;  // copy taken at forward time
    int stride = 1;
    int pad = 0;
};

struct ConvGrads {
    Tensor dx, dweights, dbias;
};

// output spatial extent for one axis, throws ConfigError when not integral
int conv_out_extent(int in, int kernel, int stride, int pad);

Tensor conv2d_forward(const Tensor& x, const ConvParams& p, ConvCache* cache = nullptr);
ConvGrads conv2d_backward(const Tensor& dout, const ConvCache& cache);

// ------------------------------------------------------------------ relu ---

struct ReluCache {
    std::vector<std::uint8_t> positive;
    std::vector<int> shape;
};

Tensor relu_forward(const Tensor& x, ReluCache* cache = nullptr);
Tensor relu_backward(const Tensor& dout, const ReluCache& cache);

// --------------------------------------------------------------- maxpool ---

struct PoolCache {
    std::vector<std::int32_t> argmax;  // flat input offset of each window max
    std::vector<int> in_shape;
};

Tensor maxpool2x2_forward(const Tensor& x, PoolCache* cache = nullptr);
Tensor maxpool2x2_backward(const Tensor& dout, const PoolCache& cache);

// ------------------------------------------------------------- batchnorm ---

struct BatchNormState {
    Tensor gamma, beta;              // [D]
    Tensor running_mean, running_var;  // [D], biased variance
    double momentum = 0.9;
    double eps = 1e-5;

    static BatchNormState make(int d, double momentum = 0.9, double eps = 1e-5);
};

struct BnCache {
    Tensor xhat;   // [N,D]
    Tensor ivar;   // [D], 1/sqrt(var + eps)
    Tensor gamma;  // [D]
    std::vector<int> x_shape;  // original shape for the spatial variant
};

struct BnGrads {
    Tensor dx, dgamma, dbeta;
};

Tensor batchnorm_forward(const Tensor& x, BatchNormState& s, Mode mode, BnCache* cache = nullptr);
Tensor batchnorm_eval(const Tensor& x, const BatchNormState& s);
BnGrads batchnorm_backward(const Tensor& dout, const BnCache& cache);

// per-channel statistics over N*H*W samples, implemented as the reshape of
// [N,C,H,W] to [N*H*W,C] followed by plain batchnorm
Tensor spatial_batchnorm_forward(const Tensor& x, BatchNormState& s, Mode mode,
                                 BnCache* cache = nullptr);
Tensor spatial_batchnorm_eval(const Tensor& x, const BatchNormState& s);
BnGrads spatial_batchnorm_backward(const Tensor& dout, const BnCache& cache);

// reshape helpers shared with the test suite's independent construction
Tensor nchw_to_rows(const Tensor& x);                            // [N,C,H,W] -> [N*H*W,C]
Tensor rows_to_nchw(const Tensor& rows, const std::vector<int>& nchw_shape);

// --------------------------------------------------------------- dropout ---

struct DropoutConfig {
    double p_keep = 0.5;
    Mode mode = Mode::train;
    std::uint64_t rng_seed = 0;
};

struct DropoutCache {
    std::vector<std::uint8_t> keep;
    double p_keep = 1.0;
};

Tensor dropout_forward(const Tensor& x, const DropoutConfig& cfg, DropoutCache* cache = nullptr);
Tensor dropout_backward(const Tensor& dout, const DropoutCache& cache);

// ---------------------------------------------------------------- affine ---

struct AffineCache {
    Tensor x_flat;   // [N,D]
    Tensor weights;  // [D,H]
    std::vector<int> x_shape;
};

struct AffineGrads {
    Tensor dx, dweights, dbias;
};

// x with any trailing shape is flattened to [N,D]; out = x W + b
Tensor affine_forward(const Tensor& x, const Tensor& w, const Tensor& b,
                      AffineCache* cache = nullptr);
AffineGrads affine_backward(const Tensor& dout, const AffineCache& cache);

// ---------------------------------------------------------- softmax loss ---

struct SoftmaxResult {
    double loss = 0.0;
    Tensor dscores;  // (softmax - onehot)/N
};

SoftmaxResult softmax_loss(const Tensor& scores, const std::vector<int>& labels);

}  // namespace ecnn

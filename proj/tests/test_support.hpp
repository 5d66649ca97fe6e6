#pragma once

#include <cmath>
#include <functional>
#include <random>

#include "ecnn/tensor.hpp"

namespace ecnn::test {

inline Tensor random_tensor(std::vector<int> shape, std::uint64_t seed, double stddev = 1.0) {
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, stddev);
    Tensor t(std::move(shape));
    for (std::int64_t i = 0; i < t.size(); ++i) t[i] = gauss(rng);
    return t;
}

inline double rel_error(double a, double b) {
    return std::abs(a - b) / std::max(std::abs(a) + std::abs(b), 1e-8);
}

// central finite differences of a scalar function over every coordinate of x
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x,
                               double step = 1e-5) {
    Tensor grad(x.shape());
    Tensor probe = x;
    for (std::int64_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + step;
        const double plus = f(probe);
        probe[i] = x[i] - step;
        const double minus = f(probe);
        probe[i] = x[i];
        grad[i] = (plus - minus) / (2.0 * step);
    }
    return grad;
}

// worst relative error between an analytic gradient and its numeric oracle
inline double max_rel_error(const Tensor& analytic, const Tensor& numeric) {
    double worst = 0.0;
    for (std::int64_t i = 0; i < analytic.size(); ++i) {
        worst = std::max(worst, rel_error(analytic[i], numeric[i]));
    }
    return worst;
}

// scalar projection loss sum(out * r) whose gradient w.r.t. out is r
inline double project(const Tensor& out, const Tensor& r) {
    double s = 0.0;
    for (std::int64_t i = 0; i < out.size(); ++i) s += out[i] * r[i];
    return s;
}

}  // namespace ecnn::test

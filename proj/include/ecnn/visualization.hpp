#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ecnn/data_io.hpp"
#include "ecnn/netspec.hpp"

namespace ecnn {

// post-ReLU activation of every conv layer (before pooling) for one image
std::vector<Tensor> capture_activations(const Model& m, const Tensor& x);

struct ByteImage {
    int width = 0, height = 0;
    std::vector<std::uint8_t> pixels;  // row-major
};

// per-tile min-max normalization to [0,255] (constant tiles map to 128),
// arranged row-major with `gap` black pixels between tiles
ByteImage render_grid(const std::vector<Tensor>& tiles, int cols, int gap);

// first-layer filters as 2D tiles (input channels averaged away when > 1)
std::vector<Tensor> weight_tiles(const Model& m);

// first max_channels channel planes of a [1,C,H,W] activation
std::vector<Tensor> activation_tiles(const Tensor& activation, int max_channels);

// gradient ascent on the raw input image maximizing 0.5*sum(act^2) of the
// chosen conv layer; each step normalizes through the dataset mean, ascends
// with an inf-norm-scaled gradient and clips back to [0,255]
Tensor deepdream(const Model& m, const Tensor& raw_img, const NormState& norm, int layer,
                 int steps, double step_size);

// objective 0.5*sum(act^2) at one layer for a raw image, for trace assertions
double dream_objective(const Model& m, const Tensor& raw_img, const NormState& norm, int layer);

// binary PGM: "P5\n<w> <h>\n255\n" followed by the pixel bytes
void write_pgm(const ByteImage& img, const std::string& path);
ByteImage read_pgm(const std::string& path);

// mean absolute 5-point Laplacian over filter interiors; a smoothness proxy
// for first-layer weights
double mean_abs_laplacian(const Tensor& filters);

}  // namespace ecnn

#pragma once

#include "ecnn/tensor.hpp"

namespace ecnn {

// canonical detector configuration scaled to 48x48 inputs
struct HogConfig {
    int bins = 9;       // unsigned orientation over [0,180)
    int cell = 8;       // pixels per cell side
    int block = 2;      // cells per block side, slid with stride 1 cell
    int image = 48;     // expected square image extent
    double norm_eps = 1e-6;
};

// feature vector length for a config: blocks^2 * block^2 * bins (900 default)
int hog_length(const HogConfig& cfg = {});

// un-halved central differences [-1,0,1] with replicated borders;
// img is [1,H,W] (or [H,W]); gx and gy match its shape
void image_gradients(const Tensor& img, Tensor& gx, Tensor& gy);

// per-cell orientation histograms [cells,cells,bins]: gradient magnitude is
// split linearly between the two nearest bin centers at (i+0.5)*180/bins
Tensor cell_histograms(const Tensor& gx, const Tensor& gy, const HogConfig& cfg = {});

// sliding-block L2 normalization: each block window is divided by
// sqrt(|v|^2 + eps^2) and the windows are concatenated row-major
Tensor block_normalize(const Tensor& cells, const HogConfig& cfg = {});

// full pipeline over one image; length hog_length(cfg)
Tensor hog_extract(const Tensor& img, const HogConfig& cfg = {});

// batch helper: [N,1,H,W] -> [N, hog_length], parallel across images
Tensor hog_batch(const Tensor& images, const HogConfig& cfg = {});

}  // namespace ecnn

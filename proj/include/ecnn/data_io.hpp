#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ecnn/tensor.hpp"

namespace ecnn {

enum class Split { train, val, test };

extern const std::array<const char*, 7> kClassNames;  // 0=Angry .. 6=Neutral

struct Dataset {
    Tensor images;            // [N,1,48,48]
    std::vector<int> labels;  // 0..6
    Split split = Split::train;

    int size() const { return images.size() ? images.extent(0) : 0; }
};

struct FerSplits {
    Dataset train, val, test;
};

// FER CSV: header row, then `emotion,pixels,Usage` rows with 2304
// space-separated integer pixels; Usage maps Training/PublicTest/PrivateTest
// to train/val/test
FerSplits load_fer_csv(const std::string& path);
void save_fer_csv(const FerSplits& splits, const std::string& path);

struct NormState {
    Tensor mean_image;  // [1,1,48,48], per-pixel mean of the raw training split
};

NormState fit_normalizer(const Dataset& train);
Dataset apply_normalizer(const Dataset& d, const NormState& s);

// originals followed by their horizontal flips; train split only
Dataset augment_hflip(const Dataset& train);

// first n samples of a split, in file order
Dataset take_subset(const Dataset& d, int n);

// seeded permutation of [0,N) chunked into ceil(N/batch) minibatches; the
// last batch may be short. Same (seed, epoch) -> same order.
std::vector<std::vector<int>> batch_indices(int n, int batch, std::uint64_t seed, int epoch);

// gather the indexed samples into a contiguous batch
void gather_batch(const Dataset& d, const std::vector<int>& idx, Tensor& x,
                  std::vector<int>& labels);
Tensor gather_rows(const Tensor& rows, const std::vector<int>& idx);  // [N,D] source

// deterministic FER-format dataset with class-dependent oriented patterns;
// pixels are integers in [0,255] so it survives the CSV round trip
FerSplits make_synthetic_splits(int n_train, int n_val, int n_test, std::uint64_t seed);

}  // namespace ecnn

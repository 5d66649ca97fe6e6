#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ecnn/layers.hpp"
#include "ecnn/tensor.hpp"

namespace ecnn {

// one stage of the architecture DSL
struct LayerSpec {
    enum class Kind { conv, fc };
    Kind kind = Kind::conv;
    int width = 0;         // filter count (conv) or hidden neurons (fc)
    int kernel = 0;        // conv only
    int stride = 1;        // conv only
    bool has_bn = false;   // sbn on conv, bn on fc
    double dropout = 0.0;  // p_keep; 0 means no dropout layer
    bool has_pool = false; // conv only

    bool operator==(const LayerSpec&) const = default;
};

struct ArchSpec {
    std::vector<LayerSpec> conv_layers;
    std::vector<LayerSpec> fc_layers;
    int num_classes = 7;
    bool hog_concat = false;

    bool operator==(const ArchSpec&) const = default;
};

// grammar:
//   conv:<F>x<K>x<K>[,s<S>][,sbn][,drop<p>][,pool] ("|" ...)*
//   "|" fc:<H>[,bn][,drop<p>] ("|" ...)*
//   [ "|" classes:<K> ] [ "|" hog ]
// defaults: s=1, no bn, no dropout, no pool; at least one conv layer required
ArchSpec parse_arch(const std::string& text);

// canonical DSL form; parse_arch(arch_to_string(s)) == s
std::string arch_to_string(const ArchSpec& spec);

// ----------------------------------------------------------------- model ---

struct ConvLayer {
    LayerSpec spec;
    ConvParams params;
    BatchNormState bn;  // used only when spec.has_bn
};

struct FcLayer {
    LayerSpec spec;
    Tensor weights, bias;
    BatchNormState bn;
};

class Model {
public:
    ArchSpec spec;
    std::uint64_t seed = 0;
    int input_channels = 1, input_h = 48, input_w = 48;
    int hog_dim = 0;  // width of the concatenated feature block, 0 when unused

    std::vector<ConvLayer> conv;
    std::vector<FcLayer> fc;
    Tensor final_w, final_b;

    // flattened conv-stack output width and the [C,H,W] shape it comes from
    int conv_out_width = 0;
    std::vector<int> conv_out_chw;

    // named views over learnable parameters; map iteration order (lexicographic)
    // is the deterministic order used by checkpoints and SGD
    std::map<std::string, Tensor*> param_map();
    std::map<std::string, const Tensor*> param_map() const;
    // BN running statistics; saved in checkpoints but never updated by SGD
    std::map<std::string, Tensor*> buffer_map();
    std::map<std::string, const Tensor*> buffer_map() const;

    std::int64_t param_count() const;
};

// He-initialized model; deterministic given seed. hog_dim < 0 picks the
// default 900-wide HOG vector when the spec asks for the hybrid path.
// Non-default input extents support tiny gradient-check models.
Model build_model(const ArchSpec& spec, std::uint64_t seed, int hog_dim = -1,
                  int input_h = 48, int input_w = 48);

// --------------------------------------------------------------- forward ---

struct Caches {
    struct ConvBlock {
        ConvCache conv;
        BnCache bn;
        ReluCache relu;
        DropoutCache drop;
        PoolCache pool;
    };
    struct FcBlock {
        AffineCache affine;
        BnCache bn;
        ReluCache relu;
        DropoutCache drop;
    };
    std::vector<ConvBlock> conv_blocks;
    std::vector<FcBlock> fc_blocks;
    AffineCache final_affine;
    std::vector<int> conv_flat_shape;  // [N, conv_out_width]
    int batch = 0;
    bool valid = false;
};

// class scores [N,num_classes]; no softmax applied. Train mode samples
// dropout from (model seed, layer, dropout_salt) and updates BN running
// stats; eval mode is deterministic and leaves the model untouched.
Tensor forward(Model& m, const Tensor& x, const Tensor* hog, Mode mode,
               std::uint64_t dropout_salt = 0, Caches* caches = nullptr);

// eval-mode forward over a frozen model
Tensor forward_eval(const Model& m, const Tensor& x, const Tensor* hog = nullptr);

using GradMap = std::map<std::string, Tensor>;

// gradients for every learnable parameter, keyed exactly like param_map().
// Consumes the caches of the immediately preceding train-mode forward.
GradMap backward(const Model& m, const Tensor& dscores, Caches& caches);

// ------------------------------------------------------------ checkpoint ---

// flat binary container: magic "ECNN1", spec string, seed, then every
// parameter and BN buffer in name order as (name, rank, extents, f64 data).
// Little-endian throughout; round trips bit-exactly.
void save_checkpoint(const Model& m, const std::string& path);
Model load_checkpoint(const std::string& path);

}  // namespace ecnn

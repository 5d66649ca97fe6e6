#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "ecnn/data_io.hpp"
#include "ecnn/netspec.hpp"

namespace ecnn {

struct TrainConfig {
    double lr = 1e-3;
    double reg = 0.0;       // L2 coefficient, weights only
    int epochs = 1;
    int batch = 128;
    double momentum = 0.0;  // 0 = plain SGD
    double lr_decay = 1.0;  // multiplicative per-epoch factor
    std::uint64_t seed = 0;
    bool hybrid = false;
};

struct History {
    std::vector<double> loss_per_iteration;
    std::vector<double> train_acc_per_epoch;
    std::vector<double> val_acc_per_epoch;
};

// `iter,loss` and `epoch,train_acc,val_acc`
void save_history_csv(const History& h, const std::string& loss_path,
                      const std::string& acc_path);

// softmax loss plus 0.5*reg*sum(W^2) over conv/fc/final weights (biases and
// BN parameters excluded); gradients carry the matching reg*W term
struct TotalLossResult {
    double loss = 0.0;
    GradMap grads;
};
TotalLossResult total_loss(Model& m, const Tensor& x, const std::vector<int>& labels,
                           const Tensor* hog, double reg, std::uint64_t dropout_salt = 0);

// v <- momentum*v - lr*g; w <- w + v (w <- w - lr*g when momentum is 0)
void sgd_step(Model& m, const GradMap& grads, GradMap& velocity, double lr, double momentum);

// ------------------------------------------------------------- sanity ops ---

struct InitialLossReport {
    bool pass = false;
    double measured = 0.0;
    double target = 0.0;  // ln(num_classes)
};
InitialLossReport sanity_initial_loss(const ArchSpec& spec, std::uint64_t seed = 0);

struct OverfitReport {
    bool pass = false;
    int epochs_run = 0;
    double final_loss = 0.0;
    double final_acc = 0.0;
};
// full-batch SGD on the first n_small samples of the (normalized) train
// split, reg = 0; PASS once eval-mode accuracy hits 100% with loss < 0.05
OverfitReport sanity_overfit(const ArchSpec& spec, const Dataset& train, int n_small = 20,
                             int max_epochs = 200, std::uint64_t seed = 0, double lr = 0.01,
                             double momentum = 0.9);

// -------------------------------------------------------------- train loop ---

struct TrainData {
    Dataset train, val;         // normalized; train already augmented
    Tensor train_hog, val_hog;  // [N,Dh] when hybrid, else default tensors
};

struct TrainResult {
    Model model;  // final epoch
    Model best;   // highest validation accuracy epoch
    int best_epoch = 0;
    double best_val_acc = 0.0;
    History history;
};

TrainResult train(const ArchSpec& spec, const TrainConfig& cfg, const TrainData& data);

// ------------------------------------------------------------- grid search ---

struct GridSpec {
    std::vector<double> lr_values, reg_values;
    std::vector<int> hidden_values;  // substituted into the first fc layer
};

struct GridEntry {
    double lr = 0.0, reg = 0.0;
    int hidden = 0;
    double val_acc = 0.0;
    bool diverged = false;
};

// trains every combination for short_epochs and ranks by validation
// accuracy; diverged configs sort last; ties break on (lr, reg, hidden).
// workers <= 0 reads ECNN_THREADS (default 1).
std::vector<GridEntry> grid_search(const ArchSpec& templ, const GridSpec& grid,
                                   const TrainConfig& base, const TrainData& data,
                                   int short_epochs, int workers = 0);

// ------------------------------------------------------------- grad check ---

struct GradCheckReport {
    std::map<std::string, double> group_max_rel_err;
    double worst = 0.0;
};

// central finite differences against the analytic gradients of the full
// model loss; dropout masks are frozen per evaluation by the seeded RNG and
// BN batch statistics are part of the differentiated function
GradCheckReport grad_check(const ArchSpec& spec, int n_samples, double step = 1e-5,
                           std::uint64_t seed = 0, int input_hw = 8, double reg = 0.0,
                           int coords_per_group = 5);

}  // namespace ecnn

#include "ecnn/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <random>
#include <thread>

#include "ecnn/errors.hpp"
#include "ecnn/evaluation.hpp"

namespace ecnn {

namespace {

bool is_weight_name(const std::string& name) {
    return name.size() > 2 && name.compare(name.size() - 2, 2, "_w") == 0;
}

// loss without gradients, for finite differences
double loss_only(Model& m, const Tensor& x, const std::vector<int>& labels, const Tensor* hog,
                 double reg, std::uint64_t dropout_salt) {
    const Tensor scores = forward(m, x, hog, Mode::train, dropout_salt);
    double loss = softmax_loss(scores, labels).loss;
    if (reg > 0.0) {
        for (const auto& [name, tensor] : m.param_map()) {
            if (!is_weight_name(name)) continue;
            double sq = 0.0;
            for (std::int64_t i = 0; i < tensor->size(); ++i) sq += (*tensor)[i] * (*tensor)[i];
            loss += 0.5 * reg * sq;
        }
    }
    return loss;
}

// eval-mode accuracy over a dataset slice without building a confusion matrix
double quick_accuracy(const Model& m, const Dataset& d, const Tensor* hog,
                      const std::vector<int>& idx, int batch) {
    std::int64_t correct = 0;
    for (std::size_t start = 0; start < idx.size(); start += static_cast<std::size_t>(batch)) {
        const std::vector<int> chunk(idx.begin() + static_cast<std::ptrdiff_t>(start),
                                     idx.begin() + static_cast<std::ptrdiff_t>(std::min(
                                                       idx.size(), start + batch)));
        Tensor x;
        std::vector<int> labels;
        gather_batch(d, chunk, x, labels);
        Tensor hog_rows;
        const Tensor* hog_ptr = nullptr;
        if (hog && hog->size()) {
            hog_rows = gather_rows(*hog, chunk);
            hog_ptr = &hog_rows;
        }
        const Tensor scores = forward_eval(m, x, hog_ptr);
        const int k = scores.extent(1);
        for (int i = 0; i < scores.extent(0); ++i) {
            const double* row = scores.data() + static_cast<std::size_t>(i) * k;
            int arg = 0;
            for (int j = 1; j < k; ++j) {
                if (row[j] > row[arg]) arg = j;
            }
            if (arg == labels[static_cast<std::size_t>(i)]) ++correct;
        }
    }
    return idx.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(idx.size());
}

std::vector<int> all_indices(int n) {
    std::vector<int> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), 0);
    return idx;
}

}  // namespace

void save_history_csv(const History& h, const std::string& loss_path,
                      const std::string& acc_path) {
    std::ofstream lf(loss_path);
    if (!lf) throw IoError("cannot write " + loss_path);
    lf << "iter,loss\n";
    lf.precision(17);
    for (std::size_t i = 0; i < h.loss_per_iteration.size(); ++i) {
        lf << i << ',' << h.loss_per_iteration[i] << '\n';
    }

    std::ofstream af(acc_path);
    if (!af) throw IoError("cannot write " + acc_path);
    af << "epoch,train_acc,val_acc\n";
    af.precision(17);
    for (std::size_t e = 0; e < h.train_acc_per_epoch.size(); ++e) {
        af << e + 1 << ',' << h.train_acc_per_epoch[e] << ',' << h.val_acc_per_epoch[e] << '\n';
    }
    if (!lf || !af) throw IoError("failed writing history CSVs");
}

TotalLossResult total_loss(Model& m, const Tensor& x, const std::vector<int>& labels,
                           const Tensor* hog, double reg, std::uint64_t dropout_salt) {
    Caches caches;
    const Tensor scores = forward(m, x, hog, Mode::train, dropout_salt, &caches);
    SoftmaxResult sm = softmax_loss(scores, labels);

    TotalLossResult r;
    r.loss = sm.loss;
    r.grads = backward(m, sm.dscores, caches);

    if (reg > 0.0) {
        for (const auto& [name, tensor] : m.param_map()) {
            if (!is_weight_name(name)) continue;
            Tensor& grad = r.grads.at(name);
            double sq = 0.0;
            for (std::int64_t i = 0; i < tensor->size(); ++i) {
                const double w = (*tensor)[i];
                sq += w * w;
                grad[i] += reg * w;
            }
            r.loss += 0.5 * reg * sq;
        }
    }
    return r;
}

void sgd_step(Model& m, const GradMap& grads, GradMap& velocity, double lr, double momentum) {
    auto params = m.param_map();
    for (const auto& [name, grad] : grads) {
        const auto it = params.find(name);
        if (it == params.end()) throw UsageError("gradient for unknown parameter " + name);
        Tensor& w = *it->second;
        if (!w.same_shape(grad)) throw UsageError("gradient shape mismatch for " + name);
        if (momentum != 0.0) {
            auto vit = velocity.find(name);
            if (vit == velocity.end()) {
                vit = velocity.emplace(name, Tensor(w.shape(), 0.0)).first;
            }
            Tensor& v = vit->second;
            for (std::int64_t i = 0; i < w.size(); ++i) {
                v[i] = momentum * v[i] - lr * grad[i];
                w[i] += v[i];
            }
        } else {
            for (std::int64_t i = 0; i < w.size(); ++i) w[i] -= lr * grad[i];
        }
    }
}

InitialLossReport sanity_initial_loss(const ArchSpec& spec, std::uint64_t seed) {
    Model m = build_model(spec, seed);
    const int batch = 32;
    std::mt19937_64 rng(seed ^ 0x5eedULL);
    std::normal_distribution<double> pixel(0.0, 30.0);  // mean-subtracted pixel scale
    Tensor x({batch, 1, m.input_h, m.input_w});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = pixel(rng);
    std::vector<int> labels(batch);
    for (int i = 0; i < batch; ++i) labels[static_cast<std::size_t>(i)] = i % spec.num_classes;

    Tensor hog_rows;
    const Tensor* hog = nullptr;
    if (spec.hog_concat) {
        hog_rows = Tensor({batch, m.hog_dim}, 0.25);
        hog = &hog_rows;
    }

    InitialLossReport r;
    r.target = std::log(static_cast<double>(spec.num_classes));
    r.measured = loss_only(m, x, labels, hog, 0.0, 0);
    r.pass = std::abs(r.measured - r.target) < 0.05;
    return r;
}

OverfitReport sanity_overfit(const ArchSpec& spec, const Dataset& train, int n_small,
                             int max_epochs, std::uint64_t seed, double lr, double momentum) {
    if (train.size() < n_small) {
        throw UsageError("overfit sanity needs at least " + std::to_string(n_small) +
                         " training samples");
    }
    const Dataset small = take_subset(train, n_small);
    Tensor x;
    std::vector<int> labels;
    gather_batch(small, all_indices(n_small), x, labels);

    Model m = build_model(spec, seed);
    GradMap velocity;
    OverfitReport r;
    const auto idx = all_indices(n_small);
    for (int epoch = 0; epoch < max_epochs; ++epoch) {
        const TotalLossResult step =
            total_loss(m, x, labels, nullptr, 0.0, static_cast<std::uint64_t>(epoch));
        if (!std::isfinite(step.loss)) {
            r.epochs_run = epoch + 1;
            return r;  // diverged: FAIL
        }
        sgd_step(m, step.grads, velocity, lr, momentum);

        const Tensor scores = forward_eval(m, x);
        r.final_loss = softmax_loss(scores, labels).loss;
        r.final_acc = quick_accuracy(m, small, nullptr, idx, n_small);
        r.epochs_run = epoch + 1;
        if (r.final_acc == 1.0 && r.final_loss < 0.05) {
            r.pass = true;
            return r;
        }
    }
    return r;
}

TrainResult train(const ArchSpec& spec, const TrainConfig& cfg, const TrainData& data) {
    if (cfg.lr <= 0.0 || cfg.reg < 0.0 || cfg.epochs < 1 || cfg.batch < 1) {
        throw ConfigError("invalid training configuration");
    }
    const bool hybrid = cfg.hybrid || spec.hog_concat;
    if (hybrid && (!data.train_hog.size() || !data.val_hog.size())) {
        throw UsageError("hybrid training needs precomputed hog features for every split");
    }

    const int n = data.train.size();
    TrainResult result;
    result.model = build_model(spec, cfg.seed, hybrid ? data.train_hog.extent(1) : -1);
    Model& m = result.model;

    // fixed eval-mode subsample for the per-epoch train accuracy trace
    std::vector<int> train_eval_idx = all_indices(n);
    {
        std::mt19937_64 rng(cfg.seed ^ 0xaccULL);
        std::shuffle(train_eval_idx.begin(), train_eval_idx.end(), rng);
        if (n > 1000) train_eval_idx.resize(1000);
    }
    const std::vector<int> val_idx = all_indices(data.val.size());

    GradMap velocity;
    double lr = cfg.lr;
    std::uint64_t iteration = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        for (const auto& batch_idx : batch_indices(n, cfg.batch, cfg.seed, epoch)) {
            Tensor x;
            std::vector<int> labels;
            gather_batch(data.train, batch_idx, x, labels);
            Tensor hog_rows;
            const Tensor* hog = nullptr;
            if (hybrid) {
                hog_rows = gather_rows(data.train_hog, batch_idx);
                hog = &hog_rows;
            }
            const TotalLossResult step = total_loss(m, x, labels, hog, cfg.reg, iteration);
            if (!std::isfinite(step.loss)) {
                throw DivergenceError("non-finite loss at iteration " +
                                      std::to_string(iteration));
            }
            result.history.loss_per_iteration.push_back(step.loss);
            sgd_step(m, step.grads, velocity, lr, cfg.momentum);
            ++iteration;
        }

        const double train_acc = quick_accuracy(m, data.train, hybrid ? &data.train_hog : nullptr,
                                                train_eval_idx, cfg.batch);
        const double val_acc = quick_accuracy(m, data.val, hybrid ? &data.val_hog : nullptr,
                                              val_idx, cfg.batch);
        result.history.train_acc_per_epoch.push_back(train_acc);
        result.history.val_acc_per_epoch.push_back(val_acc);

        if (result.best_epoch == 0 || val_acc > result.best_val_acc) {
            result.best = m;
            result.best_epoch = epoch + 1;
            result.best_val_acc = val_acc;
        }
        lr *= cfg.lr_decay;
    }
    return result;
}

std::vector<GridEntry> grid_search(const ArchSpec& templ, const GridSpec& grid,
                                   const TrainConfig& base, const TrainData& data,
                                   int short_epochs, int workers) {
    if (grid.lr_values.empty() || grid.reg_values.empty()) {
        throw ConfigError("grid search needs non-empty lr and reg lists");
    }
    std::vector<int> hiddens = grid.hidden_values;
    if (hiddens.empty()) hiddens.push_back(templ.fc_layers.empty() ? 0 : templ.fc_layers[0].width);

    std::vector<GridEntry> entries;
    for (const double lr : grid.lr_values)
        for (const double reg : grid.reg_values)
            for (const int hidden : hiddens) entries.push_back({lr, reg, hidden});

    if (workers <= 0) {
        workers = 1;
        if (const char* env = std::getenv("ECNN_THREADS")) {
            const int v = std::atoi(env);
            if (v >= 1) workers = v;
        }
    }
    workers = std::min<int>(workers, static_cast<int>(entries.size()));

    const auto run_entry = [&](GridEntry& e) {
        ArchSpec spec = templ;
        if (!spec.fc_layers.empty() && e.hidden > 0) spec.fc_layers[0].width = e.hidden;
        TrainConfig cfg = base;
        cfg.lr = e.lr;
        cfg.reg = e.reg;
        cfg.epochs = short_epochs;
        try {
            const TrainResult r = train(spec, cfg, data);
            e.val_acc = r.best_val_acc;
        } catch (const DivergenceError&) {
            e.diverged = true;
            e.val_acc = 0.0;
        }
    };

    if (workers <= 1) {
        for (GridEntry& e : entries) run_entry(e);
    } else {
        std::vector<std::thread> pool;
        std::size_t next = 0;
        const std::size_t per = (entries.size() + workers - 1) / static_cast<std::size_t>(workers);
        for (int t = 0; t < workers; ++t) {
            const std::size_t lo = next;
            const std::size_t hi = std::min(entries.size(), lo + per);
            next = hi;
            if (lo >= hi) break;
            pool.emplace_back([&entries, &run_entry, lo, hi] {
                for (std::size_t i = lo; i < hi; ++i) run_entry(entries[i]);
            });
        }
        for (auto& th : pool) th.join();
    }

    std::stable_sort(entries.begin(), entries.end(), [](const GridEntry& a, const GridEntry& b) {
        if (a.diverged != b.diverged) return !a.diverged;
        if (a.val_acc != b.val_acc) return a.val_acc > b.val_acc;
        if (a.lr != b.lr) return a.lr < b.lr;
        if (a.reg != b.reg) return a.reg < b.reg;
        return a.hidden < b.hidden;
    });
    return entries;
}

GradCheckReport grad_check(const ArchSpec& spec, int n_samples, double step, std::uint64_t seed,
                           int input_hw, double reg, int coords_per_group) {
    Model base = build_model(spec, seed, spec.hog_concat ? 16 : -1, input_hw, input_hw);

    std::mt19937_64 rng(seed ^ 0x6badcafeULL);
    std::normal_distribution<double> gauss(0.0, 1.0);
    Tensor x({n_samples, 1, input_hw, input_hw});
    for (std::int64_t i = 0; i < x.size(); ++i) x[i] = gauss(rng);
    std::vector<int> labels(static_cast<std::size_t>(n_samples));
    for (int i = 0; i < n_samples; ++i) {
        labels[static_cast<std::size_t>(i)] = i % spec.num_classes;
    }
    Tensor hog_rows;
    const Tensor* hog = nullptr;
    if (spec.hog_concat) {
        hog_rows = Tensor({n_samples, base.hog_dim});
        for (std::int64_t i = 0; i < hog_rows.size(); ++i) hog_rows[i] = std::abs(gauss(rng));
        hog = &hog_rows;
    }

    // analytic gradients on a clone so BN running stats of `base` stay fixed
    GradMap analytic;
    {
        Model work = base;
        analytic = total_loss(work, x, labels, hog, reg, 0).grads;
    }

    const auto loss_with = [&](const std::string& name, std::int64_t idx, double delta) {
        Model work = base;
        (*work.param_map().at(name))[idx] += delta;
        return loss_only(work, x, labels, hog, reg, 0);
    };

    GradCheckReport report;
    for (const auto& [name, grad] : analytic) {
        const std::int64_t size = grad.size();
        const int coords = static_cast<int>(std::min<std::int64_t>(coords_per_group, size));
        double group_max = 0.0;
        for (int ci = 0; ci < coords; ++ci) {
            const std::int64_t idx = size <= coords ? ci : ci * (size / coords);
            const double plus = loss_with(name, idx, step);
            const double minus = loss_with(name, idx, -step);
            const double fd = (plus - minus) / (2.0 * step);
            const double a = grad[idx];
            const double rel = std::abs(a - fd) / std::max(std::abs(a) + std::abs(fd), 1e-8);
            group_max = std::max(group_max, rel);
        }
        report.group_max_rel_err[name] = group_max;
        report.worst = std::max(report.worst, group_max);
    }
    return report;
}

}  // namespace ecnn

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ecnn/data_io.hpp"
#include "ecnn/errors.hpp"
#include "ecnn/evaluation.hpp"
#include "ecnn/hog.hpp"
#include "ecnn/presets.hpp"
#include "ecnn/runconfig.hpp"
#include "ecnn/training.hpp"
#include "ecnn/visualization.hpp"

namespace fs = std::filesystem;
using namespace ecnn;

namespace {

// the fixed preprocessing order: fit the mean on the raw train split, augment
// with flips, extract HOG from raw pixels, then mean-subtract every split
struct Prepared {
    FerSplits raw;
    NormState norm;
    Dataset train, val, test;              // normalized; train augmented
    Tensor train_hog, val_hog, test_hog;   // raw-pixel HOG when hybrid
};

Prepared prepare(const std::string& data_path, bool hybrid, int subset_train, int subset_val) {
    Prepared p;
    p.raw = load_fer_csv(data_path);
    if (subset_train > 0) p.raw.train = take_subset(p.raw.train, subset_train);
    if (subset_val > 0) p.raw.val = take_subset(p.raw.val, subset_val);

    p.norm = fit_normalizer(p.raw.train);
    const Dataset train_aug = augment_hflip(p.raw.train);
    if (hybrid) {
        p.train_hog = hog_batch(train_aug.images);
        if (p.raw.val.size()) p.val_hog = hog_batch(p.raw.val.images);
        if (p.raw.test.size()) p.test_hog = hog_batch(p.raw.test.images);
    }
    p.train = apply_normalizer(train_aug, p.norm);
    p.val = apply_normalizer(p.raw.val, p.norm);
    p.test = apply_normalizer(p.raw.test, p.norm);
    return p;
}

const Dataset& pick_split(const Prepared& p, const std::string& split) {
    if (split == "train") return p.train;
    if (split == "val") return p.val;
    if (split == "test") return p.test;
    throw ConfigError("unknown split '" + split + "' (expected train|val|test)");
}

const Tensor* pick_hog(const Prepared& p, const std::string& split) {
    const Tensor& t = split == "train" ? p.train_hog : split == "val" ? p.val_hog : p.test_hog;
    return t.size() ? &t : nullptr;
}

std::string acc_str(double acc) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", acc);
    return buf;
}

int cmd_train(const RunConfig& rc, bool print_config, int subset_train, int subset_val) {
    const ResolvedRun run = resolve_run(rc);
    if (print_config) {
        print_run(run, std::cout);
        return 0;
    }
    if (run.data_path.empty()) {
        throw ConfigError("no dataset given (use --data or the ECNN_DATA variable)");
    }
    fs::create_directories(run.out_dir);

    const InitialLossReport sanity = sanity_initial_loss(run.spec, run.cfg.seed);
    std::cout << "initial loss " << sanity.measured << " (target " << sanity.target << "): "
              << (sanity.pass ? "PASS" : "FAIL") << "\n";

    const Prepared p = prepare(run.data_path, run.cfg.hybrid, subset_train, subset_val);
    TrainData data;
    data.train = p.train;
    data.val = p.val;
    data.train_hog = p.train_hog;
    data.val_hog = p.val_hog;

    std::cout << "training '" << run.arch_text << "' on " << data.train.size()
              << " samples (val " << data.val.size() << ")\n";
    TrainResult r = train(run.spec, run.cfg, data);

    save_checkpoint(r.best, run.out_dir + "/best.ckpt");
    save_checkpoint(r.model, run.out_dir + "/final.ckpt");
    save_history_csv(r.history, run.out_dir + "/history.csv", run.out_dir + "/accuracy.csv");

    const EvalResult val_eval = evaluate(r.best, p.val, p.val_hog.size() ? &p.val_hog : nullptr);
    EvalResult test_eval;
    if (p.test.size()) {
        test_eval = evaluate(r.best, p.test, p.test_hog.size() ? &p.test_hog : nullptr);
        export_report(test_eval, per_class_accuracy(test_eval.cm), run.out_dir);
        print_confusion(test_eval.cm, std::cout);
    }
    std::cout << "best epoch " << r.best_epoch << "\n";
    std::cout << "val=" << acc_str(val_eval.accuracy) << " test=" << acc_str(test_eval.accuracy)
              << "\n";
    return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_path, const std::string& split,
             const std::string& out_dir) {
    const Model m = load_checkpoint(ckpt);
    const Prepared p = prepare(data_path, m.spec.hog_concat, 0, 0);
    const Dataset& d = pick_split(p, split);
    const EvalResult r = evaluate(m, d, pick_hog(p, split));
    export_report(r, per_class_accuracy(r.cm), out_dir);
    print_confusion(r.cm, std::cout);
    std::cout << "split=" << split << " accuracy=" << r.correct << "/" << r.total << " ("
              << acc_str(r.accuracy) << ")\n";
    return 0;
}

int cmd_gridsearch(const RunConfig& rc, const std::vector<double>& lrs,
                   const std::vector<double>& regs, const std::vector<int>& hiddens,
                   int short_epochs, int threads, int subset_train, int subset_val) {
    const ResolvedRun run = resolve_run(rc);
    if (run.data_path.empty()) {
        throw ConfigError("no dataset given (use --data or the ECNN_DATA variable)");
    }
    const Prepared p = prepare(run.data_path, run.cfg.hybrid, subset_train, subset_val);
    TrainData data;
    data.train = p.train;
    data.val = p.val;
    data.train_hog = p.train_hog;
    data.val_hog = p.val_hog;

    GridSpec grid;
    grid.lr_values = lrs.empty() ? std::vector<double>{run.cfg.lr} : lrs;
    grid.reg_values = regs.empty() ? std::vector<double>{run.cfg.reg} : regs;
    grid.hidden_values = hiddens;

    const auto ranked = grid_search(run.spec, grid, run.cfg, data, short_epochs, threads);
    std::printf("%4s %10s %10s %8s %9s %s\n", "rank", "lr", "reg", "hidden", "val_acc", "note");
    for (std::size_t i = 0; i < ranked.size(); ++i) {
        const GridEntry& e = ranked[i];
        std::printf("%4zu %10g %10g %8d %9.4f %s\n", i + 1, e.lr, e.reg, e.hidden, e.val_acc,
                    e.diverged ? "diverged" : "");
    }
    return 0;
}

int cmd_gradcheck(const std::string& arch, int n_samples, double step, std::uint64_t seed) {
    std::vector<std::string> specs;
    if (!arch.empty()) {
        specs.push_back(arch);
    } else {
        specs = {
            "conv:3x3x3,sbn,drop0.8|conv:4x3x3,pool|fc:6,bn,drop0.9|classes:5",
            "conv:2x3x3,pool|fc:4",
            "conv:2x3x3,sbn,pool|fc:5|hog",
        };
    }
    double worst = 0.0;
    for (const std::string& s : specs) {
        std::cout << "spec: " << s << "\n";
        const GradCheckReport r = grad_check(parse_arch(s), n_samples, step, seed);
        for (const auto& [name, err] : r.group_max_rel_err) {
            std::printf("  %-18s max rel err %.3e\n", name.c_str(), err);
        }
        worst = std::max(worst, r.worst);
    }
    std::printf("worst rel err %.3e (threshold 1e-4)\n", worst);
    return worst < 1e-4 ? 0 : 1;
}

int cmd_sanity(const RunConfig& rc, bool skip_overfit, int n_small, int max_epochs) {
    const ResolvedRun run = resolve_run(rc);
    const InitialLossReport r = sanity_initial_loss(run.spec, run.cfg.seed);
    std::printf("initial loss: measured %.4f, target %.4f (ln %d) -> %s\n", r.measured, r.target,
                run.spec.num_classes, r.pass ? "PASS" : "FAIL");
    bool ok = r.pass;

    if (!skip_overfit) {
        Dataset train;
        if (!run.data_path.empty()) {
            const Prepared p = prepare(run.data_path, false, 0, 0);
            train = p.train;
        } else {
            std::cout << "no dataset given; overfitting a synthetic subset\n";
            const FerSplits s = make_synthetic_splits(n_small, 0, 0, run.cfg.seed);
            const NormState norm = fit_normalizer(s.train);
            train = apply_normalizer(s.train, norm);
        }
        const OverfitReport o =
            sanity_overfit(run.spec, train, n_small, max_epochs, run.cfg.seed);
        std::printf("overfit %d samples: acc %.2f, loss %.4f after %d epochs -> %s\n", n_small,
                    o.final_acc, o.final_loss, o.epochs_run, o.pass ? "PASS" : "FAIL");
        ok = ok && o.pass;
    }
    return ok ? 0 : 1;
}

int cmd_hog(const std::string& data_path, const std::string& split, const std::string& out_path,
            int limit) {
    const FerSplits raw = load_fer_csv(data_path);
    const Dataset& d =
        split == "train" ? raw.train : split == "val" ? raw.val : raw.test;
    const int n = limit > 0 ? std::min(limit, d.size()) : d.size();

    std::ofstream os(out_path);
    if (!os) throw IoError("cannot write " + out_path);
    const HogConfig cfg;
    for (int i = 0; i < n; ++i) {
        Tensor img({1, 48, 48},
                   std::vector<double>(d.images.data() + static_cast<std::size_t>(i) * 2304,
                                       d.images.data() + static_cast<std::size_t>(i + 1) * 2304));
        const Tensor vec = hog_extract(img, cfg);
        char buf[32];
        for (std::int64_t j = 0; j < vec.size(); ++j) {
            std::snprintf(buf, sizeof(buf), "%.9g", vec[j]);
            os << (j ? "," : "") << buf;
        }
        os << '\n';
    }
    if (!os) throw IoError("failed writing " + out_path);
    std::cout << "wrote " << n << " hog rows to " << out_path << "\n";
    return 0;
}

int cmd_viz(const std::string& ckpt, const std::string& data_path, const std::string& split,
            int index, const std::string& prefix, int cols, int gap, int max_channels) {
    const Model m = load_checkpoint(ckpt);
    const Prepared p = prepare(data_path, false, 0, 0);
    const Dataset& d = pick_split(p, split);
    if (index < 0 || index >= d.size()) throw UsageError("image index out of range");

    Tensor x({1, 1, 48, 48},
             std::vector<double>(d.images.data() + static_cast<std::size_t>(index) * 2304,
                                 d.images.data() + static_cast<std::size_t>(index + 1) * 2304));

    write_pgm(render_grid(weight_tiles(m), cols, gap), prefix + "_weights.pgm");
    const auto acts = capture_activations(m, x);
    for (std::size_t k = 0; k < acts.size(); ++k) {
        write_pgm(render_grid(activation_tiles(acts[k], max_channels), cols, gap),
                  prefix + "_layer" + std::to_string(k + 1) + ".pgm");
    }
    std::cout << "wrote " << prefix << "_weights.pgm and " << acts.size()
              << " activation grids\n";
    return 0;
}

int cmd_dream(const std::string& ckpt, const std::string& data_path, const std::string& split,
              int index, int layer, int steps, double step_size, const std::string& prefix) {
    const Model m = load_checkpoint(ckpt);
    const FerSplits raw = load_fer_csv(data_path);
    const Dataset& d =
        split == "train" ? raw.train : split == "val" ? raw.val : raw.test;
    if (index < 0 || index >= d.size()) throw UsageError("image index out of range");
    const NormState norm = fit_normalizer(raw.train);

    Tensor img({1, 1, 48, 48},
               std::vector<double>(d.images.data() + static_cast<std::size_t>(index) * 2304,
                                   d.images.data() + static_cast<std::size_t>(index + 1) * 2304));
    if (layer < 0) layer = static_cast<int>(m.conv.size()) - 1;
    const Tensor dreamed = deepdream(m, img, norm, layer, steps, step_size);

    ByteImage out;
    out.width = 48;
    out.height = 48;
    out.pixels.resize(2304);
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        out.pixels[i] = static_cast<std::uint8_t>(
            std::lround(std::clamp(dreamed[static_cast<std::int64_t>(i)], 0.0, 255.0)));
    }
    const std::string path =
        prefix + "_dream_c" + std::to_string(d.labels[static_cast<std::size_t>(index)]) + ".pgm";
    write_pgm(out, path);
    std::cout << "wrote " << path << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"CNN engine for facial expression recognition"};
    app.require_subcommand(1);

    const char* env_data = std::getenv("ECNN_DATA");
    const std::string default_data = env_data ? env_data : "";

    // shared run options, filled per subcommand
    RunConfig rc;
    rc.data_path = default_data;
    std::string config_file;
    bool print_config = false;
    int subset_train = 0, subset_val = 0;

    auto add_run_options = [&](CLI::App* cmd) {
        cmd->add_option("--data", rc.data_path, "FER csv path (default: ECNN_DATA)");
        cmd->add_option("--preset,--arch", rc.arch, "preset name (shallow|deep) or DSL string");
        cmd->add_option("--out", rc.out_dir, "output directory");
        cmd->add_option("--config", config_file, "flat key=value config file");
        cmd->add_flag("--hybrid", rc.hybrid, "concatenate HOG features");
        double lr, reg, momentum, lr_decay;
        int epochs, batch;
        std::uint64_t seed;
        cmd->add_option("--lr", lr)->each([&rc](const std::string& v) { rc.lr = std::stod(v); });
        cmd->add_option("--reg", reg)->each([&rc](const std::string& v) { rc.reg = std::stod(v); });
        cmd->add_option("--momentum", momentum)->each([&rc](const std::string& v) {
            rc.momentum = std::stod(v);
        });
        cmd->add_option("--lr-decay", lr_decay)->each([&rc](const std::string& v) {
            rc.lr_decay = std::stod(v);
        });
        cmd->add_option("--epochs", epochs)->each([&rc](const std::string& v) {
            rc.epochs = std::stoi(v);
        });
        cmd->add_option("--batch", batch)->each([&rc](const std::string& v) {
            rc.batch = std::stoi(v);
        });
        cmd->add_option("--seed", seed)->each([&rc](const std::string& v) {
            rc.seed = std::stoull(v);
        });
        cmd->add_option("--subset-train", subset_train, "train on the first N samples only");
        cmd->add_option("--subset-val", subset_val, "validate on the first N samples only");
    };

    CLI::App* train_cmd = app.add_subcommand("train", "train a model and export artifacts");
    add_run_options(train_cmd);
    train_cmd->add_flag("--print-config", print_config, "dump the resolved configuration");

    CLI::App* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
    std::string ckpt, split = "test", eval_out = ".";
    std::string eval_data = default_data;
    eval_cmd->add_option("--ckpt", ckpt, "checkpoint path")->required();
    eval_cmd->add_option("--data", eval_data, "FER csv path");
    eval_cmd->add_option("--split", split, "train|val|test");
    eval_cmd->add_option("--out", eval_out, "report directory");

    CLI::App* grid_cmd = app.add_subcommand("gridsearch", "rank hyperparameter combinations");
    add_run_options(grid_cmd);
    std::vector<double> lrs, regs;
    std::vector<int> hiddens;
    int short_epochs = 3, grid_threads = 0;
    grid_cmd->add_option("--lrs", lrs, "learning rates to sweep");
    grid_cmd->add_option("--regs", regs, "regularization strengths to sweep");
    grid_cmd->add_option("--hiddens", hiddens, "first-fc widths to sweep");
    grid_cmd->add_option("--short-epochs", short_epochs, "epochs per combination");
    grid_cmd->add_option("--threads", grid_threads, "workers (default ECNN_THREADS or 1)");

    CLI::App* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient checks");
    std::string gc_arch;
    int gc_samples = 4;
    double gc_step = 1e-5;
    std::uint64_t gc_seed = 0;
    gc_cmd->add_option("--arch", gc_arch, "check one spec instead of the built-in set");
    gc_cmd->add_option("--samples", gc_samples, "batch size");
    gc_cmd->add_option("--step", gc_step, "finite-difference step");
    gc_cmd->add_option("--seed", gc_seed);

    CLI::App* sanity_cmd = app.add_subcommand("sanity", "initial-loss and overfit checks");
    add_run_options(sanity_cmd);
    bool skip_overfit = false;
    int n_small = 20, overfit_epochs = 200;
    sanity_cmd->add_flag("--skip-overfit", skip_overfit);
    sanity_cmd->add_option("--n-small", n_small, "overfit subset size");
    sanity_cmd->add_option("--max-epochs", overfit_epochs);

    CLI::App* hog_cmd = app.add_subcommand("hog", "dump HOG vectors as csv");
    std::string hog_data = default_data, hog_split = "train", hog_out = "hog.csv";
    int hog_limit = 0;
    hog_cmd->add_option("--data", hog_data)->required();
    hog_cmd->add_option("--split", hog_split, "train|val|test");
    hog_cmd->add_option("--out", hog_out, "output csv");
    hog_cmd->add_option("--limit", hog_limit, "first N images only (0 = all)");

    CLI::App* viz_cmd = app.add_subcommand("viz", "weight and activation grids");
    std::string viz_ckpt, viz_data = default_data, viz_split = "train", viz_prefix = "viz";
    int viz_index = 0, viz_cols = 8, viz_gap = 1, viz_channels = 16;
    viz_cmd->add_option("--ckpt", viz_ckpt)->required();
    viz_cmd->add_option("--data", viz_data);
    viz_cmd->add_option("--split", viz_split);
    viz_cmd->add_option("--index", viz_index, "image index in the split");
    viz_cmd->add_option("--out", viz_prefix, "output filename prefix");
    viz_cmd->add_option("--cols", viz_cols);
    viz_cmd->add_option("--gap", viz_gap);
    viz_cmd->add_option("--max-channels", viz_channels);

    CLI::App* dream_cmd = app.add_subcommand("dream", "DeepDream gradient ascent on an image");
    std::string dr_ckpt, dr_data = default_data, dr_split = "train", dr_prefix = "dream";
    int dr_index = 0, dr_layer = -1, dr_steps = 20;
    double dr_step_size = 2.0;
    dream_cmd->add_option("--ckpt", dr_ckpt)->required();
    dream_cmd->add_option("--data", dr_data);
    dream_cmd->add_option("--split", dr_split);
    dream_cmd->add_option("--index", dr_index);
    dream_cmd->add_option("--layer", dr_layer, "conv layer index (default: last)");
    dream_cmd->add_option("--steps", dr_steps);
    dream_cmd->add_option("--step-size", dr_step_size);
    dream_cmd->add_option("--out", dr_prefix, "output filename prefix");

    CLI11_PARSE(app, argc, argv);

    try {
        if (!config_file.empty()) {
            RunConfig file_rc;
            file_rc.data_path = rc.data_path;
            file_rc.merge_file(config_file);
            // flags win over the file: re-apply any explicitly set flag values
            if (!rc.lr) rc.lr = file_rc.lr;
            if (!rc.reg) rc.reg = file_rc.reg;
            if (!rc.momentum) rc.momentum = file_rc.momentum;
            if (!rc.lr_decay) rc.lr_decay = file_rc.lr_decay;
            if (!rc.epochs) rc.epochs = file_rc.epochs;
            if (!rc.batch) rc.batch = file_rc.batch;
            if (!rc.seed) rc.seed = file_rc.seed;
            if (rc.arch == "shallow" && file_rc.arch != "shallow") rc.arch = file_rc.arch;
            if (rc.out_dir == "out" && file_rc.out_dir != "out") rc.out_dir = file_rc.out_dir;
            if (rc.data_path == default_data) rc.data_path = file_rc.data_path;
            rc.hybrid = rc.hybrid || file_rc.hybrid;
        }

        if (train_cmd->parsed()) return cmd_train(rc, print_config, subset_train, subset_val);
        if (eval_cmd->parsed()) return cmd_eval(ckpt, eval_data, split, eval_out);
        if (grid_cmd->parsed()) {
            return cmd_gridsearch(rc, lrs, regs, hiddens, short_epochs, grid_threads,
                                  subset_train, subset_val);
        }
        if (gc_cmd->parsed()) return cmd_gradcheck(gc_arch, gc_samples, gc_step, gc_seed);
        if (sanity_cmd->parsed()) return cmd_sanity(rc, skip_overfit, n_small, overfit_epochs);
        if (hog_cmd->parsed()) return cmd_hog(hog_data, hog_split, hog_out, hog_limit);
        if (viz_cmd->parsed()) {
            return cmd_viz(viz_ckpt, viz_data, viz_split, viz_index, viz_prefix, viz_cols,
                           viz_gap, viz_channels);
        }
        if (dream_cmd->parsed()) {
            return cmd_dream(dr_ckpt, dr_data, dr_split, dr_index, dr_layer, dr_steps,
                             dr_step_size, dr_prefix);
        }
    } catch (const ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const ParseError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const UsageError& e) {
        std::cerr << e.what() << "\n";
        return 1;
    } catch (const DataError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const DivergenceError& e) {
        std::cerr << e.what() << "\n";
        return 3;
    }
    return 0;
}

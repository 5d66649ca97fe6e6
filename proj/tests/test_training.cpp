#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "ecnn/errors.hpp"
#include "ecnn/presets.hpp"
#include "ecnn/training.hpp"
#include "test_support.hpp"

using namespace ecnn;
using test::random_tensor;
using test::rel_error;

namespace {

// normalized synthetic splits, the standard test diet
TrainData synth_data(int n_train, int n_val, std::uint64_t seed) {
    const FerSplits s = make_synthetic_splits(n_train, n_val, 0, seed);
    const NormState norm = fit_normalizer(s.train);
    TrainData data;
    data.train = apply_normalizer(s.train, norm);
    data.val = apply_normalizer(s.val, norm);
    return data;
}

double softmax_of_forward(Model& m, const Tensor& x, const std::vector<int>& labels,
                          std::uint64_t salt) {
    return softmax_loss(forward(m, x, nullptr, Mode::train, salt), labels).loss;
}

}  // namespace

TEST_CASE("total_loss with reg zero equals the bare softmax loss") {
    const ArchSpec spec = parse_arch("conv:3x3x3,sbn|fc:5|classes:4");
    Model a = build_model(spec, 1, -1, 8, 8);
    Model b = build_model(spec, 1, -1, 8, 8);
    const Tensor x = random_tensor({4, 1, 8, 8}, 2);
    const std::vector<int> labels{0, 1, 2, 3};

    const TotalLossResult r = total_loss(a, x, labels, nullptr, 0.0, 7);
    CHECK(r.loss == softmax_of_forward(b, x, labels, 7));
}

TEST_CASE("untrained seven-class loss sits at ln 7") {
    Model m = build_model(parse_arch(preset("shallow").arch), 3);
    const Tensor x = random_tensor({16, 1, 48, 48}, 4, 30.0);
    std::vector<int> labels(16);
    for (int i = 0; i < 16; ++i) labels[static_cast<std::size_t>(i)] = i % 7;
    const TotalLossResult r = total_loss(m, x, labels, nullptr, 0.0);
    CHECK(std::abs(r.loss - 1.9459) < 0.05);
}

TEST_CASE("positive reg strictly increases the loss") {
    const ArchSpec spec = parse_arch("conv:2x3x3|fc:4|classes:3");
    Model a = build_model(spec, 5, -1, 8, 8);
    Model b = build_model(spec, 5, -1, 8, 8);
    const Tensor x = random_tensor({2, 1, 8, 8}, 6);
    const std::vector<int> labels{0, 1};
    const double plain = total_loss(a, x, labels, nullptr, 0.0).loss;
    const double reged = total_loss(b, x, labels, nullptr, 0.1).loss;
    CHECK(reged > plain);
}

TEST_CASE("sgd_step") {
    const ArchSpec spec = parse_arch("conv:1x1x1|classes:2");
    SUBCASE("plain step moves against the gradient") {
        Model m = build_model(spec, 0, -1, 2, 2);
        (*m.param_map().at("conv01_w"))[0] = 1.0;
        GradMap grads, velocity;
        grads["conv01_w"] = Tensor({1, 1, 1, 1}, 0.5);
        sgd_step(m, grads, velocity, 0.1, 0.0);
        CHECK((*m.param_map().at("conv01_w"))[0] == doctest::Approx(0.95));
    }
    SUBCASE("zero gradient leaves parameters unchanged") {
        Model m = build_model(spec, 0, -1, 2, 2);
        const double before = (*m.param_map().at("conv01_w"))[0];
        GradMap grads, velocity;
        grads["conv01_w"] = Tensor({1, 1, 1, 1}, 0.0);
        sgd_step(m, grads, velocity, 0.1, 0.9);
        CHECK((*m.param_map().at("conv01_w"))[0] == before);
    }
    SUBCASE("two momentum steps unroll to 1 + 1.9 gradient units") {
        Model m = build_model(spec, 0, -1, 2, 2);
        Tensor& w = *m.param_map().at("conv01_w");
        const double w0 = 2.0;
        w[0] = w0;
        GradMap grads, velocity;
        grads["conv01_w"] = Tensor({1, 1, 1, 1}, 0.5);
        sgd_step(m, grads, velocity, 0.1, 0.9);
        sgd_step(m, grads, velocity, 0.1, 0.9);
        CHECK(w[0] == doctest::Approx(w0 - 0.1 * 0.5 * (1.0 + 1.9)));
    }
    SUBCASE("weight decay shrinks weights when the data gradient is zero") {
        Model m = build_model(spec, 1, -1, 2, 2);
        Tensor& w = *m.param_map().at("conv01_w");
        w[0] = 3.0;
        GradMap velocity;
        const double reg = 0.2;
        double prev = std::abs(w[0]);
        for (int i = 0; i < 5; ++i) {
            GradMap grads;
            grads["conv01_w"] = Tensor({1, 1, 1, 1}, reg * w[0]);
            sgd_step(m, grads, velocity, 0.1, 0.0);
            CHECK(std::abs(w[0]) < prev);
            prev = std::abs(w[0]);
        }
    }
}

TEST_CASE("initial loss sanity") {
    SUBCASE("shallow preset passes") {
        const InitialLossReport r = sanity_initial_loss(parse_arch(preset("shallow").arch), 0);
        CHECK(r.pass);
        CHECK(r.target == doctest::Approx(std::log(7.0)));
    }
    SUBCASE("two-class toy targets ln 2") {
        const InitialLossReport r = sanity_initial_loss(parse_arch("conv:2x3x3|fc:4|classes:2"), 1);
        CHECK(r.target == doctest::Approx(std::log(2.0)));
        CHECK(r.pass);
    }
    SUBCASE("a deliberately huge classifier init fails the band") {
        Model m = build_model(parse_arch("conv:2x3x3,sbn|fc:4"), 2);
        Tensor& w = *m.param_map().at("final_w");
        for (std::int64_t i = 0; i < w.size(); ++i) w[i] *= 1e4;
        const Tensor x = random_tensor({8, 1, 48, 48}, 3, 30.0);
        std::vector<int> labels(8);
        for (int i = 0; i < 8; ++i) labels[static_cast<std::size_t>(i)] = i % 7;
        const double loss = total_loss(m, x, labels, nullptr, 0.0).loss;
        CHECK(std::abs(loss - std::log(7.0)) > 0.05);
    }
}

TEST_CASE("overfit sanity on a tiny architecture") {
    const FerSplits s = make_synthetic_splits(20, 0, 0, 11);
    const NormState norm = fit_normalizer(s.train);
    const Dataset train = apply_normalizer(s.train, norm);

    SUBCASE("a small conv net memorizes 20 samples") {
        const OverfitReport r =
            sanity_overfit(parse_arch("conv:8x3x3,sbn,pool|fc:32,bn"), train, 20, 200, 1);
        CHECK(r.pass);
        CHECK(r.final_acc == 1.0);
        CHECK(r.final_loss < 0.05);
    }
    SUBCASE("lr zero cannot learn") {
        const OverfitReport r = sanity_overfit(parse_arch("conv:8x3x3,sbn,pool|fc:32,bn"), train,
                                               20, 3, 1, /*lr=*/0.0);
        CHECK_FALSE(r.pass);
    }
}

TEST_CASE("train records history with the invariant lengths") {
    const ArchSpec spec = parse_arch("conv:4x3x3,sbn,pool|fc:8|classes:7");
    TrainConfig cfg;
    cfg.lr = 0.01;
    cfg.epochs = 2;
    cfg.batch = 128;
    cfg.seed = 9;
    TrainData data = synth_data(1000, 50, 13);

    const TrainResult r = train(spec, cfg, data);
    CHECK(r.history.loss_per_iteration.size() == 16);  // 2 * ceil(1000/128)
    CHECK(r.history.train_acc_per_epoch.size() == 2);
    CHECK(r.history.val_acc_per_epoch.size() == 2);
    CHECK(r.best_epoch >= 1);
    CHECK(r.best_epoch <= 2);
}

TEST_CASE("training is bitwise deterministic in the seed") {
    const ArchSpec spec = parse_arch("conv:3x3x3,sbn,drop0.5,pool|fc:6,bn,drop0.5");
    TrainConfig cfg;
    cfg.lr = 0.005;
    cfg.epochs = 2;
    cfg.batch = 32;
    cfg.momentum = 0.9;
    cfg.reg = 1e-4;
    cfg.seed = 21;
    TrainData data = synth_data(128, 32, 17);

    const TrainResult a = train(spec, cfg, data);
    const TrainResult b = train(spec, cfg, data);
    CHECK(a.history.loss_per_iteration == b.history.loss_per_iteration);
    CHECK(a.history.val_acc_per_epoch == b.history.val_acc_per_epoch);
    const auto pa = a.model.param_map();
    const auto pb = b.model.param_map();
    for (const auto& [name, ta] : pa) {
        const Tensor& tb = *pb.at(name);
        for (std::int64_t i = 0; i < ta->size(); ++i) CHECK((*ta)[i] == tb[i]);
    }
}

TEST_CASE("divergence aborts with the iteration number") {
    // needs a BN-free spec: batch normalization re-scales any blow-up, and a
    // merely-large lr kills every ReLU instead of overflowing
    const ArchSpec spec = parse_arch("conv:3x3x3|fc:6");
    TrainConfig cfg;
    cfg.lr = 1e200;
    cfg.epochs = 3;
    cfg.batch = 16;
    cfg.seed = 2;
    TrainData data = synth_data(64, 16, 23);
    CHECK_THROWS_AS(train(spec, cfg, data), DivergenceError);
}

TEST_CASE("grid search ranks configurations") {
    const ArchSpec spec = parse_arch("conv:3x3x3,pool|fc:8");
    TrainConfig base;
    base.batch = 32;
    base.seed = 5;
    TrainData data = synth_data(96, 32, 29);

    SUBCASE("singleton grid returns that configuration first") {
        GridSpec grid;
        grid.lr_values = {0.01};
        grid.reg_values = {1e-5};
        grid.hidden_values = {8};
        const auto ranked = grid_search(spec, grid, base, data, 1);
        REQUIRE(ranked.size() == 1);
        CHECK(ranked[0].lr == 0.01);
        CHECK(ranked[0].hidden == 8);
        CHECK_FALSE(ranked[0].diverged);
    }
    SUBCASE("divergent learning rates sort last and are flagged") {
        GridSpec grid;
        grid.lr_values = {1e200, 0.001};
        grid.reg_values = {0.0};
        grid.hidden_values = {8, 16};
        const auto ranked = grid_search(spec, grid, base, data, 1);
        REQUIRE(ranked.size() == 4);
        CHECK_FALSE(ranked.front().diverged);
        CHECK(ranked.back().diverged);
        CHECK(ranked.back().lr == 1e200);
        // deterministic tie-break on (lr, reg, hidden) for the diverged pair
        CHECK(ranked[2].hidden == 8);
        CHECK(ranked[3].hidden == 16);
    }
}

TEST_CASE("paper preset constants") {
    const Preset& shallow = preset("shallow");
    CHECK(shallow.cfg.lr == 0.001);
    CHECK(shallow.cfg.reg == 1e-6);
    CHECK(shallow.cfg.epochs == 30);
    CHECK(shallow.cfg.batch == 128);
    const ArchSpec ss = parse_arch(shallow.arch);
    CHECK(ss.fc_layers[0].width == 512);

    const Preset& deep = preset("deep");
    CHECK(deep.cfg.lr == 0.01);
    CHECK(deep.cfg.reg == 1e-7);
    CHECK(deep.cfg.epochs == 35);
    CHECK(deep.cfg.batch == 128);
    const ArchSpec ds = parse_arch(deep.arch);
    CHECK(ds.fc_layers[0].width == 256);
    CHECK(ds.fc_layers[1].width == 512);
}

TEST_CASE("grad_check tiny specs stay under 1e-4 across seeds") {
    // batch 4: batchnorm over a 2-row batch degenerates towards a sign
    // function, which finite differences cannot resolve
    const ArchSpec spec = parse_arch("conv:2x3x3,sbn,drop0.8,pool|fc:4,bn|classes:3");
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const GradCheckReport r = grad_check(spec, 4, 1e-5, seed);
        CAPTURE(seed);
        CHECK(r.worst < 1e-4);
    }
}

TEST_CASE("grad_check covers the spec'd tiny model end to end") {
    const GradCheckReport r = grad_check(parse_arch("conv:2x3x3,pool|fc:4"), 2, 1e-5, 1);
    for (const auto& [name, err] : r.group_max_rel_err) {
        CAPTURE(name);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("grad_check holds on three random tiny specs including the hybrid path") {
    // fixed seeds chosen clear of ReLU kinks: a finite-difference probe that
    // lands within the step of a kink reports spurious error
    const std::pair<const char*, std::uint64_t> cases[] = {
        {"conv:3x3x3,sbn,pool|fc:5,bn|classes:4", 2},
        {"conv:2x5x5|conv:3x3x3,drop0.7|fc:4", 0},
        {"conv:2x3x3,sbn,pool|fc:5|hog", 2},
    };
    for (const auto& [s, seed] : cases) {
        CAPTURE(s);
        CHECK(grad_check(parse_arch(s), 4, 1e-5, seed).worst < 1e-4);
    }
}

TEST_CASE("grad_check holds for preset-shaped models at tiny inputs") {
    // the shallow stack fits 8x8 inputs; the deep stack needs 16x16 for its
    // four pooling stages
    const GradCheckReport shallow =
        grad_check(parse_arch(preset("shallow").arch), 8, 1e-5, 0, 8, 0.0, 2);
    CHECK(shallow.worst < 1e-4);
    const GradCheckReport deep =
        grad_check(parse_arch(preset("deep").arch), 8, 1e-5, 0, 16, 0.0, 2);
    CHECK(deep.worst < 1e-4);
}

TEST_CASE("grad_check is step-size robust") {
    const ArchSpec spec = parse_arch("conv:2x3x3,sbn|fc:4|classes:3");
    const GradCheckReport coarse = grad_check(spec, 4, 1e-5, 3);
    const GradCheckReport fine = grad_check(spec, 4, 1e-6, 3);
    CHECK(coarse.worst < 1e-4);
    CHECK(fine.worst < 1e-4);
}

TEST_CASE("a sign-flipped analytic gradient is rejected by the rel-err metric") {
    const ArchSpec spec = parse_arch("conv:2x3x3|fc:4|classes:3");
    Model base = build_model(spec, 7, -1, 8, 8);
    const Tensor x = random_tensor({2, 1, 8, 8}, 8);
    const std::vector<int> labels{0, 1};

    Model work = base;
    const GradMap grads = total_loss(work, x, labels, nullptr, 0.0, 0).grads;
    const Tensor& gw = grads.at("fc01_w");

    // finite differences for a few coordinates of fc01_w
    for (const std::int64_t idx : {0L, 5L, 11L}) {
        const double step = 1e-5;
        Model plus = base;
        (*plus.param_map().at("fc01_w"))[idx] += step;
        Model minus = base;
        (*minus.param_map().at("fc01_w"))[idx] -= step;
        const double fd = (softmax_of_forward(plus, x, labels, 0) -
                           softmax_of_forward(minus, x, labels, 0)) /
                          (2 * step);
        CHECK(rel_error(gw[idx], fd) < 1e-4);
        if (std::abs(gw[idx]) > 1e-6) {
            CHECK(rel_error(-gw[idx], fd) > 0.99);  // the fault injection is caught
        }
    }
}

TEST_CASE("history csv export") {
    History h;
    h.loss_per_iteration = {2.0, 1.5, 1.25};
    h.train_acc_per_epoch = {0.5};
    h.val_acc_per_epoch = {0.4};
    save_history_csv(h, "hist_loss.csv", "hist_acc.csv");
    std::ifstream lf("hist_loss.csv");
    std::string line;
    std::getline(lf, line);
    CHECK(line == "iter,loss");
    int rows = 0;
    while (std::getline(lf, line)) ++rows;
    CHECK(rows == 3);
    std::remove("hist_loss.csv");
    std::remove("hist_acc.csv");
}

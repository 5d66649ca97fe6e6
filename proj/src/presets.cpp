#include "ecnn/presets.hpp"

#include <array>

#include "ecnn/errors.hpp"

namespace ecnn {

namespace {

TrainConfig make_cfg(double lr, double reg, int epochs) {
    TrainConfig cfg;
    cfg.lr = lr;
    cfg.reg = reg;
    cfg.epochs = epochs;
    cfg.batch = 128;
    return cfg;
}

const std::array<Preset, 2> kPresets = {
    Preset{"shallow",
           "conv:32x3x3,s1,sbn,drop0.5|conv:64x3x3,s1,sbn,drop0.5,pool|fc:512,bn,drop0.5",
           make_cfg(0.001, 1e-6, 30)},
    Preset{"deep",
           "conv:64x3x3,sbn,drop0.5,pool|conv:128x5x5,sbn,drop0.5,pool|"
           "conv:512x3x3,sbn,drop0.5,pool|conv:512x3x3,sbn,drop0.5,pool|"
           "fc:256,bn,drop0.5|fc:512,bn,drop0.5",
           make_cfg(0.01, 1e-7, 35)},
};

}  // namespace

const Preset& preset(const std::string& name) {
    for (const Preset& p : kPresets) {
        if (p.name == name) return p;
    }
    throw ConfigError("unknown preset '" + name + "' (expected shallow or deep)");
}

bool is_preset(const std::string& name) {
    for (const Preset& p : kPresets) {
        if (p.name == name) return true;
    }
    return false;
}

}  // namespace ecnn

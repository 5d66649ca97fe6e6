#pragma once

#include <string>

#include "ecnn/training.hpp"

namespace ecnn {

// named model configurations; tests and the CLI read these instead of
// re-typing the constants
struct Preset {
    std::string name;
    std::string arch;
    TrainConfig cfg;
};

// "shallow": 2 conv + 1 fc, lr 0.001, reg 1e-6, 30 epochs, batch 128
// "deep":    4 conv + 2 fc, lr 0.01, reg 1e-7, 35 epochs, batch 128
const Preset& preset(const std::string& name);
bool is_preset(const std::string& name);

}  // namespace ecnn

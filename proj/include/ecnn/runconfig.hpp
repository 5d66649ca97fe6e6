#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>

#include "ecnn/presets.hpp"

namespace ecnn {

// declarative run configuration: defaults <- preset <- config file <- flags
struct RunConfig {
    std::string data_path;       // default from ECNN_DATA
    std::string arch = "shallow";  // preset name or architecture DSL
    std::string out_dir = "out";
    bool hybrid = false;
    std::optional<double> lr, reg, momentum, lr_decay;
    std::optional<int> epochs, batch;
    std::optional<std::uint64_t> seed;

    // merge keys from a flat key=value file ('#' comments); keys already set
    // on this object are NOT overwritten when `weak` is true
    void merge_file(const std::string& path);
};

struct ResolvedRun {
    std::string data_path;
    std::string arch_text;  // DSL, preset expanded
    ArchSpec spec;
    TrainConfig cfg;
    std::string out_dir;
};

// expand preset/DSL and fill remaining TrainConfig fields; seed defaults 42
ResolvedRun resolve_run(const RunConfig& rc);

// fully-resolved key=value dump for --print-config
void print_run(const ResolvedRun& run, std::ostream& os);

}  // namespace ecnn

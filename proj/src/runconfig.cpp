#include "ecnn/runconfig.hpp"

#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "ecnn/errors.hpp"

namespace ecnn {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, const std::string& key) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

}  // namespace

void RunConfig::merge_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("expected key=value at line " + std::to_string(line_no) + " of " +
                              path);
        }
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        try {
            if (key == "data") data_path = value;
            else if (key == "arch") arch = value;
            else if (key == "out") out_dir = value;
            else if (key == "hybrid") hybrid = parse_bool(value, key);
            else if (key == "lr") lr = std::stod(value);
            else if (key == "reg") reg = std::stod(value);
            else if (key == "momentum") momentum = std::stod(value);
            else if (key == "lr_decay") lr_decay = std::stod(value);
            else if (key == "epochs") epochs = std::stoi(value);
            else if (key == "batch") batch = std::stoi(value);
            else if (key == "seed") seed = std::stoull(value);
            else throw ConfigError("unknown config key '" + key + "'");
        } catch (const ConfigError&) {
            throw;
        } catch (const std::exception&) {
            throw ConfigError("bad value for " + key + " at line " + std::to_string(line_no) +
                              " of " + path);
        }
    }
}

ResolvedRun resolve_run(const RunConfig& rc) {
    ResolvedRun run;
    run.out_dir = rc.out_dir;
    run.data_path = rc.data_path;
    if (run.data_path.empty()) {
        if (const char* env = std::getenv("ECNN_DATA")) run.data_path = env;
    }

    if (is_preset(rc.arch)) {
        const Preset& p = preset(rc.arch);
        run.arch_text = p.arch;
        run.cfg = p.cfg;
    } else {
        run.arch_text = rc.arch;
        run.cfg = TrainConfig{};
    }
    if (rc.hybrid && run.arch_text.find("|hog") == std::string::npos) {
        run.arch_text += "|hog";
    }
    run.spec = parse_arch(run.arch_text);
    run.cfg.hybrid = run.spec.hog_concat;

    if (rc.lr) run.cfg.lr = *rc.lr;
    if (rc.reg) run.cfg.reg = *rc.reg;
    if (rc.momentum) run.cfg.momentum = *rc.momentum;
    if (rc.lr_decay) run.cfg.lr_decay = *rc.lr_decay;
    if (rc.epochs) run.cfg.epochs = *rc.epochs;
    if (rc.batch) run.cfg.batch = *rc.batch;
    run.cfg.seed = rc.seed.value_or(42);
    return run;
}

void print_run(const ResolvedRun& run, std::ostream& os) {
    std::ostringstream body;
    body.precision(17);
    body << "arch=" << run.arch_text << '\n'
         << "batch=" << run.cfg.batch << '\n'
         << "data=" << run.data_path << '\n'
         << "epochs=" << run.cfg.epochs << '\n'
         << "hybrid=" << (run.cfg.hybrid ? "true" : "false") << '\n'
         << "lr=" << run.cfg.lr << '\n'
         << "lr_decay=" << run.cfg.lr_decay << '\n'
         << "momentum=" << run.cfg.momentum << '\n'
         << "out=" << run.out_dir << '\n'
         << "reg=" << run.cfg.reg << '\n'
         << "seed=" << run.cfg.seed << '\n';
    os << body.str();
}

}  // namespace ecnn

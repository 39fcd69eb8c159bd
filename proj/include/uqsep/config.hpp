#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uqsep/defaults.hpp"
#include "uqsep/errors.hpp"
#include "uqsep/problems.hpp"
#include "uqsep/separation.hpp"

namespace uqsep {

// One key=value entry with its source line, for line-precise diagnostics.
struct ConfigEntry {
    std::string value;
    int line = 0;
};

struct ConfigFile {
    std::string path;
    std::string text;  // verbatim, echoed into run directories
    std::map<std::string, std::map<std::string, ConfigEntry>> sections;

    bool has(const std::string& section, const std::string& key) const {
        const auto s = sections.find(section);
        return s != sections.end() && s->second.count(key) > 0;
    }
    const ConfigEntry& at(const std::string& section, const std::string& key) const {
        return sections.at(section).at(key);
    }
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace detail

// INI-style parser: [section] headers, key = value lines, # or ; comments.
inline ConfigFile parse_config_text(const std::string& text, const std::string& path = "<config>") {
    ConfigFile cfg;
    cfg.path = path;
    cfg.text = text;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const auto comment = line.find_first_of("#;");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError(path + ":" + std::to_string(lineno) + ": malformed section header");
            section = detail::trim(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError(path + ":" + std::to_string(lineno) + ": empty section name");
            cfg.sections[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError(path + ":" + std::to_string(lineno) + ": expected key = value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(path + ":" + std::to_string(lineno) + ": empty key");
        if (section.empty())
            throw ConfigError(path + ":" + std::to_string(lineno) + ": key outside any section");
        cfg.sections[section][key] = ConfigEntry{value, lineno};
    }
    return cfg;
}

inline ConfigFile parse_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file " + path);
    std::string text((std::istreambuf_iterator<char>(in)), {});
    return parse_config_text(text, path);
}

// Everything a run needs, resolved from the defaults plus config overrides.
struct RunConfig {
    std::string problem_name = "toy";
    int n_points = 0;  // 0 -> problem default
    bool gap_regions = true;
    bool noise_regions = true;
    SeparationConfig separation = default_separation_config("toy");
    std::uint64_t seed = 0;
    std::string out_dir;
    std::string echo;
};

namespace detail {

inline ConfigError value_error(const ConfigFile& f, const std::string& section, const std::string& key,
                               const std::string& what) {
    const auto& e = f.at(section, key);
    return ConfigError(f.path + ":" + std::to_string(e.line) + ": [" + section + "] " + key + ": " + what);
}

inline double get_double(const ConfigFile& f, const std::string& s, const std::string& k, double dflt) {
    if (!f.has(s, k)) return dflt;
    try {
        std::size_t pos = 0;
        const double v = std::stod(f.at(s, k).value, &pos);
        if (pos != f.at(s, k).value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw value_error(f, s, k, "expected a real number, got '" + f.at(s, k).value + "'");
    }
}

inline long long get_int(const ConfigFile& f, const std::string& s, const std::string& k, long long dflt) {
    if (!f.has(s, k)) return dflt;
    try {
        std::size_t pos = 0;
        const long long v = std::stoll(f.at(s, k).value, &pos);
        if (pos != f.at(s, k).value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw value_error(f, s, k, "expected an integer, got '" + f.at(s, k).value + "'");
    }
}

inline std::uint64_t get_u64(const ConfigFile& f, const std::string& s, const std::string& k,
                             std::uint64_t dflt) {
    if (!f.has(s, k)) return dflt;
    try {
        std::size_t pos = 0;
        const std::uint64_t v = std::stoull(f.at(s, k).value, &pos);
        if (pos != f.at(s, k).value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (const std::exception&) {
        throw value_error(f, s, k, "expected an unsigned integer, got '" + f.at(s, k).value + "'");
    }
}

inline bool get_bool(const ConfigFile& f, const std::string& s, const std::string& k, bool dflt) {
    if (!f.has(s, k)) return dflt;
    const std::string& v = f.at(s, k).value;
    if (v == "true" || v == "on" || v == "1") return true;
    if (v == "false" || v == "off" || v == "0") return false;
    throw value_error(f, s, k, "expected true/false, got '" + v + "'");
}

inline std::string get_string(const ConfigFile& f, const std::string& s, const std::string& k,
                              const std::string& dflt) {
    return f.has(s, k) ? f.at(s, k).value : dflt;
}

inline std::vector<int> get_int_list(const ConfigFile& f, const std::string& s, const std::string& k,
                                     std::vector<int> dflt) {
    if (!f.has(s, k)) return dflt;
    std::vector<int> out;
    std::stringstream ss(f.at(s, k).value);
    std::string cell;
    while (std::getline(ss, cell, ',')) {
        try {
            out.push_back(std::stoi(trim(cell)));
        } catch (const std::exception&) {
            throw value_error(f, s, k, "expected comma-separated integers");
        }
    }
    if (out.empty()) throw value_error(f, s, k, "expected at least one integer");
    return out;
}

inline void reject_unknown_keys(const ConfigFile& f) {
    static const std::map<std::string, std::vector<std::string>> schema = {
        {"run", {"seed", "out_dir"}},
        {"problem", {"name", "n_points", "gap_regions", "noise_regions"}},
        {"surrogate", {"kind", "members", "alpha", "bag_fraction", "dropout_rate", "passes"}},
        {"network", {"hidden", "activation"}},
        {"train", {"epochs", "batch_size", "learning_rate", "weight_init_scale", "dropout_rate"}},
        {"separation", {"iterations", "threshold", "n_acquire", "activity_floor"}},
        {"grid", {"res_x", "res_y"}},
    };
    for (const auto& [section, keys] : f.sections) {
        const auto it = schema.find(section);
        if (it == schema.end()) throw ConfigError(f.path + ": unknown section [" + section + "]");
        for (const auto& [key, entry] : keys) {
            bool known = false;
            for (const auto& k : it->second) known = known || k == key;
            if (!known)
                throw ConfigError(f.path + ":" + std::to_string(entry.line) + ": unknown key '" + key +
                                  "' in [" + section + "]");
        }
    }
}

}  // namespace detail

inline RunConfig resolve_run_config(const ConfigFile& f) {
    using namespace detail;
    reject_unknown_keys(f);

    RunConfig rc;
    rc.echo = f.text;
    rc.problem_name = get_string(f, "problem", "name", "toy");
    if (rc.problem_name != "toy" && rc.problem_name != "robot")
        throw ConfigError(f.path + ": [problem] name must be 'toy' or 'robot'");

    rc.separation = default_separation_config(rc.problem_name);
    SeparationConfig& sc = rc.separation;

    rc.n_points = static_cast<int>(get_int(f, "problem", "n_points", 0));
    if (f.has("problem", "n_points") && rc.n_points <= 0)
        throw value_error(f, "problem", "n_points", "must be positive");
    rc.gap_regions = get_bool(f, "problem", "gap_regions", true);
    rc.noise_regions = get_bool(f, "problem", "noise_regions", true);
    sc.initial_points = rc.n_points;

    const std::string kind = get_string(f, "surrogate", "kind", "eqr");
    if (kind == "eqr") sc.kind = SurrogateKind::eqr;
    else if (kind == "de") sc.kind = SurrogateKind::de;
    else if (kind == "mc_dropout") sc.kind = SurrogateKind::mc_dropout;
    else throw ConfigError(f.path + ": [surrogate] kind must be eqr, de or mc_dropout");

    const int members = static_cast<int>(get_int(f, "surrogate", "members", sc.eqr.n_members));
    const double alpha = get_double(f, "surrogate", "alpha", sc.eqr.alpha.alpha);
    const double bag = get_double(f, "surrogate", "bag_fraction", sc.eqr.bag_fraction);
    sc.eqr.n_members = members;
    sc.de.n_members = members;
    try {
        sc.eqr.alpha = AlphaLevel{alpha};
    } catch (const ConfigError&) {
        throw value_error(f, "surrogate", "alpha", "must lie in (0, 0.5)");
    }
    sc.eqr.bag_fraction = bag;
    sc.de.bag_fraction = bag;
    sc.mc.dropout_rate = get_double(f, "surrogate", "dropout_rate", sc.mc.dropout_rate);
    sc.mc.n_passes = static_cast<int>(get_int(f, "surrogate", "passes", sc.mc.n_passes));

    MlpArchitecture arch = sc.eqr.arch;
    arch.hidden = get_int_list(f, "network", "hidden", arch.hidden);
    for (int h : arch.hidden)
        if (h <= 0) throw value_error(f, "network", "hidden", "layer widths must be positive");
    const std::string act = get_string(f, "network", "activation", "tanh");
    if (act == "tanh") arch.activation = Activation::tanh;
    else if (act == "relu") arch.activation = Activation::relu;
    else throw ConfigError(f.path + ": [network] activation must be tanh or relu");

    TrainConfig train = sc.eqr.train;
    train.epochs = static_cast<int>(get_int(f, "train", "epochs", train.epochs));
    train.batch_size = static_cast<int>(get_int(f, "train", "batch_size", train.batch_size));
    train.learning_rate = get_double(f, "train", "learning_rate", train.learning_rate);
    train.weight_init_scale = get_double(f, "train", "weight_init_scale", train.weight_init_scale);
    train.dropout_rate = get_double(f, "train", "dropout_rate", train.dropout_rate);
    try {
        train.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(f.path + ": [train] " + e.what());
    }

    sc.eqr.arch = arch;
    sc.de.arch = arch;
    sc.mc.arch = arch;
    sc.eqr.train = train;
    sc.de.train = train;
    sc.mc.train = train;

    sc.iterations = static_cast<int>(get_int(f, "separation", "iterations", sc.iterations));
    sc.threshold = get_double(f, "separation", "threshold", sc.threshold);
    sc.n_acquire = static_cast<int>(get_int(f, "separation", "n_acquire", sc.n_acquire));
    sc.activity_rel_floor = get_double(f, "separation", "activity_floor", sc.activity_rel_floor);
    sc.grid_res_x = static_cast<int>(get_int(f, "grid", "res_x", sc.grid_res_x));
    sc.grid_res_y = static_cast<int>(get_int(f, "grid", "res_y", sc.grid_res_y));
    try {
        sc.validate();
    } catch (const ConfigError& e) {
        throw ConfigError(f.path + ": [separation] " + e.what());
    }

    rc.seed = get_u64(f, "run", "seed", 0);
    sc.seed = rc.seed;
    rc.out_dir = get_string(f, "run", "out_dir", "");
    return rc;
}

inline Problem make_problem(const RunConfig& rc) {
    Problem p = rc.problem_name == "robot" ? robot_problem(rc.gap_regions) : toy_problem();
    if (rc.problem_name == "toy") {
        if (!rc.gap_regions) p.drop_regions(RegionPurpose::data_gap);
        if (!rc.noise_regions) p.drop_regions(RegionPurpose::noise);
    }
    return p;
}

}  // namespace uqsep

#pragma once

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "uqsep/errors.hpp"

namespace uqsep {

// Growing pool of (input, target) pairs; round_tag records the acquisition
// round that produced each row (0 = initial design).
struct Dataset {
    std::vector<std::vector<double>> inputs;
    std::vector<std::vector<double>> targets;
    std::vector<int> rounds;

    std::size_t size() const { return inputs.size(); }
    int input_dim() const { return inputs.empty() ? 0 : static_cast<int>(inputs.front().size()); }
    int output_dim() const { return targets.empty() ? 0 : static_cast<int>(targets.front().size()); }

    void append(std::vector<double> x, std::vector<double> y, int round) {
        if (round < 0) throw ConfigError("round_tag must be non-negative");
        inputs.push_back(std::move(x));
        targets.push_back(std::move(y));
        rounds.push_back(round);
    }

    void validate() const {
        if (inputs.size() != targets.size() || inputs.size() != rounds.size())
            throw ShapeError("dataset column lengths differ");
        for (std::size_t i = 0; i < inputs.size(); ++i) {
            if (inputs[i].size() != inputs.front().size() || targets[i].size() != targets.front().size())
                throw ShapeError("ragged dataset row " + std::to_string(i));
            for (double v : inputs[i])
                if (!std::isfinite(v)) throw ShapeError("non-finite input in row " + std::to_string(i));
            for (double v : targets[i])
                if (!std::isfinite(v)) throw ShapeError("non-finite target in row " + std::to_string(i));
            if (rounds[i] < 0) throw ShapeError("negative round_tag in row " + std::to_string(i));
        }
    }

    // Population standard deviation per output; used as the natural scale of
    // each target channel.
    std::vector<double> target_scales() const {
        std::vector<double> out(output_dim(), 0.0);
        if (targets.empty()) return out;
        const std::size_t n = targets.size();
        for (int o = 0; o < output_dim(); ++o) {
            double mean = 0.0;
            for (const auto& t : targets) mean += t[o];
            mean /= static_cast<double>(n);
            double var = 0.0;
            for (const auto& t : targets) var += (t[o] - mean) * (t[o] - mean);
            out[o] = std::sqrt(var / static_cast<double>(n));
        }
        return out;
    }
};

// 17 significant digits: lossless text round-trip for 64-bit floats.
inline std::string format_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void save_dataset_csv(const std::string& path, const Dataset& ds) {
    ds.validate();
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    const int d = ds.input_dim(), o = ds.output_dim();
    for (int i = 0; i < d; ++i) out << "x" << i << ",";
    for (int i = 0; i < o; ++i) out << "y" << i << ",";
    out << "round\n";
    for (std::size_t r = 0; r < ds.size(); ++r) {
        for (double v : ds.inputs[r]) out << format_double(v) << ",";
        for (double v : ds.targets[r]) out << format_double(v) << ",";
        out << ds.rounds[r] << "\n";
    }
    if (!out) throw IoError("write failure on " + path);
}

inline Dataset load_dataset_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw ParseError(path + ": empty file");

    auto split = [](const std::string& s) {
        std::vector<std::string> cells;
        std::string cur;
        std::stringstream ss(s);
        while (std::getline(ss, cur, ',')) cells.push_back(cur);
        return cells;
    };

    const auto header = split(line);
    int d = 0, o = 0;
    for (const auto& h : header) {
        if (h.size() > 1 && h[0] == 'x') ++d;
        else if (h.size() > 1 && h[0] == 'y') ++o;
        else if (h != "round") throw ParseError(path + ": row 1: unexpected column '" + h + "'");
    }
    if (d == 0 || o == 0 || header.size() != static_cast<std::size_t>(d + o + 1))
        throw ParseError(path + ": row 1: malformed header");

    Dataset ds;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto cells = split(line);
        if (cells.size() != static_cast<std::size_t>(d + o + 1))
            throw ParseError(path + ": row " + std::to_string(row) + ": expected " +
                             std::to_string(d + o + 1) + " columns, got " + std::to_string(cells.size()));
        std::vector<double> x(d), y(o);
        try {
            std::size_t pos = 0;
            for (int i = 0; i < d; ++i) x[i] = std::stod(cells[i], &pos);
            for (int i = 0; i < o; ++i) y[i] = std::stod(cells[d + i], &pos);
            ds.append(std::move(x), std::move(y), std::stoi(cells[d + o]));
        } catch (const std::exception&) {
            throw ParseError(path + ": row " + std::to_string(row) + ": numeric parse failure");
        }
    }
    ds.validate();
    return ds;
}

}  // namespace uqsep

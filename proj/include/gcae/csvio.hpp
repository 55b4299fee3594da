#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "gcae/common.hpp"

namespace gcae {

// Deterministic float formatting: C locale semantics, shortest stable form.
inline std::string fmt_num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

inline std::string fmt_num(float v) { return fmt_num(static_cast<double>(v)); }

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    void write(const std::string& path) const {
        std::ofstream os(path, std::ios::trunc);
        if (!os) throw IoError("cannot create " + path);
        for (size_t i = 0; i < header.size(); ++i) os << (i ? "," : "") << header[i];
        os << "\n";
        for (const auto& row : rows) {
            for (size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << row[i];
            os << "\n";
        }
        if (!os) throw IoError("write failed for " + path);
    }

    static CsvTable read(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw IoError("cannot open " + path);
        CsvTable t;
        std::string line;
        bool first = true;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            std::vector<std::string> cells;
            std::stringstream ss(line);
            std::string cell;
            while (std::getline(ss, cell, ',')) cells.push_back(cell);
            if (line.back() == ',') cells.push_back("");
            if (first) {
                t.header = std::move(cells);
                first = false;
            } else {
                t.rows.push_back(std::move(cells));
            }
        }
        return t;
    }

    int column(const std::string& name) const {
        for (size_t i = 0; i < header.size(); ++i)
            if (header[i] == name) return static_cast<int>(i);
        throw IoError("csv column not found: " + name);
    }
};

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw IoError("cannot create directory " + dir + ": " + ec.message());
}

// Flat ordered key=value text (config echoes, checkpoint blobs).
using KvPairs = std::vector<std::pair<std::string, std::string>>;

inline std::string kv_to_text(const KvPairs& kv) {
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

inline KvPairs kv_from_text(const std::string& text) {
    KvPairs kv;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) {
        if (line.empty() || line[0] == '#') continue;
        const size_t eq = line.find('=');
        if (eq == std::string::npos) continue;
        kv.emplace_back(line.substr(0, eq), line.substr(eq + 1));
    }
    return kv;
}

inline const std::string* kv_find(const KvPairs& kv, const std::string& key) {
    for (const auto& [k, v] : kv)
        if (k == key) return &v;
    return nullptr;
}

}  // namespace gcae

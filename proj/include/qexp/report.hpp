#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qexp/errors.hpp"

namespace qexp {

// Shortest exact decimal rendering; the same double always prints the same
// bytes, which is what the determinism contract on CSV artifacts rests on.
inline std::string format_number(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::string cell(double v) { return format_number(v); }
inline std::string cell(int v) { return std::to_string(v); }
inline std::string cell(std::string v) { return v; }
inline std::string cell(const char* v) { return v; }

// Cells must not contain commas or newlines; every value written here is a
// number or a short identifier.
struct CsvTable {
    std::string name;  // file stem, becomes <name>.csv
    std::vector<std::string> columns;
    std::vector<std::vector<std::string>> rows;
};

inline std::string render_csv(const CsvTable& table) {
    std::string out;
    for (std::size_t c = 0; c < table.columns.size(); ++c) {
        if (c) out += ',';
        out += table.columns[c];
    }
    out += '\n';
    for (const auto& row : table.rows) {
        if (row.size() != table.columns.size())
            throw ConfigError("csv table '" + table.name + "' has a row of width " +
                              std::to_string(row.size()) + ", expected " +
                              std::to_string(table.columns.size()));
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (row[c].find_first_of(",\n") != std::string::npos)
                throw ConfigError("csv table '" + table.name + "' has a cell with a comma or "
                                  "newline: '" + row[c] + "'");
            if (c) out += ',';
            out += row[c];
        }
        out += '\n';
    }
    return out;
}

struct CheckVerdict {
    std::string name;
    std::string status;  // pass | fail | skipped
    double observed = 0.0;
    double limit = 0.0;  // the bound or tolerance the observation was held to
    std::string detail;
};

inline CheckVerdict make_check(std::string name, bool ok, double observed, double limit,
                               std::string detail = {}) {
    CheckVerdict v;
    v.name = std::move(name);
    v.status = ok ? "pass" : "fail";
    v.observed = observed;
    v.limit = limit;
    v.detail = std::move(detail);
    return v;
}

inline CheckVerdict skip_check(std::string name, std::string why) {
    CheckVerdict v;
    v.name = std::move(name);
    v.status = "skipped";
    v.detail = std::move(why);
    return v;
}

struct RunManifest {
    std::string scenario;
    nlohmann::ordered_json config_echo;
    std::vector<std::string> artifacts;
    std::vector<std::pair<std::string, double>> timings_ms;
    std::vector<CheckVerdict> checks;
    std::vector<std::string> notes;

    bool all_passed() const {
        for (const auto& c : checks)
            if (c.status == "fail") return false;
        return true;
    }
    int exit_code() const { return all_passed() ? 0 : 1; }
};

inline nlohmann::ordered_json manifest_json(const RunManifest& m) {
    nlohmann::ordered_json j;
    j["scenario"] = m.scenario;
    j["config"] = m.config_echo;
    j["artifacts"] = m.artifacts;
    nlohmann::ordered_json timings = nlohmann::ordered_json::object();
    for (const auto& [name, ms] : m.timings_ms) timings[name] = ms;
    j["timings_ms"] = timings;
    nlohmann::ordered_json checks = nlohmann::ordered_json::array();
    for (const auto& c : m.checks) {
        nlohmann::ordered_json e;
        e["name"] = c.name;
        e["status"] = c.status;
        e["observed"] = c.observed;
        e["limit"] = c.limit;
        e["detail"] = c.detail;
        checks.push_back(e);
    }
    j["checks"] = checks;
    j["notes"] = m.notes;
    j["exit_code"] = m.exit_code();
    return j;
}

// One-page text report. Timings are deliberately left out so the summary is
// byte-stable across identical runs.
inline std::string render_summary(const RunManifest& m) {
    int pass = 0, fail = 0, skipped = 0;
    for (const auto& c : m.checks) {
        if (c.status == "pass") ++pass;
        if (c.status == "fail") ++fail;
        if (c.status == "skipped") ++skipped;
    }
    std::string out = "scenario: " + m.scenario + "\n";
    out += "checks: " + std::to_string(pass) + " pass, " + std::to_string(fail) + " fail, " +
           std::to_string(skipped) + " skipped\n";
    for (const auto& c : m.checks) {
        out += "  [" + c.status + "] " + c.name;
        if (c.status != "skipped")
            out += "  observed=" + format_number(c.observed) + " limit=" + format_number(c.limit);
        if (!c.detail.empty()) out += "  " + c.detail;
        out += '\n';
    }
    if (!m.notes.empty()) {
        out += "notes:\n";
        for (const auto& n : m.notes) out += "  " + n + "\n";
    }
    out += "artifacts:\n";
    for (const auto& a : m.artifacts) out += "  " + a + "\n";
    out += "exit: " + std::to_string(m.exit_code()) + "\n";
    return out;
}

inline void write_text_file(const std::string& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw ConfigError("cannot open '" + path + "' for writing");
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw ConfigError("write to '" + path + "' failed");
}

}  // namespace qexp

#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "qexp/errors.hpp"
#include "qexp/model.hpp"
#include "qexp/picard.hpp"
#include "qexp/presets.hpp"
#include "qexp/time_grid.hpp"

namespace qexp {

struct PresetRef {
    std::string preset;
    nlohmann::ordered_json params = nlohmann::ordered_json::object();
};

struct CascadeConfig {
    std::vector<int> levels = {1, 2, 4, 8};  // n and m both sweep these
    int k_trunc = 2;
};

struct ExperimentConfig {
    std::string scenario;
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    TimeGrid grid{0.0, 1.0, 50};
    std::string backend = "lattice";  // lattice | regression
    int n_paths = 4000;
    int basis_degree = 2;
    PicardOptions picard{};
    std::optional<PresetRef> model;
    std::optional<PresetRef> driver;
    std::optional<PresetRef> terminal;
    CascadeConfig cascade{};
    nlohmann::ordered_json scenario_params = nlohmann::ordered_json::object();
    nlohmann::ordered_json echo = nlohmann::ordered_json::object();  // document + overrides
};

namespace detail {

inline const nlohmann::ordered_json& expect_object(const nlohmann::ordered_json& j,
                                                   const std::string& path) {
    if (!j.is_object()) throw ConfigError(path + ": expected an object");
    return j;
}

inline double expect_number(const nlohmann::ordered_json& j, const std::string& path) {
    if (!j.is_number()) throw ConfigError(path + ": expected a number");
    return j.get<double>();
}

inline int expect_int(const nlohmann::ordered_json& j, const std::string& path) {
    if (!j.is_number_integer()) throw ConfigError(path + ": expected an integer");
    return j.get<int>();
}

inline std::string expect_string(const nlohmann::ordered_json& j, const std::string& path) {
    if (!j.is_string()) throw ConfigError(path + ": expected a string");
    return j.get<std::string>();
}

inline void reject_unknown_keys(const nlohmann::ordered_json& j, const std::string& path,
                                const std::vector<std::string>& allowed) {
    for (const auto& item : j.items())
        if (std::find(allowed.begin(), allowed.end(), item.key()) == allowed.end()) {
            std::string known;
            for (const auto& k : allowed) known += (known.empty() ? "" : ", ") + k;
            throw ConfigError(path + "." + item.key() + ": unknown key (known: " + known + ")");
        }
}

// Tracks which parameters a preset factory consumed so leftovers can be
// reported with their JSON path.
struct Params {
    const nlohmann::ordered_json& j;
    std::string path;
    std::vector<std::string> known;

    double num(const std::string& key, double fallback) {
        known.push_back(key);
        if (!j.contains(key)) return fallback;
        return expect_number(j.at(key), path + "." + key);
    }
    bool flag(const std::string& key, bool fallback) {
        known.push_back(key);
        if (!j.contains(key)) return fallback;
        if (!j.at(key).is_boolean()) throw ConfigError(path + "." + key + ": expected a boolean");
        return j.at(key).get<bool>();
    }
    std::vector<std::vector<double>> nested(const std::string& key,
                                            std::vector<std::vector<double>> fallback) {
        known.push_back(key);
        if (!j.contains(key)) return fallback;
        const auto& v = j.at(key);
        if (!v.is_array()) throw ConfigError(path + "." + key + ": expected an array of arrays");
        std::vector<std::vector<double>> out;
        for (std::size_t d = 0; d < v.size(); ++d) {
            const auto& inner = v[d];
            const std::string ipath = path + "." + key + "[" + std::to_string(d) + "]";
            if (!inner.is_array()) throw ConfigError(ipath + ": expected an array");
            std::vector<double> row;
            for (std::size_t i = 0; i < inner.size(); ++i)
                row.push_back(expect_number(inner[i], ipath + "[" + std::to_string(i) + "]"));
            out.push_back(std::move(row));
        }
        return out;
    }
    void finish() const {
        for (const auto& item : j.items())
            if (std::find(known.begin(), known.end(), item.key()) == known.end())
                throw ConfigError(path + "." + item.key() + ": unknown parameter");
    }
};

inline PresetRef parse_preset_ref(const nlohmann::ordered_json& j, const std::string& path) {
    expect_object(j, path);
    reject_unknown_keys(j, path, {"preset", "params"});
    if (!j.contains("preset")) throw ConfigError(path + ".preset: required");
    PresetRef ref;
    ref.preset = expect_string(j.at("preset"), path + ".preset");
    if (j.contains("params")) ref.params = expect_object(j.at("params"), path + ".params");
    return ref;
}

}  // namespace detail

inline ExperimentConfig parse_config(const nlohmann::ordered_json& doc) {
    detail::expect_object(doc, "config");
    detail::reject_unknown_keys(
        doc, "config",
        {"scenario", "seed", "out_dir", "grid", "backend", "n_paths", "basis_degree", "picard",
         "model", "driver", "terminal", "cascade", "scenario_params"});

    ExperimentConfig cfg;
    cfg.echo = doc;
    if (!doc.contains("scenario")) throw ConfigError("config.scenario: required");
    cfg.scenario = detail::expect_string(doc.at("scenario"), "config.scenario");

    if (doc.contains("seed")) {
        const auto& s = doc.at("seed");
        if (!s.is_number_integer() || s.get<long long>() < 0)
            throw ConfigError("config.seed: expected a nonnegative integer");
        cfg.seed = s.get<std::uint64_t>();
    }
    if (doc.contains("out_dir"))
        cfg.out_dir = detail::expect_string(doc.at("out_dir"), "config.out_dir");

    if (doc.contains("grid")) {
        const auto& g = detail::expect_object(doc.at("grid"), "config.grid");
        detail::reject_unknown_keys(g, "config.grid", {"t0", "horizon", "n_steps"});
        const double t0 = g.contains("t0") ? detail::expect_number(g.at("t0"), "config.grid.t0") : 0.0;
        const double horizon =
            g.contains("horizon") ? detail::expect_number(g.at("horizon"), "config.grid.horizon") : 1.0;
        const int n = g.contains("n_steps") ? detail::expect_int(g.at("n_steps"), "config.grid.n_steps")
                                            : 50;
        try {
            cfg.grid = TimeGrid(t0, horizon, n);
        } catch (const Error& e) {
            throw ConfigError(std::string("config.grid: ") + e.what());
        }
    }

    if (doc.contains("backend")) {
        cfg.backend = detail::expect_string(doc.at("backend"), "config.backend");
        if (cfg.backend != "lattice" && cfg.backend != "regression")
            throw ConfigError("config.backend: expected 'lattice' or 'regression'");
    }
    if (doc.contains("n_paths")) {
        cfg.n_paths = detail::expect_int(doc.at("n_paths"), "config.n_paths");
        if (cfg.n_paths < 1) throw ConfigError("config.n_paths: must be >= 1");
    }
    if (doc.contains("basis_degree")) {
        cfg.basis_degree = detail::expect_int(doc.at("basis_degree"), "config.basis_degree");
        if (cfg.basis_degree < 0) throw ConfigError("config.basis_degree: must be >= 0");
    }

    if (doc.contains("picard")) {
        const auto& p = detail::expect_object(doc.at("picard"), "config.picard");
        detail::reject_unknown_keys(p, "config.picard",
                                    {"tolerance", "max_iters", "divergence_window"});
        if (p.contains("tolerance")) {
            cfg.picard.tol = detail::expect_number(p.at("tolerance"), "config.picard.tolerance");
            if (!(cfg.picard.tol > 0.0)) throw ConfigError("config.picard.tolerance: must be > 0");
        }
        if (p.contains("max_iters")) {
            cfg.picard.max_iters = detail::expect_int(p.at("max_iters"), "config.picard.max_iters");
            if (cfg.picard.max_iters < 1) throw ConfigError("config.picard.max_iters: must be >= 1");
        }
        if (p.contains("divergence_window"))
            cfg.picard.divergence_window =
                detail::expect_int(p.at("divergence_window"), "config.picard.divergence_window");
    }

    if (doc.contains("model")) cfg.model = detail::parse_preset_ref(doc.at("model"), "config.model");
    if (doc.contains("driver"))
        cfg.driver = detail::parse_preset_ref(doc.at("driver"), "config.driver");
    if (doc.contains("terminal"))
        cfg.terminal = detail::parse_preset_ref(doc.at("terminal"), "config.terminal");

    if (doc.contains("cascade")) {
        const auto& c = detail::expect_object(doc.at("cascade"), "config.cascade");
        detail::reject_unknown_keys(c, "config.cascade", {"levels", "k_trunc"});
        if (c.contains("levels")) {
            if (!c.at("levels").is_array())
                throw ConfigError("config.cascade.levels: expected an array of integers");
            cfg.cascade.levels.clear();
            for (std::size_t i = 0; i < c.at("levels").size(); ++i) {
                const int v = detail::expect_int(c.at("levels")[i], "config.cascade.levels[" +
                                                                        std::to_string(i) + "]");
                if (v < 1)
                    throw ConfigError("config.cascade.levels[" + std::to_string(i) +
                                      "]: must be >= 1");
                cfg.cascade.levels.push_back(v);
            }
            if (cfg.cascade.levels.empty())
                throw ConfigError("config.cascade.levels: must not be empty");
        }
        if (c.contains("k_trunc")) {
            cfg.cascade.k_trunc = detail::expect_int(c.at("k_trunc"), "config.cascade.k_trunc");
            if (cfg.cascade.k_trunc < 1) throw ConfigError("config.cascade.k_trunc: must be >= 1");
        }
    }

    if (doc.contains("scenario_params"))
        cfg.scenario_params =
            detail::expect_object(doc.at("scenario_params"), "config.scenario_params");
    return cfg;
}

inline ExperimentConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    std::stringstream buf;
    buf << f.rdbuf();
    nlohmann::ordered_json doc;
    try {
        doc = nlohmann::ordered_json::parse(buf.str());
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("config parse: " + std::string(e.what()));
    }
    return parse_config(doc);
}

// ---------------------------------------------------------------------------
// Preset registries: names -> factories over parameter maps
// ---------------------------------------------------------------------------

inline LevyModel build_model(const PresetRef& ref, const std::string& path = "config.model") {
    detail::Params p{ref.params, path + ".params", {}};
    if (ref.preset == "brownian") {
        const double x0 = p.num("x0", 0.0), drift = p.num("drift", 0.0), sigma = p.num("sigma", 1.0);
        p.finish();
        return make_additive_model({x0}, {drift}, {sigma}, 1);
    }
    if (ref.preset == "additive_jump") {
        const double x0 = p.num("x0", 0.0), drift = p.num("drift", 0.0), sigma = p.num("sigma", 1.0);
        const double scale = p.num("jump_scale", 1.0);
        auto marks = p.nested("marks", {{0.5, -0.8}});
        auto rates = p.nested("rates", {{2.0, 1.0}});
        p.finish();
        try {
            MarkSpec ms(std::move(marks), std::move(rates));
            return make_additive_model({x0}, {drift}, {sigma}, 1, ms,
                                       std::vector<double>(ms.directions(), scale));
        } catch (const Error& e) {
            throw ConfigError(path + ".params: " + e.what());
        }
    }
    if (ref.preset == "linear_drift") {
        const double x0 = p.num("x0", 1.0), a = p.num("a", 0.8), sigma = p.num("sigma", 0.5);
        p.finish();
        return make_linear_drift_model(x0, a, sigma);
    }
    if (ref.preset == "geometric") {
        const double x0 = p.num("x0", 1.0), mu = p.num("mu", 0.05), sigma = p.num("sigma", 0.2);
        p.finish();
        return make_geometric_model(x0, mu, sigma);
    }
    throw ConfigError(path + ".preset: unknown model preset '" + ref.preset +
                      "' (known: brownian, additive_jump, linear_drift, geometric)");
}

inline DriverSpec build_driver(const PresetRef& ref, const LevyModel& model,
                               const std::string& path = "config.driver") {
    detail::Params p{ref.params, path + ".params", {}};
    try {
        if (ref.preset == "zero") {
            p.finish();
            return make_zero_driver(model.dim_w);
        }
        if (ref.preset == "linear") {
            const double alpha = p.num("alpha", 0.3);
            const double bz = p.num("bz", 0.2);
            const double loading = p.num("jump_loading", 0.0);
            p.finish();
            std::vector<double> c;
            MarkSpec marks;
            if (loading != 0.0) {
                if (model.marks.empty())
                    throw ConfigError(path + ".params.jump_loading: model has no jump marks");
                c.assign(model.marks.directions(), loading);
                marks = model.marks;
            }
            return make_linear_driver(alpha, std::vector<double>(model.dim_w, bz), c, marks);
        }
        if (ref.preset == "saturating") {
            const double gamma = p.num("gamma", 1.0);
            const double l0 = p.num("l0", 0.0);
            const bool couple = p.flag("jump_coupling", false);
            p.finish();
            if (couple && model.marks.empty())
                throw ConfigError(path + ".params.jump_coupling: model has no jump marks");
            return make_saturating_driver(gamma, l0, couple ? model.marks : MarkSpec{});
        }
        if (ref.preset == "exp_utility") {
            const double gamma = p.num("gamma", 1.0);
            const double theta = p.num("theta", 0.2);
            p.finish();
            if (model.marks.empty())
                throw ConfigError(path + ": preset 'exp_utility' needs a model with jump marks");
            return make_exp_utility_driver(gamma, std::vector<double>(model.dim_w, theta),
                                           model.marks);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(path + ".params: " + e.what());
    }
    throw ConfigError(path + ".preset: unknown driver preset '" + ref.preset +
                      "' (known: zero, linear, saturating, exp_utility)");
}

inline TerminalSpec build_terminal(const PresetRef& ref,
                                   const std::string& path = "config.terminal") {
    detail::Params p{ref.params, path + ".params", {}};
    if (ref.preset == "constant") {
        const double c = p.num("c", 1.0);
        p.finish();
        return make_constant_terminal(c);
    }
    if (ref.preset == "affine") {
        const double a = p.num("a", 0.0), b = p.num("b", 1.0);
        p.finish();
        return make_affine_terminal(a, b);
    }
    if (ref.preset == "tanh") {
        const double scale = p.num("scale", 1.0), center = p.num("center", 0.0);
        p.finish();
        return make_tanh_terminal(scale, center);
    }
    throw ConfigError(path + ".preset: unknown terminal preset '" + ref.preset +
                      "' (known: constant, affine, tanh)");
}

struct PresetListing {
    std::string kind;
    std::string name;
    std::string params;
};

inline std::vector<PresetListing> preset_listing() {
    return {
        {"model", "brownian", "x0=0, drift=0, sigma=1"},
        {"model", "additive_jump",
         "x0=0, drift=0, sigma=1, jump_scale=1, marks=[[0.5,-0.8]], rates=[[2,1]]"},
        {"model", "linear_drift", "x0=1, a=0.8, sigma=0.5"},
        {"model", "geometric", "x0=1, mu=0.05, sigma=0.2"},
        {"driver", "zero", "(none)"},
        {"driver", "linear", "alpha=0.3, bz=0.2, jump_loading=0"},
        {"driver", "saturating", "gamma=1, l0=0, jump_coupling=false"},
        {"driver", "exp_utility", "gamma=1, theta=0.2 (needs model marks)"},
        {"terminal", "constant", "c=1"},
        {"terminal", "affine", "a=0, b=1"},
        {"terminal", "tanh", "scale=1, center=0"},
    };
}

}  // namespace qexp

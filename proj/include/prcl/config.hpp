#pragma once

#include <functional>
#include <sstream>

#include "prcl/datagen.hpp"
#include "prcl/objective.hpp"

namespace prcl {

enum class Representation { Deterministic, Probabilistic };
enum class NegativeSource { None, MemoryBank, Vn };

struct StrategyFlags {
    Representation representation = Representation::Probabilistic;
    PrototypeStrategy prototype = PrototypeStrategy::Gdp;
    NegativeSource negatives = NegativeSource::Vn;
    std::size_t memory_bank_capacity = 30000;

    void validate() const {
        if (negatives == NegativeSource::Vn)
            check(prototype == PrototypeStrategy::Gdp, "strategy: vn requires gdp prototypes");
        if (prototype == PrototypeStrategy::Gdp)
            check(representation == Representation::Probabilistic,
                  "strategy: gdp requires probabilistic representation");
        check(memory_bank_capacity > 0, "strategy: memory_bank_capacity must be positive");
    }
};

// Named ablation rows (the strategy grid).
inline StrategyFlags strategy_row(const std::string& name) {
    if (name == "baseline")
        return {Representation::Deterministic, PrototypeStrategy::None, NegativeSource::None};
    if (name == "baseline_plus")
        return {Representation::Deterministic, PrototypeStrategy::Ema, NegativeSource::None};
    if (name == "pr")
        return {Representation::Probabilistic, PrototypeStrategy::None, NegativeSource::None};
    if (name == "pr_gdp")
        return {Representation::Probabilistic, PrototypeStrategy::Gdp, NegativeSource::None};
    if (name == "pr_gdp_vn")
        return {Representation::Probabilistic, PrototypeStrategy::Gdp, NegativeSource::Vn};
    if (name == "pr_gdp_mb")
        return {Representation::Probabilistic, PrototypeStrategy::Gdp,
                NegativeSource::MemoryBank};
    throw ContractError("unknown ablation row: " + name);
}

struct RunConfig {
    DatasetSpec data;
    HyperParams hp;
    StrategyFlags strategy;
    std::uint64_t total_iters = 4000;
    std::uint64_t eval_every = 500;
    int hidden_dim = 32;
    int repr_dim = 16;
    std::string output_dir = "out";
    std::string dataset_path;
    int ablate_seeds = 5;
    std::vector<std::string> ablate_rows = {"baseline", "pr", "pr_gdp", "pr_gdp_vn"};

    void validate() const {
        data.validate();
        hp.validate();
        strategy.validate();
        check(total_iters > 0, "RunConfig: total_iters must be positive");
        check(eval_every > 0, "RunConfig: eval_every must be positive");
        check(hidden_dim > 0 && repr_dim > 0, "RunConfig: bad model dims");
        check(ablate_seeds > 0, "RunConfig: ablate_seeds must be positive");
        for (const auto& row : ablate_rows) strategy_row(row).validate();
    }
};

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

namespace detail {

template <typename T>
T parse_number(const std::string& key, const std::string& value);

template <>
inline double parse_number<double>(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not a number: " + value);
    }
    if (pos != value.size()) throw ConfigError("config key '" + key + "': trailing junk: " + value);
    return v;
}

template <>
inline std::int64_t parse_number<std::int64_t>(const std::string& key, const std::string& value) {
    std::size_t pos = 0;
    std::int64_t v;
    try {
        v = std::stoll(value, &pos);
    } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "': not an integer: " + value);
    }
    if (pos != value.size()) throw ConfigError("config key '" + key + "': trailing junk: " + value);
    return v;
}

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

}  // namespace detail

// Flat key=value config. '#' starts a comment; unknown keys are hard errors.
inline void apply_config_line(RunConfig& cfg, const std::string& key, const std::string& value) {
    using detail::parse_number;
    auto as_u64 = [&](auto setter) {
        const auto v = parse_number<std::int64_t>(key, value);
        if (v < 0) throw ConfigError("config key '" + key + "': must be nonnegative");
        setter(static_cast<std::uint64_t>(v));
    };
    auto as_int = [&](auto setter) { setter(parse_number<std::int64_t>(key, value)); };
    auto as_dbl = [&](auto setter) { setter(parse_number<double>(key, value)); };

    if (key == "num_scenes") as_u64([&](auto v) { cfg.data.num_scenes = static_cast<std::uint32_t>(v); });
    else if (key == "labeled_fraction") as_dbl([&](double v) { cfg.data.labeled_fraction = v; });
    else if (key == "num_classes") as_u64([&](auto v) { cfg.data.num_classes = static_cast<std::uint32_t>(v); });
    else if (key == "grid") as_u64([&](auto v) { cfg.data.grid = static_cast<std::uint32_t>(v); });
    else if (key == "feature_dim") as_u64([&](auto v) { cfg.data.feature_dim = static_cast<std::uint32_t>(v); });
    else if (key == "class_separation") as_dbl([&](double v) { cfg.data.class_separation = v; });
    else if (key == "noise_sigma") as_dbl([&](double v) { cfg.data.noise_sigma = v; });
    else if (key == "boundary_blur") as_dbl([&](double v) { cfg.data.boundary_blur = v; });
    else if (key == "data_seed") as_u64([&](auto v) { cfg.data.seed = v; });
    else if (key == "seed") as_u64([&](auto v) { cfg.hp.seed = v; });
    else if (key == "tau") as_dbl([&](double v) { cfg.hp.tau = v; });
    else if (key == "delta_s") as_dbl([&](double v) { cfg.hp.delta_s = v; });
    else if (key == "delta_w") as_dbl([&](double v) { cfg.hp.delta_w = v; });
    else if (key == "delta_u") as_dbl([&](double v) { cfg.hp.delta_u = v; });
    else if (key == "beta") as_dbl([&](double v) { cfg.hp.beta = v; });
    else if (key == "lambda_c0") as_dbl([&](double v) { cfg.hp.lambda_c0 = v; });
    else if (key == "alpha_sched") as_dbl([&](double v) { cfg.hp.alpha_sched = v; });
    else if (key == "vn_count") as_int([&](auto v) { cfg.hp.vn_count = static_cast<int>(v); });
    else if (key == "anchors_per_class") as_int([&](auto v) { cfg.hp.anchors_per_class = static_cast<int>(v); });
    else if (key == "negatives_total") as_int([&](auto v) { cfg.hp.negatives_total = static_cast<int>(v); });
    else if (key == "teacher_momentum") as_dbl([&](double v) { cfg.hp.teacher_momentum = v; });
    else if (key == "ema_proto_momentum") as_dbl([&](double v) { cfg.hp.ema_proto_momentum = v; });
    else if (key == "lr_main") as_dbl([&](double v) { cfg.hp.lr_main = v; });
    else if (key == "lr_prob_head") as_dbl([&](double v) { cfg.hp.lr_prob_head = v; });
    else if (key == "temperature_n") as_dbl([&](double v) { cfg.hp.temperature_n = v; });
    else if (key == "vn_scale") {
        if (value == "variance") cfg.hp.vn_scale = VnScale::Variance;
        else if (value == "stddev") cfg.hp.vn_scale = VnScale::Stddev;
        else throw ConfigError("config key 'vn_scale': expected variance|stddev, got " + value);
    }
    else if (key == "representation") {
        if (value == "deterministic") cfg.strategy.representation = Representation::Deterministic;
        else if (value == "probabilistic") cfg.strategy.representation = Representation::Probabilistic;
        else throw ConfigError("config key 'representation': expected deterministic|probabilistic, got " + value);
    }
    else if (key == "prototype") {
        if (value == "none") cfg.strategy.prototype = PrototypeStrategy::None;
        else if (value == "ema") cfg.strategy.prototype = PrototypeStrategy::Ema;
        else if (value == "gdp") cfg.strategy.prototype = PrototypeStrategy::Gdp;
        else throw ConfigError("config key 'prototype': expected none|ema|gdp, got " + value);
    }
    else if (key == "negatives") {
        if (value == "none") cfg.strategy.negatives = NegativeSource::None;
        else if (value == "memory_bank") cfg.strategy.negatives = NegativeSource::MemoryBank;
        else if (value == "vn") cfg.strategy.negatives = NegativeSource::Vn;
        else throw ConfigError("config key 'negatives': expected none|memory_bank|vn, got " + value);
    }
    else if (key == "memory_bank_capacity") as_u64([&](auto v) { cfg.strategy.memory_bank_capacity = v; });
    else if (key == "total_iters") as_u64([&](auto v) { cfg.total_iters = v; });
    else if (key == "eval_every") as_u64([&](auto v) { cfg.eval_every = v; });
    else if (key == "hidden_dim") as_int([&](auto v) { cfg.hidden_dim = static_cast<int>(v); });
    else if (key == "repr_dim") as_int([&](auto v) { cfg.repr_dim = static_cast<int>(v); });
    else if (key == "output_dir") cfg.output_dir = value;
    else if (key == "dataset_path") cfg.dataset_path = value;
    else if (key == "ablate_seeds") as_int([&](auto v) { cfg.ablate_seeds = static_cast<int>(v); });
    else if (key == "ablate_rows") {
        cfg.ablate_rows.clear();
        std::stringstream ss(value);
        std::string row;
        while (std::getline(ss, row, ',')) {
            row = detail::trim(row);
            if (!row.empty()) cfg.ablate_rows.push_back(row);
        }
        if (cfg.ablate_rows.empty()) throw ConfigError("config key 'ablate_rows': empty list");
    }
    else throw ConfigError("unknown config key: " + key);
}

inline RunConfig parse_config(std::istream& is) {
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected key=value");
        const std::string key = detail::trim(line.substr(0, eq));
        const std::string value = detail::trim(line.substr(eq + 1));
        try {
            apply_config_line(cfg, key, value);
        } catch (const ConfigError& e) {
            throw ConfigError("line " + std::to_string(lineno) + ": " + e.what());
        }
    }
    return cfg;
}

inline RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open config file: " + path.string());
    return parse_config(is);
}

}  // namespace prcl

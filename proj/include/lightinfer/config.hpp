// Copyright (C) 2026 The lightinfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "lightinfer/error.hpp"
#include "lightinfer/model.hpp"

namespace lightinfer {

struct InputConfig {
    std::size_t n_system = 30;
    std::size_t n_image = 576;
    std::size_t n_instruction = 50;
    double redundancy = 0.5;
    std::uint64_t seed = 0;
};

struct BenchConfig {
    std::vector<std::size_t> lengths{128, 256, 512, 1024, 2048, 4096};
    std::vector<std::string> variants{"vanilla", "merge-only", "cache-only", "full"};
    std::size_t repetitions = 5;
    std::vector<double> keep_ratios{0.35, 0.15, 0.03};
    std::vector<double> betas{0.995, 1.0};
    std::size_t seeds = 20;
    std::size_t sweep_max_new = 32;
    std::vector<double> thresholds{0.90, 0.95, 0.99};
};

struct AppConfig {
    ModelConfig model;
    InputConfig input;
    PipelineConfig pipeline;
    std::size_t max_new = 32;
    BenchConfig bench;

    TokenSequence build_input() const {
        return lightinfer::build_input(input.n_system, input.n_image, input.n_instruction, input.redundancy,
                                       input.seed, model.dim);
    }
};

inline const std::vector<std::string>& known_variants() {
    static const std::vector<std::string> names{"vanilla", "merge-only", "cache-only", "full"};
    return names;
}

/// Pipeline for a named variant, with merging/compression knobs taken from `base`.
inline PipelineConfig variant_pipeline(const PipelineConfig& base, std::string_view variant) {
    PipelineConfig p = base;
    p.merging_enabled = variant == "merge-only" || variant == "full";
    p.compression_enabled = variant == "cache-only" || variant == "full";
    if (std::find(known_variants().begin(), known_variants().end(), variant) == known_variants().end()) {
        throw ConfigError("bench.variants", "unknown variant '" + std::string(variant) + "'");
    }
    return p;
}

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto first = s.find_first_not_of(" \t\r");
    if (first == std::string_view::npos) {
        return {};
    }
    const auto last = s.find_last_not_of(" \t\r");
    return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_list(std::string_view s) {
    std::vector<std::string_view> out;
    while (true) {
        const auto comma = s.find(',');
        out.push_back(trim(s.substr(0, comma)));
        if (comma == std::string_view::npos) {
            break;
        }
        s.remove_prefix(comma + 1);
    }
    return out;
}

template <typename T>
T parse_number(const std::string& key, std::string_view text) {
    T value{};
    const auto* end = text.data() + text.size();
    const auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc{} || ptr != end || text.empty()) {
        throw ConfigError(key, "cannot parse '" + std::string(text) + "' as a number");
    }
    return value;
}

inline bool parse_bool(const std::string& key, std::string_view text) {
    if (text == "true" || text == "yes" || text == "on" || text == "1") {
        return true;
    }
    if (text == "false" || text == "no" || text == "off" || text == "0") {
        return false;
    }
    throw ConfigError(key, "expected a boolean, got '" + std::string(text) + "'");
}

template <typename T>
std::vector<T> parse_number_list(const std::string& key, std::string_view text) {
    std::vector<T> out;
    if (trim(text).empty()) {
        return out;
    }
    for (auto item : split_list(text)) {
        out.push_back(parse_number<T>(key, item));
    }
    return out;
}

template <typename T>
std::string join(const std::vector<T>& values) {
    std::ostringstream os;
    os << std::setprecision(17);
    for (std::size_t i = 0; i < values.size(); ++i) {
        os << (i ? "," : "") << values[i];
    }
    return os.str();
}

}  // namespace detail

inline void validate_config(const AppConfig& cfg);

/// Parses the sectioned key=value format ('#' or ';' start a comment line).
/// Unset keys keep their defaults; unknown sections/keys and unparsable values
/// raise ConfigError naming the key.
inline AppConfig parse_config(std::string_view text) {
    AppConfig cfg;
    std::string section;
    std::set<std::string> seen;
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        ++line_no;
        const auto line = detail::trim(raw);
        if (line.empty() || line.front() == '#' || line.front() == ';') {
            continue;
        }
        if (line.front() == '[') {
            if (line.back() != ']') {
                throw ConfigError(std::string(line), "unterminated section header on line " + std::to_string(line_no));
            }
            section = std::string(detail::trim(line.substr(1, line.size() - 2)));
            if (section != "model" && section != "input" && section != "pipeline" && section != "bench") {
                throw ConfigError(section, "unknown section");
            }
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) {
            throw ConfigError(std::string(line), "expected key = value on line " + std::to_string(line_no));
        }
        const std::string name(detail::trim(line.substr(0, eq)));
        const std::string_view value = detail::trim(line.substr(eq + 1));
        if (section.empty()) {
            throw ConfigError(name, "appears before any [section]");
        }
        const std::string key = section + "." + name;
        if (!seen.insert(key).second) {
            throw ConfigError(key, "set more than once");
        }
        using detail::parse_bool;
        using detail::parse_number;
        using detail::parse_number_list;
        if (key == "model.n_layers") cfg.model.n_layers = parse_number<std::size_t>(key, value);
        else if (key == "model.n_heads") cfg.model.n_heads = parse_number<std::size_t>(key, value);
        else if (key == "model.dim") cfg.model.dim = parse_number<std::size_t>(key, value);
        else if (key == "model.vocab") cfg.model.vocab = parse_number<std::size_t>(key, value);
        else if (key == "model.seed") cfg.model.seed = parse_number<std::uint64_t>(key, value);
        else if (key == "input.n_system") cfg.input.n_system = parse_number<std::size_t>(key, value);
        else if (key == "input.n_image") cfg.input.n_image = parse_number<std::size_t>(key, value);
        else if (key == "input.n_instruction") cfg.input.n_instruction = parse_number<std::size_t>(key, value);
        else if (key == "input.redundancy") cfg.input.redundancy = parse_number<double>(key, value);
        else if (key == "input.seed") cfg.input.seed = parse_number<std::uint64_t>(key, value);
        else if (key == "pipeline.merge_layers") cfg.pipeline.merge_schedule.merge_layers = parse_number_list<std::size_t>(key, value);
        else if (key == "pipeline.keep_ratio") cfg.pipeline.merge_schedule.target_ratio = parse_number<double>(key, value);
        else if (key == "pipeline.beta") cfg.pipeline.compression.beta = parse_number<double>(key, value);
        else if (key == "pipeline.start_layer") cfg.pipeline.compression.start_layer = parse_number<std::size_t>(key, value);
        else if (key == "pipeline.merging") cfg.pipeline.merging_enabled = parse_bool(key, value);
        else if (key == "pipeline.compression") cfg.pipeline.compression_enabled = parse_bool(key, value);
        else if (key == "pipeline.evict_merged") cfg.pipeline.evict_merged_entries = parse_bool(key, value);
        else if (key == "pipeline.max_new") cfg.max_new = parse_number<std::size_t>(key, value);
        else if (key == "bench.lengths") cfg.bench.lengths = parse_number_list<std::size_t>(key, value);
        else if (key == "bench.variants") {
            cfg.bench.variants.clear();
            for (auto v : detail::split_list(value)) {
                cfg.bench.variants.emplace_back(v);
            }
        }
        else if (key == "bench.repetitions") cfg.bench.repetitions = parse_number<std::size_t>(key, value);
        else if (key == "bench.keep_ratios") cfg.bench.keep_ratios = parse_number_list<double>(key, value);
        else if (key == "bench.betas") cfg.bench.betas = parse_number_list<double>(key, value);
        else if (key == "bench.seeds") cfg.bench.seeds = parse_number<std::size_t>(key, value);
        else if (key == "bench.sweep_max_new") cfg.bench.sweep_max_new = parse_number<std::size_t>(key, value);
        else if (key == "bench.thresholds") cfg.bench.thresholds = parse_number_list<double>(key, value);
        else throw ConfigError(key, "unknown key");
    }
    validate_config(cfg);
    return cfg;
}

/// Range checks, reported against the key that holds the offending value.
inline void validate_config(const AppConfig& cfg) {
    auto check = [](bool ok, const char* key, const std::string& message) {
        if (!ok) {
            throw ConfigError(key, message);
        }
    };
    const auto& m = cfg.model;
    check(m.n_layers >= 1, "model.n_layers", "must be at least 1");
    check(m.n_heads >= 1, "model.n_heads", "must be at least 1");
    check(m.dim >= 1 && m.dim % m.n_heads == 0, "model.dim", "must be a positive multiple of model.n_heads");
    check(m.vocab >= 1, "model.vocab", "must be at least 1");
    const auto& in = cfg.input;
    check(in.n_system + in.n_image + in.n_instruction >= 1, "input.n_image", "input must contain a token");
    check(in.redundancy >= 0.0 && in.redundancy <= 1.0, "input.redundancy", "must lie in [0, 1]");
    const auto& p = cfg.pipeline;
    const auto& layers = p.merge_schedule.merge_layers;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        check(layers[i] < m.n_layers, "pipeline.merge_layers", "layer " + std::to_string(layers[i]) + " >= n_layers");
        check(i == 0 || layers[i] > layers[i - 1], "pipeline.merge_layers", "must strictly increase");
    }
    check(p.merge_schedule.target_ratio > 0.0 && p.merge_schedule.target_ratio <= 1.0, "pipeline.keep_ratio",
          "must lie in (0, 1]");
    check(p.compression.beta > 0.0 && p.compression.beta <= 1.0, "pipeline.beta", "must lie in (0, 1]");
    check(p.compression.start_layer < m.n_layers, "pipeline.start_layer", "must be < model.n_layers");
    check(cfg.max_new >= 1, "pipeline.max_new", "must be at least 1");
    const auto& b = cfg.bench;
    check(b.repetitions >= 1, "bench.repetitions", "must be at least 1");
    check(b.seeds >= 1, "bench.seeds", "must be at least 1");
    check(b.sweep_max_new >= 1, "bench.sweep_max_new", "must be at least 1");
    for (std::size_t len : b.lengths) {
        check(len >= 1, "bench.lengths", "lengths must be at least 1");
    }
    for (const auto& v : b.variants) {
        check(std::find(known_variants().begin(), known_variants().end(), v) != known_variants().end(),
              "bench.variants", "unknown variant '" + v + "'");
    }
    for (double r : b.keep_ratios) {
        check(r > 0.0 && r <= 1.0, "bench.keep_ratios", "ratios must lie in (0, 1]");
    }
    for (double beta : b.betas) {
        check(beta > 0.0 && beta <= 1.0, "bench.betas", "betas must lie in (0, 1]");
    }
    for (double t : b.thresholds) {
        check(t > 0.0 && t <= 1.0, "bench.thresholds", "thresholds must lie in (0, 1]");
    }
}

inline AppConfig load_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) {
        throw ConfigError("--config", "cannot open '" + path + "'");
    }
    std::ostringstream text;
    text << is.rdbuf();
    return parse_config(text.str());
}

/// Every effective setting, one `section.key=value` line each, in fixed order.
inline std::string canonical_config(const AppConfig& cfg) {
    std::ostringstream os;
    os << std::setprecision(17);
    os << "model.n_layers=" << cfg.model.n_layers << '\n'
       << "model.n_heads=" << cfg.model.n_heads << '\n'
       << "model.dim=" << cfg.model.dim << '\n'
       << "model.vocab=" << cfg.model.vocab << '\n'
       << "model.seed=" << cfg.model.seed << '\n'
       << "input.n_system=" << cfg.input.n_system << '\n'
       << "input.n_image=" << cfg.input.n_image << '\n'
       << "input.n_instruction=" << cfg.input.n_instruction << '\n'
       << "input.redundancy=" << cfg.input.redundancy << '\n'
       << "input.seed=" << cfg.input.seed << '\n'
       << "pipeline.merge_layers=" << detail::join(cfg.pipeline.merge_schedule.merge_layers) << '\n'
       << "pipeline.keep_ratio=" << cfg.pipeline.merge_schedule.target_ratio << '\n'
       << "pipeline.beta=" << cfg.pipeline.compression.beta << '\n'
       << "pipeline.start_layer=" << cfg.pipeline.compression.start_layer << '\n'
       << "pipeline.merging=" << cfg.pipeline.merging_enabled << '\n'
       << "pipeline.compression=" << cfg.pipeline.compression_enabled << '\n'
       << "pipeline.evict_merged=" << cfg.pipeline.evict_merged_entries << '\n'
       << "pipeline.max_new=" << cfg.max_new << '\n'
       << "bench.lengths=" << detail::join(cfg.bench.lengths) << '\n'
       << "bench.variants=" << detail::join(cfg.bench.variants) << '\n'
       << "bench.repetitions=" << cfg.bench.repetitions << '\n'
       << "bench.keep_ratios=" << detail::join(cfg.bench.keep_ratios) << '\n'
       << "bench.betas=" << detail::join(cfg.bench.betas) << '\n'
       << "bench.seeds=" << cfg.bench.seeds << '\n'
       << "bench.sweep_max_new=" << cfg.bench.sweep_max_new << '\n'
       << "bench.thresholds=" << detail::join(cfg.bench.thresholds) << '\n';
    return os.str();
}

/// 64-bit FNV-1a of the canonical config, as 16 hex digits.
inline std::string config_hash(const AppConfig& cfg) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canonical_config(cfg)) {
        hash ^= ch;
        hash *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << hash;
    return os.str();
}

}  // namespace lightinfer

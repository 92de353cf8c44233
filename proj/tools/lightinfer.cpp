// Copyright (C) 2026 The lightinfer Authors
// SPDX-License-Identifier: Apache-2.0

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>

#include "lightinfer/lightinfer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitVerify = 3;

struct Options {
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
};

// Writes to --out when given, otherwise to stdout.
template <typename Fn>
void emit(const std::string& path, Fn&& write) {
    if (path.empty()) {
        write(std::cout);
        return;
    }
    std::ofstream os(path);
    if (!os) {
        throw lightinfer::Error("cannot write " + path);
    }
    write(os);
}

void progress(const std::string& message) { std::cerr << "[lightinfer] " << message << std::endl; }

lightinfer::AppConfig load(const Options& opt) {
    auto cfg = lightinfer::load_config(opt.config);
    if (opt.seed) {
        cfg.model.seed = *opt.seed;
        cfg.input.seed = *opt.seed;
    }
    return cfg;
}

int cmd_run(const Options& opt) {
    const auto cfg = load(opt);
    const auto model = lightinfer::init_model(cfg.model);
    const auto result = lightinfer::generate(model, cfg.build_input(), cfg.pipeline, cfg.max_new);
    lightinfer::print_run_summary(std::cout, cfg, result.metrics);
    if (!opt.out.empty()) {
        emit(opt.out, [&](std::ostream& os) { lightinfer::write_run_csv(os, cfg, result.metrics); });
    }
    return kExitOk;
}

int cmd_verify(const Options& opt) {
    const auto cfg = load(opt);
    bool ok = true;
    for (const auto& check : lightinfer::run_verify(cfg)) {
        std::cout << (check.passed ? "PASS " : "FAIL ") << check.name << ": " << check.detail << '\n';
        ok = ok && check.passed;
    }
    return ok ? kExitOk : kExitVerify;
}

int cmd_bench(const Options& opt) {
    const auto cfg = load(opt);
    if (opt.jobs && *opt.jobs != 1) {
        progress("bench timing runs sequentially; --jobs ignored");
    }
    const auto rows = lightinfer::run_bench(cfg, progress);
    emit(opt.out, [&](std::ostream& os) { lightinfer::write_bench_csv(os, cfg, rows); });
    return kExitOk;
}

int cmd_sweep(const Options& opt) {
    const auto cfg = load(opt);
    const std::size_t jobs = opt.jobs.value_or(std::max(1u, std::thread::hardware_concurrency()));
    const auto rows = lightinfer::run_sweep(cfg, jobs, true, progress);
    emit(opt.out, [&](std::ostream& os) { lightinfer::write_sweep_csv(os, cfg, rows); });
    return kExitOk;
}

int cmd_analyze(const Options& opt) {
    const auto cfg = load(opt);
    const auto report = lightinfer::run_analyze(cfg);
    if (opt.out.empty()) {
        lightinfer::write_mass_csv(std::cout, cfg, report.mass);
        std::cout << '\n';
        lightinfer::write_mask_csv(std::cout, cfg, report.masks);
        return kExitOk;
    }
    std::filesystem::path masks = opt.out;
    masks.replace_extension(".masks.csv");
    emit(opt.out, [&](std::ostream& os) { lightinfer::write_mass_csv(os, cfg, report.mass); });
    emit(masks.string(), [&](std::ostream& os) { lightinfer::write_mask_csv(os, cfg, report.masks); });
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lightinfer: token merging and KV cache compression on a toy decoder"};
    app.require_subcommand(1);
    Options opt;
    auto add = [&](const std::string& name, const std::string& help) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opt.config, "configuration file")->required();
        sub->add_option("--out", opt.out, "CSV output path");
        sub->add_option("--seed", opt.seed, "overrides model and input seeds");
        sub->add_option("--jobs", opt.jobs, "worker threads for non-timing work")->check(CLI::PositiveNumber);
        return sub;
    };
    auto* run = add("run", "generate once and print metrics");
    auto* verify = add("verify", "run the oracle checks");
    auto* bench = add("bench", "latency and memory per variant and output length");
    auto* sweep = add("sweep", "keep_ratio x beta grid with drift against vanilla");
    auto* analyze = add("analyze", "attention-mass curves and retained-token masks");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        if (run->parsed()) return cmd_run(opt);
        if (verify->parsed()) return cmd_verify(opt);
        if (bench->parsed()) return cmd_bench(opt);
        if (sweep->parsed()) return cmd_sweep(opt);
        if (analyze->parsed()) return cmd_analyze(opt);
    } catch (const lightinfer::ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitFailure;
}

// Copyright (C) 2026 The lightinfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <iomanip>
#include <mutex>
#include <ostream>
#include <string>
#include <thread>
#include <vector>

#include "lightinfer/config.hpp"
#include "lightinfer/model.hpp"
#include "lightinfer/oracle.hpp"

namespace lightinfer {

inline constexpr std::size_t kMinRepetitions = 5;

/// `# config-hash=... repetitions=...` line that opens every CSV.
inline void write_csv_preamble(std::ostream& os, const AppConfig& cfg, std::size_t repetitions) {
    os << "# config-hash=" << config_hash(cfg) << " repetitions=" << repetitions << '\n';
}

inline double median(std::vector<double> values) {
    require(!values.empty(), "median of no values");
    std::sort(values.begin(), values.end());
    const std::size_t mid = values.size() / 2;
    return values.size() % 2 == 1 ? values[mid] : 0.5 * (values[mid - 1] + values[mid]);
}

/// Runs `fn` once untimed as warm-up, then `repetitions` times; returns what each timed call returned.
template <typename Fn>
auto repeat_after_warmup(std::size_t repetitions, Fn&& fn) {
    fn();
    std::vector<decltype(fn())> out;
    out.reserve(repetitions);
    for (std::size_t i = 0; i < repetitions; ++i) {
        out.push_back(fn());
    }
    return out;
}

/// Calls task(i) for i in [0, n) on up to `jobs` threads. The first exception is rethrown.
inline void parallel_for(std::size_t n, std::size_t jobs, const std::function<void(std::size_t)>& task) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) {
            task(i);
        }
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> workers;
    for (std::size_t t = 0; t < jobs; ++t) {
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    task(i);
                } catch (...) {
                    std::lock_guard lock(failure_mutex);
                    if (!failure) {
                        failure = std::current_exception();
                    }
                }
            }
        });
    }
    for (auto& w : workers) {
        w.join();
    }
    if (failure) {
        std::rethrow_exception(failure);
    }
}

inline double mean(const std::vector<double>& values) {
    if (values.empty()) {
        return 0.0;
    }
    double total = 0.0;
    for (double v : values) {
        total += v;
    }
    return total / static_cast<double>(values.size());
}

inline double total_ms(const RunMetrics& m) {
    double total = m.prefill_ms;
    for (double d : m.decode_ms_per_token) {
        total += d;
    }
    return total;
}

// ---------------------------------------------------------------------------
// run

inline void print_run_summary(std::ostream& os, const AppConfig& cfg, const RunMetrics& m) {
    os << "config_hash " << config_hash(cfg) << '\n'
       << "prefill_ms " << m.prefill_ms << '\n'
       << "decode_steps " << m.decode_ms_per_token.size() << '\n'
       << "mean_decode_ms " << mean(m.decode_ms_per_token) << '\n'
       << "total_ms " << total_ms(m) << '\n'
       << "memory_bytes " << m.memory_bytes << '\n'
       << "retained_image_fraction " << m.retained_image_fraction << '\n'
       << "output_tokens";
    for (std::size_t id : m.output_tokens) {
        os << ' ' << id;
    }
    os << "\nlayer tokens image_tokens text_tokens cache_entries\n";
    for (std::size_t l = 0; l < m.tokens_per_layer.size(); ++l) {
        os << l << ' ' << m.tokens_per_layer[l] << ' ' << m.image_tokens_per_layer[l] << ' '
           << m.tokens_per_layer[l] - m.image_tokens_per_layer[l] << ' ' << m.cache_entries_per_layer[l] << '\n';
    }
}

/// Per-layer token ledger of one run.
inline void write_run_csv(std::ostream& os, const AppConfig& cfg, const RunMetrics& m) {
    write_csv_preamble(os, cfg, 1);
    os << "layer,tokens,image_tokens,text_tokens,cache_entries\n";
    for (std::size_t l = 0; l < m.tokens_per_layer.size(); ++l) {
        os << l << ',' << m.tokens_per_layer[l] << ',' << m.image_tokens_per_layer[l] << ','
           << m.tokens_per_layer[l] - m.image_tokens_per_layer[l] << ',' << m.cache_entries_per_layer[l] << '\n';
    }
}

// ---------------------------------------------------------------------------
// bench

struct BenchRow {
    std::string variant;
    std::size_t length = 0;
    double keep_ratio = 1.0;
    double beta = 1.0;
    double prefill_ms = 0.0;      ///< median
    double mean_decode_ms = 0.0;  ///< median of per-run means
    double total_ms = 0.0;        ///< median
    std::size_t memory_bytes = 0;
    double retained_image_fraction = 1.0;
    double speedup = 1.0;         ///< vanilla total / this total, same length
    std::size_t repetitions = 0;
};

using ProgressFn = std::function<void(const std::string&)>;

inline BenchRow bench_cell(const Model& model, const TokenSequence& input, const PipelineConfig& base,
                           const std::string& variant, std::size_t length, std::size_t repetitions) {
    const PipelineConfig pipeline = variant_pipeline(base, variant);
    const auto runs = repeat_after_warmup(repetitions, [&] { return generate(model, input, pipeline, length).metrics; });
    BenchRow row;
    row.variant = variant;
    row.length = length;
    row.keep_ratio = pipeline.merging_enabled ? base.merge_schedule.target_ratio : 1.0;
    row.beta = pipeline.compression_enabled ? base.compression.beta : 1.0;
    std::vector<double> prefill, decode, total;
    for (const auto& m : runs) {
        prefill.push_back(m.prefill_ms);
        decode.push_back(mean(m.decode_ms_per_token));
        total.push_back(total_ms(m));
    }
    row.prefill_ms = median(prefill);
    row.mean_decode_ms = median(decode);
    row.total_ms = median(total);
    row.memory_bytes = runs.front().memory_bytes;
    row.retained_image_fraction = runs.front().retained_image_fraction;
    row.repetitions = repetitions;
    return row;
}

/// One row per (variant, length). Vanilla is always measured so speedups have a base.
inline std::vector<BenchRow> run_bench(const AppConfig& cfg, const ProgressFn& progress = {}) {
    const std::size_t reps = std::max(cfg.bench.repetitions, kMinRepetitions);
    const Model model = init_model(cfg.model);
    const TokenSequence input = cfg.build_input();
    std::vector<std::string> variants{"vanilla"};
    for (const auto& v : cfg.bench.variants) {
        if (v != "vanilla") {
            variants.push_back(v);
        }
    }
    std::vector<BenchRow> rows;
    for (std::size_t length : cfg.bench.lengths) {
        double vanilla_total = 0.0;
        for (const auto& variant : variants) {
            if (progress) {
                progress("bench " + variant + " length=" + std::to_string(length));
            }
            BenchRow row = bench_cell(model, input, cfg.pipeline, variant, length, reps);
            if (variant == "vanilla") {
                vanilla_total = row.total_ms;
            }
            row.speedup = vanilla_total / row.total_ms;
            rows.push_back(std::move(row));
        }
    }
    return rows;
}

inline void write_bench_csv(std::ostream& os, const AppConfig& cfg, const std::vector<BenchRow>& rows) {
    write_csv_preamble(os, cfg, rows.empty() ? 0 : rows.front().repetitions);
    os << "variant,token_merging,kv_compression,length,keep_ratio,beta,prefill_ms,mean_decode_ms,total_ms,"
          "memory_bytes,retained_image_fraction,speedup\n";
    os << std::setprecision(10);
    for (const auto& r : rows) {
        const bool merging = r.variant == "merge-only" || r.variant == "full";
        const bool compression = r.variant == "cache-only" || r.variant == "full";
        os << r.variant << ',' << (merging ? "yes" : "no") << ',' << (compression ? "yes" : "no") << ',' << r.length
           << ',' << r.keep_ratio << ',' << r.beta << ',' << r.prefill_ms << ',' << r.mean_decode_ms << ','
           << r.total_ms << ',' << r.memory_bytes << ',' << r.retained_image_fraction << ',' << std::fixed
           << std::setprecision(2) << r.speedup << std::defaultfloat << std::setprecision(10) << '\n';
    }
}

// ---------------------------------------------------------------------------
// sweep

struct SweepRow {
    double keep_ratio = 1.0;
    double beta = 1.0;
    double prefill_ms = 0.0;
    double mean_decode_ms = 0.0;
    double total_ms = 0.0;
    std::size_t memory_bytes = 0;
    double retained_image_fraction = 1.0;
    double drift = 0.0;  ///< mean over seeds of the fraction of generated ids that differ from vanilla
    std::size_t seeds = 0;
    std::size_t repetitions = 0;
};

/// Fraction of positions where two id sequences of equal length disagree.
inline double id_drift(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    require(a.size() == b.size() && !a.empty(), "drift needs equal, nonempty id sequences");
    std::size_t differ = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        differ += a[i] != b[i] ? 1 : 0;
    }
    return static_cast<double>(differ) / static_cast<double>(a.size());
}

inline PipelineConfig sweep_pipeline(const PipelineConfig& base, double keep_ratio, double beta) {
    PipelineConfig p = base;
    p.merging_enabled = true;
    p.compression_enabled = true;
    p.merge_schedule.target_ratio = keep_ratio;
    p.merge_schedule.keep_counts.clear();
    p.compression.beta = beta;
    return p;
}

/// Drift over `cfg.bench.seeds` input seeds (starting at input.seed) runs on up
/// to `jobs` threads; timing runs afterwards, one at a time, on the base seed.
inline std::vector<SweepRow> run_sweep(const AppConfig& cfg, std::size_t jobs, bool with_timing = true,
                                       const ProgressFn& progress = {}) {
    if (cfg.bench.keep_ratios.empty() || cfg.bench.betas.empty()) {
        throw ConfigError(cfg.bench.keep_ratios.empty() ? "bench.keep_ratios" : "bench.betas", "sweep grid is empty");
    }
    const std::size_t reps = std::max(cfg.bench.repetitions, kMinRepetitions);
    const std::size_t n_seeds = cfg.bench.seeds;
    const std::size_t max_new = cfg.bench.sweep_max_new;
    const Model model = init_model(cfg.model);
    auto input_for = [&](std::size_t s) {
        AppConfig c = cfg;
        c.input.seed = cfg.input.seed + s;
        return c.build_input();
    };

    struct Cell {
        double keep_ratio;
        double beta;
    };
    std::vector<Cell> cells;
    for (double r : cfg.bench.keep_ratios) {
        for (double b : cfg.bench.betas) {
            cells.push_back({r, b});
        }
    }
    if (progress) {
        progress("sweep drift: " + std::to_string(cells.size()) + " cells x " + std::to_string(n_seeds) + " seeds");
    }
    std::vector<std::vector<std::size_t>> vanilla(n_seeds);
    parallel_for(n_seeds, jobs, [&](std::size_t s) {
        vanilla[s] = generate(model, input_for(s), PipelineConfig::disabled(), max_new).tokens;
    });
    std::vector<double> drift(cells.size() * n_seeds);
    std::vector<RunMetrics> base_metrics(cells.size());
    parallel_for(cells.size() * n_seeds, jobs, [&](std::size_t task) {
        const std::size_t c = task / n_seeds;
        const std::size_t s = task % n_seeds;
        const auto result =
            generate(model, input_for(s), sweep_pipeline(cfg.pipeline, cells[c].keep_ratio, cells[c].beta), max_new);
        drift[task] = id_drift(result.tokens, vanilla[s]);
        if (s == 0) {
            base_metrics[c] = result.metrics;
        }
    });

    std::vector<SweepRow> rows;
    const TokenSequence input = input_for(0);
    for (std::size_t c = 0; c < cells.size(); ++c) {
        SweepRow row;
        row.keep_ratio = cells[c].keep_ratio;
        row.beta = cells[c].beta;
        row.seeds = n_seeds;
        row.drift = mean(std::vector<double>(drift.begin() + static_cast<std::ptrdiff_t>(c * n_seeds),
                                             drift.begin() + static_cast<std::ptrdiff_t>((c + 1) * n_seeds)));
        row.memory_bytes = base_metrics[c].memory_bytes;
        row.retained_image_fraction = base_metrics[c].retained_image_fraction;
        if (with_timing) {
            if (progress) {
                progress("sweep timing keep_ratio=" + std::to_string(row.keep_ratio) +
                         " beta=" + std::to_string(row.beta));
            }
            const auto pipeline = sweep_pipeline(cfg.pipeline, row.keep_ratio, row.beta);
            const auto runs =
                repeat_after_warmup(reps, [&] { return generate(model, input, pipeline, max_new).metrics; });
            std::vector<double> prefill, decode, total;
            for (const auto& m : runs) {
                prefill.push_back(m.prefill_ms);
                decode.push_back(mean(m.decode_ms_per_token));
                total.push_back(total_ms(m));
            }
            row.prefill_ms = median(prefill);
            row.mean_decode_ms = median(decode);
            row.total_ms = median(total);
            row.repetitions = reps;
        }
        rows.push_back(row);
    }
    return rows;
}

inline void write_sweep_csv(std::ostream& os, const AppConfig& cfg, const std::vector<SweepRow>& rows) {
    write_csv_preamble(os, cfg, rows.empty() ? 0 : rows.front().repetitions);
    os << "keep_ratio,beta,prefill_ms,mean_decode_ms,total_ms,memory_bytes,retained_image_fraction,drift,seeds\n";
    os << std::setprecision(10);
    for (const auto& r : rows) {
        os << r.keep_ratio << ',' << r.beta << ',' << r.prefill_ms << ',' << r.mean_decode_ms << ',' << r.total_ms
           << ',' << r.memory_bytes << ',' << r.retained_image_fraction << ',' << r.drift << ',' << r.seeds << '\n';
    }
}

// ---------------------------------------------------------------------------
// analyze

struct MassRow {
    std::size_t layer = 0;
    double threshold = 0.0;
    std::size_t k = 0;
    std::size_t n = 0;
};

struct MaskGrid {
    std::vector<std::int64_t> image_positions;  ///< original image positions, ascending
    std::vector<std::size_t> layers;            ///< merge layers
    std::vector<std::vector<bool>> retained;    ///< [merge][image position]
};

struct AnalyzeReport {
    std::vector<MassRow> mass;
    MaskGrid masks;
};

/// Mass curve of the image tokens' head-averaged cumulative scores at every
/// layer, plus which original image tokens survive each merge.
inline AnalyzeReport run_analyze(const AppConfig& cfg) {
    const Model model = init_model(cfg.model);
    const TokenSequence input = cfg.build_input();
    PrefillTrace trace;
    prefill(model, input, cfg.pipeline, &trace);
    AnalyzeReport report;
    for (std::size_t l = 0; l < trace.avg_cum_scores.size(); ++l) {
        std::vector<float> image_scores;
        for (std::size_t i = 0; i < trace.segments[l].size(); ++i) {
            if (is_image(trace.segments[l][i])) {
                image_scores.push_back(trace.avg_cum_scores[l][i]);
            }
        }
        if (image_scores.empty()) {
            continue;
        }
        const auto ks = oracle::attention_mass_curve(image_scores, cfg.bench.thresholds);
        for (std::size_t t = 0; t < ks.size(); ++t) {
            report.mass.push_back({l, cfg.bench.thresholds[t], ks[t], image_scores.size()});
        }
    }
    for (std::size_t i = 0; i < input.size(); ++i) {
        if (input.segments[i] == Segment::Image) {
            report.masks.image_positions.push_back(input.positions[i]);
        }
    }
    for (const auto& merge : trace.merges) {
        report.masks.layers.push_back(merge.layer);
        std::vector<bool> row;
        for (std::int64_t p : report.masks.image_positions) {
            row.push_back(std::binary_search(merge.kept_image_positions.begin(), merge.kept_image_positions.end(), p));
        }
        report.masks.retained.push_back(std::move(row));
    }
    return report;
}

inline void write_mass_csv(std::ostream& os, const AppConfig& cfg, const std::vector<MassRow>& rows) {
    write_csv_preamble(os, cfg, 1);
    os << "layer,threshold,k,n,k_over_n,fraction\n";
    os << std::setprecision(10);
    for (const auto& r : rows) {
        os << r.layer << ',' << r.threshold << ',' << r.k << ',' << r.n << ',' << r.k << '/' << r.n << ','
           << static_cast<double>(r.k) / static_cast<double>(r.n) << '\n';
    }
}

inline void write_mask_csv(std::ostream& os, const AppConfig& cfg, const MaskGrid& grid) {
    write_csv_preamble(os, cfg, 1);
    os << "layer";
    for (std::int64_t p : grid.image_positions) {
        os << ",pos" << p;
    }
    os << '\n';
    for (std::size_t m = 0; m < grid.layers.size(); ++m) {
        os << grid.layers[m];
        for (bool kept : grid.retained[m]) {
            os << ',' << (kept ? 1 : 0);
        }
        os << '\n';
    }
}

}  // namespace lightinfer

// Copyright (C) 2026 The lightinfer Authors
// SPDX-License-Identifier: Apache-2.0

// Oracle-backed checks shared by `lightinfer verify` and the acceptance suite.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lightinfer/attention.hpp"
#include "lightinfer/bench.hpp"
#include "lightinfer/config.hpp"
#include "lightinfer/kvcache.hpp"
#include "lightinfer/merge.hpp"
#include "lightinfer/model.hpp"
#include "lightinfer/oracle.hpp"

namespace lightinfer {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

namespace detail {

inline CheckResult make_result(std::string name, bool passed, const std::ostringstream& detail) {
    return {std::move(name), passed, detail.str()};
}

inline PipelineConfig identity_pipeline(const PipelineConfig& base) {
    PipelineConfig p = base;
    p.merging_enabled = true;
    p.compression_enabled = true;
    p.evict_merged_entries = false;
    p.merge_schedule.target_ratio = 1.0;
    p.merge_schedule.keep_counts.clear();
    p.compression.beta = 1.0;
    return p;
}

}  // namespace detail

/// keep_ratio 1 and beta 1 must reproduce the plain model's ids exactly.
inline CheckResult check_identity(const AppConfig& cfg, std::size_t seeds, std::size_t max_new) {
    const Model model = init_model(cfg.model);
    std::ostringstream detail;
    bool ok = true;
    for (std::size_t s = 0; s < seeds && ok; ++s) {
        AppConfig c = cfg;
        c.input.seed = cfg.input.seed + s;
        const TokenSequence input = c.build_input();
        const auto plain = generate(model, input, PipelineConfig::disabled(), max_new).tokens;
        const auto piped = generate(model, input, detail::identity_pipeline(cfg.pipeline), max_new).tokens;
        if (plain != piped) {
            ok = false;
            detail << "ids differ at input seed " << c.input.seed;
        }
    }
    if (ok) {
        detail << seeds << " seeds x " << max_new << " tokens identical";
    }
    return detail::make_result("identity configuration", ok, detail);
}

/// merge_tokens against the explicit weighted sum, and partition_tokens against
/// selection ranking, on random instances with frequent ties.
inline CheckResult check_merge_oracle(std::size_t instances, std::size_t max_r, std::size_t max_cols,
                                      std::uint64_t seed, double tolerance = 1e-6) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    std::size_t partition_mismatches = 0;
    for (std::size_t t = 0; t < instances; ++t) {
        const std::size_t r = std::uniform_int_distribution<std::size_t>(0, max_r)(rng);
        const std::size_t cols = std::uniform_int_distribution<std::size_t>(1, max_cols)(rng);
        const Matrix rows = random_uniform(r + 1, cols, -1.0f, 1.0f, rng);
        const Matrix fast = merge_tokens(rows);
        const Matrix slow = oracle::naive_weighted_merge(rows, merge_weights(r));
        for (std::size_t c = 0; c < cols; ++c) {
            worst = std::max(worst, static_cast<double>(std::abs(fast(0, c) - slow(0, c))));
        }
        // Importance drawn from a small set of values so ties are common.
        const std::size_t n = r + 1 + std::uniform_int_distribution<std::size_t>(0, 16)(rng);
        std::vector<float> importance(n);
        for (float& v : importance) {
            v = static_cast<float>(std::uniform_int_distribution<int>(0, 5)(rng)) * 0.25f;
        }
        const auto a = partition_tokens(importance, r);
        const auto b = oracle::selection_partition(importance, r);
        if (a.unmerged_indices != b.unmerged_indices || a.merged_indices != b.merged_indices) {
            ++partition_mismatches;
        }
    }
    std::ostringstream detail;
    detail << instances << " instances, max |merge - oracle| = " << worst << ", partition mismatches "
           << partition_mismatches;
    return detail::make_result("merge oracle equivalence", worst <= tolerance && partition_mismatches == 0, detail);
}

/// Cached greedy decode against re-running the whole model every step.
inline CheckResult check_cache_decode(const AppConfig& cfg, std::size_t seeds, std::size_t steps) {
    const Model model = init_model(cfg.model);
    std::ostringstream detail;
    bool ok = true;
    for (bool merging : {false, true}) {
        PipelineConfig p = cfg.pipeline;
        p.merging_enabled = merging;
        p.compression_enabled = true;
        p.compression.beta = 1.0;
        p.evict_merged_entries = false;
        p.merge_schedule.keep_counts.clear();
        for (std::size_t s = 0; s < seeds && ok; ++s) {
            AppConfig c = cfg;
            c.input.seed = cfg.input.seed + s;
            const TokenSequence input = c.build_input();
            const auto cached = generate(model, input, p, steps).tokens;
            const auto recomputed = oracle::full_recompute_decode(model, input, p, steps);
            if (cached != recomputed) {
                ok = false;
                detail << "merging=" << merging << " input seed " << c.input.seed << " diverges; ";
            }
        }
    }
    if (ok) {
        detail << seeds << " seeds x " << steps << " steps, with and without merging";
    }
    return detail::make_result("cache decode equivalence", ok, detail);
}

/// Random per-head caches: retained image sets are minimal beta-covers and nest as beta grows.
inline CheckResult check_minimal_coverage(std::size_t instances, std::uint64_t seed) {
    const std::vector<double> betas{0.5, 0.9, 0.995, 1.0};
    std::mt19937_64 rng(seed);
    std::size_t minimal_failures = 0;
    std::size_t nesting_failures = 0;
    for (std::size_t t = 0; t < instances; ++t) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 96)(rng);
        const std::size_t dim = 8;
        HeadCache head(dim);
        std::vector<float> scores(n);
        std::vector<float> row(dim, 0.0f);
        const double alpha = std::uniform_real_distribution<double>(0.0, 3.0)(rng);
        for (std::size_t i = 0; i < n; ++i) {
            const bool image = std::uniform_int_distribution<int>(0, 4)(rng) != 0;
            head.push_back(row, row, static_cast<std::int64_t>(i), image ? Segment::Image : Segment::Instruction);
            // Power-law-ish scores; a few exact zeros and ties.
            const int kind = std::uniform_int_distribution<int>(0, 9)(rng);
            scores[i] = kind == 0 ? 0.0f
                        : kind == 1 ? 0.5f
                                    : static_cast<float>(std::pow(uniform_float(rng, 0.0f, 1.0f), 1.0 + 4.0 * alpha));
        }
        std::vector<std::vector<std::size_t>> retained;
        for (double beta : betas) {
            const auto keep = retained_entries(head, scores, beta);
            std::vector<double> all_image;
            std::vector<double> kept_image;
            for (std::size_t i = 0; i < n; ++i) {
                if (is_image(head.segments()[i])) {
                    all_image.push_back(scores[i]);
                }
            }
            for (std::size_t i : keep) {
                if (is_image(head.segments()[i])) {
                    kept_image.push_back(scores[i]);
                }
            }
            std::sort(all_image.begin(), all_image.end(), std::greater<>());
            std::sort(kept_image.begin(), kept_image.end(), std::greater<>());
            double total = 0.0;
            for (double v : all_image) {
                total += v;
            }
            if (keep.size() - kept_image.size() != n - all_image.size()) {
                ++minimal_failures;
            }
            if (beta < 1.0 && total > 0.0) {
                // Coverage holds, and dropping the last retained entry breaks it.
                double without_last = 0.0;
                for (std::size_t i = 0; i + 1 < kept_image.size(); ++i) {
                    without_last += kept_image[i];
                }
                const double covered = kept_image.empty() ? 0.0 : without_last + kept_image.back();
                if (kept_image.empty() || covered < beta * total || without_last >= beta * total) {
                    ++minimal_failures;
                }
            } else if (kept_image.size() != all_image.size()) {
                ++minimal_failures;
            }
            retained.push_back(std::move(keep));
        }
        for (std::size_t b = 1; b < retained.size(); ++b) {
            if (!std::includes(retained[b].begin(), retained[b].end(), retained[b - 1].begin(), retained[b - 1].end())) {
                ++nesting_failures;
            }
        }
    }
    std::ostringstream detail;
    detail << instances << " heads, minimality failures " << minimal_failures << ", nesting failures "
           << nesting_failures;
    return detail::make_result("minimal coverage and beta monotonicity", minimal_failures == 0 && nesting_failures == 0,
                               detail);
}

/// Image tokens leaving each layer follow the planned keep counts; text counts never change.
inline CheckResult check_token_ledger(const AppConfig& cfg) {
    const Model model = init_model(cfg.model);
    const TokenSequence input = cfg.build_input();
    PipelineConfig p = cfg.pipeline;
    p.merging_enabled = true;
    p.merge_schedule.keep_counts.clear();
    const PrefillResult pre = prefill(model, input, p);
    const auto& sched = p.merge_schedule.merge_layers;
    const auto plan = plan_keep_counts(cfg.input.n_image, p.merge_schedule.target_ratio, std::max<std::size_t>(1, sched.size()));
    const std::size_t n_text = input.size() - input.image_count();
    std::ostringstream detail;
    bool ok = true;
    std::size_t expected = cfg.input.n_image;
    std::size_t stage = 0;
    for (std::size_t l = 0; l < cfg.model.n_layers; ++l) {
        if (stage < sched.size() && sched[stage] == l) {
            expected = plan[stage++];
        }
        const std::size_t image = pre.metrics.image_tokens_per_layer[l];
        const std::size_t text = pre.metrics.tokens_per_layer[l] - image;
        if (image != expected || text != n_text) {
            ok = false;
            detail << "layer " << l << ": " << image << " image / " << text << " text, expected " << expected << " / "
                   << n_text << "; ";
        }
    }
    if (ok) {
        detail << "image counts by stage:";
        detail << ' ' << cfg.input.n_image;
        for (std::size_t s = 0; s < sched.size(); ++s) {
            detail << ' ' << plan[s];
        }
    }
    return detail::make_result("token ledger", ok, detail);
}

/// memory_estimate equals a recount of the entries actually held.
inline CheckResult check_memory_recount(const KVCache& cache) {
    std::size_t entries = 0;
    for (const auto& layer : cache.layers()) {
        for (const auto& head : layer.heads) {
            entries += head.positions().size();
        }
    }
    const std::size_t expected = entries * 2 * cache.head_dim() * sizeof(float);
    const std::size_t got = memory_estimate(cache).total_bytes;
    std::ostringstream detail;
    detail << entries << " entries, estimate " << got << " bytes, recount " << expected;
    return detail::make_result("memory recount", got == expected, detail);
}

/// Streaming scores and context against the materialized path on random inputs.
inline CheckResult check_mode_equivalence(std::size_t instances, std::size_t max_tokens, std::uint64_t seed,
                                          double tolerance = 1e-5) {
    std::mt19937_64 rng(seed);
    double worst = 0.0;
    double worst_oracle = 0.0;
    for (std::size_t t = 0; t < instances; ++t) {
        const std::size_t n = std::uniform_int_distribution<std::size_t>(1, max_tokens)(rng);
        const std::size_t heads = std::uniform_int_distribution<std::size_t>(1, 4)(rng);
        const std::size_t head_dim = 8 * std::uniform_int_distribution<std::size_t>(1, 3)(rng);
        const std::size_t c = heads * head_dim;
        const Matrix hidden = random_normal(n, c, 1.0f, rng);
        AttentionWeights w;
        w.n_heads = heads;
        w.query = random_uniform(c, c, -0.3f, 0.3f, rng);
        w.key = random_uniform(c, c, -0.3f, 0.3f, rng);
        w.value = random_uniform(c, c, -0.3f, 0.3f, rng);
        w.output = random_uniform(c, c, -0.3f, 0.3f, rng);
        const auto full = multi_head_attention(hidden, w, {AttentionMode::Full, {}});
        const auto streamed = multi_head_attention(hidden, w, {AttentionMode::CumulativeOnly, {}});
        for (std::size_t i = 0; i < full.context.data().size(); ++i) {
            worst = std::max(worst, static_cast<double>(std::abs(full.context.data()[i] - streamed.context.data()[i])));
        }
        for (std::size_t j = 0; j < n; ++j) {
            worst = std::max(worst, static_cast<double>(std::abs(full.avg_cum_scores[j] - streamed.avg_cum_scores[j])));
        }
        // The materialized probabilities themselves against a double-precision reference.
        const auto reference = oracle::naive_attention_probs(hidden, w);
        for (std::size_t h = 0; h < heads; ++h) {
            for (std::size_t i = 0; i < n * n; ++i) {
                worst_oracle = std::max(worst_oracle, static_cast<double>(std::abs((*full.full_scores)[h].data()[i] -
                                                                                   reference[h].data()[i])));
            }
        }
    }
    std::ostringstream detail;
    detail << instances << " inputs, max |full - streamed| = " << worst << ", max |probs - oracle| = " << worst_oracle;
    return detail::make_result("attention mode equivalence", worst <= tolerance && worst_oracle <= tolerance, detail);
}

/// Drift is zero at keep_ratio 1 (beta 1) and does not grow as keep_ratio grows.
inline CheckResult check_drift_order(const std::vector<SweepRow>& rows, double beta) {
    std::vector<SweepRow> picked;
    for (const auto& r : rows) {
        if (r.beta == beta) {
            picked.push_back(r);
        }
    }
    std::sort(picked.begin(), picked.end(), [](const SweepRow& a, const SweepRow& b) { return a.keep_ratio < b.keep_ratio; });
    std::ostringstream detail;
    bool ok = !picked.empty();
    for (std::size_t i = 0; i < picked.size(); ++i) {
        detail << "keep " << picked[i].keep_ratio << " drift " << picked[i].drift << "; ";
        if (i > 0 && picked[i].drift > picked[i - 1].drift) {
            ok = false;
        }
        if (picked[i].keep_ratio == 1.0 && picked[i].drift != 0.0) {
            ok = false;
        }
    }
    return detail::make_result("drift ordering", ok, detail);
}

/// The `verify` subcommand: every oracle check, sized by the config.
inline std::vector<CheckResult> run_verify(const AppConfig& cfg) {
    std::vector<CheckResult> out;
    const std::size_t seeds = cfg.bench.seeds;
    out.push_back(check_identity(cfg, seeds, cfg.max_new));
    out.push_back(check_merge_oracle(100, 32, 64, cfg.input.seed));
    out.push_back(check_cache_decode(cfg, std::min<std::size_t>(seeds, 10), 8));
    out.push_back(check_minimal_coverage(200, cfg.input.seed));
    out.push_back(check_token_ledger(cfg));
    {
        const Model model = init_model(cfg.model);
        out.push_back(check_memory_recount(generate(model, cfg.build_input(), cfg.pipeline, 4).cache));
    }
    out.push_back(check_mode_equivalence(50, 128, cfg.input.seed));
    return out;
}

}  // namespace lightinfer

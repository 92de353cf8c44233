// Copyright (C) 2026 The lightinfer Authors
// SPDX-License-Identifier: Apache-2.0

#include <sstream>

#include <gtest/gtest.h>

#include "lightinfer/bench.hpp"
#include "lightinfer/config.hpp"
#include "lightinfer/verify.hpp"

namespace li = lightinfer;

namespace {

std::string error_key(std::string_view text) {
    try {
        li::parse_config(text);
    } catch (const li::ConfigError& e) {
        return e.key();
    }
    return "";
}

li::AppConfig tiny_config() {
    return li::parse_config(R"(
[model]
n_layers = 16
n_heads = 2
dim = 32
vocab = 64

[input]
n_system = 3
n_image = 48
n_instruction = 4
redundancy = 0.9

[pipeline]
keep_ratio = 0.15
max_new = 6

[bench]
lengths = 16, 32
variants = vanilla, full
repetitions = 5
keep_ratios = 1.0, 0.15, 0.03
betas = 0.995, 1.0
seeds = 3
sweep_max_new = 6
)");
}

std::vector<std::string> lines(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    for (std::string line; std::getline(is, line);) {
        out.push_back(line);
    }
    return out;
}

}  // namespace

TEST(ParseConfig, DefaultsWhenEmpty) {
    const auto cfg = li::parse_config("");
    EXPECT_EQ(cfg.model.n_layers, 28u);
    EXPECT_EQ(cfg.model.dim, 256u);
    EXPECT_EQ(cfg.input.n_image, 576u);
    EXPECT_DOUBLE_EQ(cfg.pipeline.compression.beta, 0.995);
    EXPECT_EQ(cfg.pipeline.merge_schedule.merge_layers, (std::vector<std::size_t>{5, 9, 13}));
}

TEST(ParseConfig, ReadsEveryKind) {
    const auto cfg = li::parse_config(R"(
# comment
[model]
; another comment
dim = 64
[pipeline]
merge_layers = 2, 4
keep_ratio = 0.35
merging = false
evict_merged = yes
[bench]
variants = vanilla, cache-only
thresholds = 0.5, 0.9
)");
    EXPECT_EQ(cfg.model.dim, 64u);
    EXPECT_EQ(cfg.pipeline.merge_schedule.merge_layers, (std::vector<std::size_t>{2, 4}));
    EXPECT_DOUBLE_EQ(cfg.pipeline.merge_schedule.target_ratio, 0.35);
    EXPECT_FALSE(cfg.pipeline.merging_enabled);
    EXPECT_TRUE(cfg.pipeline.evict_merged_entries);
    EXPECT_EQ(cfg.bench.variants, (std::vector<std::string>{"vanilla", "cache-only"}));
    EXPECT_EQ(cfg.bench.thresholds, (std::vector<double>{0.5, 0.9}));
}

TEST(ParseConfig, ErrorsNameTheKey) {
    EXPECT_EQ(error_key("[model]\nfoo = 1\n"), "model.foo");
    EXPECT_EQ(error_key("[model]\ndim = abc\n"), "model.dim");
    EXPECT_EQ(error_key("[model]\ndim = 30\nn_heads = 4\n"), "model.dim");
    EXPECT_EQ(error_key("[model]\ndim = 32\ndim = 64\n"), "model.dim");
    EXPECT_EQ(error_key("[pipeline]\nbeta = 1.5\n"), "pipeline.beta");
    EXPECT_EQ(error_key("[pipeline]\nkeep_ratio = 0\n"), "pipeline.keep_ratio");
    EXPECT_EQ(error_key("[pipeline]\nmerging = maybe\n"), "pipeline.merging");
    EXPECT_EQ(error_key("[bench]\nvariants = vanilla, turbo\n"), "bench.variants");
    EXPECT_EQ(error_key("[nowhere]\nx = 1\n"), "nowhere");
    EXPECT_FALSE(error_key("dim = 3\n").empty());
}

TEST(LoadConfig, MissingFileIsConfigError) {
    EXPECT_THROW(li::load_config("/nonexistent/lightinfer.conf"), li::ConfigError);
}

TEST(ConfigHash, StableAndSensitive) {
    const auto a = li::parse_config("[model]\ndim = 64\n");
    const auto b = li::parse_config("# same settings\n[model]\ndim   =   64\n");
    const auto c = li::parse_config("[model]\ndim = 128\n");
    EXPECT_EQ(li::config_hash(a), li::config_hash(b));
    EXPECT_NE(li::config_hash(a), li::config_hash(c));
    EXPECT_EQ(li::config_hash(a).size(), 16u);
}

TEST(VariantPipeline, TogglesStages) {
    const li::PipelineConfig base;
    EXPECT_FALSE(li::variant_pipeline(base, "vanilla").merging_enabled);
    EXPECT_FALSE(li::variant_pipeline(base, "vanilla").compression_enabled);
    EXPECT_TRUE(li::variant_pipeline(base, "merge-only").merging_enabled);
    EXPECT_FALSE(li::variant_pipeline(base, "merge-only").compression_enabled);
    EXPECT_FALSE(li::variant_pipeline(base, "cache-only").merging_enabled);
    EXPECT_TRUE(li::variant_pipeline(base, "full").compression_enabled);
    EXPECT_THROW(li::variant_pipeline(base, "turbo"), li::ConfigError);
}

// -- reporting ---------------------------------------------------------------------------

TEST(Median, OddEvenAndEmpty) {
    EXPECT_DOUBLE_EQ(li::median({3, 1, 2}), 2.0);
    EXPECT_DOUBLE_EQ(li::median({4, 1, 2, 3}), 2.5);
    EXPECT_THROW(li::median({}), li::Error);
}

TEST(RunCsv, HeaderAndHashLine) {
    const auto cfg = tiny_config();
    const auto model = li::init_model(cfg.model);
    const auto result = li::generate(model, cfg.build_input(), cfg.pipeline, 2);
    std::ostringstream os;
    li::write_run_csv(os, cfg, result.metrics);
    const auto rows = lines(os.str());
    ASSERT_GE(rows.size(), 2u + cfg.model.n_layers);
    EXPECT_EQ(rows[0].rfind("# config-hash=" + li::config_hash(cfg), 0), 0u);
    EXPECT_EQ(rows[1], "layer,tokens,image_tokens,text_tokens,cache_entries");
}

TEST(Sweep, GridShapeAndDeterministicColumns) {
    const auto cfg = tiny_config();
    const auto a = li::run_sweep(cfg, 2, false);
    const auto b = li::run_sweep(cfg, 1, false);
    ASSERT_EQ(a.size(), 6u);
    ASSERT_EQ(b.size(), a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        EXPECT_EQ(a[i].keep_ratio, b[i].keep_ratio);
        EXPECT_EQ(a[i].beta, b[i].beta);
        EXPECT_EQ(a[i].drift, b[i].drift);
        EXPECT_EQ(a[i].memory_bytes, b[i].memory_bytes);
        EXPECT_EQ(a[i].retained_image_fraction, b[i].retained_image_fraction);
        EXPECT_EQ(a[i].seeds, 3u);
        EXPECT_GE(a[i].drift, 0.0);
        EXPECT_LE(a[i].drift, 1.0);
    }
    for (const auto& r : a) {
        if (r.keep_ratio == 1.0 && r.beta == 1.0) {
            EXPECT_EQ(r.drift, 0.0);
        }
    }

    std::ostringstream os;
    li::write_sweep_csv(os, cfg, a);
    const auto rows = lines(os.str());
    ASSERT_EQ(rows.size(), 8u);
    EXPECT_EQ(rows[0].front(), '#');
    EXPECT_EQ(rows[1], "keep_ratio,beta,prefill_ms,mean_decode_ms,total_ms,memory_bytes,retained_image_fraction,drift,seeds");
}

TEST(Sweep, EmptyGridIsConfigError) {
    auto cfg = tiny_config();
    cfg.bench.betas.clear();
    EXPECT_THROW(li::run_sweep(cfg, 1, false), li::ConfigError);
}

TEST(IdDrift, CountsDifferences) {
    EXPECT_DOUBLE_EQ(li::id_drift({1, 2, 3, 4}, {1, 2, 3, 4}), 0.0);
    EXPECT_DOUBLE_EQ(li::id_drift({1, 2, 3, 4}, {1, 9, 3, 9}), 0.5);
}

TEST(DriftOrder, DetectsViolations) {
    std::vector<li::SweepRow> rows(3);
    rows[0].keep_ratio = 0.03;
    rows[0].drift = 0.5;
    rows[1].keep_ratio = 0.35;
    rows[1].drift = 0.2;
    rows[2].keep_ratio = 1.0;
    rows[2].drift = 0.0;
    EXPECT_TRUE(li::check_drift_order(rows, 1.0).passed);
    rows[1].drift = 0.6;
    EXPECT_FALSE(li::check_drift_order(rows, 1.0).passed);
    rows[1].drift = 0.2;
    rows[2].drift = 0.1;
    EXPECT_FALSE(li::check_drift_order(rows, 1.0).passed);
}

TEST(Bench, RowsAndCsv) {
    const auto cfg = tiny_config();
    const auto rows = li::run_bench(cfg);
    ASSERT_EQ(rows.size(), 4u);
    for (const auto& r : rows) {
        EXPECT_GE(r.repetitions, li::kMinRepetitions);
        if (r.variant == "vanilla") {
            EXPECT_DOUBLE_EQ(r.speedup, 1.0);
        }
    }
    std::ostringstream os;
    li::write_bench_csv(os, cfg, rows);
    const auto out = lines(os.str());
    ASSERT_EQ(out.size(), 6u);
    EXPECT_EQ(out[0].front(), '#');
    EXPECT_EQ(out[1].rfind("variant,token_merging,kv_compression,length", 0), 0u);
}

TEST(Analyze, MassRowsAreConsistent) {
    const auto cfg = tiny_config();
    const auto report = li::run_analyze(cfg);
    ASSERT_FALSE(report.mass.empty());
    for (const auto& r : report.mass) {
        EXPECT_GE(r.k, 1u);
        EXPECT_LE(r.k, r.n);
    }
    std::ostringstream os;
    li::write_mass_csv(os, cfg, report.mass);
    EXPECT_EQ(lines(os.str())[1], "layer,threshold,k,n,k_over_n,fraction");
}

TEST(Verify, AllChecksPassOnTinyConfig) {
    for (const auto& r : li::run_verify(tiny_config())) {
        EXPECT_TRUE(r.passed) << r.name << ": " << r.detail;
    }
}

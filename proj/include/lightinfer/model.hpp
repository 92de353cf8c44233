// Copyright (C) 2026 The lightinfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <bit>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lightinfer/attention.hpp"
#include "lightinfer/error.hpp"
#include "lightinfer/kvcache.hpp"
#include "lightinfer/merge.hpp"
#include "lightinfer/numerics.hpp"

namespace lightinfer {

struct ModelConfig {
    std::size_t n_layers = 28;
    std::size_t n_heads = 4;
    std::size_t dim = 256;
    std::size_t vocab = 512;
    std::uint64_t seed = 0;

    std::size_t head_dim() const { return dim / n_heads; }

    void validate() const {
        require(n_layers >= 1 && n_heads >= 1 && dim >= 1 && vocab >= 1, "model sizes must be at least 1");
        require(dim % n_heads == 0, "head count ", n_heads, " does not divide dim ", dim);
    }

    friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct LayerWeights {
    std::vector<float> attn_norm_gain;
    std::vector<float> attn_norm_bias;
    AttentionWeights attention;
    std::vector<float> mlp_norm_gain;
    std::vector<float> mlp_norm_bias;
    Matrix mlp_up;  ///< dim x 4*dim
    std::vector<float> mlp_up_bias;
    Matrix mlp_down;  ///< 4*dim x dim
    std::vector<float> mlp_down_bias;
};

/// Decoder-only transformer with seeded synthetic weights. Immutable once built.
struct Model {
    ModelConfig config;
    Matrix token_embedding;  ///< vocab x dim
    std::vector<LayerWeights> layers;
    std::vector<float> final_norm_gain;
    std::vector<float> final_norm_bias;
    Matrix lm_head;  ///< dim x vocab
};

inline constexpr float kInitRange = 0.05f;

/// Weights uniform in [-0.05, 0.05] from a seeded engine; layer-norm gains are
/// one and their biases zero.
inline Model init_model(const ModelConfig& config) {
    config.validate();
    std::mt19937_64 engine(config.seed);
    const std::size_t c = config.dim;
    auto uniform_vec = [&](std::size_t n) {
        std::vector<float> v(n);
        for (float& x : v) {
            x = uniform_float(engine, -kInitRange, kInitRange);
        }
        return v;
    };
    Model model;
    model.config = config;
    model.token_embedding = random_uniform(config.vocab, c, -kInitRange, kInitRange, engine);
    model.layers.reserve(config.n_layers);
    for (std::size_t l = 0; l < config.n_layers; ++l) {
        LayerWeights w;
        w.attn_norm_gain.assign(c, 1.0f);
        w.attn_norm_bias.assign(c, 0.0f);
        w.attention.n_heads = config.n_heads;
        w.attention.query = random_uniform(c, c, -kInitRange, kInitRange, engine);
        w.attention.key = random_uniform(c, c, -kInitRange, kInitRange, engine);
        w.attention.value = random_uniform(c, c, -kInitRange, kInitRange, engine);
        w.attention.output = random_uniform(c, c, -kInitRange, kInitRange, engine);
        w.mlp_norm_gain.assign(c, 1.0f);
        w.mlp_norm_bias.assign(c, 0.0f);
        w.mlp_up = random_uniform(c, 4 * c, -kInitRange, kInitRange, engine);
        w.mlp_up_bias = uniform_vec(4 * c);
        w.mlp_down = random_uniform(4 * c, c, -kInitRange, kInitRange, engine);
        w.mlp_down_bias = uniform_vec(c);
        model.layers.push_back(std::move(w));
    }
    model.final_norm_gain.assign(c, 1.0f);
    model.final_norm_bias.assign(c, 0.0f);
    model.lm_head = random_uniform(c, config.vocab, -kInitRange, kInitRange, engine);
    return model;
}

/// FNV-1a over the bit patterns of a layer's weights.
inline std::uint64_t layer_checksum(const Model& model, std::size_t layer) {
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    auto mix = [&](std::span<const float> values) {
        for (float v : values) {
            hash ^= std::bit_cast<std::uint32_t>(v);
            hash *= 0x100000001b3ULL;
        }
    };
    const LayerWeights& w = model.layers.at(layer);
    mix(w.attention.query.data());
    mix(w.attention.key.data());
    mix(w.attention.value.data());
    mix(w.attention.output.data());
    mix(w.mlp_up.data());
    mix(w.mlp_up_bias);
    mix(w.mlp_down.data());
    mix(w.mlp_down_bias);
    return hash;
}

// ---------------------------------------------------------------------------
// Synthetic multimodal input

inline constexpr float kDuplicateNoise = 0.01f;

/// System prompt, image and instruction blocks in that order. A `redundancy`
/// fraction of the image tokens are noisy copies (sigma 0.01) of a small set of
/// prototypes; the rest are independent draws.
inline TokenSequence build_input(std::size_t n_system, std::size_t n_image, std::size_t n_instruction,
                                 double redundancy, std::uint64_t seed, std::size_t dim) {
    require(n_system + n_image + n_instruction >= 1, "input must contain at least one token");
    require(redundancy >= 0.0 && redundancy <= 1.0, "redundancy ", redundancy, " outside [0, 1]");
    require(dim >= 1, "embedding width must be positive");
    std::mt19937_64 engine(seed);
    std::normal_distribution<float> unit(0.0f, 1.0f);
    std::normal_distribution<float> noise(0.0f, kDuplicateNoise);

    const std::size_t n = n_system + n_image + n_instruction;
    TokenSequence seq;
    seq.embeddings = Matrix(n, dim);
    seq.segments.reserve(n);
    seq.positions.resize(n);
    std::iota(seq.positions.begin(), seq.positions.end(), std::int64_t{0});
    seq.segments.insert(seq.segments.end(), n_system, Segment::SystemPrompt);
    seq.segments.insert(seq.segments.end(), n_image, Segment::Image);
    seq.segments.insert(seq.segments.end(), n_instruction, Segment::Instruction);

    for (float& v : seq.embeddings.data()) {
        v = unit(engine);
    }

    const auto n_dup = static_cast<std::size_t>(std::floor(redundancy * static_cast<double>(n_image) + 0.5));
    if (n_dup > 0) {
        const std::size_t n_proto = std::max<std::size_t>(1, (n_dup + 19) / 20);
        Matrix prototypes(n_proto, dim);
        for (float& v : prototypes.data()) {
            v = unit(engine);
        }
        std::vector<std::size_t> slots(n_image);
        std::iota(slots.begin(), slots.end(), n_system);
        std::shuffle(slots.begin(), slots.end(), engine);
        for (std::size_t i = 0; i < n_dup; ++i) {
            const auto proto = prototypes.row(static_cast<std::size_t>(engine() % n_proto));
            auto row = seq.embeddings.row(slots[i]);
            for (std::size_t d = 0; d < dim; ++d) {
                row[d] = proto[d] + noise(engine);
            }
        }
    }
    return seq;
}

// ---------------------------------------------------------------------------
// Pipeline

struct PipelineConfig {
    /// keep_counts may be left empty; prefill then plans them from
    /// target_ratio and the input's image-token count.
    MergeSchedule merge_schedule;
    CompressionConfig compression;
    bool merging_enabled = true;
    bool compression_enabled = true;
    /// Ablation: after prefill, also drop the cache entries of image tokens that
    /// a later merge collapsed. Breaks equivalence with full recomputation.
    bool evict_merged_entries = false;

    static PipelineConfig disabled() {
        PipelineConfig p;
        p.merging_enabled = false;
        p.compression_enabled = false;
        return p;
    }
};

struct RunMetrics {
    double prefill_ms = 0.0;
    std::vector<double> decode_ms_per_token;
    std::vector<std::size_t> tokens_per_layer;        ///< tokens leaving each layer
    std::vector<std::size_t> image_tokens_per_layer;  ///< image tokens leaving each layer
    std::vector<std::size_t> cache_entries_per_layer;  ///< summed over heads, after compression
    std::size_t memory_bytes = 0;
    /// Image cache entries kept in layers >= compression start, relative to the
    /// uncompressed cache of the same input.
    double retained_image_fraction = 1.0;
    std::vector<std::size_t> output_tokens;
};

struct MergeRecord {
    std::size_t layer = 0;
    std::size_t keep_count = 0;
    std::vector<std::int64_t> kept_image_positions;  ///< original image tokens left after the merge
    std::int64_t merged_position = -1;
};

/// Per-layer observations collected on request during prefill.
struct PrefillTrace {
    std::vector<std::vector<std::int64_t>> positions;  ///< layer input, stored order
    std::vector<std::vector<Segment>> segments;
    std::vector<std::vector<float>> avg_cum_scores;
    std::vector<MergeRecord> merges;
};

struct PrefillResult {
    std::vector<float> logits;
    KVCache cache;
    RunMetrics metrics;
    std::vector<std::vector<std::vector<float>>> layer_scores;  ///< [layer][head][entry], uncompressed cache
};

namespace detail {

using Clock = std::chrono::steady_clock;

inline double elapsed_ms(Clock::time_point since) {
    return std::chrono::duration<double, std::milli>(Clock::now() - since).count();
}

}  // namespace detail

/// x += MLP(layer_norm(x)) with a GELU hidden layer.
inline void mlp_residual(Matrix& hidden, const LayerWeights& w) {
    Matrix up = matmul(layer_norm(hidden, w.mlp_norm_gain, w.mlp_norm_bias), w.mlp_up);
    add_row_bias(up, w.mlp_up_bias);
    for (float& v : up.data()) {
        v = gelu(v);
    }
    Matrix down = matmul(up, w.mlp_down);
    add_row_bias(down, w.mlp_down_bias);
    add_inplace(hidden, down);
}

/// Next-token logits from the last hidden row.
inline std::vector<float> output_logits(const Model& model, std::span<const float> last_hidden) {
    Matrix normed(1, model.config.dim);
    layer_norm_row(last_hidden, model.final_norm_gain, model.final_norm_bias, normed.row(0));
    const Matrix logits = matmul(normed, model.lm_head);
    return {logits.data().begin(), logits.data().end()};
}

/// Resolves keep counts against the input and checks the schedule.
inline MergeSchedule resolve_schedule(const PipelineConfig& pipeline, std::size_t n_image, std::size_t n_layers) {
    MergeSchedule schedule = pipeline.merge_schedule;
    if (schedule.keep_counts.empty() && !schedule.merge_layers.empty()) {
        schedule.keep_counts = plan_keep_counts(n_image, schedule.target_ratio, schedule.merge_layers.size());
    }
    schedule.validate(n_layers);
    for (std::size_t k : schedule.keep_counts) {
        require(k <= n_image, "merge schedule keeps ", k, " image tokens but the input has ", n_image);
    }
    return schedule;
}

/// Drops, layer by layer, image entries of tokens that a merge at this layer or
/// later collapsed away.
inline void evict_collapsed_entries(KVCache& cache, const TokenSequence& final_seq,
                                    const std::vector<MergeRecord>& merges) {
    std::vector<std::int64_t> alive;
    for (std::size_t i = 0; i < final_seq.size(); ++i) {
        if (is_image(final_seq.segments[i])) {
            alive.push_back(final_seq.positions[i]);
        }
    }
    std::sort(alive.begin(), alive.end());
    std::size_t next_merge = merges.size();
    for (std::size_t l = cache.n_layers(); l-- > 0;) {
        while (next_merge > 0 && merges[next_merge - 1].layer >= l) {
            // Below a merge the merged token does not exist yet; its slot (if
            // reused) belonged to a token that was collapsed.
            const std::int64_t created = merges[next_merge - 1].merged_position;
            alive.erase(std::remove(alive.begin(), alive.end(), created), alive.end());
            --next_merge;
        }
        auto& layer = cache.layer(l);
        for (auto& head : layer.heads) {
            std::vector<std::size_t> keep;
            for (std::size_t i = 0; i < head.size(); ++i) {
                if (!is_image(head.segments()[i]) ||
                    std::binary_search(alive.begin(), alive.end(), head.positions()[i])) {
                    keep.push_back(i);
                }
            }
            if (keep.size() != head.size()) {
                head = head.select(keep);
            }
        }
    }
}

/// Runs all layers over the input, merging image tokens at scheduled layers and
/// filling the cache; compresses the cache after the last layer when enabled.
inline PrefillResult prefill(const Model& model, const TokenSequence& input, const PipelineConfig& pipeline,
                             PrefillTrace* trace = nullptr) {
    const auto start = detail::Clock::now();
    const ModelConfig& cfg = model.config;
    input.validate();
    require(input.size() >= 1, "prefill of an empty input");
    require<ShapeError>(input.embeddings.cols() == cfg.dim, "input width ", input.embeddings.cols(),
                        " does not match model dim ", cfg.dim);
    const std::size_t n_image = input.image_count();
    MergeSchedule schedule;
    if (pipeline.merging_enabled) {
        schedule = resolve_schedule(pipeline, n_image, cfg.n_layers);
    }
    if (pipeline.compression_enabled) {
        pipeline.compression.validate(cfg.n_layers);
    }

    PrefillResult result;
    result.cache = KVCache(cfg.n_layers, cfg.n_heads, cfg.head_dim());
    result.layer_scores.resize(cfg.n_layers);
    RunMetrics& metrics = result.metrics;
    metrics.tokens_per_layer.resize(cfg.n_layers);
    metrics.image_tokens_per_layer.resize(cfg.n_layers);
    if (trace != nullptr) {
        *trace = PrefillTrace{};
    }

    TokenSequence seq = input;
    std::size_t stage = 0;
    std::vector<MergeRecord> merges;
    const bool keep_scores = pipeline.compression_enabled;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& w = model.layers[l];
        const Matrix normed = layer_norm(seq.embeddings, w.attn_norm_gain, w.attn_norm_bias);
        AttentionOutput att = multi_head_attention(normed, w.attention, {AttentionMode::CumulativeOnly, {}});
        result.cache.append_rows(l, att.keys, att.values, seq.positions, seq.segments);
        if (trace != nullptr) {
            trace->positions.push_back(seq.positions);
            trace->segments.push_back(seq.segments);
            trace->avg_cum_scores.push_back(att.avg_cum_scores);
        }
        add_inplace(seq.embeddings, att.context);
        mlp_residual(seq.embeddings, w);

        if (pipeline.merging_enabled && stage < schedule.merge_layers.size() && schedule.merge_layers[stage] == l) {
            const auto image_idx = seq.image_indices();
            std::vector<float> importance(image_idx.size());
            for (std::size_t i = 0; i < image_idx.size(); ++i) {
                importance[i] = att.avg_cum_scores[image_idx[i]];
            }
            MergeOutcome outcome = merge_image_tokens(seq, importance, schedule.keep_counts[stage]);
            seq = std::move(outcome.sequence);
            MergeRecord record{l, schedule.keep_counts[stage], {}, outcome.new_position};
            for (std::size_t i = 0; i < seq.size(); ++i) {
                if (seq.segments[i] == Segment::Image) {
                    record.kept_image_positions.push_back(seq.positions[i]);
                }
            }
            merges.push_back(std::move(record));
            ++stage;
        }
        if (keep_scores) {
            result.layer_scores[l] = std::move(att.cum_scores);
        }
        metrics.tokens_per_layer[l] = seq.size();
        metrics.image_tokens_per_layer[l] = seq.image_count();
    }
    result.logits = output_logits(model, seq.embeddings.row(seq.size() - 1));

    if (pipeline.compression_enabled) {
        result.cache = compress_all(result.cache, result.layer_scores, pipeline.compression);
    }
    if (pipeline.evict_merged_entries && !merges.empty()) {
        evict_collapsed_entries(result.cache, seq, merges);
    }
    metrics.prefill_ms = detail::elapsed_ms(start);

    const std::size_t first_compressed = pipeline.compression.start_layer;
    std::size_t retained = 0;
    std::size_t baseline = 0;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const auto& layer = result.cache.layer(l);
        metrics.cache_entries_per_layer.push_back(layer.entries());
        if (l >= first_compressed) {
            for (const auto& head : layer.heads) {
                retained += head.image_count();
            }
            baseline += cfg.n_heads * n_image;
        }
    }
    metrics.retained_image_fraction = baseline == 0 ? 0.0 : static_cast<double>(retained) / static_cast<double>(baseline);
    metrics.memory_bytes = memory_estimate(result.cache).total_bytes;
    if (trace != nullptr) {
        trace->merges = std::move(merges);
    }
    return result;
}

/// Plain forward pass over a sequence (no cache, no merging): next-token logits.
inline std::vector<float> forward_logits(const Model& model, const TokenSequence& input) {
    input.validate();
    require(input.size() >= 1, "forward pass over an empty input");
    Matrix hidden = input.embeddings;
    for (const LayerWeights& w : model.layers) {
        const Matrix normed = layer_norm(hidden, w.attn_norm_gain, w.attn_norm_bias);
        const AttentionOutput att = multi_head_attention(normed, w.attention, {AttentionMode::CumulativeOnly, {}});
        add_inplace(hidden, att.context);
        mlp_residual(hidden, w);
    }
    return output_logits(model, hidden.row(hidden.rows() - 1));
}

/// Embedding row of a generated token.
inline Matrix token_row(const Model& model, std::size_t token_id) {
    require(token_id < model.config.vocab, "token id ", token_id, " outside vocabulary of ", model.config.vocab);
    const auto row = model.token_embedding.row(token_id);
    return Matrix(1, row.size(), std::vector<float>(row.begin(), row.end()));
}

/// Feeds one token through every layer against the cache, appending its
/// keys/values (segment Generated) first; returns next-token logits.
inline std::vector<float> decode_step(const Model& model, KVCache& cache, std::size_t token_id) {
    const ModelConfig& cfg = model.config;
    require(!cache.empty(), "decode_step needs a cache populated by prefill");
    require<ShapeError>(cache.n_layers() == cfg.n_layers && cache.n_heads() == cfg.n_heads &&
                            cache.head_dim() == cfg.head_dim(),
                        "cache geometry does not match the model");
    const std::int64_t position = cache.next_position();
    const std::size_t head_dim = cfg.head_dim();
    Matrix hidden = token_row(model, token_id);
    Matrix mixed(1, cfg.dim);
    std::vector<float> probs;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        const LayerWeights& w = model.layers[l];
        const Matrix normed = layer_norm(hidden, w.attn_norm_gain, w.attn_norm_bias);
        const Matrix q = matmul(normed, w.attention.query);
        const Matrix k = matmul(normed, w.attention.key);
        const Matrix v = matmul(normed, w.attention.value);
        cache.append(l, k.row(0), v.row(0), position, Segment::Generated);
        const auto& layer = cache.layer(l);
        for (std::size_t h = 0; h < cfg.n_heads; ++h) {
            const HeadCache& head = layer.heads[h];
            probs.resize(head.size());
            attend_row(q.row(0).subspan(h * head_dim, head_dim), head.keys(), head.values(), head.size(), probs,
                       mixed.row(0).subspan(h * head_dim, head_dim));
        }
        add_inplace(hidden, matmul(mixed, w.attention.output));
        mlp_residual(hidden, w);
    }
    return output_logits(model, hidden.row(0));
}

struct GenerateResult {
    std::vector<std::size_t> tokens;
    RunMetrics metrics;
    KVCache cache;
};

/// Greedy generation of `max_new` tokens. The first comes from the prefill
/// logits; each decode step then feeds the latest token (so the cache ends
/// holding all of them) and yields the next. decode_ms_per_token has one entry
/// per step.
inline GenerateResult generate(const Model& model, const TokenSequence& input, const PipelineConfig& pipeline,
                               std::size_t max_new) {
    require(max_new >= 1, "max_new must be at least 1");
    PrefillResult pre = prefill(model, input, pipeline);
    GenerateResult out;
    out.metrics = std::move(pre.metrics);
    out.cache = std::move(pre.cache);
    std::size_t next = argmax(pre.logits);
    out.tokens.reserve(max_new);
    out.metrics.decode_ms_per_token.reserve(max_new);
    for (std::size_t step = 0; step < max_new; ++step) {
        out.tokens.push_back(next);
        const auto t0 = detail::Clock::now();
        const auto logits = decode_step(model, out.cache, next);
        next = argmax(logits);
        out.metrics.decode_ms_per_token.push_back(detail::elapsed_ms(t0));
    }
    out.metrics.output_tokens = out.tokens;
    out.metrics.memory_bytes = memory_estimate(out.cache).total_bytes;
    return out;
}

// ---------------------------------------------------------------------------
// Weight export / import: a directory holding manifest.txt plus one LVT1 file
// per tensor. Vectors are stored as 1 x n tensors.

namespace detail {

template <typename M, typename Fn>
void for_each_tensor(M& model, Fn&& fn) {
    fn("token_embedding", model.token_embedding);
    for (std::size_t l = 0; l < model.layers.size(); ++l) {
        auto& w = model.layers[l];
        const std::string p = "layer" + std::to_string(l) + ".";
        fn(p + "attn_norm_gain", w.attn_norm_gain);
        fn(p + "attn_norm_bias", w.attn_norm_bias);
        fn(p + "query", w.attention.query);
        fn(p + "key", w.attention.key);
        fn(p + "value", w.attention.value);
        fn(p + "output", w.attention.output);
        fn(p + "mlp_norm_gain", w.mlp_norm_gain);
        fn(p + "mlp_norm_bias", w.mlp_norm_bias);
        fn(p + "mlp_up", w.mlp_up);
        fn(p + "mlp_up_bias", w.mlp_up_bias);
        fn(p + "mlp_down", w.mlp_down);
        fn(p + "mlp_down_bias", w.mlp_down_bias);
    }
    fn("final_norm_gain", model.final_norm_gain);
    fn("final_norm_bias", model.final_norm_bias);
    fn("lm_head", model.lm_head);
}

inline Matrix as_matrix(const Matrix& m) { return m; }
inline Matrix as_matrix(const std::vector<float>& v) { return Matrix(1, v.size(), v); }

inline void assign_from(Matrix& dst, Matrix src) { dst = std::move(src); }
inline void assign_from(std::vector<float>& dst, const Matrix& src) {
    require<ShapeError>(src.rows() == 1, "vector tensor stored with ", src.rows(), " rows");
    dst.assign(src.data().begin(), src.data().end());
}

}  // namespace detail

inline void save_weights(const Model& model, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream manifest(dir / "manifest.txt");
    require(static_cast<bool>(manifest), "cannot write ", (dir / "manifest.txt").string());
    const ModelConfig& c = model.config;
    manifest << "lightinfer-weights 1\n"
             << "config n_layers " << c.n_layers << " n_heads " << c.n_heads << " dim " << c.dim << " vocab "
             << c.vocab << " seed " << c.seed << '\n';
    detail::for_each_tensor(model, [&](const std::string& name, const auto& tensor) {
        const Matrix m = detail::as_matrix(tensor);
        const std::string file = name + ".lvt";
        std::ofstream os(dir / file, std::ios::binary);
        require(static_cast<bool>(os), "cannot write ", (dir / file).string());
        write_tensor(os, m);
        manifest << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << ' ' << file << '\n';
    });
    require(static_cast<bool>(manifest), "failed writing manifest");
}

inline Model load_weights(const std::filesystem::path& dir) {
    std::ifstream manifest(dir / "manifest.txt");
    require(static_cast<bool>(manifest), "cannot read ", (dir / "manifest.txt").string());
    std::string line;
    std::getline(manifest, line);
    require(line == "lightinfer-weights 1", "unrecognized weight manifest header '", line, "'");
    ModelConfig config;
    std::getline(manifest, line);
    {
        std::istringstream is(line);
        std::string tag, k1, k2, k3, k4, k5;
        is >> tag >> k1 >> config.n_layers >> k2 >> config.n_heads >> k3 >> config.dim >> k4 >> config.vocab >> k5 >>
            config.seed;
        require(is && tag == "config" && k1 == "n_layers" && k2 == "n_heads" && k3 == "dim" && k4 == "vocab" &&
                    k5 == "seed",
                "malformed manifest config line '", line, "'");
    }
    config.validate();
    struct Listed {
        std::size_t rows;
        std::size_t cols;
        std::string file;
    };
    std::vector<std::pair<std::string, Listed>> listed;
    while (std::getline(manifest, line)) {
        if (line.empty()) {
            continue;
        }
        std::istringstream is(line);
        std::string tag, name;
        Listed entry{};
        is >> tag >> name >> entry.rows >> entry.cols >> entry.file;
        require(is && tag == "tensor", "malformed manifest line '", line, "'");
        listed.emplace_back(name, entry);
    }
    // Shapes come from a freshly initialized model of the same config.
    Model model = init_model(config);
    std::size_t next = 0;
    detail::for_each_tensor(model, [&](const std::string& name, auto& tensor) {
        require(next < listed.size() && listed[next].first == name, "manifest missing tensor ", name);
        const Listed& entry = listed[next++].second;
        std::ifstream is(dir / entry.file, std::ios::binary);
        require(static_cast<bool>(is), "cannot read ", (dir / entry.file).string());
        Matrix m = read_tensor(is);
        const Matrix expected = detail::as_matrix(tensor);
        require<ShapeError>(m.rows() == entry.rows && m.cols() == entry.cols && m.rows() == expected.rows() &&
                                m.cols() == expected.cols(),
                            "tensor ", name, " has shape ", m.rows(), "x", m.cols(), ", expected ", expected.rows(),
                            "x", expected.cols());
        detail::assign_from(tensor, std::move(m));
    });
    require(next == listed.size(), "manifest lists ", listed.size() - next, " unexpected tensors");
    return model;
}

}  // namespace lightinfer

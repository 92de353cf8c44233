// Copyright (C) 2026 The lightinfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <ostream>
#include <span>
#include <vector>

#include "lightinfer/attention.hpp"
#include "lightinfer/error.hpp"
#include "lightinfer/merge.hpp"

namespace lightinfer {

struct CacheEntry {
    std::vector<float> key;
    std::vector<float> value;
    std::int64_t position = 0;
    Segment segment = Segment::SystemPrompt;
};

/// Cached keys/values of one attention head, ordered by position.
class HeadCache {
public:
    HeadCache() = default;
    explicit HeadCache(std::size_t dim) : m_keys(dim) {}

    std::size_t dim() const noexcept { return m_keys.dim(); }
    std::size_t size() const noexcept { return m_positions.size(); }
    bool empty() const noexcept { return m_positions.empty(); }

    const KeyTiles& keys() const noexcept { return m_keys; }
    std::span<const float> values() const noexcept { return m_values; }
    std::span<const std::int64_t> positions() const noexcept { return m_positions; }
    std::span<const Segment> segments() const noexcept { return m_segments; }

    void push_back(std::span<const float> key, std::span<const float> value, std::int64_t position,
                   Segment segment) {
        require<ShapeError>(value.size() == dim(), "value of width ", value.size(), " for a ", dim(),
                            "-wide head");
        require(m_positions.empty() || position > m_positions.back(), "cache append at position ", position,
                " after position ", m_positions.empty() ? -1 : m_positions.back());
        m_keys.push_back(key);
        m_values.insert(m_values.end(), value.begin(), value.end());
        m_positions.push_back(position);
        m_segments.push_back(segment);
    }

    CacheEntry entry(std::size_t i) const {
        const auto v = std::span<const float>(m_values).subspan(i * dim(), dim());
        return {m_keys.key(i), {v.begin(), v.end()}, m_positions[i], m_segments[i]};
    }

    std::size_t image_count() const {
        return static_cast<std::size_t>(std::count_if(m_segments.begin(), m_segments.end(), is_image));
    }

    /// Copy holding only the listed entries; `indices` must ascend.
    HeadCache select(std::span<const std::size_t> indices) const {
        HeadCache out(dim());
        out.m_keys.reserve(indices.size());
        out.m_values.reserve(indices.size() * dim());
        for (std::size_t i : indices) {
            const auto key = m_keys.key(i);
            out.push_back(key, std::span<const float>(m_values).subspan(i * dim(), dim()), m_positions[i],
                          m_segments[i]);
        }
        return out;
    }

    friend bool operator==(const HeadCache& a, const HeadCache& b) {
        if (a.dim() != b.dim() || a.m_positions != b.m_positions || a.m_segments != b.m_segments ||
            a.m_values != b.m_values) {
            return false;
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            for (std::size_t d = 0; d < a.dim(); ++d) {
                if (a.m_keys.at(i, d) != b.m_keys.at(i, d)) {
                    return false;
                }
            }
        }
        return true;
    }

private:
    KeyTiles m_keys;
    std::vector<float> m_values;
    std::vector<std::int64_t> m_positions;
    std::vector<Segment> m_segments;
};

struct CacheLayer {
    std::vector<HeadCache> heads;

    std::size_t entries() const {
        std::size_t total = 0;
        for (const auto& h : heads) {
            total += h.size();
        }
        return total;
    }

    friend bool operator==(const CacheLayer&, const CacheLayer&) = default;
};

/// Per-layer, per-head key/value cache of one generation session.
class KVCache {
public:
    KVCache() = default;
    KVCache(std::size_t n_layers, std::size_t n_heads, std::size_t head_dim) {
        require(n_layers >= 1 && n_heads >= 1 && head_dim >= 1, "cache dimensions must be positive");
        m_layers.assign(n_layers, CacheLayer{std::vector<HeadCache>(n_heads, HeadCache(head_dim))});
    }

    std::size_t n_layers() const noexcept { return m_layers.size(); }
    std::size_t n_heads() const noexcept { return m_layers.empty() ? 0 : m_layers.front().heads.size(); }
    std::size_t head_dim() const noexcept { return n_heads() == 0 ? 0 : m_layers.front().heads.front().dim(); }

    CacheLayer& layer(std::size_t l) { return m_layers.at(l); }
    const CacheLayer& layer(std::size_t l) const { return m_layers.at(l); }
    std::span<CacheLayer> layers() noexcept { return m_layers; }
    std::span<const CacheLayer> layers() const noexcept { return m_layers; }

    bool empty() const {
        return std::all_of(m_layers.begin(), m_layers.end(), [](const CacheLayer& l) { return l.entries() == 0; });
    }

    /// One past the highest position ever appended.
    std::int64_t next_position() const noexcept { return m_next_position; }

    /// Appends one token to every head of `layer`. `key_row`/`value_row` hold
    /// the heads side by side (n_heads * head_dim wide).
    void append(std::size_t layer, std::span<const float> key_row, std::span<const float> value_row,
                std::int64_t position, Segment segment) {
        require(layer < m_layers.size(), "layer ", layer, " outside cache of ", m_layers.size(), " layers");
        const std::size_t dim = head_dim();
        require<ShapeError>(key_row.size() == dim * n_heads() && value_row.size() == dim * n_heads(),
                            "cache rows must be ", dim * n_heads(), " wide");
        auto& heads = m_layers[layer].heads;
        for (const auto& h : heads) {
            require(h.empty() || position > h.positions().back(), "cache append at position ", position,
                    " after position ", h.positions().back(), " in layer ", layer);
        }
        for (std::size_t h = 0; h < heads.size(); ++h) {
            heads[h].push_back(key_row.subspan(h * dim, dim), value_row.subspan(h * dim, dim), position, segment);
        }
        m_next_position = std::max(m_next_position, position + 1);
    }

    void append_rows(std::size_t layer, const Matrix& keys, const Matrix& values,
                     std::span<const std::int64_t> positions, std::span<const Segment> segments) {
        require<ShapeError>(keys.rows() == positions.size() && values.rows() == positions.size() &&
                                segments.size() == positions.size(),
                            "append_rows: ", keys.rows(), " keys, ", values.rows(), " values, ", positions.size(),
                            " positions");
        for (std::size_t i = 0; i < positions.size(); ++i) {
            append(layer, keys.row(i), values.row(i), positions[i], segments[i]);
        }
    }

    friend bool operator==(const KVCache&, const KVCache&) = default;

private:
    std::vector<CacheLayer> m_layers;
    std::int64_t m_next_position = 0;
};

struct CompressionConfig {
    double beta = 0.995;
    std::size_t start_layer = 5;

    void validate(std::size_t n_layers) const {
        require(beta > 0.0 && beta <= 1.0, "beta ", beta, " outside (0, 1]");
        require(start_layer < n_layers, "compression start layer ", start_layer, " outside [0, ", n_layers, ")");
    }
};

/// Ascending indices of the entries of one head that survive compression.
///
/// Image entries are ranked by descending score (earlier position first on
/// ties); the shortest prefix whose accumulated score reaches beta times the
/// total image score is kept. Every non-image entry is kept. beta == 1 keeps
/// all entries, including ones with zero score.
inline std::vector<std::size_t> retained_entries(const HeadCache& head, std::span<const float> scores, double beta) {
    require<ShapeError>(scores.size() == head.size(), "got ", scores.size(), " scores for ", head.size(),
                        " cache entries");
    require(beta > 0.0 && beta <= 1.0, "beta ", beta, " outside (0, 1]");
    std::vector<std::size_t> image;
    std::vector<std::size_t> keep;
    for (std::size_t i = 0; i < head.size(); ++i) {
        require(std::isfinite(scores[i]) && scores[i] >= 0.0f, "cache scores must be finite and nonnegative");
        (is_image(head.segments()[i]) ? image : keep).push_back(i);
    }
    if (beta < 1.0 && !image.empty()) {
        std::stable_sort(image.begin(), image.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
        double total = 0.0;
        for (std::size_t i : image) {
            total += scores[i];
        }
        if (total > 0.0) {
            const double target = beta * total;
            double covered = 0.0;
            std::size_t count = 0;
            while (count < image.size() && covered < target) {
                covered += scores[image[count]];
                ++count;
            }
            image.resize(count);
        }
    }
    keep.insert(keep.end(), image.begin(), image.end());
    std::sort(keep.begin(), keep.end());
    return keep;
}

/// Compresses every head of a layer independently.
inline CacheLayer compress_layer(const CacheLayer& layer, const std::vector<std::vector<float>>& per_head_scores,
                                 const CompressionConfig& config) {
    require<ShapeError>(per_head_scores.size() == layer.heads.size(), "got scores for ", per_head_scores.size(),
                        " heads, layer has ", layer.heads.size());
    CacheLayer out;
    out.heads.reserve(layer.heads.size());
    for (std::size_t h = 0; h < layer.heads.size(); ++h) {
        const auto keep = retained_entries(layer.heads[h], per_head_scores[h], config.beta);
        out.heads.push_back(keep.size() == layer.heads[h].size() ? layer.heads[h] : layer.heads[h].select(keep));
    }
    return out;
}

/// Compresses layers >= start_layer with one shared beta. `scores` is indexed
/// [layer][head][entry]; entries for layers below start_layer are ignored.
inline KVCache compress_all(const KVCache& cache, const std::vector<std::vector<std::vector<float>>>& scores,
                            const CompressionConfig& config) {
    KVCache out = cache;
    for (std::size_t l = config.start_layer; l < cache.n_layers(); ++l) {
        require(l < scores.size() && !scores[l].empty(), "no compression scores for layer ", l);
        out.layer(l) = compress_layer(cache.layer(l), scores[l], config);
    }
    return out;
}

struct MemoryEstimate {
    std::vector<std::size_t> per_layer_bytes;
    std::size_t total_bytes = 0;
};

/// Bytes held by cached keys and values: entries x 2 vectors x head width x 4.
inline MemoryEstimate memory_estimate(const KVCache& cache) {
    MemoryEstimate est;
    for (const auto& layer : cache.layers()) {
        std::size_t bytes = 0;
        for (const auto& head : layer.heads) {
            bytes += head.size() * 2 * head.dim() * sizeof(float);
        }
        est.per_layer_bytes.push_back(bytes);
        est.total_bytes += bytes;
    }
    return est;
}

/// Debug dump of a compression decision: one CSV row per (layer, head, entry)
/// of the uncompressed cache.
inline void write_cache_snapshot(std::ostream& os, const KVCache& before,
                                 const std::vector<std::vector<std::vector<float>>>& scores,
                                 const CompressionConfig& config) {
    os << "layer,head,position,segment,retained,score\n";
    for (std::size_t l = 0; l < before.n_layers(); ++l) {
        const auto& layer = before.layer(l);
        const bool have_scores = l < scores.size() && scores[l].size() == layer.heads.size();
        for (std::size_t h = 0; h < layer.heads.size(); ++h) {
            const auto& head = layer.heads[h];
            std::vector<bool> retained(head.size(), true);
            if (l >= config.start_layer) {
                require(have_scores, "no compression scores for layer ", l);
                retained.assign(head.size(), false);
                for (std::size_t i : retained_entries(head, scores[l][h], config.beta)) {
                    retained[i] = true;
                }
            }
            for (std::size_t i = 0; i < head.size(); ++i) {
                os << l << ',' << h << ',' << head.positions()[i] << ',' << to_string(head.segments()[i]) << ','
                   << (retained[i] ? 1 : 0) << ',';
                if (have_scores) {
                    os << scores[l][h][i];
                }
                os << '\n';
            }
        }
    }
}

}  // namespace lightinfer

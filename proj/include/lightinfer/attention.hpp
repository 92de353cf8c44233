// Copyright (C) 2026 The lightinfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "lightinfer/error.hpp"
#include "lightinfer/numerics.hpp"

namespace lightinfer {

/// Keys of one head stored in tiles of eight entries laid out dimension-major
/// ([tile][dim][lane]), so one query can be scored against eight keys per vector op.
class KeyTiles {
public:
    KeyTiles() = default;
    explicit KeyTiles(std::size_t dim) : m_dim(dim) {}

    std::size_t dim() const noexcept { return m_dim; }
    std::size_t size() const noexcept { return m_size; }

    void reserve(std::size_t entries) { m_data.reserve(tile_count(entries) * m_dim * detail::kLanes); }

    void push_back(std::span<const float> key) {
        require<ShapeError>(key.size() == m_dim, "key of width ", key.size(), " pushed into ", m_dim,
                            "-wide key store");
        const std::size_t lane = m_size % detail::kLanes;
        if (lane == 0) {
            m_data.resize(m_data.size() + m_dim * detail::kLanes, 0.0f);
        }
        float* tile = m_data.data() + (m_size / detail::kLanes) * m_dim * detail::kLanes;
        for (std::size_t d = 0; d < m_dim; ++d) {
            tile[d * detail::kLanes + lane] = key[d];
        }
        ++m_size;
    }

    float at(std::size_t entry, std::size_t d) const {
        return m_data[(entry / detail::kLanes) * m_dim * detail::kLanes + d * detail::kLanes +
                      entry % detail::kLanes];
    }

    std::vector<float> key(std::size_t entry) const {
        std::vector<float> out(m_dim);
        for (std::size_t d = 0; d < m_dim; ++d) {
            out[d] = at(entry, d);
        }
        return out;
    }

    /// out[j] = sum_d query[d] * key_j[d], accumulated over d in ascending order,
    /// for the first `count` entries.
    void dot_all(std::span<const float> query, std::size_t count, std::span<float> out) const {
        const std::size_t tiles = tile_count(count);
        for (std::size_t t = 0; t < tiles; ++t) {
            const float* tile = m_data.data() + t * m_dim * detail::kLanes;
            detail::vec8 acc = {};
            for (std::size_t d = 0; d < m_dim; ++d) {
                acc += detail::splat8(query[d]) * detail::load8(tile + d * detail::kLanes);
            }
            const std::size_t base = t * detail::kLanes;
            const std::size_t live = std::min(detail::kLanes, count - base);
            for (std::size_t l = 0; l < live; ++l) {
                out[base + l] = acc[l];
            }
        }
    }

private:
    static std::size_t tile_count(std::size_t entries) { return (entries + detail::kLanes - 1) / detail::kLanes; }

    std::size_t m_dim = 0;
    std::size_t m_size = 0;
    std::vector<float> m_data;
};

/// Attends one query row to the first `count` keys/values of a head.
/// `probs` receives the softmax row, `context` the probability-weighted value sum.
/// Every attention path in the engine (full, cumulative-only, cached decode)
/// goes through this routine, so a given row always yields the same bits.
inline void attend_row(std::span<const float> query, const KeyTiles& keys, std::span<const float> values,
                       std::size_t count, std::span<float> probs, std::span<float> context) {
    const std::size_t dim = keys.dim();
    const float scale = 1.0f / std::sqrt(static_cast<float>(dim));
    auto row = probs.first(count);
    keys.dot_all(query, count, row);
    for (float& s : row) {
        s *= scale;
    }
    softmax_inplace(row);

    std::fill(context.begin(), context.end(), 0.0f);
    if (dim % detail::kLanes == 0) {
        for (std::size_t j = 0; j < count; ++j) {
            const detail::vec8 p = detail::splat8(row[j]);
            const float* v = values.data() + j * dim;
            for (std::size_t d = 0; d < dim; d += detail::kLanes) {
                detail::store8(context.data() + d, detail::load8(context.data() + d) + p * detail::load8(v + d));
            }
        }
    } else {
        for (std::size_t j = 0; j < count; ++j) {
            const float* v = values.data() + j * dim;
            for (std::size_t d = 0; d < dim; ++d) {
                context[d] += row[j] * v[d];
            }
        }
    }
}

enum class AttentionMode {
    Full,           ///< also materializes per-head N x N probability matrices
    CumulativeOnly  ///< streams query rows; only per-key column sums are kept
};

/// Projection weights of a multi-head attention sublayer; heads split the
/// model width into equal contiguous column slices.
struct AttentionWeights {
    Matrix query;
    Matrix key;
    Matrix value;
    Matrix output;
    std::size_t n_heads = 1;
};

struct AttentionOptions {
    AttentionMode mode = AttentionMode::CumulativeOnly;
    /// Only the first `score_rows` query rows contribute to cumulative scores
    /// (all rows when unset).
    std::optional<std::size_t> score_rows;
};

struct AttentionOutput {
    Matrix context;  ///< N x C, after the output projection
    Matrix keys;     ///< N x C projected keys, heads side by side
    Matrix values;   ///< N x C projected values
    std::optional<std::vector<Matrix>> full_scores;
    std::vector<std::vector<float>> cum_scores;  ///< [head][key]
    std::vector<float> avg_cum_scores;           ///< head mean of cum_scores
};

/// Head-mean of per-head score vectors, summed in head order.
inline std::vector<float> average_heads(const std::vector<std::vector<float>>& per_head) {
    require(!per_head.empty(), "average over zero heads");
    std::vector<float> avg(per_head.front().size(), 0.0f);
    for (const auto& head : per_head) {
        require<ShapeError>(head.size() == avg.size(), "per-head score vectors differ in length");
        for (std::size_t j = 0; j < avg.size(); ++j) {
            avg[j] += head[j];
        }
    }
    const auto heads = static_cast<float>(per_head.size());
    for (float& v : avg) {
        v /= heads;
    }
    return avg;
}

/// Splits the head slice [head*dim, (head+1)*dim) of `keys` into tiles.
inline KeyTiles head_key_tiles(const Matrix& keys, std::size_t head, std::size_t dim) {
    KeyTiles tiles(dim);
    tiles.reserve(keys.rows());
    for (std::size_t i = 0; i < keys.rows(); ++i) {
        tiles.push_back(keys.row(i).subspan(head * dim, dim));
    }
    return tiles;
}

/// Copies the head slice of `values` into a contiguous rows x dim block.
inline std::vector<float> head_values(const Matrix& values, std::size_t head, std::size_t dim) {
    std::vector<float> out(values.rows() * dim);
    for (std::size_t i = 0; i < values.rows(); ++i) {
        const auto src = values.row(i).subspan(head * dim, dim);
        std::copy(src.begin(), src.end(), out.begin() + static_cast<std::ptrdiff_t>(i * dim));
    }
    return out;
}

/// Multi-head causal self-attention over `hidden` (N x C).
///
/// In CumulativeOnly mode query rows are processed one at a time against a
/// single length-N scratch row; the N x N probability matrix never exists.
/// Full mode runs the identical row computation and additionally stores each
/// row, so both modes agree bit for bit.
inline AttentionOutput multi_head_attention(const Matrix& hidden, const AttentionWeights& weights,
                                            const AttentionOptions& options = {}) {
    const std::size_t n = hidden.rows();
    const std::size_t width = hidden.cols();
    const std::size_t heads = weights.n_heads;
    require<ShapeError>(n >= 1, "attention over an empty sequence");
    require<ShapeError>(heads >= 1 && width % heads == 0, "head count ", heads, " does not divide width ", width);
    require<ShapeError>(weights.query.rows() == width && weights.query.cols() == width &&
                            weights.key.rows() == width && weights.key.cols() == width &&
                            weights.value.rows() == width && weights.value.cols() == width &&
                            weights.output.rows() == width && weights.output.cols() == width,
                        "attention projections must be ", width, "x", width);
    const std::size_t dim = width / heads;
    const std::size_t score_rows = std::min(options.score_rows.value_or(n), n);
    const bool full = options.mode == AttentionMode::Full;

    AttentionOutput out;
    const Matrix queries = matmul(hidden, weights.query);
    out.keys = matmul(hidden, weights.key);
    out.values = matmul(hidden, weights.value);
    out.cum_scores.assign(heads, std::vector<float>(n, 0.0f));
    if (full) {
        out.full_scores.emplace(heads, Matrix(n, n));
    }

    Matrix mixed(n, width);
    std::vector<float> probs(n);
    for (std::size_t h = 0; h < heads; ++h) {
        const KeyTiles keys = head_key_tiles(out.keys, h, dim);
        const std::vector<float> values = head_values(out.values, h, dim);
        auto& cum = out.cum_scores[h];
        for (std::size_t i = 0; i < n; ++i) {
            const std::size_t visible = i + 1;
            attend_row(queries.row(i).subspan(h * dim, dim), keys, values, visible, probs,
                       mixed.row(i).subspan(h * dim, dim));
            if (full) {
                std::copy_n(probs.begin(), visible, (*out.full_scores)[h].row(i).begin());
            }
            if (i < score_rows) {
                for (std::size_t j = 0; j < visible; ++j) {
                    cum[j] += probs[j];
                }
            }
        }
    }
    out.context = matmul(mixed, weights.output);
    out.avg_cum_scores = average_heads(out.cum_scores);
    return out;
}

/// Column sums of per-head causal, row-stochastic attention matrices.
inline std::vector<std::vector<float>> cumulative_scores_from_full(std::span<const Matrix> full_scores,
                                                                   float tolerance = 1e-4f) {
    std::vector<std::vector<float>> out;
    out.reserve(full_scores.size());
    for (std::size_t h = 0; h < full_scores.size(); ++h) {
        const Matrix& m = full_scores[h];
        require<ShapeError>(m.rows() == m.cols(), "head ", h, " score matrix is ", m.rows(), "x", m.cols());
        std::vector<float> cum(m.cols(), 0.0f);
        for (std::size_t i = 0; i < m.rows(); ++i) {
            double row_sum = 0.0;
            for (std::size_t j = 0; j < m.cols(); ++j) {
                const float p = m(i, j);
                require(p >= 0.0f, "head ", h, " row ", i, " has a negative probability");
                require(j <= i || p == 0.0f, "head ", h, " row ", i, " attends to future key ", j);
                row_sum += p;
                cum[j] += p;
            }
            require(std::abs(row_sum - 1.0) <= tolerance, "head ", h, " row ", i, " sums to ", row_sum,
                    ", not 1");
        }
        out.push_back(std::move(cum));
    }
    return out;
}

}  // namespace lightinfer

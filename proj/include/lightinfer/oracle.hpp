// Copyright (C) 2026 The lightinfer Authors
// SPDX-License-Identifier: Apache-2.0

// Brute-force references. They share no fast path with the engine's kernels
// (no tiling, no cache, no streaming) and are only meant to be obviously right.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "lightinfer/attention.hpp"
#include "lightinfer/error.hpp"
#include "lightinfer/kvcache.hpp"
#include "lightinfer/merge.hpp"
#include "lightinfer/model.hpp"
#include "lightinfer/numerics.hpp"

namespace lightinfer::oracle {

/// Triple loop with double accumulation.
inline Matrix naive_matmul(const Matrix& a, const Matrix& b) {
    require<ShapeError>(a.cols() == b.rows(), "naive_matmul shape mismatch");
    Matrix out(a.rows(), b.cols());
    for (std::size_t i = 0; i < a.rows(); ++i) {
        for (std::size_t j = 0; j < b.cols(); ++j) {
            double acc = 0.0;
            for (std::size_t k = 0; k < a.cols(); ++k) {
                acc += static_cast<double>(a(i, k)) * static_cast<double>(b(k, j));
            }
            out(i, j) = static_cast<float>(acc);
        }
    }
    return out;
}

/// Column sums of a square matrix, in double.
inline std::vector<double> naive_column_sums(const Matrix& m) {
    std::vector<double> out(m.cols(), 0.0);
    for (std::size_t i = 0; i < m.rows(); ++i) {
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out[j] += m(i, j);
        }
    }
    return out;
}

/// Causal multi-head attention probabilities computed per entry in double:
/// [head] -> N x N matrix.
inline std::vector<Matrix> naive_attention_probs(const Matrix& hidden, const AttentionWeights& w) {
    const std::size_t n = hidden.rows();
    const std::size_t heads = w.n_heads;
    const std::size_t dim = hidden.cols() / heads;
    const Matrix q = naive_matmul(hidden, w.query);
    const Matrix k = naive_matmul(hidden, w.key);
    std::vector<Matrix> out(heads, Matrix(n, n));
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t i = 0; i < n; ++i) {
            std::vector<double> logits(i + 1);
            for (std::size_t j = 0; j <= i; ++j) {
                double dot = 0.0;
                for (std::size_t d = 0; d < dim; ++d) {
                    dot += static_cast<double>(q(i, h * dim + d)) * static_cast<double>(k(j, h * dim + d));
                }
                logits[j] = dot / std::sqrt(static_cast<double>(dim));
            }
            const double peak = *std::max_element(logits.begin(), logits.end());
            double total = 0.0;
            for (double& v : logits) {
                v = std::exp(v - peak);
                total += v;
            }
            for (std::size_t j = 0; j <= i; ++j) {
                out[h](i, j) = static_cast<float>(logits[j] / total);
            }
        }
    }
    return out;
}

/// Explicit double loop: sum_i weights[i] * rows[i].
inline Matrix naive_weighted_merge(const Matrix& rows, std::span<const float> weights) {
    require<ShapeError>(weights.size() == rows.rows(), "naive_weighted_merge: ", weights.size(), " weights for ",
                        rows.rows(), " rows");
    double total = 0.0;
    for (float w : weights) {
        total += w;
    }
    require(std::abs(total - 1.0) <= 1e-6, "merge weights sum to ", total, ", not 1");
    Matrix out(1, rows.cols());
    for (std::size_t c = 0; c < rows.cols(); ++c) {
        double acc = 0.0;
        for (std::size_t i = 0; i < rows.rows(); ++i) {
            acc += static_cast<double>(weights[i]) * static_cast<double>(rows(i, c));
        }
        out(0, c) = static_cast<float>(acc);
    }
    return out;
}

/// The literal iterative rule: replace the last two rows by their mean until
/// one row remains. Effective weights are {1/2, 1/4, ..., 2^-r, 2^-r}.
inline Matrix iterative_pairwise_merge(const Matrix& rows) {
    require(rows.rows() >= 1, "iterative_pairwise_merge needs at least one row");
    std::vector<double> tail(rows.row(rows.rows() - 1).begin(), rows.row(rows.rows() - 1).end());
    for (std::size_t i = rows.rows() - 1; i-- > 0;) {
        for (std::size_t c = 0; c < tail.size(); ++c) {
            tail[c] = (static_cast<double>(rows(i, c)) + tail[c]) / 2.0;
        }
    }
    Matrix out(1, rows.cols());
    for (std::size_t c = 0; c < tail.size(); ++c) {
        out(0, c) = static_cast<float>(tail[c]);
    }
    return out;
}

/// Partition by repeated selection of the most important remaining token
/// (lowest index among equals).
inline MergePartition selection_partition(std::span<const float> importance, std::size_t r) {
    const std::size_t n = importance.size();
    require(r < n, "reduction r=", r, " needs more than ", n, " tokens");
    std::vector<bool> taken(n, false);
    std::vector<std::size_t> ranked;
    for (std::size_t step = 0; step < n; ++step) {
        std::size_t best = n;
        for (std::size_t i = 0; i < n; ++i) {
            if (!taken[i] && (best == n || importance[i] > importance[best])) {
                best = i;
            }
        }
        taken[best] = true;
        ranked.push_back(best);
    }
    MergePartition part;
    const std::size_t kept = n - (r + 1);
    part.unmerged_indices.assign(ranked.begin(), ranked.begin() + static_cast<std::ptrdiff_t>(kept));
    std::sort(part.unmerged_indices.begin(), part.unmerged_indices.end());
    part.merged_indices.assign(ranked.begin() + static_cast<std::ptrdiff_t>(kept), ranked.end());
    return part;
}

/// For each threshold t, the fewest top-scored entries whose normalized mass reaches t.
inline std::vector<std::size_t> attention_mass_curve(std::span<const float> scores, std::span<const double> thresholds) {
    require(!scores.empty(), "attention_mass_curve of an empty score vector");
    std::vector<double> sorted;
    sorted.reserve(scores.size());
    for (float s : scores) {
        require(std::isfinite(s) && s >= 0.0f, "attention scores must be finite and nonnegative");
        sorted.push_back(s);
    }
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double total = 0.0;
    for (double s : sorted) {
        total += s;
    }
    require(total > 0.0, "attention scores are all zero");
    std::vector<std::size_t> out;
    for (double t : thresholds) {
        double covered = 0.0;
        std::size_t k = 0;
        while (k < sorted.size() && covered < t * total) {
            covered += sorted[k];
            ++k;
        }
        out.push_back(std::max<std::size_t>(k, 1));
    }
    return out;
}

/// Number of image entries a minimal beta-covering set needs, by trying every
/// prefix length of the descending order.
inline std::size_t minimal_cover_size(std::span<const float> image_scores, double beta) {
    std::vector<double> sorted(image_scores.begin(), image_scores.end());
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    double total = 0.0;
    for (double s : sorted) {
        total += s;
    }
    if (beta >= 1.0 || total <= 0.0) {
        return sorted.size();
    }
    for (std::size_t k = 1; k <= sorted.size(); ++k) {
        double mass = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            mass += sorted[i];
        }
        if (mass >= beta * total) {
            return k;
        }
    }
    return sorted.size();
}

/// Greedy decoding that re-runs the whole model over the growing sequence at
/// every step, with no KV cache. Merge importance counts only the query rows of
/// the original input, which is what prefill sees. Requires compression off
/// (beta = 1 behaves the same).
inline std::vector<std::size_t> full_recompute_decode(const Model& model, const TokenSequence& input,
                                                      const PipelineConfig& pipeline, std::size_t n_steps) {
    require(!pipeline.compression_enabled || pipeline.compression.beta >= 1.0,
            "full_recompute_decode cannot model cache compression");
    require(!pipeline.evict_merged_entries, "full_recompute_decode cannot model evicted cache entries");
    input.validate();
    const ModelConfig& cfg = model.config;
    const std::size_t n_image = input.image_count();
    MergeSchedule schedule;
    if (pipeline.merging_enabled) {
        schedule = resolve_schedule(pipeline, n_image, cfg.n_layers);
    }

    struct Pass {
        std::vector<float> logits;
        std::int64_t max_position = 0;
    };
    auto run = [&](const TokenSequence& start) {
        TokenSequence seq = start;
        Pass pass;
        pass.max_position = seq.positions.back();
        std::size_t stage = 0;
        for (std::size_t l = 0; l < cfg.n_layers; ++l) {
            const LayerWeights& w = model.layers[l];
            const Matrix normed = layer_norm(seq.embeddings, w.attn_norm_gain, w.attn_norm_bias);
            const AttentionOutput att = multi_head_attention(normed, w.attention, {AttentionMode::Full, {}});
            add_inplace(seq.embeddings, att.context);
            mlp_residual(seq.embeddings, w);
            if (pipeline.merging_enabled && stage < schedule.merge_layers.size() && schedule.merge_layers[stage] == l) {
                std::size_t prompt_rows = 0;
                while (prompt_rows < seq.size() && seq.segments[prompt_rows] != Segment::Generated) {
                    ++prompt_rows;
                }
                // Column sums over the prompt's query rows, head by head, in row order.
                std::vector<float> avg(seq.size(), 0.0f);
                for (const Matrix& probs : *att.full_scores) {
                    std::vector<float> cum(seq.size(), 0.0f);
                    for (std::size_t i = 0; i < prompt_rows; ++i) {
                        for (std::size_t j = 0; j <= i; ++j) {
                            cum[j] += probs(i, j);
                        }
                    }
                    for (std::size_t j = 0; j < avg.size(); ++j) {
                        avg[j] += cum[j];
                    }
                }
                for (float& v : avg) {
                    v /= static_cast<float>(cfg.n_heads);
                }
                const auto image_idx = seq.image_indices();
                std::vector<float> importance;
                for (std::size_t i : image_idx) {
                    importance.push_back(avg[i]);
                }
                seq = merge_image_tokens(seq, importance, schedule.keep_counts[stage]).sequence;
                pass.max_position = std::max(pass.max_position, *std::max_element(seq.positions.begin(), seq.positions.end()));
                ++stage;
            }
        }
        pass.logits = output_logits(model, seq.embeddings.row(seq.size() - 1));
        return pass;
    };

    std::vector<std::size_t> ids;
    TokenSequence seq = input;
    const Pass first = run(seq);
    ids.push_back(argmax(first.logits));
    std::int64_t next_position = first.max_position + 1;
    while (ids.size() < n_steps) {
        const Matrix row = token_row(model, ids.back());
        Matrix grown(seq.size() + 1, cfg.dim);
        std::copy(seq.embeddings.data().begin(), seq.embeddings.data().end(), grown.data().begin());
        std::copy(row.data().begin(), row.data().end(), grown.row(seq.size()).begin());
        seq.embeddings = std::move(grown);
        seq.segments.push_back(Segment::Generated);
        seq.positions.push_back(next_position++);
        ids.push_back(argmax(run(seq).logits));
    }
    return ids;
}

}  // namespace lightinfer::oracle

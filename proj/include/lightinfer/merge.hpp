// Copyright (C) 2026 The lightinfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string_view>
#include <vector>

#include "lightinfer/error.hpp"
#include "lightinfer/numerics.hpp"

namespace lightinfer {

enum class Segment : std::uint8_t { SystemPrompt, Image, Instruction, Generated, MergedImage };

inline constexpr std::string_view to_string(Segment s) {
    switch (s) {
        case Segment::SystemPrompt: return "system";
        case Segment::Image: return "image";
        case Segment::Instruction: return "instruction";
        case Segment::Generated: return "generated";
        case Segment::MergedImage: return "merged_image";
    }
    return "unknown";
}

/// Image and merged-image tokens are the only ones merging and cache compression touch.
inline constexpr bool is_image(Segment s) { return s == Segment::Image || s == Segment::MergedImage; }

/// Token embeddings with their segment labels and original position ids.
struct TokenSequence {
    Matrix embeddings;
    std::vector<Segment> segments;
    std::vector<std::int64_t> positions;

    std::size_t size() const noexcept { return segments.size(); }

    /// Stored-order indices of image tokens.
    std::vector<std::size_t> image_indices() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < segments.size(); ++i) {
            if (is_image(segments[i])) {
                out.push_back(i);
            }
        }
        return out;
    }

    std::size_t image_count() const {
        return static_cast<std::size_t>(std::count_if(segments.begin(), segments.end(), is_image));
    }

    void validate() const {
        require<ShapeError>(embeddings.rows() == segments.size() && positions.size() == segments.size(),
                            "token sequence fields disagree: ", embeddings.rows(), " embeddings, ",
                            segments.size(), " segments, ", positions.size(), " positions");
        for (std::size_t i = 1; i < positions.size(); ++i) {
            require(positions[i] > positions[i - 1], "positions must strictly increase (index ", i, ")");
        }
    }
};

/// Layers at which image tokens are merged and the image-token count kept after each.
struct MergeSchedule {
    std::vector<std::size_t> merge_layers{5, 9, 13};
    std::vector<std::size_t> keep_counts;
    double target_ratio = 1.0;

    void validate(std::size_t n_layers) const {
        require(keep_counts.size() == merge_layers.size(), "merge schedule has ", merge_layers.size(),
                " layers but ", keep_counts.size(), " keep counts");
        for (std::size_t i = 0; i < merge_layers.size(); ++i) {
            require(merge_layers[i] < n_layers, "merge layer ", merge_layers[i], " outside [0, ", n_layers, ")");
            require(i == 0 || merge_layers[i] > merge_layers[i - 1], "merge layers must strictly increase");
            require(i == 0 || keep_counts[i] <= keep_counts[i - 1], "keep counts must be non-increasing");
        }
    }
};

/// Image-token counts kept after each of `n_stages` merges. Stage s keeps
/// round_half_up(n_image * target_ratio^((s + 1) / n_stages)) tokens, never fewer than one.
inline std::vector<std::size_t> plan_keep_counts(std::size_t n_image, double target_ratio, std::size_t n_stages) {
    require(target_ratio > 0.0 && target_ratio <= 1.0, "target_ratio ", target_ratio, " outside (0, 1]");
    require(n_stages >= 1, "at least one merge stage is required");
    std::vector<std::size_t> counts(n_stages);
    for (std::size_t s = 0; s < n_stages; ++s) {
        const double exponent = static_cast<double>(s + 1) / static_cast<double>(n_stages);
        const double kept = static_cast<double>(n_image) * std::pow(target_ratio, exponent);
        const auto rounded = static_cast<std::size_t>(std::floor(kept + 0.5));
        counts[s] = n_image == 0 ? 0 : std::clamp<std::size_t>(rounded, 1, n_image);
    }
    return counts;
}

inline MergeSchedule make_merge_schedule(std::vector<std::size_t> merge_layers, std::size_t n_image,
                                         double target_ratio) {
    MergeSchedule schedule;
    schedule.target_ratio = target_ratio;
    schedule.keep_counts =
        merge_layers.empty() ? std::vector<std::size_t>{} : plan_keep_counts(n_image, target_ratio, merge_layers.size());
    schedule.merge_layers = std::move(merge_layers);
    return schedule;
}

struct MergePartition {
    std::vector<std::size_t> unmerged_indices;  ///< ascending index (original relative order)
    std::vector<std::size_t> merged_indices;    ///< descending importance
};

/// Splits image tokens into the N-(r+1) most important (kept) and the r+1 least
/// important (merged). Ties rank the lower index (earlier position) as more important.
inline MergePartition partition_tokens(std::span<const float> importance, std::size_t r) {
    const std::size_t n = importance.size();
    require(r < n, "reduction r=", r, " needs more than ", n, " image tokens");
    require(std::all_of(importance.begin(), importance.end(), [](float v) { return std::isfinite(v); }),
            "importance scores must be finite");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return importance[a] > importance[b]; });
    const std::size_t kept = n - (r + 1);
    MergePartition part;
    part.unmerged_indices.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(kept));
    std::sort(part.unmerged_indices.begin(), part.unmerged_indices.end());
    part.merged_indices.assign(order.begin() + static_cast<std::ptrdiff_t>(kept), order.end());
    return part;
}

/// Linear weight list {r+1, r, ..., 1} normalized to sum to one.
inline std::vector<float> merge_weights(std::size_t r) {
    const double total = static_cast<double>(r + 1) * static_cast<double>(r + 2) / 2.0;
    std::vector<float> w(r + 1);
    for (std::size_t i = 0; i <= r; ++i) {
        w[i] = static_cast<float>(static_cast<double>(r + 1 - i) / total);
    }
    return w;
}

/// Collapses rows ordered by descending importance into one row with a single
/// (1 x (r+1)) * ((r+1) x C) product.
inline Matrix merge_tokens(const Matrix& merged_rows) {
    require(merged_rows.rows() >= 1, "merge_tokens needs at least one row");
    const auto w = merge_weights(merged_rows.rows() - 1);
    return matmul(Matrix(1, w.size(), std::vector<float>(w.begin(), w.end())), merged_rows);
}

/// Everything a merge step decided, for ledgers and cache bookkeeping.
struct MergeOutcome {
    TokenSequence sequence;
    MergePartition partition;
    std::vector<std::int64_t> merged_positions;  ///< positions of the collapsed tokens, descending importance
    std::int64_t new_position = -1;              ///< position given to the merged token; -1 if nothing merged
};

/// Slot for the merged token: one past the last kept image token when that id is
/// free, otherwise the highest id vacated by the merge (the lowest if no image
/// token is kept).
inline std::int64_t merged_token_position(const TokenSequence& seq, std::span<const std::size_t> image_idx,
                                          const MergePartition& part) {
    std::vector<std::int64_t> vacated;
    for (std::size_t m : part.merged_indices) {
        vacated.push_back(seq.positions[image_idx[m]]);
    }
    if (part.unmerged_indices.empty()) {
        return *std::min_element(vacated.begin(), vacated.end());
    }
    const std::size_t last_kept = image_idx[part.unmerged_indices.back()];
    const std::int64_t candidate = seq.positions[last_kept] + 1;
    // Tokens after the last kept image token are either merged away or text; the
    // first text token is the only one that can already hold the candidate id.
    for (std::size_t i = last_kept + 1; i < seq.size(); ++i) {
        if (!is_image(seq.segments[i])) {
            if (seq.positions[i] != candidate) {
                return candidate;
            }
            return *std::max_element(vacated.begin(), vacated.end());
        }
    }
    return candidate;
}

inline MergeOutcome merge_image_tokens(const TokenSequence& seq, std::span<const float> importance,
                                       std::size_t keep_count) {
    const auto image_idx = seq.image_indices();
    require<ShapeError>(importance.size() == image_idx.size(), "importance has ", importance.size(),
                        " entries for ", image_idx.size(), " image tokens");
    require(keep_count <= image_idx.size(), "keep_count ", keep_count, " exceeds the ", image_idx.size(),
            " image tokens present");
    MergeOutcome outcome;
    if (keep_count == image_idx.size()) {
        outcome.sequence = seq;
        return outcome;
    }
    require(keep_count >= 1, "keep_count must be at least 1");

    const std::size_t r = image_idx.size() - keep_count;
    outcome.partition = partition_tokens(importance, r);
    std::vector<std::size_t> merged_rows;
    for (std::size_t m : outcome.partition.merged_indices) {
        merged_rows.push_back(image_idx[m]);
        outcome.merged_positions.push_back(seq.positions[image_idx[m]]);
    }
    const Matrix merged = merge_tokens(gather_rows(seq.embeddings, merged_rows));
    outcome.new_position = merged_token_position(seq, image_idx, outcome.partition);

    std::vector<bool> dropped(seq.size(), false);
    for (std::size_t i : merged_rows) {
        dropped[i] = true;
    }
    const std::size_t out_len = seq.size() - r;
    TokenSequence& out = outcome.sequence;
    out.embeddings = Matrix(out_len, seq.embeddings.cols());
    out.segments.reserve(out_len);
    out.positions.reserve(out_len);
    bool placed = false;
    auto emit = [&](std::span<const float> row, Segment segment, std::int64_t position) {
        const std::size_t at = out.segments.size();
        std::copy(row.begin(), row.end(), out.embeddings.row(at).begin());
        out.segments.push_back(segment);
        out.positions.push_back(position);
    };
    for (std::size_t i = 0; i < seq.size(); ++i) {
        if (dropped[i]) {
            continue;
        }
        if (!placed && seq.positions[i] > outcome.new_position) {
            emit(merged.row(0), Segment::MergedImage, outcome.new_position);
            placed = true;
        }
        emit(seq.embeddings.row(i), seq.segments[i], seq.positions[i]);
    }
    if (!placed) {
        emit(merged.row(0), Segment::MergedImage, outcome.new_position);
    }
    return outcome;
}

/// One pyramid stage: keeps the keep_count-1 most important image tokens in
/// their original order, collapses the rest into one MergedImage token, and
/// passes every non-image token through untouched.
inline TokenSequence pyramid_merge_layer(const TokenSequence& seq, std::span<const float> importance,
                                         std::size_t keep_count) {
    return merge_image_tokens(seq, importance, keep_count).sequence;
}

}  // namespace lightinfer

// Copyright (C) 2026 The lightinfer Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "lightinfer/attention.hpp"
#include "lightinfer/oracle.hpp"

namespace li = lightinfer;

namespace {

li::AttentionWeights random_weights(std::size_t width, std::size_t heads, std::mt19937_64& rng, float range = 0.3f) {
    li::AttentionWeights w;
    w.n_heads = heads;
    w.query = li::random_uniform(width, width, -range, range, rng);
    w.key = li::random_uniform(width, width, -range, range, rng);
    w.value = li::random_uniform(width, width, -range, range, rng);
    w.output = li::random_uniform(width, width, -range, range, rng);
    return w;
}

}  // namespace

TEST(CumulativeScoresFromFull, FrozenExamples) {
    const std::vector<li::Matrix> diag{li::Matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}})};
    EXPECT_EQ(li::cumulative_scores_from_full(diag).front(), (std::vector<float>{1, 1, 1}));

    const std::vector<li::Matrix> uniform{li::Matrix({{1, 0}, {0.5f, 0.5f}})};
    EXPECT_EQ(li::cumulative_scores_from_full(uniform).front(), (std::vector<float>{1.5f, 0.5f}));
}

TEST(CumulativeScoresFromFull, MatchesColumnSumOracle) {
    std::mt19937_64 rng(21);
    const auto probs = li::row_softmax(li::random_normal(8, 8, 2.0f, rng), true);
    const auto fast = li::cumulative_scores_from_full(std::vector<li::Matrix>{probs}).front();
    const auto slow = li::oracle::naive_column_sums(probs);
    for (std::size_t j = 0; j < 8; ++j) {
        EXPECT_NEAR(fast[j], slow[j], 1e-6);
    }
}

TEST(CumulativeScoresFromFull, RejectsInvalidMatrices) {
    EXPECT_THROW(li::cumulative_scores_from_full(std::vector<li::Matrix>{li::Matrix({{0.5f, 0.5f}, {0.5f, 0.5f}})}),
                 li::Error);  // row 0 sees the future
    EXPECT_THROW(li::cumulative_scores_from_full(std::vector<li::Matrix>{li::Matrix({{1, 0}, {0.2f, 0.2f}})}),
                 li::Error);  // not stochastic
    EXPECT_THROW(li::cumulative_scores_from_full(std::vector<li::Matrix>{li::Matrix(2, 3)}), li::ShapeError);
}

TEST(MultiHeadAttention, SingleTokenScoresOne) {
    std::mt19937_64 rng(1);
    const auto w = random_weights(16, 2, rng);
    const auto out = li::multi_head_attention(li::random_normal(1, 16, 1.0f, rng), w);
    for (const auto& head : out.cum_scores) {
        ASSERT_EQ(head.size(), 1u);
        EXPECT_EQ(head[0], 1.0f);
    }
}

TEST(MultiHeadAttention, RejectsBadHeadCount) {
    std::mt19937_64 rng(1);
    auto w = random_weights(12, 5, rng);
    EXPECT_THROW(li::multi_head_attention(li::random_normal(3, 12, 1.0f, rng), w), li::ShapeError);
}

TEST(MultiHeadAttention, ScoresSumToSequenceLength) {
    std::mt19937_64 rng(2);
    for (std::size_t n : {1u, 2u, 17u, 64u}) {
        const auto w = random_weights(32, 4, rng, 1.0f);
        const auto out = li::multi_head_attention(li::random_normal(n, 32, 1.0f, rng), w);
        for (const auto& head : out.cum_scores) {
            double total = 0.0;
            for (float s : head) {
                total += s;
            }
            EXPECT_NEAR(total, static_cast<double>(n), 1e-4);
        }
    }
}

TEST(MultiHeadAttention, ModesAgreeBitForBit) {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const std::size_t n = 1 + static_cast<std::size_t>(trial) * 6;
        const auto w = random_weights(24, 3, rng);
        const auto hidden = li::random_normal(n, 24, 1.0f, rng);
        const auto full = li::multi_head_attention(hidden, w, {li::AttentionMode::Full, {}});
        const auto streamed = li::multi_head_attention(hidden, w, {li::AttentionMode::CumulativeOnly, {}});
        EXPECT_EQ(full.context, streamed.context);
        EXPECT_EQ(full.avg_cum_scores, streamed.avg_cum_scores);
        EXPECT_FALSE(streamed.full_scores.has_value());
        ASSERT_TRUE(full.full_scores.has_value());
    }
}

TEST(MultiHeadAttention, CumulativeScoresEqualFullColumnSums) {
    std::mt19937_64 rng(4);
    const auto w = random_weights(32, 4, rng, 1.0f);
    const auto hidden = li::random_normal(16, 32, 1.0f, rng);
    const auto full = li::multi_head_attention(hidden, w, {li::AttentionMode::Full, {}});
    const auto streamed = li::multi_head_attention(hidden, w, {li::AttentionMode::CumulativeOnly, {}});
    const auto from_full = li::cumulative_scores_from_full(*full.full_scores);
    for (std::size_t h = 0; h < 4; ++h) {
        const auto oracle_sums = li::oracle::naive_column_sums((*full.full_scores)[h]);
        for (std::size_t j = 0; j < 16; ++j) {
            EXPECT_NEAR(streamed.cum_scores[h][j], from_full[h][j], 1e-5);
            EXPECT_NEAR(streamed.cum_scores[h][j], oracle_sums[j], 1e-5);
        }
    }
}

TEST(MultiHeadAttention, ProbabilitiesMatchDoubleOracle) {
    std::mt19937_64 rng(5);
    const auto w = random_weights(16, 2, rng, 1.0f);
    const auto hidden = li::random_normal(12, 16, 1.0f, rng);
    const auto full = li::multi_head_attention(hidden, w, {li::AttentionMode::Full, {}});
    const auto reference = li::oracle::naive_attention_probs(hidden, w);
    for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t i = 0; i < 12 * 12; ++i) {
            EXPECT_NEAR((*full.full_scores)[h].data()[i], reference[h].data()[i], 1e-5);
        }
    }
}

TEST(MultiHeadAttention, Causal) {
    std::mt19937_64 rng(6);
    const auto w = random_weights(16, 2, rng);
    auto hidden = li::random_normal(10, 16, 1.0f, rng);
    const auto before = li::multi_head_attention(hidden, w);
    const std::size_t j = 6;
    for (float& v : hidden.row(j)) {
        v += 3.0f;
    }
    const auto after = li::multi_head_attention(hidden, w);
    for (std::size_t i = 0; i < j; ++i) {
        for (std::size_t c = 0; c < 16; ++c) {
            EXPECT_EQ(before.context(i, c), after.context(i, c)) << "row " << i;
        }
    }
}

TEST(MultiHeadAttention, HeadOrderEquivariance) {
    // Swapping the two head slices of every projection swaps the per-head
    // scores and leaves their average unchanged.
    std::mt19937_64 rng(7);
    const std::size_t width = 16;
    const std::size_t dim = 8;
    const auto w = random_weights(width, 2, rng);
    auto swap_cols = [&](const li::Matrix& m) {
        li::Matrix out = m;
        for (std::size_t r = 0; r < m.rows(); ++r) {
            for (std::size_t c = 0; c < width; ++c) {
                out(r, c) = m(r, (c + dim) % width);
            }
        }
        return out;
    };
    li::AttentionWeights swapped = w;
    swapped.query = swap_cols(w.query);
    swapped.key = swap_cols(w.key);
    swapped.value = swap_cols(w.value);
    const auto hidden = li::random_normal(9, width, 1.0f, rng);
    const auto a = li::multi_head_attention(hidden, w);
    const auto b = li::multi_head_attention(hidden, swapped);
    EXPECT_EQ(a.cum_scores[0], b.cum_scores[1]);
    EXPECT_EQ(a.cum_scores[1], b.cum_scores[0]);
    for (std::size_t j = 0; j < 9; ++j) {
        EXPECT_NEAR(a.avg_cum_scores[j], b.avg_cum_scores[j], 1e-6);
    }
}

TEST(MultiHeadAttention, ScoreRowsLimitsContributors) {
    std::mt19937_64 rng(8);
    const auto w = random_weights(16, 2, rng);
    const auto hidden = li::random_normal(10, 16, 1.0f, rng);
    const auto limited = li::multi_head_attention(hidden, w, {li::AttentionMode::Full, 4});
    for (std::size_t h = 0; h < 2; ++h) {
        li::Matrix top(4, 10);
        for (std::size_t i = 0; i < 4; ++i) {
            for (std::size_t j = 0; j < 10; ++j) {
                top(i, j) = (*limited.full_scores)[h](i, j);
            }
        }
        const auto sums = li::oracle::naive_column_sums(top);
        for (std::size_t j = 0; j < 10; ++j) {
            EXPECT_NEAR(limited.cum_scores[h][j], sums[j], 1e-6);
        }
    }
}

TEST(KeyTiles, RoundTripsKeysAndDots) {
    std::mt19937_64 rng(9);
    const auto keys = li::random_normal(19, 8, 1.0f, rng);
    li::KeyTiles tiles(8);
    for (std::size_t i = 0; i < keys.rows(); ++i) {
        tiles.push_back(keys.row(i));
    }
    ASSERT_EQ(tiles.size(), 19u);
    for (std::size_t i = 0; i < keys.rows(); ++i) {
        const auto k = tiles.key(i);
        EXPECT_TRUE(std::equal(k.begin(), k.end(), keys.row(i).begin()));
    }
    const auto q = li::random_normal(1, 8, 1.0f, rng);
    std::vector<float> dots(19);
    tiles.dot_all(q.row(0), 19, dots);
    for (std::size_t i = 0; i < 19; ++i) {
        double ref = 0.0;
        for (std::size_t d = 0; d < 8; ++d) {
            ref += static_cast<double>(q(0, d)) * keys(i, d);
        }
        EXPECT_NEAR(dots[i], ref, 1e-5);
    }
}

// Copyright (C) 2026 The lightinfer Authors
// SPDX-License-Identifier: Apache-2.0

#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include <gtest/gtest.h>

#include "lightinfer/numerics.hpp"
#include "lightinfer/oracle.hpp"

namespace li = lightinfer;

namespace {

// Frobenius-norm relative error.
double rel_error(const li::Matrix& got, const li::Matrix& want) {
    double num = 0.0;
    double den = 0.0;
    for (std::size_t i = 0; i < got.data().size(); ++i) {
        const double w = want.data()[i];
        num += (got.data()[i] - w) * (got.data()[i] - w);
        den += w * w;
    }
    return den == 0.0 ? std::sqrt(num) : std::sqrt(num / den);
}

}  // namespace

// -- oracle first --------------------------------------------------------------

TEST(NaiveMatmul, FrozenProducts) {
    EXPECT_EQ(li::oracle::naive_matmul({{1, 0}, {0, 1}}, {{5, 6}, {7, 8}}), li::Matrix({{5, 6}, {7, 8}}));
    EXPECT_EQ(li::oracle::naive_matmul({{1, 2}}, {{3}, {4}}), li::Matrix({{11}}));
    EXPECT_EQ(li::oracle::naive_matmul({{1, 2, 3}, {4, 5, 6}}, {{1, 0}, {0, 1}, {1, 1}}),
              li::Matrix({{4, 5}, {10, 11}}));
}

TEST(NaiveColumnSums, Frozen) {
    const auto sums = li::oracle::naive_column_sums({{1, 0}, {0.5f, 0.5f}});
    EXPECT_DOUBLE_EQ(sums[0], 1.5);
    EXPECT_DOUBLE_EQ(sums[1], 0.5);
}

// -- matmul ---------------------------------------------------------------------

TEST(Matmul, HandCheckable) {
    EXPECT_EQ(li::matmul({{1, 0}, {0, 1}}, {{5, 6}, {7, 8}}), li::Matrix({{5, 6}, {7, 8}}));
    EXPECT_EQ(li::matmul({{1, 2}}, {{3}, {4}}), li::Matrix({{11}}));
}

TEST(Matmul, ShapeMismatchNamesShapes) {
    try {
        li::matmul(li::Matrix(2, 3), li::Matrix(2, 3));
        FAIL() << "expected ShapeError";
    } catch (const li::ShapeError& e) {
        EXPECT_NE(std::string(e.what()).find("2x3"), std::string::npos);
    }
}

TEST(Matmul, MatchesOracleOnRandomShapes) {
    std::mt19937_64 rng(7);
    std::uniform_int_distribution<std::size_t> dim(1, 256);
    for (int trial = 0; trial < 30; ++trial) {
        const std::size_t n = trial == 0 ? 8 : dim(rng);
        const std::size_t k = trial == 0 ? 8 : dim(rng);
        const std::size_t m = trial == 0 ? 8 : dim(rng);
        const auto a = li::random_uniform(n, k, -1.0f, 1.0f, rng);
        const auto b = li::random_uniform(k, m, -1.0f, 1.0f, rng);
        EXPECT_LE(rel_error(li::matmul(a, b), li::oracle::naive_matmul(a, b)), 1e-6)
            << n << "x" << k << " * " << k << "x" << m;
    }
}

TEST(Matmul, RowsDoNotDependOnBatch) {
    // A row's result must not change with how many rows are multiplied alongside it.
    std::mt19937_64 rng(11);
    const auto a = li::random_normal(37, 96, 1.0f, rng);
    const auto b = li::random_normal(96, 53, 1.0f, rng);
    const auto full = li::matmul(a, b);
    for (std::size_t i = 0; i < a.rows(); ++i) {
        const auto single = li::matmul(li::gather_rows(a, std::vector<std::size_t>{i}), b);
        for (std::size_t j = 0; j < b.cols(); ++j) {
            ASSERT_EQ(single(0, j), full(i, j)) << "row " << i << " col " << j;
        }
    }
}

TEST(Matmul, Deterministic) {
    std::mt19937_64 rng(3);
    const auto a = li::random_normal(20, 40, 1.0f, rng);
    const auto b = li::random_normal(40, 30, 1.0f, rng);
    EXPECT_EQ(li::matmul(a, b), li::matmul(a, b));
}

// -- matrix ----------------------------------------------------------------------

TEST(Matrix, RejectsNonFiniteAndBadLength) {
    EXPECT_THROW(li::Matrix(2, 2, std::vector<float>{1, 2, 3}), li::ShapeError);
    EXPECT_THROW(li::Matrix(1, 2, std::vector<float>{1, std::numeric_limits<float>::quiet_NaN()}), li::Error);
    EXPECT_THROW(li::Matrix(1, 1, std::vector<float>{std::numeric_limits<float>::infinity()}), li::Error);
}

// -- softmax ---------------------------------------------------------------------

TEST(RowSoftmax, FrozenRows) {
    const auto half = li::row_softmax({{0, 0}}, false);
    EXPECT_FLOAT_EQ(half(0, 0), 0.5f);
    EXPECT_FLOAT_EQ(half(0, 1), 0.5f);

    const auto big = li::row_softmax({{1000, 0}}, false);
    EXPECT_FLOAT_EQ(big(0, 0), 1.0f);
    EXPECT_FLOAT_EQ(big(0, 1), 0.0f);
    EXPECT_TRUE(std::isfinite(big(0, 1)));

    const auto causal = li::row_softmax(li::Matrix(3, 3), true);
    EXPECT_EQ(causal.row(0)[0], 1.0f);
    EXPECT_EQ(causal.row(0)[1], 0.0f);
    EXPECT_FLOAT_EQ(causal(1, 0), 0.5f);
    EXPECT_FLOAT_EQ(causal(1, 1), 0.5f);
    EXPECT_EQ(causal(1, 2), 0.0f);
    for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_FLOAT_EQ(causal(2, j), 1.0f / 3.0f);
    }
}

TEST(RowSoftmax, RowsSumToOneAndAreMonotone) {
    std::mt19937_64 rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const auto logits = li::random_normal(6, 17, 4.0f, rng);
        const auto probs = li::row_softmax(logits, trial % 2 == 0);
        for (std::size_t i = 0; i < probs.rows(); ++i) {
            double sum = 0.0;
            for (float p : probs.row(i)) {
                sum += p;
            }
            EXPECT_NEAR(sum, 1.0, 1e-5);
            const std::size_t visible = trial % 2 == 0 ? std::min(i + 1, probs.cols()) : probs.cols();
            for (std::size_t a = 0; a < visible; ++a) {
                for (std::size_t b = 0; b < visible; ++b) {
                    if (logits(i, a) > logits(i, b)) {
                        EXPECT_GE(probs(i, a), probs(i, b));
                    }
                }
            }
        }
    }
}

// -- layer norm / activations -----------------------------------------------------

TEST(LayerNorm, FrozenRows) {
    const std::vector<float> gain2{1, 1}, bias2{0, 0};
    const auto flat = li::layer_norm({{3, 3}}, gain2, bias2);
    EXPECT_EQ(flat(0, 0), 0.0f);
    EXPECT_EQ(flat(0, 1), 0.0f);

    const auto unit = li::layer_norm({{1, -1}}, gain2, bias2);
    EXPECT_NEAR(unit(0, 0), 1.0f, 1e-5);
    EXPECT_NEAR(unit(0, 1), -1.0f, 1e-5);
}

TEST(LayerNorm, RecomputedStatistics) {
    std::mt19937_64 rng(9);
    const std::size_t c = 48;
    const auto x = li::random_normal(5, c, 3.0f, rng);
    const auto y = li::layer_norm(x, std::vector<float>(c, 1.0f), std::vector<float>(c, 0.0f));
    for (std::size_t i = 0; i < y.rows(); ++i) {
        double mean = 0.0;
        double var = 0.0;
        for (float v : y.row(i)) {
            mean += v;
        }
        mean /= static_cast<double>(c);
        for (float v : y.row(i)) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(c);
        EXPECT_NEAR(mean, 0.0, 1e-5);
        EXPECT_NEAR(var, 1.0, 1e-3);
    }
}

TEST(LayerNorm, GainAndBiasApplied) {
    const auto y = li::layer_norm({{1, -1}}, std::vector<float>{2, 3}, std::vector<float>{10, 20});
    EXPECT_NEAR(y(0, 0), 12.0f, 1e-4);
    EXPECT_NEAR(y(0, 1), 17.0f, 1e-4);
}

TEST(Gelu, FrozenValues) {
    EXPECT_EQ(li::gelu(0.0f), 0.0f);
    EXPECT_NEAR(li::gelu(1.0f), 0.841192f, 1e-5);
    EXPECT_NEAR(li::gelu(-1.0f), -0.158808f, 1e-5);
    EXPECT_NEAR(li::gelu(5.0f), 5.0f, 1e-4);
}

TEST(Argmax, LowestIndexOnTies) {
    const std::vector<float> v{1, 3, 3, 2};
    EXPECT_EQ(li::argmax(v), 1u);
}

// -- LVT1 -------------------------------------------------------------------------

TEST(TensorFile, RoundTripIsBitExact) {
    std::mt19937_64 rng(13);
    const auto m = li::random_normal(7, 5, 1.0f, rng);
    std::stringstream ss;
    li::write_tensor(ss, m);
    EXPECT_EQ(ss.str().size(), 4u + 8u + 8u + 7u * 5u * 4u);
    EXPECT_EQ(ss.str().substr(0, 4), "LVT1");
    EXPECT_EQ(li::read_tensor(ss), m);
}

TEST(TensorFile, LittleEndianHeader) {
    std::stringstream ss;
    li::write_tensor(ss, li::Matrix({{1.0f, 2.0f, 3.0f}}));
    const std::string s = ss.str();
    EXPECT_EQ(static_cast<unsigned char>(s[4]), 1);   // rows
    EXPECT_EQ(static_cast<unsigned char>(s[12]), 3);  // cols
    // 1.0f == 0x3f800000
    EXPECT_EQ(static_cast<unsigned char>(s[20]), 0x00);
    EXPECT_EQ(static_cast<unsigned char>(s[23]), 0x3f);
}

TEST(TensorFile, RejectsBadMagicAndTruncation) {
    std::stringstream bad("LVT2aaaaaaaaaaaaaaaa");
    EXPECT_THROW(li::read_tensor(bad), li::Error);

    std::stringstream ss;
    li::write_tensor(ss, li::Matrix({{1.0f, 2.0f}}));
    std::string bytes = ss.str();
    bytes.pop_back();
    std::stringstream truncated(bytes);
    EXPECT_THROW(li::read_tensor(truncated), li::Error);
}

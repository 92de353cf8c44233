// Copyright (C) 2026 The lightinfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <initializer_list>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <span>
#include <vector>

#include "lightinfer/error.hpp"

namespace lightinfer {

/// Dense row-major matrix of 32-bit floats.
class Matrix {
public:
    Matrix() = default;

    Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
        : m_rows(rows), m_cols(cols), m_data(rows * cols, fill) {}

    /// Takes ownership of `data`; rejects a length mismatch or non-finite entries.
    Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
        : m_rows(rows), m_cols(cols), m_data(std::move(data)) {
        require<ShapeError>(m_data.size() == rows * cols, "matrix data has ", m_data.size(),
                            " entries, expected ", rows, "x", cols);
        require(std::all_of(m_data.begin(), m_data.end(), [](float v) { return std::isfinite(v); }),
                "matrix data contains non-finite entries");
    }

    Matrix(std::initializer_list<std::initializer_list<float>> rows) {
        m_rows = rows.size();
        m_cols = m_rows == 0 ? 0 : rows.begin()->size();
        m_data.reserve(m_rows * m_cols);
        for (const auto& r : rows) {
            require<ShapeError>(r.size() == m_cols, "ragged matrix literal");
            m_data.insert(m_data.end(), r.begin(), r.end());
        }
    }

    std::size_t rows() const noexcept { return m_rows; }
    std::size_t cols() const noexcept { return m_cols; }
    std::size_t size() const noexcept { return m_data.size(); }
    bool empty() const noexcept { return m_data.empty(); }

    float& operator()(std::size_t r, std::size_t c) { return m_data[r * m_cols + c]; }
    float operator()(std::size_t r, std::size_t c) const { return m_data[r * m_cols + c]; }

    std::span<float> row(std::size_t r) { return {m_data.data() + r * m_cols, m_cols}; }
    std::span<const float> row(std::size_t r) const { return {m_data.data() + r * m_cols, m_cols}; }

    std::span<float> data() noexcept { return m_data; }
    std::span<const float> data() const noexcept { return m_data; }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t m_rows = 0;
    std::size_t m_cols = 0;
    std::vector<float> m_data;
};

namespace detail {

/// Eight-lane float vector (GCC/Clang vector extension). Lane arithmetic is
/// plain IEEE mul/add, so with contraction disabled a vector lane produces the
/// same bits as the scalar expression it replaces.
typedef float vec8 __attribute__((vector_size(32)));
inline constexpr std::size_t kLanes = 8;

inline vec8 load8(const float* p) {
    vec8 v;
    std::memcpy(&v, p, sizeof(v));
    return v;
}

inline void store8(float* p, vec8 v) { std::memcpy(p, &v, sizeof(v)); }

inline vec8 splat8(float x) { return vec8{x, x, x, x, x, x, x, x}; }

// Register tile of the matmul kernel. Every output element is accumulated over
// k in ascending order starting from zero, whatever the tile it lands in, so the
// result of a row never depends on how many rows are multiplied at once.
inline constexpr std::size_t kTileRows = 4;
inline constexpr std::size_t kTileCols = 16;

template <std::size_t R>
inline void matmul_tile(const float* a, std::size_t lda, const float* b, std::size_t ldb, float* c,
                        std::size_t ldc, std::size_t depth, std::size_t width) {
    if (width == kTileCols) {
        vec8 acc[R][2] = {};
        for (std::size_t k = 0; k < depth; ++k) {
            const vec8 b0 = load8(b + k * ldb);
            const vec8 b1 = load8(b + k * ldb + kLanes);
            for (std::size_t r = 0; r < R; ++r) {
                const vec8 av = splat8(a[r * lda + k]);
                acc[r][0] += av * b0;
                acc[r][1] += av * b1;
            }
        }
        for (std::size_t r = 0; r < R; ++r) {
            store8(c + r * ldc, acc[r][0]);
            store8(c + r * ldc + kLanes, acc[r][1]);
        }
        return;
    }
    std::array<std::array<float, kTileCols>, R> acc{};
    for (std::size_t k = 0; k < depth; ++k) {
        const float* brow = b + k * ldb;
        for (std::size_t r = 0; r < R; ++r) {
            const float av = a[r * lda + k];
            for (std::size_t j = 0; j < width; ++j) {
                acc[r][j] += av * brow[j];
            }
        }
    }
    for (std::size_t r = 0; r < R; ++r) {
        std::copy_n(acc[r].begin(), width, c + r * ldc);
    }
}

}  // namespace detail

/// Standard matrix product. Deterministic: repeated calls are bit-identical.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
    require<ShapeError>(a.cols() == b.rows(), "matmul shape mismatch: ", a.rows(), "x", a.cols(), " * ",
                        b.rows(), "x", b.cols());
    const std::size_t n = a.rows();
    const std::size_t depth = a.cols();
    const std::size_t m = b.cols();
    Matrix out(n, m);
    const float* pa = a.data().data();
    const float* pb = b.data().data();
    float* pc = out.data().data();
    for (std::size_t i = 0; i < n; i += detail::kTileRows) {
        const std::size_t tile_rows = std::min(detail::kTileRows, n - i);
        for (std::size_t j = 0; j < m; j += detail::kTileCols) {
            const std::size_t width = std::min(detail::kTileCols, m - j);
            const float* ta = pa + i * depth;
            const float* tb = pb + j;
            float* tc = pc + i * m + j;
            switch (tile_rows) {
                case 4: detail::matmul_tile<4>(ta, depth, tb, m, tc, m, depth, width); break;
                case 3: detail::matmul_tile<3>(ta, depth, tb, m, tc, m, depth, width); break;
                case 2: detail::matmul_tile<2>(ta, depth, tb, m, tc, m, depth, width); break;
                default: detail::matmul_tile<1>(ta, depth, tb, m, tc, m, depth, width); break;
            }
        }
    }
    return out;
}

/// In-place numerically stable softmax of one row, summed left to right.
inline void softmax_inplace(std::span<float> row) {
    if (row.empty()) {
        return;
    }
    const float peak = *std::max_element(row.begin(), row.end());
    float total = 0.0f;
    for (float& v : row) {
        v = std::exp(v - peak);
        total += v;
    }
    for (float& v : row) {
        v /= total;
    }
}

/// Row-wise softmax; with `causal`, entries above the diagonal are exactly zero.
inline Matrix row_softmax(const Matrix& a, bool causal = false) {
    Matrix out = a;
    for (std::size_t r = 0; r < out.rows(); ++r) {
        auto row = out.row(r);
        const std::size_t visible = causal ? std::min(r + 1, row.size()) : row.size();
        softmax_inplace(row.first(visible));
        std::fill(row.begin() + static_cast<std::ptrdiff_t>(visible), row.end(), 0.0f);
    }
    return out;
}

inline constexpr float kLayerNormEpsilon = 1e-5f;

inline void layer_norm_row(std::span<const float> in, std::span<const float> gain, std::span<const float> bias,
                           std::span<float> out) {
    const auto width = static_cast<float>(in.size());
    float mean = 0.0f;
    for (float v : in) {
        mean += v;
    }
    mean /= width;
    float var = 0.0f;
    for (float v : in) {
        const float d = v - mean;
        var += d * d;
    }
    var /= width;
    const float inv = 1.0f / std::sqrt(var + kLayerNormEpsilon);
    for (std::size_t c = 0; c < in.size(); ++c) {
        out[c] = (in[c] - mean) * inv * gain[c] + bias[c];
    }
}

inline Matrix layer_norm(const Matrix& x, std::span<const float> gain, std::span<const float> bias) {
    require<ShapeError>(gain.size() == x.cols() && bias.size() == x.cols(), "layer_norm: gain/bias length ",
                        gain.size(), "/", bias.size(), " does not match ", x.cols(), " columns");
    Matrix out(x.rows(), x.cols());
    for (std::size_t r = 0; r < x.rows(); ++r) {
        layer_norm_row(x.row(r), gain, bias, out.row(r));
    }
    return out;
}

/// Tanh approximation of GELU.
inline float gelu(float x) {
    constexpr float kSqrt2OverPi = 0.7978845608028654f;
    return 0.5f * x * (1.0f + std::tanh(kSqrt2OverPi * (x + 0.044715f * x * x * x)));
}

inline void add_inplace(Matrix& dst, const Matrix& src) {
    require<ShapeError>(dst.rows() == src.rows() && dst.cols() == src.cols(), "add: shape mismatch ",
                        dst.rows(), "x", dst.cols(), " vs ", src.rows(), "x", src.cols());
    auto d = dst.data();
    auto s = src.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
        d[i] += s[i];
    }
}

/// Adds `bias` to every row.
inline void add_row_bias(Matrix& dst, std::span<const float> bias) {
    require<ShapeError>(bias.size() == dst.cols(), "bias length ", bias.size(), " vs ", dst.cols(), " columns");
    for (std::size_t r = 0; r < dst.rows(); ++r) {
        auto row = dst.row(r);
        for (std::size_t c = 0; c < row.size(); ++c) {
            row[c] += bias[c];
        }
    }
}

/// Copies the listed rows, in the listed order.
inline Matrix gather_rows(const Matrix& src, std::span<const std::size_t> indices) {
    Matrix out(indices.size(), src.cols());
    for (std::size_t i = 0; i < indices.size(); ++i) {
        const auto row = src.row(indices[i]);
        std::copy(row.begin(), row.end(), out.row(i).begin());
    }
    return out;
}

/// Index of the largest entry; ties resolve to the lowest index.
inline std::size_t argmax(std::span<const float> values) {
    require(!values.empty(), "argmax of empty vector");
    return static_cast<std::size_t>(std::distance(values.begin(), std::max_element(values.begin(), values.end())));
}

// ---------------------------------------------------------------------------
// Seeded generation

/// Uniform float in [lo, hi) drawn from the top 24 bits of a 64-bit engine
/// draw, so the mapping is identical across standard libraries.
inline float uniform_float(std::mt19937_64& engine, float lo, float hi) {
    const float unit = static_cast<float>(engine() >> 40) * 0x1.0p-24f;
    return lo + (hi - lo) * unit;
}

inline Matrix random_uniform(std::size_t rows, std::size_t cols, float lo, float hi, std::mt19937_64& engine) {
    Matrix out(rows, cols);
    for (float& v : out.data()) {
        v = uniform_float(engine, lo, hi);
    }
    return out;
}

inline Matrix random_normal(std::size_t rows, std::size_t cols, float stddev, std::mt19937_64& engine) {
    std::normal_distribution<float> dist(0.0f, stddev);
    Matrix out(rows, cols);
    for (float& v : out.data()) {
        v = dist(engine);
    }
    return out;
}

// ---------------------------------------------------------------------------
// "LVT1" tensor files: magic, u64 rows, u64 cols (little-endian), then
// rows*cols little-endian IEEE-754 binary32 values.

inline constexpr std::array<char, 4> kTensorMagic{'L', 'V', 'T', '1'};

namespace detail {

inline void write_u64_le(std::ostream& os, std::uint64_t v) {
    std::array<char, 8> bytes{};
    for (std::size_t i = 0; i < 8; ++i) {
        bytes[i] = static_cast<char>((v >> (8 * i)) & 0xffU);
    }
    os.write(bytes.data(), bytes.size());
}

inline std::uint64_t read_u64_le(std::istream& is) {
    std::array<unsigned char, 8> bytes{};
    is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
    require(static_cast<bool>(is), "tensor file truncated in header");
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < 8; ++i) {
        v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    }
    return v;
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const Matrix& m) {
    os.write(kTensorMagic.data(), kTensorMagic.size());
    detail::write_u64_le(os, m.rows());
    detail::write_u64_le(os, m.cols());
    for (float v : m.data()) {
        const auto bits = std::bit_cast<std::uint32_t>(v);
        const std::array<char, 4> bytes{static_cast<char>(bits & 0xffU), static_cast<char>((bits >> 8) & 0xffU),
                                        static_cast<char>((bits >> 16) & 0xffU),
                                        static_cast<char>((bits >> 24) & 0xffU)};
        os.write(bytes.data(), bytes.size());
    }
    require(static_cast<bool>(os), "failed to write tensor");
}

inline Matrix read_tensor(std::istream& is) {
    std::array<char, 4> magic{};
    is.read(magic.data(), magic.size());
    require(static_cast<bool>(is) && magic == kTensorMagic, "not an LVT1 tensor file");
    const std::uint64_t rows = detail::read_u64_le(is);
    const std::uint64_t cols = detail::read_u64_le(is);
    require(cols == 0 || rows <= std::numeric_limits<std::uint32_t>::max() / cols, "tensor dims ", rows, "x",
            cols, " too large");
    std::vector<float> data(rows * cols);
    for (float& v : data) {
        std::array<unsigned char, 4> bytes{};
        is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
        require(static_cast<bool>(is), "tensor file truncated in payload");
        const std::uint32_t bits = static_cast<std::uint32_t>(bytes[0]) | (static_cast<std::uint32_t>(bytes[1]) << 8) |
                                   (static_cast<std::uint32_t>(bytes[2]) << 16) |
                                   (static_cast<std::uint32_t>(bytes[3]) << 24);
        v = std::bit_cast<float>(bits);
    }
    return Matrix(rows, cols, std::move(data));
}

}  // namespace lightinfer

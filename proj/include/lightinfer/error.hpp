// Copyright (C) 2026 The lightinfer Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>

namespace lightinfer {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand shapes do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A configuration file or key could not be interpreted.
class ConfigError : public Error {
public:
    ConfigError(std::string key, const std::string& message)
        : Error("config key '" + key + "': " + message), m_key(std::move(key)) {}

    const std::string& key() const noexcept { return m_key; }

private:
    std::string m_key;
};

namespace detail {

template <typename... Args>
std::string concat(Args&&... args) {
    std::ostringstream oss;
    (oss << ... << std::forward<Args>(args));
    return oss.str();
}

}  // namespace detail

template <typename E = Error, typename... Args>
inline void require(bool condition, Args&&... message) {
    if (!condition) {
        throw E(detail::concat(std::forward<Args>(message)...));
    }
}

}  // namespace lightinfer

// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace moelab {

using i64 = std::int64_t;
using u64 = std::uint64_t;

/// Dimension/shape violations (mismatched matmul operands, h not dividing d, ...).
class ShapeError : public std::runtime_error {
public:
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

/// Invalid or inconsistent configuration values.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

/// A stated invariant of the library failed at runtime (count mismatch,
/// non-scalar backward root, diverged training loss).
class InvariantError : public std::runtime_error {
public:
    explicit InvariantError(const std::string& what) : std::runtime_error(what) {}
};

/// A parity plan has no feasible solution.
class ParityError : public std::runtime_error {
public:
    explicit ParityError(const std::string& what) : std::runtime_error(what) {}
};

inline std::string shape_str(const std::vector<i64>& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += "x";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

} // namespace moelab

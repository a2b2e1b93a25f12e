// Copyright (c) 2026 The moelab authors. Licensed under the Apache License, Version 2.0.

#pragma once

#include <numeric>
#include <string>
#include <vector>

#include "moelab/common.hpp"

namespace moelab {

/// Exact rational arithmetic over int64 with __int128 intermediates. The cost
/// polynomials stay far below the overflow range at any configuration this
/// library handles, and reduction after every operation keeps terms small.
class Rat {
public:
    Rat() = default;
    Rat(i64 value) : num_(value), den_(1) {} // NOLINT: implicit by design
    Rat(i64 num, i64 den) : num_(num), den_(den) { reduce(); }

    i64 num() const { return num_; }
    i64 den() const { return den_; }

    bool is_integer() const { return den_ == 1; }
    bool is_zero() const { return num_ == 0; }

    i64 to_integer() const {
        if (!is_integer()) throw InvariantError("rational " + str() + " is not an integer");
        return num_;
    }
    double to_double() const { return static_cast<double>(num_) / static_cast<double>(den_); }

    i64 floor() const {
        if (num_ >= 0) return num_ / den_;
        return -((-num_ + den_ - 1) / den_);
    }

    /// Nearest integer, ties rounded up.
    i64 round_nearest() const { return (*this + Rat(1, 2)).floor(); }

    friend Rat operator+(const Rat& a, const Rat& b) {
        return make(i128(a.num_) * b.den_ + i128(b.num_) * a.den_, i128(a.den_) * b.den_);
    }
    friend Rat operator-(const Rat& a, const Rat& b) {
        return make(i128(a.num_) * b.den_ - i128(b.num_) * a.den_, i128(a.den_) * b.den_);
    }
    friend Rat operator*(const Rat& a, const Rat& b) {
        return make(i128(a.num_) * b.num_, i128(a.den_) * b.den_);
    }
    friend Rat operator/(const Rat& a, const Rat& b) {
        if (b.num_ == 0) throw InvariantError("rational division by zero");
        return make(i128(a.num_) * b.den_, i128(a.den_) * b.num_);
    }
    Rat operator-() const { return Rat(-num_, den_); }

    Rat& operator+=(const Rat& o) { return *this = *this + o; }
    Rat& operator-=(const Rat& o) { return *this = *this - o; }
    Rat& operator*=(const Rat& o) { return *this = *this * o; }
    Rat& operator/=(const Rat& o) { return *this = *this / o; }

    friend bool operator==(const Rat& a, const Rat& b) {
        return a.num_ == b.num_ && a.den_ == b.den_;
    }
    friend bool operator!=(const Rat& a, const Rat& b) { return !(a == b); }
    friend bool operator<(const Rat& a, const Rat& b) {
        return i128(a.num_) * b.den_ < i128(b.num_) * a.den_;
    }
    friend bool operator<=(const Rat& a, const Rat& b) { return a < b || a == b; }
    friend bool operator>(const Rat& a, const Rat& b) { return b < a; }
    friend bool operator>=(const Rat& a, const Rat& b) { return b <= a; }

    std::string str() const {
        if (den_ == 1) return std::to_string(num_);
        return std::to_string(num_) + "/" + std::to_string(den_);
    }

private:
    using i128 = __int128;

    static Rat make(i128 num, i128 den) {
        if (den == 0) throw InvariantError("rational with zero denominator");
        if (den < 0) {
            num = -num;
            den = -den;
        }
        const i128 g = gcd128(num < 0 ? -num : num, den);
        if (g > 1) {
            num /= g;
            den /= g;
        }
        constexpr i128 lim = 0x7fffffffffffffffLL;
        if (num > lim || num < -lim || den > lim)
            throw InvariantError("rational overflow");
        Rat r;
        r.num_ = static_cast<i64>(num);
        r.den_ = static_cast<i64>(den);
        return r;
    }

    static i128 gcd128(i128 a, i128 b) {
        while (b != 0) {
            const i128 t = a % b;
            a = b;
            b = t;
        }
        return a == 0 ? 1 : a;
    }

    void reduce() { *this = make(num_, den_); }

    i64 num_ = 0;
    i64 den_ = 1;
};

/// Dense polynomial over Rat in one indeterminate (the token dimension d).
/// Supports exactly what the cost formulas need: ring arithmetic and exact
/// evaluation. Trailing zero coefficients are trimmed so degree() is exact.
class Poly {
public:
    Poly() = default;
    Poly(Rat constant) { // NOLINT: implicit by design
        coeffs_.push_back(constant);
        trim();
    }
    Poly(i64 constant) : Poly(Rat(constant)) {} // NOLINT: implicit by design

    static Poly variable() {
        Poly p;
        p.coeffs_ = {Rat(0), Rat(1)};
        return p;
    }

    const std::vector<Rat>& coeffs() const { return coeffs_; }
    i64 degree() const { return static_cast<i64>(coeffs_.size()) - 1; }
    bool is_zero() const { return coeffs_.empty(); }

    Rat coeff(i64 power) const {
        if (power < 0 || power >= static_cast<i64>(coeffs_.size())) return Rat(0);
        return coeffs_[static_cast<std::size_t>(power)];
    }

    Rat eval(const Rat& x) const {
        Rat acc(0);
        for (auto it = coeffs_.rbegin(); it != coeffs_.rend(); ++it) acc = acc * x + *it;
        return acc;
    }

    friend Poly operator+(const Poly& a, const Poly& b) {
        Poly out;
        out.coeffs_.resize(std::max(a.coeffs_.size(), b.coeffs_.size()), Rat(0));
        for (std::size_t i = 0; i < out.coeffs_.size(); ++i) {
            if (i < a.coeffs_.size()) out.coeffs_[i] += a.coeffs_[i];
            if (i < b.coeffs_.size()) out.coeffs_[i] += b.coeffs_[i];
        }
        out.trim();
        return out;
    }
    friend Poly operator-(const Poly& a, const Poly& b) { return a + (b * Poly(Rat(-1))); }
    friend Poly operator*(const Poly& a, const Poly& b) {
        if (a.is_zero() || b.is_zero()) return {};
        Poly out;
        out.coeffs_.assign(a.coeffs_.size() + b.coeffs_.size() - 1, Rat(0));
        for (std::size_t i = 0; i < a.coeffs_.size(); ++i)
            for (std::size_t j = 0; j < b.coeffs_.size(); ++j)
                out.coeffs_[i + j] += a.coeffs_[i] * b.coeffs_[j];
        out.trim();
        return out;
    }
    Poly& operator+=(const Poly& o) { return *this = *this + o; }
    Poly& operator-=(const Poly& o) { return *this = *this - o; }
    Poly& operator*=(const Poly& o) { return *this = *this * o; }

    friend bool operator==(const Poly& a, const Poly& b) { return a.coeffs_ == b.coeffs_; }
    friend bool operator!=(const Poly& a, const Poly& b) { return !(a == b); }

    std::string str(const std::string& var = "d") const {
        if (coeffs_.empty()) return "0";
        std::string s;
        for (i64 p = degree(); p >= 0; --p) {
            const Rat c = coeff(p);
            if (c.is_zero()) continue;
            if (!s.empty()) s += c > Rat(0) ? " + " : " - ";
            else if (c < Rat(0)) s += "-";
            const Rat mag = c < Rat(0) ? -c : c;
            const bool unit = mag == Rat(1) && p > 0;
            if (!unit) s += mag.str();
            if (p >= 1) {
                if (!unit) s += "*";
                s += var;
                if (p >= 2) s += "^" + std::to_string(p);
            }
        }
        return s.empty() ? "0" : s;
    }

private:
    void trim() {
        while (!coeffs_.empty() && coeffs_.back().is_zero()) coeffs_.pop_back();
    }

    std::vector<Rat> coeffs_;
};

/// Exact interpolation through (x_i, y_i) via Newton divided differences,
/// returned in monomial form. Needs pairwise-distinct x.
inline Poly fit_polynomial(const std::vector<Rat>& xs, const std::vector<Rat>& ys) {
    if (xs.size() != ys.size() || xs.empty())
        throw InvariantError("fit_polynomial: need matching non-empty point lists");
    const std::size_t n = xs.size();
    std::vector<Rat> dd = ys; // divided-difference table, updated in place
    for (std::size_t level = 1; level < n; ++level)
        for (std::size_t i = n - 1; i >= level; --i)
            dd[i] = (dd[i] - dd[i - 1]) / (xs[i] - xs[i - level]);

    // Horner expansion of the Newton form into monomial coefficients.
    Poly out(dd[n - 1]);
    for (std::size_t i = n - 1; i-- > 0;)
        out = out * (Poly::variable() - Poly(xs[i])) + Poly(dd[i]);
    return out;
}

} // namespace moelab

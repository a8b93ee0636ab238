#pragma once

// Finite-difference oracle for the autodiff engine.
//
// A check takes a generic callable f(std::vector<BasicTensor<T>>&) returning a
// scalar tensor, written once and evaluated at both precisions. The reference
// gradient is a central difference of the double evaluation. It is compared
// against the double backward pass (64-bit check) and the float backward pass
// (32-bit check).

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "ddipnet/tensor.hpp"

namespace ddipnet::testing {

struct Instance {
    std::vector<Shape> shapes;
    std::vector<std::vector<double>> values;
    std::vector<bool> fixed;  // excluded from differentiation (hyper-parameters, buffers)

    void add(Shape shape, std::vector<double> v) {
        shapes.push_back(std::move(shape));
        values.push_back(std::move(v));
        fixed.push_back(false);
    }
    void add_fixed(Shape shape, std::vector<double> v) {
        add(std::move(shape), std::move(v));
        fixed.back() = true;
    }
};

inline std::vector<double> uniform_values(std::size_t n, double lo, double hi, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

inline std::vector<double> normal_values(std::size_t n, double sigma, std::mt19937_64& rng) {
    std::normal_distribution<double> d(0.0, sigma);
    std::vector<double> v(n);
    for (auto& x : v) x = d(rng);
    return v;
}

/// A constant (no gradient) tensor at precision T.
template <class T>
BasicTensor<T> constant(const Shape& shape, const std::vector<double>& v) {
    return BasicTensor<T>::from_data(shape, std::vector<T>(v.begin(), v.end()));
}

template <class T>
std::vector<BasicTensor<T>> make_leaves(const Instance& in, bool requires_grad) {
    std::vector<BasicTensor<T>> out;
    for (std::size_t i = 0; i < in.shapes.size(); ++i)
        out.push_back(BasicTensor<T>::from_data(in.shapes[i], std::vector<T>(in.values[i].begin(), in.values[i].end()),
                                                requires_grad && !in.fixed[i]));
    return out;
}

template <class T, class F>
std::vector<double> analytic_gradient(F& f, const Instance& in) {
    auto leaves = make_leaves<T>(in, true);
    auto out = f(leaves);
    std::vector<double> g;
    if (out.requires_grad()) out.backward();
    for (std::size_t i = 0; i < leaves.size(); ++i) {
        const auto& l = leaves[i];
        if (in.fixed[i]) continue;
        if (l.has_grad())
            for (T v : l.grad()) g.push_back(double(v));
        else
            g.insert(g.end(), l.numel(), 0.0);
    }
    return g;
}

template <class F>
std::vector<double> numeric_gradient(F& f, Instance in, double h) {
    std::vector<double> g;
    for (std::size_t i = 0; i < in.values.size(); ++i)
        for (std::size_t j = 0; j < in.values[i].size() && !in.fixed[i]; ++j) {
            const double x = in.values[i][j];
            in.values[i][j] = x + h;
            auto up = make_leaves<double>(in, false);
            const double fp = f(up).item();
            in.values[i][j] = x - h;
            auto down = make_leaves<double>(in, false);
            const double fm = f(down).item();
            in.values[i][j] = x;
            g.push_back((fp - fm) / (2.0 * h));
        }
    return g;
}

inline double max_abs(const std::vector<double>& v) {
    double m = 0;
    for (double x : v) m = std::max(m, std::fabs(x));
    return m;
}

/// max |a - n| / max(|n|_inf, 1e-8)
inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
    double num = 0;
    for (std::size_t i = 0; i < a.size(); ++i) num = std::max(num, std::fabs(a[i] - n[i]));
    return num / std::max(max_abs(n), 1e-8);
}

struct GradCheck {
    double rel32 = 0;
    double rel64 = 0;
    bool kink = false;  // the function is not smooth within 1e-3 of this point
    double scale = 0;   // |reference gradient|_inf
};

inline constexpr double kReferenceStep = 1e-6;
inline constexpr double kKinkStep = 1e-3;

template <class F>
GradCheck grad_check(F f, const Instance& in) {
    GradCheck r;
    const auto ref = numeric_gradient(f, in, kReferenceStep);
    const auto wide = numeric_gradient(f, in, kKinkStep);
    r.scale = max_abs(ref);
    r.kink = relative_error(wide, ref) > 1e-4;
    r.rel64 = relative_error(analytic_gradient<double>(f, in), ref);
    r.rel32 = relative_error(analytic_gradient<float>(f, in), ref);
    return r;
}

struct SuiteResult {
    int instances = 0;
    int redraws = 0;
    double worst32 = 0;
    double worst64 = 0;
};

/// Runs `count` smooth instances from `draw(rng)`; kink-adjacent draws are
/// replaced (at most 10 * count of them).
template <class Draw, class F>
SuiteResult grad_suite(Draw draw, F f, int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    SuiteResult s;
    while (s.instances < count && s.redraws < 10 * count) {
        const Instance in = draw(rng);
        const auto r = grad_check(f, in);
        if (r.kink) {
            ++s.redraws;
            continue;
        }
        ++s.instances;
        s.worst32 = std::max(s.worst32, r.rel32);
        s.worst64 = std::max(s.worst64, r.rel64);
    }
    return s;
}

}  // namespace ddipnet::testing

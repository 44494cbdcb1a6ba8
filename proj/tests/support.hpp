#pragma once

// Test-only oracles and generators. Nothing here calls into the code path
// it is used to check.

#include <cmath>
#include <cstddef>
#include <span>
#include <vector>

#include <functional>
#include <string>

#include "pricetree/equilibrium.hpp"
#include "pricetree/hierarchy.hpp"
#include "pricetree/random.hpp"

namespace pricetree::testing {

// Point drawn uniformly from the open simplex (normalised exponentials).
inline std::vector<double> random_simplex(Stream& rng, std::size_t n) {
    std::vector<double> w(n);
    double total = 0.0;
    for (double& x : w) {
        x = -std::log1p(-rng.uniform()) + 1e-3;
        total += x;
    }
    for (double& x : w)
        x /= total;
    return w;
}

// Literal transcription of the redistribution rule, with the sibling factor
// written as (1 - w_s + eta w_s) / (1 - w_s).
inline std::vector<double> reference_update(std::vector<double> w, std::size_t s, bool positive,
                                            double eta) {
    const double ws = w[s];
    for (std::size_t j = 0; j < w.size(); ++j) {
        if (positive)
            w[j] = j == s ? (1.0 - eta) * ws + eta : (1.0 - eta) * w[j];
        else
            w[j] = j == s ? (1.0 - eta) * ws : w[j] * (1.0 - ws + eta * ws) / (1.0 - ws);
    }
    return w;
}

// Expected drift by brute enumeration of the 2N (child, outcome) events,
// each weighted by its probability and applied with reference_update.
inline std::vector<double> enumerated_drift(const std::vector<double>& w,
                                            std::span<const double> p, double eta) {
    std::vector<double> d(w.size(), 0.0);
    for (std::size_t s = 0; s < w.size(); ++s) {
        for (bool positive : {true, false}) {
            const double prob = w[s] * (positive ? p[s] : 1.0 - p[s]);
            const auto next = reference_update(w, s, positive, eta);
            for (std::size_t i = 0; i < w.size(); ++i)
                d[i] += prob * (next[i] - w[i]);
        }
    }
    return d;
}

// Central differences of the closed-form drift in each coordinate of R^N.
inline JacobianMatrix finite_difference_jacobian(const std::vector<double>& w,
                                                 const QualityVector& p, UpdateRate eta,
                                                 double h = 1e-6) {
    const std::size_t n = w.size();
    JacobianMatrix j(n);
    for (std::size_t col = 0; col < n; ++col) {
        auto up = w, down = w;
        up[col] += h;
        down[col] -= h;
        const auto du = expected_drift(up, p, eta).d;
        const auto dd = expected_drift(down, p, eta).d;
        for (std::size_t row = 0; row < n; ++row)
            j(row, col) = (du[row] - dd[row]) / (2.0 * h);
    }
    return j;
}

// Random quality vector that satisfies the interiority condition, sorted.
// Small N usually succeeds by rejection from a wide range; otherwise the
// qualities are packed into a band below a random maximum b whose width
// (1 - b) / (N - 1) * u keeps the condition satisfied.
inline QualityVector random_interior_qualities(Stream& rng, std::size_t n) {
    for (int attempt = 0; attempt < 50; ++attempt) {
        std::vector<double> p(n);
        for (double& x : p)
            x = 0.05 + 0.9 * rng.uniform();
        auto q = QualityVector::sorted(p);
        if (check_interiority(q))
            return q;
    }
    for (;;) {
        const double top = 0.3 + 0.67 * rng.uniform();
        const double width = (1.0 - top) / static_cast<double>(n - 1) * (0.2 + 0.79 * rng.uniform());
        std::vector<double> p(n);
        p[0] = top;
        p[n - 1] = top - width;
        for (std::size_t i = 1; i + 1 < n; ++i)
            p[i] = top - width * rng.uniform();
        auto q = QualityVector::sorted(p);
        if (check_interiority(q))
            return q;
    }
}

// Complete b-ary tree of the given depth; ids are "n<k>" in breadth-first
// order, leaf qualities come from `quality(leaf_number)`.
inline std::vector<NodeSpec> complete_tree(std::size_t b, std::size_t depth,
                                           const std::function<double(std::size_t)>& quality,
                                           std::size_t context_count = 1) {
    std::vector<NodeSpec> specs;
    std::size_t level_begin = 0, level_size = 1, next = 1, leaf = 0;
    specs.push_back({"n0", NodeKind::Selector, {}, std::nullopt, context_count});
    for (std::size_t d = 1; d <= depth; ++d) {
        for (std::size_t i = level_begin; i < level_begin + level_size; ++i) {
            for (std::size_t c = 0; c < b; ++c) {
                const std::string id = "n" + std::to_string(next++);
                specs[i].children.push_back(id);
                if (d == depth)
                    specs.push_back(make_leaf(id, quality(leaf++)));
                else
                    specs.push_back({id, NodeKind::Selector, {}, std::nullopt, context_count});
            }
        }
        level_begin += level_size;
        level_size *= b;
    }
    return specs;
}

} // namespace pricetree::testing

#pragma once

// Proportional-redistribution price updates on the probability simplex.
//
// A selector keeps one weight per child. A positive signal moves a fraction
// eta of every sibling's mass onto the selected child; a negative signal
// moves a fraction eta of the selected child's mass onto its siblings,
// in proportion to their current weights. Both rules conserve total mass
// algebraically, so nothing here ever renormalizes, projects or clamps.

#include <cstddef>
#include <initializer_list>
#include <span>
#include <utility>
#include <vector>

namespace pricetree {

class UpdateRate {
public:
    // Throws Error(InvalidRate) unless 0 < eta < 1.
    explicit UpdateRate(double eta);

    double value() const noexcept { return eta_; }

private:
    double eta_;
};

struct WeightDelta {
    double value = 0.0;
};

struct BinarySignal {
    bool bit = false;

    constexpr BinarySignal() = default;
    constexpr explicit BinarySignal(bool b) : bit(b) {}

    constexpr int as_int() const noexcept { return bit ? 1 : 0; }
    friend constexpr bool operator==(BinarySignal, BinarySignal) = default;
};

inline constexpr BinarySignal kPositive{true};
inline constexpr BinarySignal kNegative{false};

class PriceVector {
public:
    // Accepts any weights in [0,1] with at least two entries. The simplex
    // constraint is the caller's responsibility; see is_on_simplex().
    explicit PriceVector(std::vector<double> weights);
    PriceVector(std::initializer_list<double> weights)
        : PriceVector(std::vector<double>(weights)) {}

    std::size_t size() const noexcept { return weights_.size(); }
    double operator[](std::size_t i) const { return weights_[i]; }
    std::span<const double> weights() const noexcept { return weights_; }
    std::span<double> mutable_weights() noexcept { return weights_; }

    double sum() const noexcept;
    double min() const noexcept;
    double max() const noexcept;
    bool is_on_simplex(double tolerance = 1e-9) const noexcept;

    friend bool operator==(const PriceVector&, const PriceVector&) = default;

private:
    std::vector<double> weights_;
};

PriceVector uniform_init(std::size_t n);

// In-place forms used by the tree. Each returns the change applied to the
// selected child's weight. Errors: Error(InvalidChild) for a bad index.
WeightDelta apply_positive_inplace(std::span<double> w, std::size_t selected, UpdateRate eta);

// The sibling factor (1 - w_sel + eta*w_sel) / (1 - w_sel) is evaluated
// with the siblings' actual mass in place of 1 - w_sel. The two are equal on
// the simplex and the former has no cancellation when w_sel is close to 1.
// If every sibling is exactly zero the freed mass eta*w_sel is split evenly.
WeightDelta apply_negative_inplace(std::span<double> w, std::size_t selected, UpdateRate eta);

WeightDelta apply_update_inplace(std::span<double> w, std::size_t selected,
                                 BinarySignal signal, UpdateRate eta);

PriceVector apply_positive(const PriceVector& w, std::size_t selected, UpdateRate eta);
PriceVector apply_negative(const PriceVector& w, std::size_t selected, UpdateRate eta);
std::pair<PriceVector, WeightDelta> apply_update(const PriceVector& w, std::size_t selected,
                                                 BinarySignal signal, UpdateRate eta);

// 1 iff the delta is strictly positive.
constexpr BinarySignal derive_signal(WeightDelta delta) noexcept {
    return BinarySignal(delta.value > 0.0);
}

} // namespace pricetree

#include "pricetree/mechanism.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "pricetree/error.hpp"

namespace pricetree {

const char* to_string(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::InvalidArity: return "invalid-arity";
    case ErrorKind::InvalidChild: return "invalid-child";
    case ErrorKind::InvalidRate: return "invalid-rate";
    case ErrorKind::Validation: return "validation";
    case ErrorKind::NoGap: return "no-gap";
    case ErrorKind::Degenerate: return "degenerate";
    case ErrorKind::NotInterior: return "not-interior";
    case ErrorKind::Boundary: return "boundary";
    case ErrorKind::Integration: return "integration";
    case ErrorKind::Config: return "config";
    case ErrorKind::Parse: return "parse";
    case ErrorKind::Mode: return "mode";
    case ErrorKind::Range: return "range";
    case ErrorKind::Io: return "io";
    }
    return "unknown";
}

UpdateRate::UpdateRate(double eta) : eta_(eta) {
    if (!(eta > 0.0 && eta < 1.0))
        throw Error(ErrorKind::InvalidRate,
                    "update rate must lie in (0,1), got " + std::to_string(eta));
}

PriceVector::PriceVector(std::vector<double> weights) : weights_(std::move(weights)) {
    if (weights_.size() < 2)
        throw Error(ErrorKind::InvalidArity, "a price vector needs at least 2 entries");
    for (double x : weights_)
        if (!(x >= 0.0 && x <= 1.0))
            throw Error(ErrorKind::Range, "weight outside [0,1]: " + std::to_string(x));
}

double PriceVector::sum() const noexcept {
    return std::accumulate(weights_.begin(), weights_.end(), 0.0);
}

double PriceVector::min() const noexcept {
    return *std::min_element(weights_.begin(), weights_.end());
}

double PriceVector::max() const noexcept {
    return *std::max_element(weights_.begin(), weights_.end());
}

bool PriceVector::is_on_simplex(double tolerance) const noexcept {
    return std::abs(sum() - 1.0) <= tolerance &&
           std::all_of(weights_.begin(), weights_.end(), [](double x) { return x >= 0.0; });
}

PriceVector uniform_init(std::size_t n) {
    if (n < 2)
        throw Error(ErrorKind::InvalidArity,
                    "a selector needs at least 2 children, got " + std::to_string(n));
    return PriceVector(std::vector<double>(n, 1.0 / static_cast<double>(n)));
}

namespace {

void check_index(std::span<const double> w, std::size_t selected) {
    if (selected >= w.size())
        throw Error(ErrorKind::InvalidChild, "child index " + std::to_string(selected) +
                                                 " out of range for " +
                                                 std::to_string(w.size()) + " children");
}

} // namespace

WeightDelta apply_positive_inplace(std::span<double> w, std::size_t selected, UpdateRate eta) {
    check_index(w, selected);
    const double rate = eta.value();
    const double keep = 1.0 - rate;
    const double before = w[selected];
    for (double& x : w)
        x *= keep;
    w[selected] = keep * before + rate;
    return {w[selected] - before};
}

WeightDelta apply_negative_inplace(std::span<double> w, std::size_t selected, UpdateRate eta) {
    check_index(w, selected);
    const double rate = eta.value();
    const double before = w[selected];
    double siblings = 0.0;
    for (std::size_t j = 0; j < w.size(); ++j)
        if (j != selected)
            siblings += w[j];

    const double freed = rate * before;
    if (siblings > 0.0) {
        const double factor = (siblings + freed) / siblings;
        for (double& x : w)
            x *= factor;
    } else {
        const double share = freed / static_cast<double>(w.size() - 1);
        for (double& x : w)
            x += share;
    }
    w[selected] = (1.0 - rate) * before;
    return {w[selected] - before};
}

WeightDelta apply_update_inplace(std::span<double> w, std::size_t selected, BinarySignal signal,
                                 UpdateRate eta) {
    return signal.bit ? apply_positive_inplace(w, selected, eta)
                      : apply_negative_inplace(w, selected, eta);
}

PriceVector apply_positive(const PriceVector& w, std::size_t selected, UpdateRate eta) {
    PriceVector out = w;
    apply_positive_inplace(out.mutable_weights(), selected, eta);
    return out;
}

PriceVector apply_negative(const PriceVector& w, std::size_t selected, UpdateRate eta) {
    PriceVector out = w;
    apply_negative_inplace(out.mutable_weights(), selected, eta);
    return out;
}

std::pair<PriceVector, WeightDelta> apply_update(const PriceVector& w, std::size_t selected,
                                                 BinarySignal signal, UpdateRate eta) {
    PriceVector out = w;
    const WeightDelta delta = apply_update_inplace(out.mutable_weights(), selected, signal, eta);
    return {std::move(out), delta};
}

} // namespace pricetree

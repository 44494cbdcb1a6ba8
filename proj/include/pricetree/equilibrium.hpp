#pragma once

// Mean-field analysis of a single selector with fixed child qualities
// p_1 >= p_2 >= ... >= p_N (p_i = P(outcome = 1 | child i selected)).
//
// The interior equilibrium is affine in the qualities:
//     w_i* = (p_i + c) / (1 + c),   c = (1 - sum_j p_j) / (N - 1),
// and exists when p_N > (sum_j p_j - 1) / (N - 1). For N = 2 it reduces to
// w_1* = (1 - p_2) / alpha with alpha = (1 - p_1) + (1 - p_2), and the
// expected drift of w_1 is exactly eta * alpha * (w_1* - w_1).

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "pricetree/mechanism.hpp"
#include "pricetree/random.hpp"

namespace pricetree {

class QualityVector {
public:
    // Requires N >= 2, every entry in [0,1], sorted non-increasing.
    explicit QualityVector(std::vector<double> p);
    // Sorts into non-increasing order first.
    static QualityVector sorted(std::vector<double> p);

    std::size_t size() const noexcept { return p_.size(); }
    double operator[](std::size_t i) const { return p_[i]; }
    std::span<const double> values() const noexcept { return p_; }
    double sum() const noexcept;

private:
    std::vector<double> p_;
};

struct EquilibriumSolution {
    std::optional<PriceVector> w_star;  // general N: present iff interior
    double c = 0.0;
    bool interior = false;
    std::optional<double> alpha;    // N = 2 only
    std::optional<double> eq_cost;  // N = 2 only
};

// Throws Error(Degenerate) when p1 = p2 = 1, Error(NoGap) when p1 <= p2.
EquilibriumSolution equilibrium_n2(double p1, double p2);

bool check_interiority(const QualityVector& p);

// Throws Error(Degenerate) when 1 + c = 0 (every quality is 1).
EquilibriumSolution equilibrium_general(const QualityVector& p);

struct DriftVector {
    std::vector<double> d;

    double sum() const noexcept;
    double max_abs() const noexcept;
};

// Exact one-round expected weight change at w, enumerating every
// (selected child, outcome) pair. Throws Error(Boundary) if some w_j >= 1.
DriftVector expected_drift(std::span<const double> w, const QualityVector& p, UpdateRate eta);

// Slope of the N = 2 drift of w_1: -eta * alpha.
double drift_slope_n2(double p1, double p2, UpdateRate eta);

struct DriftEstimate {
    std::vector<double> mean;
    std::vector<double> standard_error;
    std::size_t samples = 0;
};

// Empirical mean of the one-round weight change over independent simulated
// rounds from the fixed state w. Throws Error(Range) when samples == 0.
DriftEstimate monte_carlo_drift(std::span<const double> w, const QualityVector& p,
                                UpdateRate eta, std::size_t samples, Stream& rng);

class JacobianMatrix {
public:
    explicit JacobianMatrix(std::size_t n) : n_(n), a_(n * n, 0.0) {}

    std::size_t size() const noexcept { return n_; }
    double& operator()(std::size_t i, std::size_t j) { return a_[i * n_ + j]; }
    double operator()(std::size_t i, std::size_t j) const { return a_[i * n_ + j]; }
    double column_sum(std::size_t j) const;

private:
    std::size_t n_;
    std::vector<double> a_;
};

// Linearisation of the expected drift at the interior equilibrium:
// J_ii = -eta w_i*, J_ij = eta w_i* R_j, R_j = (c^2 + 2c + p_j) / (1 - p_j).
// Every column of J / eta sums to c. Throws Error(NotInterior).
JacobianMatrix jacobian(const QualityVector& p, UpdateRate eta);

struct OdeOptions {
    double step = 0.0;  // in rounds; 0 selects 0.1 / eta
    std::size_t max_steps = 1'000'000;
    double tolerance = 1e-6;
    std::size_t record_stride = 0;  // 0 keeps about 1000 points
};

struct OdeResult {
    std::vector<std::vector<double>> trajectory;
    std::vector<double> final_state;
    std::vector<double> target;
    bool converged = false;
    std::size_t steps = 0;
};

// Forward-Euler integration of the expected-drift field from w0 until
// ||w - w*||_inf <= tolerance or max_steps. Throws Error(NotInterior) when no
// interior equilibrium exists and Error(Integration) if the state leaves
// the open simplex or its sum drifts by more than 1e-9.
OdeResult ode_flow(const PriceVector& w0, const QualityVector& p, UpdateRate eta,
                   OdeOptions options = {});

struct EquilibriumCost {
    double absolute = 0.0;
    double fractional = 0.0;
};

// Expected per-round loss against always picking the better child:
// delta (1 - w_1*), and that loss relative to p_1.
EquilibriumCost equilibrium_cost(double p1, double p2);

} // namespace pricetree

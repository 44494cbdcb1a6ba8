#include "pricetree/equilibrium.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <string>

#include "pricetree/error.hpp"
#include "pricetree/hierarchy.hpp"

namespace pricetree {

QualityVector::QualityVector(std::vector<double> p) : p_(std::move(p)) {
    if (p_.size() < 2)
        throw Error(ErrorKind::InvalidArity, "need at least 2 qualities");
    for (std::size_t i = 0; i < p_.size(); ++i) {
        if (!(p_[i] >= 0.0 && p_[i] <= 1.0))
            throw Error(ErrorKind::Range, "quality outside [0,1]: " + std::to_string(p_[i]));
        if (i > 0 && p_[i] > p_[i - 1])
            throw Error(ErrorKind::Range, "qualities must be sorted non-increasing");
    }
}

QualityVector QualityVector::sorted(std::vector<double> p) {
    std::sort(p.begin(), p.end(), std::greater<>());
    return QualityVector(std::move(p));
}

double QualityVector::sum() const noexcept {
    return std::accumulate(p_.begin(), p_.end(), 0.0);
}

EquilibriumSolution equilibrium_n2(double p1, double p2) {
    const QualityVector p({p1, p2});  // validates range and order
    const double alpha = (1.0 - p1) + (1.0 - p2);
    if (alpha == 0.0)
        throw Error(ErrorKind::Degenerate, "p1 = p2 = 1: no drift, every state is stationary");
    const double gap = p1 - p2;
    if (!(gap > 0.0))
        throw Error(ErrorKind::NoGap, "equilibrium needs p1 > p2");

    const double w1 = (gap + (1.0 - p1)) / (gap + 2.0 * (1.0 - p1));
    EquilibriumSolution s;
    s.c = 1.0 - p1 - p2;
    s.alpha = alpha;
    s.eq_cost = gap * (1.0 - w1);
    // At p1 = 1 the equilibrium sits on the boundary; it is still returned.
    s.interior = w1 > 0.0 && w1 < 1.0;
    s.w_star = PriceVector({w1, 1.0 - w1});
    return s;
}

bool check_interiority(const QualityVector& p) {
    const auto n = static_cast<double>(p.size());
    return p[p.size() - 1] > (p.sum() - 1.0) / (n - 1.0);
}

EquilibriumSolution equilibrium_general(const QualityVector& p) {
    const std::size_t n = p.size();
    EquilibriumSolution s;
    s.c = (1.0 - p.sum()) / static_cast<double>(n - 1);
    if (1.0 + s.c == 0.0)
        throw Error(ErrorKind::Degenerate, "every quality is 1: equilibrium undefined");
    if (n == 2 && p[0] > p[1]) {
        s.alpha = (1.0 - p[0]) + (1.0 - p[1]);
        s.eq_cost = equilibrium_cost(p[0], p[1]).absolute;
    }
    s.interior = check_interiority(p);
    if (!s.interior)
        return s;
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i)
        w[i] = (p[i] + s.c) / (1.0 + s.c);
    s.w_star = PriceVector(std::move(w));
    return s;
}

double DriftVector::sum() const noexcept {
    return std::accumulate(d.begin(), d.end(), 0.0);
}

double DriftVector::max_abs() const noexcept {
    double m = 0.0;
    for (double x : d)
        m = std::max(m, std::abs(x));
    return m;
}

DriftVector expected_drift(std::span<const double> w, const QualityVector& p, UpdateRate eta) {
    const std::size_t n = p.size();
    if (w.size() != n)
        throw Error(ErrorKind::InvalidArity, "weights and qualities differ in length");
    for (double x : w)
        if (!(x >= 0.0 && x < 1.0))
            throw Error(ErrorKind::Boundary,
                        "drift undefined at the simplex boundary (a weight equals 1)");

    // Contribution to d_i of child j being selected, per unit of w_i:
    //   positive (prob w_j p_j):         -eta w_i        -> -p_j w_j
    //   negative (prob w_j (1 - p_j)):   +eta w_i w_j / (1 - w_j)
    std::vector<double> term(n);
    double total = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
        term[j] = -p[j] * w[j] + (1.0 - p[j]) * w[j] * w[j] / (1.0 - w[j]);
        total += term[j];
    }
    DriftVector out;
    out.d.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double self = p[i] * (1.0 - w[i]) - (1.0 - p[i]) * w[i];
        out.d[i] = eta.value() * w[i] * (self + (total - term[i]));
    }
    return out;
}

double drift_slope_n2(double p1, double p2, UpdateRate eta) {
    return -eta.value() * ((1.0 - p1) + (1.0 - p2));
}

DriftEstimate monte_carlo_drift(std::span<const double> w, const QualityVector& p,
                                UpdateRate eta, std::size_t samples, Stream& rng) {
    if (samples == 0)
        throw Error(ErrorKind::Range, "monte_carlo_drift needs at least one sample");
    const std::size_t n = p.size();
    if (w.size() != n)
        throw Error(ErrorKind::InvalidArity, "weights and qualities differ in length");

    std::vector<double> sum(n, 0.0), sum_sq(n, 0.0), next(n);
    for (std::size_t s = 0; s < samples; ++s) {
        const std::size_t chosen = select_child(w, rng.uniform(), 0.0);
        const BinarySignal outcome(rng.uniform() < p[chosen]);
        std::copy(w.begin(), w.end(), next.begin());
        apply_update_inplace(next, chosen, outcome, eta);
        for (std::size_t i = 0; i < n; ++i) {
            const double change = next[i] - w[i];
            sum[i] += change;
            sum_sq[i] += change * change;
        }
    }
    DriftEstimate est;
    est.samples = samples;
    est.mean.resize(n);
    est.standard_error.resize(n);
    const auto count = static_cast<double>(samples);
    for (std::size_t i = 0; i < n; ++i) {
        const double mean = sum[i] / count;
        const double var = samples > 1 ? std::max(0.0, (sum_sq[i] - count * mean * mean) / (count - 1.0))
                                       : 0.0;
        est.mean[i] = mean;
        est.standard_error[i] = std::sqrt(var / count);
    }
    return est;
}

double JacobianMatrix::column_sum(std::size_t j) const {
    double s = 0.0;
    for (std::size_t i = 0; i < n_; ++i)
        s += (*this)(i, j);
    return s;
}

JacobianMatrix jacobian(const QualityVector& p, UpdateRate eta) {
    const EquilibriumSolution eq = equilibrium_general(p);
    if (!eq.interior)
        throw Error(ErrorKind::NotInterior, "no interior equilibrium: Jacobian undefined");
    const std::size_t n = p.size();
    const double c = eq.c;
    const auto& w = *eq.w_star;
    JacobianMatrix j(n);
    for (std::size_t col = 0; col < n; ++col) {
        const double r = (c * c + 2.0 * c + p[col]) / (1.0 - p[col]);
        for (std::size_t row = 0; row < n; ++row)
            j(row, col) = eta.value() * w[row] * (row == col ? -1.0 : r);
    }
    return j;
}

OdeResult ode_flow(const PriceVector& w0, const QualityVector& p, UpdateRate eta,
                   OdeOptions options) {
    const EquilibriumSolution eq = equilibrium_general(p);
    if (!eq.interior)
        throw Error(ErrorKind::NotInterior, "no interior equilibrium to converge to");
    if (w0.size() != p.size())
        throw Error(ErrorKind::InvalidArity, "weights and qualities differ in length");
    const double step = options.step > 0.0 ? options.step : 0.1 / eta.value();
    const std::size_t stride =
        options.record_stride > 0 ? options.record_stride : std::max<std::size_t>(1, options.max_steps / 1000);

    OdeResult result;
    result.target.assign(eq.w_star->weights().begin(), eq.w_star->weights().end());
    std::vector<double> w(w0.weights().begin(), w0.weights().end());

    auto distance = [&] {
        double m = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i)
            m = std::max(m, std::abs(w[i] - result.target[i]));
        return m;
    };

    for (std::size_t k = 0;; ++k) {
        if (k % stride == 0)
            result.trajectory.push_back(w);
        if (distance() <= options.tolerance) {
            result.converged = true;
            result.steps = k;
            break;
        }
        if (k == options.max_steps) {
            result.steps = k;
            break;
        }
        const DriftVector d = expected_drift(w, p, eta);
        double total = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) {
            w[i] += step * d.d[i];
            total += w[i];
            if (!(w[i] > 0.0 && w[i] < 1.0))
                throw Error(ErrorKind::Integration,
                            "Euler step left the open simplex at step " + std::to_string(k) +
                                "; reduce the step size");
        }
        if (std::abs(total - 1.0) > 1e-9)
            throw Error(ErrorKind::Integration, "simplex sum drifted beyond 1e-9");
    }
    if (result.trajectory.back() != w)
        result.trajectory.push_back(w);
    result.final_state = w;
    return result;
}

EquilibriumCost equilibrium_cost(double p1, double p2) {
    const EquilibriumSolution eq = equilibrium_n2(p1, p2);
    EquilibriumCost cost;
    cost.absolute = *eq.eq_cost;
    cost.fractional = p1 > 0.0 ? cost.absolute / p1 : 0.0;
    return cost;
}

} // namespace pricetree

#include "edfa/ode.hpp"

#include "edfa/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace edfa::ode {

namespace {

struct Workspace {
    explicit Workspace(std::size_t n) : k1(n), k2(n), k3(n), k4(n), tmp(n) {}
    std::vector<double> k1, k2, k3, k4, tmp;
};

void step(const Rhs& rhs, double z, double h, std::span<const double> y, std::span<double> out,
          Workspace& w) {
    const std::size_t n = y.size();
    auto& [k1, k2, k3, k4, tmp] = w;
    rhs(z, y, k1);
    for (std::size_t i = 0; i < n; ++i)
        tmp[i] = y[i] + 0.5 * h * k1[i];
    rhs(z + 0.5 * h, tmp, k2);
    for (std::size_t i = 0; i < n; ++i)
        tmp[i] = y[i] + 0.5 * h * k2[i];
    rhs(z + 0.5 * h, tmp, k3);
    for (std::size_t i = 0; i < n; ++i)
        tmp[i] = y[i] + h * k3[i];
    rhs(z + h, tmp, k4);
    for (std::size_t i = 0; i < n; ++i)
        out[i] = y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
}

}  // namespace

void rk4_step(const Rhs& rhs, double z, double h, std::span<const double> y, std::span<double> out) {
    Workspace w(y.size());
    step(rhs, z, h, y, out, w);
}

Solution integrate(const Rhs& rhs, std::vector<double> y0, double z0, double z1,
                   const Tolerances& tol) {
    Solution sol;
    sol.y = std::move(y0);
    const double span = z1 - z0;
    if (span <= 0.0)
        return sol;

    const std::size_t n = sol.y.size();
    std::vector<double> full(n), half(n), twice(n);
    Workspace w(n);

    double z = z0;
    // RK4 local error scales as h^5; start coarse and let the controller shrink.
    double h = span / 16.0;
    const double min_step = std::min(tol.min_step, span * 1e-6);

    while (z < z1) {
        if (sol.accepted_steps + sol.rejected_steps >= tol.max_steps)
            throw Error(ErrorCategory::IntegratorUnderflow, "ODE integration exceeded max_steps");
        bool last = false;
        if (z + h >= z1) {
            h = z1 - z;
            last = true;
        }

        step(rhs, z, h, sol.y, full, w);
        step(rhs, z, 0.5 * h, sol.y, half, w);
        step(rhs, z + 0.5 * h, 0.5 * h, half, twice, w);

        double err = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double scale =
                tol.abs + tol.rel * std::max(std::abs(sol.y[i]), std::abs(twice[i]));
            err = std::max(err, std::abs(twice[i] - full[i]) / 15.0 / scale);
        }
        if (!std::isfinite(err))
            throw Error(ErrorCategory::IntegratorUnderflow,
                        "ODE right-hand side produced a non-finite value at z = " + std::to_string(z));

        if (err <= 1.0) {
            for (std::size_t i = 0; i < n; ++i)
                sol.y[i] = twice[i] + (twice[i] - full[i]) / 15.0;
            z = last ? z1 : z + h;
            ++sol.accepted_steps;
        } else {
            ++sol.rejected_steps;
        }

        const double factor = err > 0.0 ? 0.9 * std::pow(err, -0.2) : 4.0;
        h *= std::clamp(factor, 0.2, 4.0);
        if (z < z1 && h < min_step)
            throw Error(ErrorCategory::IntegratorUnderflow,
                        "ODE step size underflow at z = " + std::to_string(z) + " (h = " +
                            std::to_string(h) + ")");
    }
    return sol;
}

}  // namespace edfa::ode

#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace edfa::ode {

/// dy/dz evaluated at (z, y); writes into dydz.
using Rhs = std::function<void(double z, std::span<const double> y, std::span<double> dydz)>;

struct Tolerances {
    double rel = 1e-9;
    double abs = 1e-9;
    double min_step = 1e-12;
    std::size_t max_steps = 1'000'000;
};

struct Solution {
    std::vector<double> y;
    std::size_t accepted_steps = 0;
    std::size_t rejected_steps = 0;
};

/// Classical RK4 with a step-doubling error estimate: every step is taken once
/// with h and twice with h/2, the difference controls h, and the accepted value
/// is the Richardson-extrapolated combination. Throws IntegratorUnderflow when
/// the controller asks for a step below `min_step`.
Solution integrate(const Rhs& rhs, std::vector<double> y0, double z0, double z1,
                   const Tolerances& tol = {});

/// One classical RK4 step of size h; exposed for fixed-step reference solutions.
void rk4_step(const Rhs& rhs, double z, double h, std::span<const double> y, std::span<double> out);

}  // namespace edfa::ode

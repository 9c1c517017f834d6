#pragma once

#include <cmath>
#include <vector>

#include "latentmark/errors.hpp"
#include "latentmark/grid.hpp"

namespace latentmark {

enum class BetaKind { linear, scaled };

// Variance schedule for T discrete diffusion steps. Step indices are
// 1-based to match the usual t = 1..T convention; alpha_bar(0) == 1 so the
// forward map at t = 0 is the identity.
template <typename Scalar>
struct NoiseSchedule {
    int total_steps = 0;
    std::vector<Scalar> betas;       // betas[i] is beta_{i+1}
    std::vector<Scalar> alpha_bars;  // alpha_bars[t], t = 0..T

    Scalar beta(int t) const {
        if (t < 1 || t > total_steps) throw ScheduleError("beta: step out of range");
        return betas[static_cast<std::size_t>(t) - 1];
    }

    Scalar alpha_bar(int t) const {
        if (t < 0 || t > total_steps) throw ScheduleError("alpha_bar: step out of range");
        return alpha_bars[static_cast<std::size_t>(t)];
    }
};

using NoiseScheduleD = NoiseSchedule<double>;

template <typename Scalar>
NoiseSchedule<Scalar> build_schedule(int total_steps, Scalar beta_start, Scalar beta_end,
                                     BetaKind kind = BetaKind::linear) {
    if (total_steps < 1) throw ScheduleError("schedule needs at least one step");
    if (!(beta_start > Scalar(0)) || !(beta_end < Scalar(1)) || beta_end < beta_start)
        throw ScheduleError("schedule needs 0 < beta_start <= beta_end < 1");

    NoiseSchedule<Scalar> s;
    s.total_steps = total_steps;
    s.betas.resize(static_cast<std::size_t>(total_steps));
    const Scalar t_scalar = static_cast<Scalar>(total_steps);
    for (int i = 1; i <= total_steps; ++i) {
        const Scalar frac = static_cast<Scalar>(i - 1) / t_scalar;
        if (kind == BetaKind::linear) {
            s.betas[i - 1] = beta_start + frac * (beta_end - beta_start);
        } else {
            const Scalar r = std::sqrt(beta_start) + frac * (std::sqrt(beta_end) - std::sqrt(beta_start));
            s.betas[i - 1] = r * r;
        }
    }

    s.alpha_bars.resize(static_cast<std::size_t>(total_steps) + 1);
    s.alpha_bars[0] = Scalar(1);
    for (int t = 1; t <= total_steps; ++t)
        s.alpha_bars[t] = s.alpha_bars[t - 1] * (Scalar(1) - s.betas[t - 1]);
    return s;
}

// closed-form forward map: x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps
template <typename Scalar>
Grid<Scalar> forward_noise(const Grid<Scalar>& x0, int t, const Grid<Scalar>& eps,
                           const NoiseSchedule<Scalar>& sched) {
    x0.require_same_shape(eps, "forward_noise");
    const Scalar ab = sched.alpha_bar(t);
    Grid<Scalar> out = Grid<Scalar>::zeros_like(x0);
    out.array() = std::sqrt(ab) * x0.array() + std::sqrt(Scalar(1) - ab) * eps.array();
    return out;
}

}  // namespace latentmark

#pragma once

#include <optional>
#include <string>
#include <vector>

#include "latentmark/grid.hpp"
#include "latentmark/prior.hpp"
#include "latentmark/schedule.hpp"

namespace latentmark {

struct WatermarkPair;

// Inference grid t_i = T - (i-1)(T/N) - (T/N - 1), descending. For T=1000,
// N=20 this is {951, 901, ..., 51, 1}; the stride puts t=251 on the grid.
std::vector<int> make_timestep_grid(int total_steps, int num_steps);

struct SamplerConfig {
    std::vector<int> timesteps;  // strictly decreasing, within [1, T]
    double guidance_scale = 0.0;
    std::optional<std::string> condition;

    int num_steps() const { return static_cast<int>(timesteps.size()); }
    void validate(const NoiseScheduleD& sched) const;
};

// x_prev = scale_x * x_t + scale_eps * eps_hat (+ sigma * noise)
struct StepCoeffs {
    double scale_x = 1.0;
    double scale_eps = 0.0;
};

StepCoeffs step_coeffs(double abar_t, double abar_prev, double sigma);

// single compiled combine kernel so every step variant produces identical
// floats for identical coefficients
LatentGrid combine_step(const LatentGrid& x_t, const LatentGrid& eps_hat, const StepCoeffs& c);

LatentGrid ddim_step(const LatentGrid& x_t, const LatentGrid& eps_hat, int t, int t_prev,
                     double sigma_t, const LatentGrid* injected_noise,
                     const NoiseScheduleD& sched);

// guidance-aware noise prediction for this sampler config
LatentGrid predict_epsilon(const LatentGrid& x, int t, const SamplerConfig& cfg,
                           const MixturePrior& prior, const NoiseScheduleD& sched);

LatentGrid predict_epsilon_vjp(const LatentGrid& x, int t, const SamplerConfig& cfg,
                               const MixturePrior& prior, const NoiseScheduleD& sched,
                               const LatentGrid& a);

struct Trajectory {
    std::vector<int> timesteps;       // t_1 .. t_N
    std::vector<LatentGrid> states;   // x_{t_1} .. x_0, length N+1
    std::vector<LatentGrid> eps_hats; // one per step
    SamplerConfig config;
};

struct WatermarkHooks {
    const WatermarkPair* pair = nullptr;
    int t_detail = -1;
    bool structure_on = false;
    bool detail_on = false;
    // test knob for the zero-watermark equivalence check; <0 means use pair->sigma_td
    double sigma_td_override = -1.0;

    double sigma_td() const;
};

struct SampleResult {
    LatentGrid x0;
    std::optional<Trajectory> trajectory;
};

SampleResult sample(const LatentGrid& x_T, const SamplerConfig& cfg, const MixturePrior& prior,
                    const NoiseScheduleD& sched, const WatermarkHooks* hooks = nullptr,
                    bool record = false);

// per-step mean |s (eps_c - eps_u)| recomputed from recorded states
std::vector<std::pair<int, double>> guidance_profile(const Trajectory& traj, double scale,
                                                     const MixturePrior& prior,
                                                     const NoiseScheduleD& sched);

}  // namespace latentmark

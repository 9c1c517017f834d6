#include "latentmark/sampler.hpp"

#include <algorithm>
#include <cmath>

#include "latentmark/watermark.hpp"

namespace latentmark {

std::vector<int> make_timestep_grid(int total_steps, int num_steps) {
    if (num_steps < 1 || num_steps > total_steps)
        throw ParamError("num_steps must be in [1, total_steps]");
    if (total_steps % num_steps != 0)
        throw ParamError("total_steps must be divisible by num_steps for the uniform grid");
    const int stride = total_steps / num_steps;
    std::vector<int> ts(static_cast<std::size_t>(num_steps));
    for (int i = 1; i <= num_steps; ++i)
        ts[i - 1] = total_steps - (i - 1) * stride - (stride - 1);
    return ts;
}

void SamplerConfig::validate(const NoiseScheduleD& sched) const {
    if (timesteps.empty()) throw ConfigError("sampler has no timesteps");
    for (std::size_t i = 0; i < timesteps.size(); ++i) {
        if (timesteps[i] < 1 || timesteps[i] > sched.total_steps)
            throw ConfigError("sampler timestep outside [1, T]");
        if (i > 0 && timesteps[i] >= timesteps[i - 1])
            throw ConfigError("sampler timesteps must be strictly decreasing");
    }
    if (guidance_scale < 0.0) throw ConfigError("guidance scale must be nonnegative");
    if (guidance_scale != 0.0 && !condition && timesteps.size() > 0) {
        // scale without a condition is legal (collapses to unconditional) but
        // usually a config mistake; leave it to the caller
    }
}

StepCoeffs step_coeffs(double abar_t, double abar_prev, double sigma) {
    const double rad = 1.0 - abar_prev - sigma * sigma;
    if (rad < 0.0) throw ScheduleError("ddim step: 1 - abar_prev - sigma^2 is negative");
    StepCoeffs c;
    c.scale_x = std::sqrt(abar_prev / abar_t);
    c.scale_eps = std::sqrt(rad) - c.scale_x * std::sqrt(1.0 - abar_t);
    return c;
}

LatentGrid combine_step(const LatentGrid& x_t, const LatentGrid& eps_hat, const StepCoeffs& c) {
    x_t.require_same_shape(eps_hat, "combine_step");
    LatentGrid out = LatentGrid::zeros_like(x_t);
    out.array() = c.scale_x * x_t.array() + c.scale_eps * eps_hat.array();
    return out;
}

LatentGrid ddim_step(const LatentGrid& x_t, const LatentGrid& eps_hat, int t, int t_prev,
                     double sigma_t, const LatentGrid* injected_noise,
                     const NoiseScheduleD& sched) {
    if (t_prev < 0 || t_prev > t) throw ParamError("ddim_step needs t >= t_prev >= 0");
    if (sigma_t > 0.0 && injected_noise == nullptr)
        throw ParamError("ddim_step: sigma > 0 needs injected noise");
    const StepCoeffs c = step_coeffs(sched.alpha_bar(t), sched.alpha_bar(t_prev), sigma_t);
    LatentGrid out = combine_step(x_t, eps_hat, c);
    if (sigma_t > 0.0) {
        x_t.require_same_shape(*injected_noise, "ddim_step noise");
        out.array() += sigma_t * injected_noise->array();
    }
    return out;
}

LatentGrid predict_epsilon(const LatentGrid& x, int t, const SamplerConfig& cfg,
                           const MixturePrior& prior, const NoiseScheduleD& sched) {
    if (cfg.condition)
        return guided_epsilon(x, t, prior, *cfg.condition, cfg.guidance_scale, sched);
    return analytic_epsilon(x, t, prior, std::nullopt, sched);
}

LatentGrid predict_epsilon_vjp(const LatentGrid& x, int t, const SamplerConfig& cfg,
                               const MixturePrior& prior, const NoiseScheduleD& sched,
                               const LatentGrid& a) {
    if (cfg.condition)
        return guided_epsilon_vjp(x, t, prior, *cfg.condition, cfg.guidance_scale, sched, a);
    return epsilon_vjp(x, t, prior, std::nullopt, sched, a);
}

double WatermarkHooks::sigma_td() const {
    if (sigma_td_override >= 0.0) return sigma_td_override;
    return pair ? pair->sigma_td : 0.0;
}

SampleResult sample(const LatentGrid& x_T, const SamplerConfig& cfg, const MixturePrior& prior,
                    const NoiseScheduleD& sched, const WatermarkHooks* hooks, bool record) {
    cfg.validate(sched);
    prior.prior_mean().require_same_shape(x_T, "sample");

    const bool structure_on = hooks && hooks->structure_on;
    const bool detail_on = hooks && hooks->detail_on;
    if ((structure_on || detail_on) && hooks->pair == nullptr)
        throw ConfigError("watermark hooks enabled without a watermark pair");
    if (detail_on &&
        std::find(cfg.timesteps.begin(), cfg.timesteps.end(), hooks->t_detail) ==
            cfg.timesteps.end())
        throw ConfigError("detail timestep is not on the sampling grid");

    LatentGrid x = x_T;
    if (structure_on) x = embed_structure(x, hooks->pair->w_s);

    SampleResult res;
    if (record) {
        res.trajectory.emplace();
        res.trajectory->timesteps = cfg.timesteps;
        res.trajectory->config = cfg;
        res.trajectory->states.push_back(x);
    }

    const int n = cfg.num_steps();
    for (int i = 0; i < n; ++i) {
        const int t = cfg.timesteps[static_cast<std::size_t>(i)];
        const int t_prev = (i + 1 < n) ? cfg.timesteps[static_cast<std::size_t>(i) + 1] : 0;
        LatentGrid eps = predict_epsilon(x, t, cfg, prior, sched);
        if (detail_on && t == hooks->t_detail)
            x = embed_detail(x, eps, t, t_prev, hooks->pair->w_d, hooks->sigma_td(), sched);
        else
            x = ddim_step(x, eps, t, t_prev, 0.0, nullptr, sched);
        if (record) {
            res.trajectory->eps_hats.push_back(std::move(eps));
            res.trajectory->states.push_back(x);
        }
    }
    res.x0 = std::move(x);
    return res;
}

std::vector<std::pair<int, double>> guidance_profile(const Trajectory& traj, double scale,
                                                     const MixturePrior& prior,
                                                     const NoiseScheduleD& sched) {
    if (!traj.config.condition)
        throw ConditionError("guidance profile needs a conditionally sampled trajectory");
    if (traj.states.size() != traj.timesteps.size() + 1)
        throw ParamError("trajectory is incomplete");

    std::vector<std::pair<int, double>> out;
    out.reserve(traj.timesteps.size());
    for (std::size_t i = 0; i < traj.timesteps.size(); ++i) {
        const int t = traj.timesteps[i];
        const LatentGrid& x = traj.states[i];
        LatentGrid eps_u = analytic_epsilon(x, t, prior, std::nullopt, sched);
        LatentGrid eps_c = analytic_epsilon(x, t, prior, *traj.config.condition, sched);
        const double mag = (scale * (eps_c.array() - eps_u.array())).abs().mean();
        out.emplace_back(t, mag);
    }
    return out;
}

}  // namespace latentmark

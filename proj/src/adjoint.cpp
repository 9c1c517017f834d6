#include "latentmark/adjoint.hpp"

#include <cmath>
#include <string>

namespace latentmark {

namespace {

struct StepInfo {
    int t = 0;
    int t_prev = 0;
    bool detail = false;
    double sigma = 0.0;
};

std::vector<StepInfo> build_plan(const PathConfig& cfg, const WatermarkPair& pair) {
    const auto& ts = cfg.sampler.timesteps;
    if (ts.empty()) throw ConfigError("sampler has no timesteps");
    const bool detail_on = cfg.mode != WatermarkMode::structure_only && cfg.embed.t_detail > 0;
    if (detail_on &&
        std::find(ts.begin(), ts.end(), cfg.embed.t_detail) == ts.end())
        throw ConfigError("detail timestep is not on the sampling grid");
    std::vector<StepInfo> plan(ts.size());
    for (std::size_t i = 0; i < ts.size(); ++i) {
        plan[i].t = ts[i];
        plan[i].t_prev = (i + 1 < ts.size()) ? ts[i + 1] : 0;
        plan[i].detail = detail_on && ts[i] == cfg.embed.t_detail;
        plan[i].sigma = plan[i].detail ? pair.sigma_td : 0.0;
    }
    return plan;
}

void check_finite(const LatentGrid& a, std::size_t step_index) {
    if (!a.array().isFinite().all())
        throw DivergenceError("adjoint state non-finite at backward step " +
                              std::to_string(step_index));
}

GradResult finish_structure_grad(const PathConfig& cfg, const LatentGrid& x_T,
                                 const WatermarkPair& pair, const LatentGrid& a_top,
                                 LatentGrid grad_wd, GradMethod method) {
    GradResult res;
    res.method = method;
    res.grad_wd = std::move(grad_wd);
    if (cfg.mode != WatermarkMode::detail_only)
        res.grad_ws = embed_structure_vjp_w(x_T, pair.w_s, a_top);
    else
        res.grad_ws = LatentGrid::zeros_like(pair.w_s);
    return res;
}

}  // namespace

LatentGrid residual_f(const LatentGrid& x, int t, const PathConfig& cfg,
                      const MixturePrior& prior, const NoiseScheduleD& sched,
                      const WatermarkPair& pair) {
    const auto plan = build_plan(cfg, pair);
    const StepInfo* step = nullptr;
    for (const auto& s : plan)
        if (s.t == t) step = &s;
    if (!step) throw ConfigError("residual_f: timestep not on the sampling grid");

    LatentGrid eps = predict_epsilon(x, t, cfg.sampler, prior, sched);
    LatentGrid next = step->detail
                          ? embed_detail(x, eps, step->t, step->t_prev, pair.w_d, step->sigma, sched)
                          : ddim_step(x, eps, step->t, step->t_prev, 0.0, nullptr, sched);
    next.array() -= x.array();
    return next;
}

GradResult adjoint_gradient(const LatentGrid& x0, const LatentGrid& dldx0, const LatentGrid& x_T,
                            const PathConfig& cfg, const MixturePrior& prior,
                            const NoiseScheduleD& sched, const WatermarkPair& pair,
                            MemoryStats* stats) {
    x0.require_same_shape(dldx0, "adjoint_gradient");
    const auto plan = build_plan(cfg, pair);
    if (stats && !stats->begun) stats->begin();

    LatentGrid x = x0;
    LatentGrid a = dldx0;
    LatentGrid grad_wd = LatentGrid::zeros_like(pair.w_d);

    for (std::size_t ri = plan.size(); ri-- > 0;) {
        const StepInfo& s = plan[ri];
        const StepCoeffs c = step_coeffs(sched.alpha_bar(s.t), sched.alpha_bar(s.t_prev), s.sigma);
        {
            // invert x_prev = sx*x_t + se*eps(x_t) (+ w_d): guess eps at the
            // later state, then correct until the fixed point settles
            LatentGrid eps = predict_epsilon(x, s.t, cfg.sampler, prior, sched);
            LatentGrid xt = LatentGrid::zeros_like(x);
            double prev_norm = -1.0;
            for (int pass = 0; pass < 12; ++pass) {
                if (pass > 0) eps = predict_epsilon(xt, s.t, cfg.sampler, prior, sched);
                LatentGrid next = LatentGrid::zeros_like(x);
                if (s.detail)
                    next.array() =
                        (x.array() - pair.w_d.array() - c.scale_eps * eps.array()) / c.scale_x;
                else
                    next.array() = (x.array() - c.scale_eps * eps.array()) / c.scale_x;
                const double delta = pass == 0 ? -1.0 : rms_diff(next, xt);
                xt = std::move(next);
                if (pass > 0 && delta <= 1e-13 * (1.0 + prev_norm)) break;
                prev_norm = std::sqrt(xt.array().square().mean());
            }
            if (s.detail) grad_wd.array() += a.array();
            LatentGrid av = predict_epsilon_vjp(xt, s.t, cfg.sampler, prior, sched, a);
            a.array() = c.scale_x * a.array() + c.scale_eps * av.array();
            x = std::move(xt);
        }
        check_finite(a, ri);
        if (stats) stats->sample_boundary();
    }

    return finish_structure_grad(cfg, x_T, pair, a, std::move(grad_wd), GradMethod::adjoint);
}

GradResult reference_gradient(const Trajectory& traj, const LatentGrid& dldx0,
                              const LatentGrid& x_T, const PathConfig& cfg,
                              const MixturePrior& prior, const NoiseScheduleD& sched,
                              const WatermarkPair& pair, MemoryStats* stats) {
    const auto plan = build_plan(cfg, pair);
    if (traj.states.size() != plan.size() + 1)
        throw ParamError("reference_gradient: trajectory does not match the step plan");
    if (stats && !stats->begun) stats->begin();

    LatentGrid a = dldx0;
    LatentGrid grad_wd = LatentGrid::zeros_like(pair.w_d);

    for (std::size_t ri = plan.size(); ri-- > 0;) {
        const StepInfo& s = plan[ri];
        const StepCoeffs c = step_coeffs(sched.alpha_bar(s.t), sched.alpha_bar(s.t_prev), s.sigma);
        {
            const LatentGrid& xt = traj.states[ri];
            if (s.detail) grad_wd.array() += a.array();
            LatentGrid av = predict_epsilon_vjp(xt, s.t, cfg.sampler, prior, sched, a);
            a.array() = c.scale_x * a.array() + c.scale_eps * av.array();
        }
        check_finite(a, ri);
        if (stats) stats->sample_boundary();
    }

    return finish_structure_grad(cfg, x_T, pair, a, std::move(grad_wd), GradMethod::reference);
}

GradResult grad_via_adjoint(const LatentGrid& x_T, const PathConfig& cfg,
                            const MixturePrior& prior, const NoiseScheduleD& sched,
                            const WatermarkPair& pair, const OutputGradFn& out_grad,
                            MemoryStats* stats) {
    if (stats) stats->begin();
    const WatermarkHooks hooks = make_hooks(pair, cfg.embed, cfg.mode);
    LatentGrid x0 = sample(x_T, cfg.sampler, prior, sched, &hooks, false).x0;
    LatentGrid g = out_grad(x0);
    return adjoint_gradient(x0, g, x_T, cfg, prior, sched, pair, stats);
}

GradResult grad_via_reference(const LatentGrid& x_T, const PathConfig& cfg,
                              const MixturePrior& prior, const NoiseScheduleD& sched,
                              const WatermarkPair& pair, const OutputGradFn& out_grad,
                              MemoryStats* stats) {
    if (stats) stats->begin();
    const WatermarkHooks hooks = make_hooks(pair, cfg.embed, cfg.mode);
    SampleResult run = sample(x_T, cfg.sampler, prior, sched, &hooks, true);
    LatentGrid g = out_grad(run.x0);
    return reference_gradient(*run.trajectory, g, x_T, cfg, prior, sched, pair, stats);
}

FdResult finite_diff_gradient(const std::function<double(const WatermarkPair&)>& evaluator,
                              const WatermarkPair& pair, double h, int min_coords,
                              std::uint64_t seed) {
    if (!(h > 0.0)) throw ParamError("finite difference step must be positive");
    const Eigen::Index ns = pair.w_s.size();
    const Eigen::Index nd = pair.w_d.size();
    const Eigen::Index total = ns + nd;

    std::vector<Eigen::Index> order(static_cast<std::size_t>(total));
    for (Eigen::Index i = 0; i < total; ++i) order[static_cast<std::size_t>(i)] = i;
    Rng rng(derive_seed(seed, {0xfd}));
    for (Eigen::Index i = total - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(i + 1)))]);

    const Eigen::Index picks = std::min<Eigen::Index>(total, std::max(1, min_coords));

    FdResult res;
    res.grad.method = GradMethod::finite_diff;
    res.grad.grad_ws = LatentGrid::zeros_like(pair.w_s);
    res.grad.grad_wd = LatentGrid::zeros_like(pair.w_d);
    WatermarkPair probe = pair;
    for (Eigen::Index p = 0; p < picks; ++p) {
        const Eigen::Index flat = order[static_cast<std::size_t>(p)];
        const bool on_ws = flat < ns;
        const Eigen::Index idx = on_ws ? flat : flat - ns;
        double& slot = on_ws ? probe.w_s.array()[idx] : probe.w_d.array()[idx];
        const double saved = slot;
        slot = saved + h;
        const double up = evaluator(probe);
        slot = saved - h;
        const double down = evaluator(probe);
        slot = saved;
        const double g = (up - down) / (2.0 * h);
        if (on_ws)
            res.grad.grad_ws.array()[idx] = g;
        else
            res.grad.grad_wd.array()[idx] = g;
        res.coords.push_back({on_ws ? 0 : 1, idx});
    }
    return res;
}

}  // namespace latentmark

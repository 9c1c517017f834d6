#include "latentmark/optimizer.hpp"

#include <cmath>

#include "latentmark/attacks.hpp"

namespace latentmark {

std::string TrainTransform::name() const {
    switch (kind) {
        case Kind::identity: return "identity";
        case Kind::hflip: return "hflip";
        case Kind::brightness: return "brightness";
        case Kind::contrast: return "contrast";
        case Kind::gaussian_blur: return "gaussian_blur";
        case Kind::additive_noise: return "additive_noise";
        case Kind::regenerate: return "regenerate";
    }
    return "?";
}

void OptimizeSetup::validate() const {
    if (!prior || !sched || !extractor || !carriers)
        throw ConfigError("optimize setup is missing prior, schedule, extractor or carriers");
    if (!(lr > 0.0)) throw ParamError("learning rate must be positive");
    if (iterations < 0) throw ParamError("iteration budget must be nonnegative");
    if (margin < 0.0) throw ParamError("hinge margin must be nonnegative");
}

namespace {

struct AppliedTransform {
    const TrainTransform* spec = nullptr;
    LatentGrid output;
    // regenerate tape
    Trajectory sub_traj;
    double sqrt_ab = 1.0;
    bool has_tape = false;
};

AppliedTransform apply_transform(const TrainTransform& tr, const LatentGrid& x,
                                 const OptimizeSetup& setup, std::uint64_t draw_seed) {
    AppliedTransform out;
    out.spec = &tr;
    switch (tr.kind) {
        case TrainTransform::Kind::identity:
            out.output = x;
            break;
        case TrainTransform::Kind::hflip:
            out.output = hflip_grid(x);
            break;
        case TrainTransform::Kind::brightness:
            out.output = brightness_grid(x, tr.factor);
            break;
        case TrainTransform::Kind::contrast:
            out.output = contrast_grid(x, tr.factor);
            break;
        case TrainTransform::Kind::gaussian_blur:
            out.output = gaussian_blur_grid(x, tr.sigma_frac * x.width());
            break;
        case TrainTransform::Kind::additive_noise:
            out.output = additive_noise_grid(x, tr.sigma, draw_seed);
            break;
        case TrainTransform::Kind::regenerate: {
            Rng rng(derive_seed(draw_seed, {0x2e6e4}));
            LatentGrid noise =
                LatentGrid::gaussian(x.channels(), x.height(), x.width(), rng);
            LatentGrid noised = forward_noise(x, tr.t_a, noise, *setup.sched);
            out.sqrt_ab = std::sqrt(setup.sched->alpha_bar(tr.t_a));
            SamplerConfig sub;
            for (int t : setup.sampler.timesteps)
                if (t <= tr.t_a) sub.timesteps.push_back(t);
            if (sub.timesteps.empty())
                throw ConfigError("regenerate transform strength is below the sampling grid");
            SampleResult run = sample(noised, sub, *setup.prior, *setup.sched, nullptr, true);
            out.output = std::move(run.x0);
            out.sub_traj = std::move(*run.trajectory);
            out.has_tape = true;
            break;
        }
    }
    return out;
}

LatentGrid transform_vjp(const AppliedTransform& at, const LatentGrid& g,
                         const OptimizeSetup& setup) {
    const TrainTransform& tr = *at.spec;
    switch (tr.kind) {
        case TrainTransform::Kind::identity:
        case TrainTransform::Kind::additive_noise:
            return g;
        case TrainTransform::Kind::hflip:
            return hflip_grid(g);  // permutation, self-transpose
        case TrainTransform::Kind::brightness:
            return brightness_grid(g, tr.factor);
        case TrainTransform::Kind::contrast: {
            // y_i = m + f (x_i - m), m the grid mean
            const double f = tr.factor;
            const double n = static_cast<double>(g.size());
            const double gsum = g.array().sum();
            LatentGrid out = LatentGrid::zeros_like(g);
            out.array() = f * g.array() + ((1.0 - f) * gsum / n);
            return out;
        }
        case TrainTransform::Kind::gaussian_blur:
            return gaussian_blur_transpose(g, tr.sigma_frac * g.width());
        case TrainTransform::Kind::regenerate: {
            const auto& ts = at.sub_traj.timesteps;
            LatentGrid a = g;
            for (std::size_t ri = ts.size(); ri-- > 0;) {
                const int t = ts[ri];
                const int t_prev = (ri + 1 < ts.size()) ? ts[ri + 1] : 0;
                const StepCoeffs c =
                    step_coeffs(setup.sched->alpha_bar(t), setup.sched->alpha_bar(t_prev), 0.0);
                LatentGrid av = predict_epsilon_vjp(at.sub_traj.states[ri], t,
                                                    at.sub_traj.config, *setup.prior,
                                                    *setup.sched, a);
                a.array() = c.scale_x * a.array() + c.scale_eps * av.array();
            }
            a.array() *= at.sqrt_ab;
            return a;
        }
    }
    throw ParamError("unknown transform kind");
}

struct MsgEval {
    double loss = 0.0;
    LatentGrid grad_x0;  // unweighted d(mean hinge)/d x0
    bool with_grad = false;
};

MsgEval message_term(const LatentGrid& x0w, const Message& m, const OptimizeSetup& setup,
                     std::uint64_t iter_seed, bool with_grad) {
    static const std::vector<TrainTransform> kIdentityOnly{TrainTransform{}};
    const auto& set = setup.transforms.empty() ? kIdentityOnly : setup.transforms;

    MsgEval ev;
    ev.with_grad = with_grad;
    if (with_grad) ev.grad_x0 = LatentGrid::zeros_like(x0w);
    for (std::size_t j = 0; j < set.size(); ++j) {
        AppliedTransform at = apply_transform(set[j], x0w, setup, derive_seed(iter_seed, {j}));
        const Eigen::VectorXd emb = extract(at.output, *setup.extractor);
        ev.loss += msg_loss(emb, *setup.carriers, m, setup.margin);
        if (with_grad) {
            const Eigen::VectorXd ge =
                msg_loss_embedding_grad(emb, *setup.carriers, m, setup.margin);
            LatentGrid gy = extract_input_vjp(at.output, *setup.extractor, ge);
            ev.grad_x0.array() += transform_vjp(at, gy, setup).array();
        }
    }
    const double inv = 1.0 / static_cast<double>(set.size());
    ev.loss *= inv;
    if (with_grad) ev.grad_x0.array() *= inv;
    return ev;
}

struct ForwardState {
    LatentGrid x_tw;  // after structure embedding (or x_T itself)
    LatentGrid x0w;
};

ForwardState forward_pass(const LatentGrid& x_T, const WatermarkPair& pair,
                          const OptimizeSetup& setup) {
    ForwardState fs;
    const bool structure_on = setup.mode != WatermarkMode::detail_only;
    fs.x_tw = structure_on ? embed_structure(x_T, pair.w_s) : x_T;
    WatermarkHooks hooks = make_hooks(pair, setup.embed, setup.mode);
    hooks.structure_on = false;  // already applied above so l_init can see the state
    fs.x0w = sample(fs.x_tw, setup.sampler, *setup.prior, *setup.sched, &hooks, false).x0;
    return fs;
}

LossBreakdown assemble_loss(const ForwardState& fs, const LatentGrid& x_T,
                            const WatermarkPair& init, const WatermarkPair& pair,
                            const OptimizeSetup& setup, const MsgEval& msg) {
    const double init_term = l_init(fs.x_tw, x_T);
    const double low_term = l_low(pair.w_s, pair.w_d, init.w_s, init.w_d);
    const double high_term = l_high(pair.w_s, pair.w_d);
    return total_loss(msg.loss, init_term, low_term, high_term, setup.weights);
}

void add_direct_gradients(GradResult& res, const LatentGrid& x_T, const LatentGrid& x_tw,
                          const WatermarkPair& pair, const WatermarkPair& init,
                          const OptimizeSetup& setup) {
    const bool structure_on = setup.mode != WatermarkMode::detail_only;
    const bool detail_on = setup.mode != WatermarkMode::structure_only;
    if (structure_on) {
        LatentGrid ginit = l_init_grad_xw(x_tw, x_T);
        ginit.array() *= setup.weights.init;
        res.grad_ws.array() += embed_structure_vjp_w(x_T, pair.w_s, ginit).array();
        res.grad_ws.array() += setup.weights.low * l_low_grad(pair.w_s, init.w_s).array();
        res.grad_ws.array() += setup.weights.high * l_high_grad(pair.w_s).array();
    }
    if (detail_on) {
        res.grad_wd.array() += setup.weights.low * l_low_grad(pair.w_d, init.w_d).array();
        res.grad_wd.array() += setup.weights.high * l_high_grad(pair.w_d).array();
    }
}

}  // namespace

ObjectiveEval evaluate_objective(const LatentGrid& x_T, const Message& m,
                                 const WatermarkPair& init, const WatermarkPair& pair,
                                 const OptimizeSetup& setup, std::uint64_t iter_seed) {
    setup.validate();
    ForwardState fs = forward_pass(x_T, pair, setup);
    const MsgEval msg = message_term(fs.x0w, m, setup, iter_seed, false);

    ObjectiveEval ev;
    ev.loss = assemble_loss(fs, x_T, init, pair, setup, msg);
    ev.bit_acc = bit_accuracy(decode(extract(fs.x0w, *setup.extractor), *setup.carriers), m);
    ev.x0w = std::move(fs.x0w);
    return ev;
}

GradResult objective_gradient(const LatentGrid& x_T, const Message& m, const WatermarkPair& init,
                              const WatermarkPair& pair, const OptimizeSetup& setup,
                              std::uint64_t iter_seed, GradMethod method, MemoryStats* stats) {
    setup.validate();
    if (method == GradMethod::finite_diff)
        throw ParamError("objective_gradient computes analytic methods only");

    PathConfig path;
    path.sampler = setup.sampler;
    path.embed = setup.embed;
    path.mode = setup.mode;

    const OutputGradFn out_grad = [&](const LatentGrid& x0) {
        MsgEval msg = message_term(x0, m, setup, iter_seed, true);
        msg.grad_x0.array() *= setup.weights.msg;
        return std::move(msg.grad_x0);
    };

    GradResult res = (method == GradMethod::adjoint)
                         ? grad_via_adjoint(x_T, path, *setup.prior, *setup.sched, pair,
                                            out_grad, stats)
                         : grad_via_reference(x_T, path, *setup.prior, *setup.sched, pair,
                                              out_grad, stats);

    const bool structure_on = setup.mode != WatermarkMode::detail_only;
    const LatentGrid x_tw = structure_on ? embed_structure(x_T, pair.w_s) : x_T;
    add_direct_gradients(res, x_T, x_tw, pair, init, setup);
    return res;
}

OptimizeResult optimize_watermark(const LatentGrid& x_T, const Message& m,
                                  const WatermarkPair& init, const OptimizeSetup& setup) {
    setup.validate();
    OptimizeResult result;
    result.pair = init;

    const bool structure_on = setup.mode != WatermarkMode::detail_only;
    const bool detail_on = setup.mode != WatermarkMode::structure_only;

    // Adam accumulators
    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    LatentGrid m_ws = LatentGrid::zeros_like(init.w_s);
    LatentGrid v_ws = LatentGrid::zeros_like(init.w_s);
    LatentGrid m_wd = LatentGrid::zeros_like(init.w_d);
    LatentGrid v_wd = LatentGrid::zeros_like(init.w_d);

    PathConfig path;
    path.sampler = setup.sampler;
    path.embed = setup.embed;
    path.mode = setup.mode;

    int zero_run = 0;
    result.status = OptimizeStatus::budget_exhausted;
    for (int iter = 0; iter < setup.iterations; ++iter) {
        const std::uint64_t iter_seed = derive_seed(setup.run_seed, {static_cast<std::uint64_t>(iter)});
        ForwardState fs = forward_pass(x_T, result.pair, setup);
        MsgEval msg = message_term(fs.x0w, m, setup, iter_seed, true);
        LossBreakdown loss = assemble_loss(fs, x_T, init, result.pair, setup, msg);
        const double acc =
            bit_accuracy(decode(extract(fs.x0w, *setup.extractor), *setup.carriers), m);
        result.history.push_back({iter, loss, acc});

        if (!std::isfinite(loss.total)) {
            result.status = OptimizeStatus::diverged;
            break;
        }
        zero_run = (loss.msg == 0.0) ? zero_run + 1 : 0;
        if (setup.early_stop_after > 0 && zero_run >= setup.early_stop_after) {
            result.status = OptimizeStatus::early_stopped;
            break;
        }

        msg.grad_x0.array() *= setup.weights.msg;
        GradResult g = adjoint_gradient(fs.x0w, msg.grad_x0, x_T, path, *setup.prior,
                                        *setup.sched, result.pair);
        add_direct_gradients(g, x_T, fs.x_tw, result.pair, init, setup);

        const double t = static_cast<double>(iter + 1);
        const double corr = setup.lr * std::sqrt(1.0 - std::pow(beta2, t)) /
                            (1.0 - std::pow(beta1, t));
        if (structure_on) {
            m_ws.array() = beta1 * m_ws.array() + (1.0 - beta1) * g.grad_ws.array();
            v_ws.array() = beta2 * v_ws.array() + (1.0 - beta2) * g.grad_ws.array().square();
            result.pair.w_s.array() -= corr * m_ws.array() / (v_ws.array().sqrt() + adam_eps);
        }
        if (detail_on) {
            m_wd.array() = beta1 * m_wd.array() + (1.0 - beta1) * g.grad_wd.array();
            v_wd.array() = beta2 * v_wd.array() + (1.0 - beta2) * g.grad_wd.array().square();
            result.pair.w_d.array() -= corr * m_wd.array() / (v_wd.array().sqrt() + adam_eps);
        }
    }

    result.x0w = forward_pass(x_T, result.pair, setup).x0w;
    return result;
}

}  // namespace latentmark

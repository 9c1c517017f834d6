#include "latentmark/watermark.hpp"

#include <cmath>

#include "latentmark/sampler.hpp"

namespace latentmark {

namespace {

// Pull a near-gaussian draw onto exact moments (mean 0, var v, skew 0,
// kurtosis 3) with a cubic map y = a + bx + cx^2 + dx^3, Newton on the four
// coefficients. Small grids make sample moments noisy enough to dwarf every
// other gradient at the start of a run; starting exactly on the moment
// manifold removes that transient.
bool match_moments(Eigen::ArrayXd& x, double var_target) {
    auto residual = [&](const Eigen::Vector4d& q, Eigen::Vector4d& g, Eigen::ArrayXd* out) {
        Eigen::ArrayXd y = q(0) + q(1) * x + q(2) * x.square() + q(3) * x.cube();
        const double m = y.mean();
        const Eigen::ArrayXd d = y - m;
        const double v = d.square().mean();
        if (!(v > 0.0) || !std::isfinite(v)) return false;
        const Eigen::ArrayXd z = d / std::sqrt(v);
        g << m, v - var_target, z.cube().mean(), z.pow(4).mean() - 3.0;
        if (out) *out = std::move(y);
        return true;
    };

    Eigen::Vector4d p(0.0, 1.0, 0.0, 0.0);
    Eigen::Vector4d g;
    if (!residual(p, g, nullptr)) return false;
    for (int it = 0; it < 60; ++it) {
        if (g.cwiseAbs().maxCoeff() < 1e-12) break;
        Eigen::Matrix4d jac;
        for (int j = 0; j < 4; ++j) {
            const double h = 1e-6 * std::max(1e-3, std::abs(p(j)));
            Eigen::Vector4d pp = p, gp, gm;
            pp(j) += h;
            if (!residual(pp, gp, nullptr)) return false;
            pp(j) -= 2.0 * h;
            if (!residual(pp, gm, nullptr)) return false;
            jac.col(j) = (gp - gm) / (2.0 * h);
        }
        const Eigen::Vector4d step = jac.fullPivLu().solve(g);
        // backtrack if the full step overshoots
        double t = 1.0;
        Eigen::Vector4d p_new, g_new;
        for (int bt = 0; bt < 8; ++bt, t *= 0.5) {
            p_new = p - t * step;
            if (residual(p_new, g_new, nullptr) &&
                g_new.cwiseAbs().maxCoeff() < g.cwiseAbs().maxCoeff())
                break;
            if (bt == 7) return false;
        }
        p = p_new;
        g = g_new;
    }
    if (g.cwiseAbs().maxCoeff() >= 1e-9) return false;
    Eigen::ArrayXd y;
    if (!residual(p, g, &y)) return false;
    x = std::move(y);
    return true;
}

void moment_matched_draw(LatentGrid& w, double variance) {
    Eigen::ArrayXd x = w.array();
    // kurtosis 3 is out of reach for a handful of points; settle for exact
    // mean and variance there
    if (x.size() < 16 || !match_moments(x, variance)) {
        x -= x.mean();
        const double v = x.square().mean();
        if (v > 0.0) x *= std::sqrt(variance / v);
    }
    w.array() = x;
}

}  // namespace

WatermarkPair init_watermarks(int channels, int height, int width, double variance,
                              std::uint64_t seed) {
    if (!(variance > 0.0)) throw ParamError("watermark init variance must be positive");
    const double sd = std::sqrt(variance);
    Rng rs(derive_seed(seed, {0}));
    Rng rd(derive_seed(seed, {1}));
    WatermarkPair pair;
    pair.w_s = LatentGrid::gaussian(channels, height, width, rs, sd);
    pair.w_d = LatentGrid::gaussian(channels, height, width, rd, sd);
    moment_matched_draw(pair.w_s, variance);
    moment_matched_draw(pair.w_d, variance);
    pair.init_variance = variance;
    return pair;
}

LatentGrid embed_structure(const LatentGrid& x_T, const LatentGrid& w_s) {
    x_T.require_same_shape(w_s, "embed_structure");
    const double var_x = variance(x_T);
    const double var_w = variance(w_s);
    if (var_w >= var_x)
        throw DegenerateError("embed_structure: watermark variance reached the latent variance");

    const double gamma = std::sqrt((var_x - var_w) / var_x);
    LatentGrid y = LatentGrid::zeros_like(x_T);
    y.array() = w_s.array() + gamma * x_T.array();

    // the blend only hits var_x for uncorrelated w_s and x_T; rescale to hit
    // it exactly
    const double var_y = variance(y);
    if (!(var_y > 0.0)) throw DegenerateError("embed_structure: blended latent has zero variance");
    const double rho = std::sqrt(var_x / var_y);
    y.array() *= rho;
    return y;
}

LatentGrid embed_structure_vjp_w(const LatentGrid& x_T, const LatentGrid& w_s,
                                 const LatentGrid& upstream) {
    x_T.require_same_shape(w_s, "embed_structure_vjp_w");
    x_T.require_same_shape(upstream, "embed_structure_vjp_w");
    const double n = static_cast<double>(x_T.size());
    const double var_x = variance(x_T);
    const double var_w = variance(w_s);
    if (var_w >= var_x)
        throw DegenerateError("embed_structure_vjp_w: watermark variance reached the latent variance");
    const double gamma = std::sqrt((var_x - var_w) / var_x);

    LatentGrid y = LatentGrid::zeros_like(x_T);
    y.array() = w_s.array() + gamma * x_T.array();
    const double mean_y = y.array().mean();
    const double var_y = variance(y);
    if (!(var_y > 0.0))
        throw DegenerateError("embed_structure_vjp_w: blended latent has zero variance");
    const double rho = std::sqrt(var_x / var_y);

    // out = rho(var_y) y; back through the rescale first
    const double drho_dvary = -0.5 * rho / var_y;
    const double y_dot_g = (y.array() * upstream.array()).sum();
    LatentGrid gy = LatentGrid::zeros_like(x_T);
    gy.array() = rho * upstream.array() +
                 (2.0 * drho_dvary * y_dot_g / n) * (y.array() - mean_y);

    // then through y = w + gamma(var_w) x
    const double dgamma_dvarw = -0.5 / (gamma * var_x);
    const double x_dot_gy = (x_T.array() * gy.array()).sum();
    const double mean_w = w_s.array().mean();
    LatentGrid gw = std::move(gy);
    gw.array() += (2.0 * dgamma_dvarw * x_dot_gy / n) * (w_s.array() - mean_w);
    return gw;
}

WatermarkHooks make_hooks(const WatermarkPair& pair, const EmbedConfig& embed,
                          WatermarkMode mode) {
    WatermarkHooks hooks;
    hooks.pair = &pair;
    hooks.structure_on = mode != WatermarkMode::detail_only;
    hooks.detail_on = mode != WatermarkMode::structure_only && embed.t_detail > 0;
    hooks.t_detail = embed.t_detail;
    return hooks;
}

LatentGrid embed_detail(const LatentGrid& x_td, const LatentGrid& eps_hat, int t, int t_prev,
                        const LatentGrid& w_d, double sigma_td, const NoiseScheduleD& sched) {
    x_td.require_same_shape(w_d, "embed_detail");
    if (sigma_td < 0.0) throw ParamError("embed_detail: sigma_td must be nonnegative");
    if (t_prev < 0 || t_prev > t) throw ParamError("embed_detail needs t >= t_prev >= 0");
    const StepCoeffs c = step_coeffs(sched.alpha_bar(t), sched.alpha_bar(t_prev), sigma_td);
    LatentGrid out = combine_step(x_td, eps_hat, c);
    out.array() += w_d.array();
    return out;
}

}  // namespace latentmark

#include "latentmark/losses.hpp"

#include <cmath>

#include "latentmark/errors.hpp"

namespace latentmark {

double l_init(const LatentGrid& x_tw, const LatentGrid& x_t) {
    x_tw.require_same_shape(x_t, "l_init");
    const double d = x_tw.array().mean() - x_t.array().mean();
    return d * d;
}

LatentGrid l_init_grad_xw(const LatentGrid& x_tw, const LatentGrid& x_t) {
    x_tw.require_same_shape(x_t, "l_init_grad_xw");
    const double d = x_tw.array().mean() - x_t.array().mean();
    return LatentGrid::constant(x_tw.channels(), x_tw.height(), x_tw.width(),
                                2.0 * d / static_cast<double>(x_tw.size()));
}

namespace {

double low_term(const LatentGrid& w, const LatentGrid& w_init) {
    w.require_same_shape(w_init, "l_low");
    const double dm = w.array().mean() - w_init.array().mean();
    const double dv = variance(w) - variance(w_init);
    return dm * dm + dv * dv;
}

}  // namespace

double l_low(const LatentGrid& w_s, const LatentGrid& w_d, const LatentGrid& ws_init,
             const LatentGrid& wd_init) {
    return low_term(w_s, ws_init) + low_term(w_d, wd_init);
}

LatentGrid l_low_grad(const LatentGrid& w, const LatentGrid& w_init) {
    w.require_same_shape(w_init, "l_low_grad");
    const double n = static_cast<double>(w.size());
    const double m = w.array().mean();
    const double dm = m - w_init.array().mean();
    const double dv = variance(w) - variance(w_init);
    LatentGrid g = LatentGrid::zeros_like(w);
    g.array() = 2.0 * dm / n + (4.0 * dv / n) * (w.array() - m);
    return g;
}

double standardized_moment(const LatentGrid& g, int p) {
    const double m = g.array().mean();
    const double var = (g.array() - m).square().mean();
    if (!(var > 0.0)) throw DegenerateError("standardized moment of a constant grid");
    const double s = std::sqrt(var);
    return ((g.array() - m) / s).pow(p).mean();
}

namespace {

double high_term(const LatentGrid& w) {
    const double m3 = standardized_moment(w, 3);
    const double m4 = standardized_moment(w, 4);
    return (m4 - 3.0) * (m4 - 3.0) + m3 * m3;
}

// d/dx of (1/n) sum z^p with z = (x - mean)/std, biased std:
// (p/(n s)) (z^{p-1} - M_{p-1} - z M_p)
void add_moment_grad(LatentGrid& acc, const LatentGrid& w, int p, double coeff) {
    const double n = static_cast<double>(w.size());
    const double m = w.array().mean();
    const double var = (w.array() - m).square().mean();
    if (!(var > 0.0)) throw DegenerateError("moment gradient of a constant grid");
    const double s = std::sqrt(var);
    const Eigen::ArrayXd z = (w.array() - m) / s;
    const double mp = z.pow(p).mean();
    const double mpm1 = z.pow(p - 1).mean();
    acc.array() += (coeff * static_cast<double>(p) / (n * s)) * (z.pow(p - 1) - mpm1 - z * mp);
}

}  // namespace

double l_high(const LatentGrid& w_s, const LatentGrid& w_d) {
    return high_term(w_s) + high_term(w_d);
}

LatentGrid l_high_grad(const LatentGrid& w) {
    const double m3 = standardized_moment(w, 3);
    const double m4 = standardized_moment(w, 4);
    LatentGrid g = LatentGrid::zeros_like(w);
    add_moment_grad(g, w, 4, 2.0 * (m4 - 3.0));
    add_moment_grad(g, w, 3, 2.0 * m3);
    return g;
}

LossBreakdown total_loss(double msg, double init, double low, double high,
                         const LossWeights& weights) {
    if (msg < 0.0 || init < 0.0 || low < 0.0 || high < 0.0)
        throw ParamError("loss components must be nonnegative");
    if (weights.msg < 0.0 || weights.init < 0.0 || weights.low < 0.0 || weights.high < 0.0)
        throw ParamError("loss weights must be nonnegative");
    LossBreakdown b;
    b.msg = msg;
    b.init = init;
    b.low = low;
    b.high = high;
    b.total = weights.msg * msg + weights.init * init + weights.low * low + weights.high * high;
    return b;
}

}  // namespace latentmark

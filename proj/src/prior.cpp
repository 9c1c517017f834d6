#include "latentmark/prior.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace latentmark {

MixturePrior::MixturePrior(std::vector<MixtureComponent> components)
    : components_(std::move(components)) {
    if (components_.empty()) throw ParamError("mixture prior needs at least one component");
    double total = 0.0;
    for (const auto& c : components_) {
        if (!(c.weight > 0.0)) throw ParamError("mixture weights must be positive");
        if (!(c.sigma2 > 0.0)) throw ParamError("mixture sigma2 must be positive");
        components_.front().mean.require_same_shape(c.mean, "mixture component mean");
        total += c.weight;
    }
    for (auto& c : components_) c.weight /= total;
}

int MixturePrior::channels() const { return components_.front().mean.channels(); }
int MixturePrior::height() const { return components_.front().mean.height(); }
int MixturePrior::width() const { return components_.front().mean.width(); }

std::vector<int> MixturePrior::conditional_set(const std::string& label) const {
    std::vector<int> idx;
    for (int j = 0; j < static_cast<int>(components_.size()); ++j)
        if (components_[j].label == label) idx.push_back(j);
    if (idx.empty()) throw ConditionError("no mixture component labelled '" + label + "'");
    return idx;
}

LatentGrid MixturePrior::prior_mean() const {
    LatentGrid m = LatentGrid::zeros_like(components_.front().mean);
    for (const auto& c : components_) m.array() += c.weight * c.mean.array();
    return m;
}

LatentGrid MixturePrior::sample(Rng& rng) const {
    double u = rng.uniform();
    int pick = static_cast<int>(components_.size()) - 1;
    for (int j = 0; j < static_cast<int>(components_.size()); ++j) {
        u -= components_[j].weight;
        if (u < 0.0) {
            pick = j;
            break;
        }
    }
    const auto& c = components_[static_cast<std::size_t>(pick)];
    LatentGrid out = LatentGrid::gaussian(c.mean.channels(), c.mean.height(), c.mean.width(),
                                          rng, std::sqrt(c.sigma2));
    out.array() += c.mean.array();
    return out;
}

namespace {

// posterior over components given x at time t, restricted to `active`
struct Responsibilities {
    std::vector<int> idx;
    std::vector<double> r;
    std::vector<double> inv_s2;  // 1 / (abar sigma2 + 1 - abar), aligned with idx
    double sqrt_ab = 0.0;
    double one_minus_ab = 0.0;
};

Responsibilities responsibilities(const LatentGrid& x, int t, const MixturePrior& prior,
                                  const std::optional<std::string>& condition,
                                  const NoiseScheduleD& sched) {
    Responsibilities out;
    if (condition)
        out.idx = prior.conditional_set(*condition);
    else
        for (int j = 0; j < static_cast<int>(prior.components().size()); ++j) out.idx.push_back(j);

    const double ab = sched.alpha_bar(t);
    out.sqrt_ab = std::sqrt(ab);
    out.one_minus_ab = 1.0 - ab;
    const double dim = static_cast<double>(x.size());

    std::vector<double> logp(out.idx.size());
    out.inv_s2.resize(out.idx.size());
    double max_logp = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < out.idx.size(); ++k) {
        const auto& c = prior.components()[static_cast<std::size_t>(out.idx[k])];
        const double s2 = ab * c.sigma2 + (1.0 - ab);
        out.inv_s2[k] = 1.0 / s2;
        const double sq = (x.array() - out.sqrt_ab * c.mean.array()).square().sum();
        logp[k] = std::log(c.weight) - 0.5 * dim * std::log(s2) - 0.5 * sq / s2;
        max_logp = std::max(max_logp, logp[k]);
    }

    out.r.resize(out.idx.size());
    double z = 0.0;
    for (std::size_t k = 0; k < out.idx.size(); ++k) {
        out.r[k] = std::exp(logp[k] - max_logp);
        z += out.r[k];
    }
    for (auto& v : out.r) v /= z;
    return out;
}

// score = sum_j r_j (sqrt_ab mu_j - x) / s_j^2
void add_score(LatentGrid& acc, const Responsibilities& resp, const LatentGrid& x,
               const MixturePrior& prior, double coeff) {
    for (std::size_t k = 0; k < resp.idx.size(); ++k) {
        const auto& c = prior.components()[static_cast<std::size_t>(resp.idx[k])];
        acc.array() += (coeff * resp.r[k] * resp.inv_s2[k]) *
                       (resp.sqrt_ab * c.mean.array() - x.array());
    }
}

// H a with H = d score / d x; symmetric
void add_score_jacobian_product(LatentGrid& acc, const Responsibilities& resp,
                                const LatentGrid& x, const MixturePrior& prior,
                                const LatentGrid& a, double coeff) {
    LatentGrid score = LatentGrid::zeros_like(x);
    add_score(score, resp, x, prior, 1.0);

    double trace_coeff = 0.0;
    for (std::size_t k = 0; k < resp.idx.size(); ++k) {
        const auto& c = prior.components()[static_cast<std::size_t>(resp.idx[k])];
        const double dj_dot_a =
            resp.inv_s2[k] * ((resp.sqrt_ab * c.mean.array() - x.array()) * a.array()).sum();
        acc.array() += (coeff * resp.r[k] * dj_dot_a * resp.inv_s2[k]) *
                       (resp.sqrt_ab * c.mean.array() - x.array());
        trace_coeff += resp.r[k] * resp.inv_s2[k];
    }
    const double score_dot_a = (score.array() * a.array()).sum();
    acc.array() += coeff * (-score_dot_a * score.array() - trace_coeff * a.array());
}

}  // namespace

LatentGrid analytic_epsilon(const LatentGrid& x, int t, const MixturePrior& prior,
                            const std::optional<std::string>& condition,
                            const NoiseScheduleD& sched) {
    prior.components().front().mean.require_same_shape(x, "analytic_epsilon");
    const auto resp = responsibilities(x, t, prior, condition, sched);
    LatentGrid eps = LatentGrid::zeros_like(x);
    // eps_hat = -sqrt(1 - abar) * score
    add_score(eps, resp, x, prior, -std::sqrt(resp.one_minus_ab));
    return eps;
}

LatentGrid guided_epsilon(const LatentGrid& x, int t, const MixturePrior& prior,
                          const std::string& condition, double scale,
                          const NoiseScheduleD& sched) {
    LatentGrid eps_u = analytic_epsilon(x, t, prior, std::nullopt, sched);
    if (scale == 0.0) return eps_u;
    LatentGrid eps_c = analytic_epsilon(x, t, prior, condition, sched);
    eps_u.array() += scale * (eps_c.array() - eps_u.array());
    return eps_u;
}

LatentGrid epsilon_vjp(const LatentGrid& x, int t, const MixturePrior& prior,
                       const std::optional<std::string>& condition,
                       const NoiseScheduleD& sched, const LatentGrid& a) {
    x.require_same_shape(a, "epsilon_vjp");
    const auto resp = responsibilities(x, t, prior, condition, sched);
    LatentGrid out = LatentGrid::zeros_like(x);
    add_score_jacobian_product(out, resp, x, prior, a, -std::sqrt(resp.one_minus_ab));
    return out;
}

LatentGrid guided_epsilon_vjp(const LatentGrid& x, int t, const MixturePrior& prior,
                              const std::string& condition, double scale,
                              const NoiseScheduleD& sched, const LatentGrid& a) {
    LatentGrid vu = epsilon_vjp(x, t, prior, std::nullopt, sched, a);
    if (scale == 0.0) return vu;
    LatentGrid vc = epsilon_vjp(x, t, prior, condition, sched, a);
    vu.array() += scale * (vc.array() - vu.array());
    return vu;
}

}  // namespace latentmark

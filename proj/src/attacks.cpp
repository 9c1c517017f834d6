#include "latentmark/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace latentmark {

namespace {

double tap_clamped(const LatentGrid& g, int c, int y, int x) {
    y = std::clamp(y, 0, g.height() - 1);
    x = std::clamp(x, 0, g.width() - 1);
    return g(c, y, x);
}

double tap_zero(const LatentGrid& g, int c, int y, int x) {
    if (y < 0 || y >= g.height() || x < 0 || x >= g.width()) return 0.0;
    return g(c, y, x);
}

template <typename Tap>
double bilinear(const LatentGrid& g, int c, double sy, double sx, Tap tap) {
    const int y0 = static_cast<int>(std::floor(sy));
    const int x0 = static_cast<int>(std::floor(sx));
    const double fy = sy - y0;
    const double fx = sx - x0;
    return (1.0 - fy) * ((1.0 - fx) * tap(g, c, y0, x0) + fx * tap(g, c, y0, x0 + 1)) +
           fy * ((1.0 - fx) * tap(g, c, y0 + 1, x0) + fx * tap(g, c, y0 + 1, x0 + 1));
}

LatentGrid resample_bilinear(const LatentGrid& g, int out_h, int out_w) {
    LatentGrid out(g.channels(), out_h, out_w);
    const double ry = static_cast<double>(g.height()) / out_h;
    const double rx = static_cast<double>(g.width()) / out_w;
    for (int c = 0; c < g.channels(); ++c)
        for (int y = 0; y < out_h; ++y)
            for (int x = 0; x < out_w; ++x) {
                const double sy = (y + 0.5) * ry - 0.5;
                const double sx = (x + 0.5) * rx - 0.5;
                out(c, y, x) = bilinear(g, c, sy, sx, tap_clamped);
            }
    return out;
}

std::vector<double> blur_kernel(double sigma_px) {
    const int radius = std::max(1, static_cast<int>(std::ceil(3.0 * sigma_px)));
    std::vector<double> k(static_cast<std::size_t>(2 * radius + 1));
    double sum = 0.0;
    for (int i = -radius; i <= radius; ++i) {
        const double v = std::exp(-0.5 * (i * i) / (sigma_px * sigma_px));
        k[static_cast<std::size_t>(i + radius)] = v;
        sum += v;
    }
    for (auto& v : k) v /= sum;
    return k;
}

enum class BlurDir { gather, scatter };

// separable clamped convolution; scatter mode is the exact transpose of the
// gather mode, needed by the training-time blur gradient
LatentGrid blur_pass(const LatentGrid& g, double sigma_px, BlurDir dir) {
    if (!(sigma_px > 0.0)) throw ParamError("blur sigma must be positive");
    const auto k = blur_kernel(sigma_px);
    const int radius = (static_cast<int>(k.size()) - 1) / 2;

    LatentGrid mid(g.channels(), g.height(), g.width());
    for (int c = 0; c < g.channels(); ++c)
        for (int y = 0; y < g.height(); ++y)
            for (int x = 0; x < g.width(); ++x)
                for (int i = -radius; i <= radius; ++i) {
                    const double w = k[static_cast<std::size_t>(i + radius)];
                    if (dir == BlurDir::gather)
                        mid(c, y, x) += w * tap_clamped(g, c, y, x + i);
                    else
                        mid(c, y, std::clamp(x + i, 0, g.width() - 1)) += w * g(c, y, x);
                }

    LatentGrid out(g.channels(), g.height(), g.width());
    for (int c = 0; c < g.channels(); ++c)
        for (int y = 0; y < g.height(); ++y)
            for (int x = 0; x < g.width(); ++x)
                for (int i = -radius; i <= radius; ++i) {
                    const double w = k[static_cast<std::size_t>(i + radius)];
                    if (dir == BlurDir::gather)
                        out(c, y, x) += w * tap_clamped(mid, c, y + i, x);
                    else
                        out(c, std::clamp(y + i, 0, g.height() - 1), x) += w * mid(c, y, x);
                }
    return out;
}

}  // namespace

LatentGrid hflip_grid(const LatentGrid& g) {
    LatentGrid out(g.channels(), g.height(), g.width());
    for (int c = 0; c < g.channels(); ++c)
        for (int y = 0; y < g.height(); ++y)
            for (int x = 0; x < g.width(); ++x) out(c, y, x) = g(c, y, g.width() - 1 - x);
    return out;
}

LatentGrid rotate_grid(const LatentGrid& g, double degrees) {
    const double quarters = degrees / 90.0;
    if (g.height() == g.width() && std::abs(quarters - std::round(quarters)) < 1e-9) {
        int k = static_cast<int>(std::llround(quarters)) % 4;
        if (k < 0) k += 4;
        if (k == 0) return g;
        const int n = g.height();
        LatentGrid out(g.channels(), n, n);
        for (int c = 0; c < g.channels(); ++c)
            for (int y = 0; y < n; ++y)
                for (int x = 0; x < n; ++x) {
                    if (k == 1)
                        out(c, y, x) = g(c, n - 1 - x, y);
                    else if (k == 2)
                        out(c, y, x) = g(c, n - 1 - y, n - 1 - x);
                    else
                        out(c, y, x) = g(c, x, n - 1 - y);
                }
        return out;
    }

    const double rad = degrees * M_PI / 180.0;
    const double cs = std::cos(rad);
    const double sn = std::sin(rad);
    const double cy = 0.5 * (g.height() - 1);
    const double cx = 0.5 * (g.width() - 1);
    LatentGrid out(g.channels(), g.height(), g.width());
    for (int c = 0; c < g.channels(); ++c)
        for (int y = 0; y < g.height(); ++y)
            for (int x = 0; x < g.width(); ++x) {
                const double dy = y - cy;
                const double dx = x - cx;
                const double sy = cy - sn * dx + cs * dy;
                const double sx = cx + cs * dx + sn * dy;
                out(c, y, x) = bilinear(g, c, sy, sx, tap_zero);
            }
    return out;
}

LatentGrid resize_through(const LatentGrid& g, double scale) {
    if (!(scale > 0.0 && scale <= 1.0)) throw ParamError("resize scale must be in (0, 1]");
    if (scale == 1.0) return g;
    const int h2 = std::max(1, static_cast<int>(std::lround(g.height() * scale)));
    const int w2 = std::max(1, static_cast<int>(std::lround(g.width() * scale)));
    return resample_bilinear(resample_bilinear(g, h2, w2), g.height(), g.width());
}

LatentGrid center_crop_through(const LatentGrid& g, double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw ParamError("crop ratio must be in (0, 1]");
    if (ratio == 1.0) return g;
    const int h2 = std::max(1, static_cast<int>(std::lround(g.height() * ratio)));
    const int w2 = std::max(1, static_cast<int>(std::lround(g.width() * ratio)));
    const int oy = (g.height() - h2) / 2;
    const int ox = (g.width() - w2) / 2;
    LatentGrid crop(g.channels(), h2, w2);
    for (int c = 0; c < g.channels(); ++c)
        for (int y = 0; y < h2; ++y)
            for (int x = 0; x < w2; ++x) crop(c, y, x) = g(c, y + oy, x + ox);
    return resample_bilinear(crop, g.height(), g.width());
}

LatentGrid gaussian_blur_grid(const LatentGrid& g, double sigma_px) {
    return blur_pass(g, sigma_px, BlurDir::gather);
}

LatentGrid gaussian_blur_transpose(const LatentGrid& g, double sigma_px) {
    return blur_pass(g, sigma_px, BlurDir::scatter);
}

LatentGrid brightness_grid(const LatentGrid& g, double factor) {
    if (factor < 0.0) throw ParamError("brightness factor must be nonnegative");
    LatentGrid out = LatentGrid::zeros_like(g);
    out.array() = factor * g.array();
    return out;
}

LatentGrid contrast_grid(const LatentGrid& g, double factor) {
    if (factor < 0.0) throw ParamError("contrast factor must be nonnegative");
    const double m = g.array().mean();
    LatentGrid out = LatentGrid::zeros_like(g);
    out.array() = m + factor * (g.array() - m);
    return out;
}

LatentGrid saturation_grid(const LatentGrid& g, double factor) {
    if (g.channels() != 3) throw ParamError("saturation needs a 3-channel grid");
    if (factor < 0.0) throw ParamError("saturation factor must be nonnegative");
    LatentGrid out(g.channels(), g.height(), g.width());
    for (int y = 0; y < g.height(); ++y)
        for (int x = 0; x < g.width(); ++x) {
            const double gray = (g(0, y, x) + g(1, y, x) + g(2, y, x)) / 3.0;
            for (int c = 0; c < 3; ++c) out(c, y, x) = gray + factor * (g(c, y, x) - gray);
        }
    return out;
}

LatentGrid quantize_grid(const LatentGrid& g, int bits) {
    if (bits < 1 || bits > 16) throw ParamError("quantize bits must be in [1, 16]");
    const double lo = g.array().minCoeff();
    const double hi = g.array().maxCoeff();
    if (hi <= lo) return g;
    const double levels = static_cast<double>((1 << bits) - 1);
    LatentGrid out = LatentGrid::zeros_like(g);
    out.array() = ((g.array() - lo) / (hi - lo) * levels).round() / levels * (hi - lo) + lo;
    return out;
}

LatentGrid random_erase_grid(const LatentGrid& g, double area_ratio, std::uint64_t seed) {
    if (!(area_ratio >= 0.0 && area_ratio <= 1.0))
        throw ParamError("erase area ratio must be in [0, 1]");
    if (area_ratio == 0.0) return g;
    const double side = std::sqrt(area_ratio);
    const int eh = std::max(1, static_cast<int>(std::lround(g.height() * side)));
    const int ew = std::max(1, static_cast<int>(std::lround(g.width() * side)));
    Rng rng(derive_seed(seed, {0xe2a5e}));
    const int oy = static_cast<int>(rng.below(static_cast<std::uint64_t>(g.height() - eh + 1)));
    const int ox = static_cast<int>(rng.below(static_cast<std::uint64_t>(g.width() - ew + 1)));
    LatentGrid out = g;
    for (int c = 0; c < g.channels(); ++c)
        for (int y = oy; y < oy + eh; ++y)
            for (int x = ox; x < ox + ew; ++x) out(c, y, x) = 0.0;
    return out;
}

LatentGrid additive_noise_grid(const LatentGrid& g, double sigma, std::uint64_t seed) {
    if (sigma < 0.0) throw ParamError("noise sigma must be nonnegative");
    Rng rng(derive_seed(seed, {0x4015e}));
    LatentGrid out = g;
    for (Eigen::Index i = 0; i < out.size(); ++i) out.array()[i] += sigma * rng.gaussian();
    return out;
}

LatentGrid regenerate(const LatentGrid& image, int t_a, const MixturePrior& prior,
                      const NoiseScheduleD& sched, const SamplerConfig& base,
                      std::uint64_t seed) {
    if (t_a < 0 || base.timesteps.empty() || t_a > base.timesteps.front())
        throw ParamError("regenerate strength must lie within the sampling grid");
    if (t_a == 0) return image;

    Rng rng(derive_seed(seed, {0x2e6e4}));
    LatentGrid noise = LatentGrid::gaussian(image.channels(), image.height(), image.width(), rng);
    LatentGrid x = forward_noise(image, t_a, noise, sched);

    SamplerConfig sub;
    sub.guidance_scale = 0.0;
    sub.condition.reset();
    for (int t : base.timesteps)
        if (t <= t_a) sub.timesteps.push_back(t);
    if (sub.timesteps.empty()) return image;  // below the lowest grid point, nothing to re-run
    return sample(x, sub, prior, sched, nullptr, false).x0;
}

double AttackSpec::param(const std::string& name, double fallback) const {
    auto it = params.find(name);
    return it == params.end() ? fallback : it->second;
}

std::string AttackSpec::label() const {
    if (params.empty()) return kind;
    std::ostringstream os;
    os << kind << '(';
    bool first = true;
    for (const auto& [k, v] : params) {
        if (!first) os << ',';
        first = false;
        os << k << '=' << v;
    }
    os << ')';
    return os.str();
}

LatentGrid apply_attack(const LatentGrid& image, const AttackSpec& spec,
                        const AttackContext& ctx) {
    const std::string& k = spec.kind;
    if (k == "none") return image;
    if (k == "hflip") return hflip_grid(image);
    if (k == "rotate") return rotate_grid(image, spec.param("degrees", 40.0));
    if (k == "resize") return resize_through(image, spec.param("scale", 0.6));
    if (k == "center_crop") return center_crop_through(image, spec.param("ratio", 0.6));
    if (k == "gaussian_blur")
        return gaussian_blur_grid(image, spec.param("sigma_frac", kBlurSigmaFrac) * image.width());
    if (k == "brightness") return brightness_grid(image, spec.param("factor", 0.5));
    if (k == "contrast") return contrast_grid(image, spec.param("factor", 0.5));
    if (k == "saturation") return saturation_grid(image, spec.param("factor", 0.5));
    if (k == "quantize") return quantize_grid(image, static_cast<int>(spec.param("bits", 6)));
    if (k == "random_erase")
        return random_erase_grid(image, spec.param("area", 0.1), spec.seed);
    if (k == "additive_noise")
        return additive_noise_grid(image, spec.param("sigma", 0.1), spec.seed);
    if (k == "regenerate") {
        if (!ctx.prior || !ctx.sched)
            throw ConfigError("regenerate attack needs a prior and schedule in the context");
        return regenerate(image, static_cast<int>(spec.param("t_a", 451.0)), *ctx.prior,
                          *ctx.sched, ctx.sampler, spec.seed);
    }
    throw ParamError("unknown attack kind '" + k + "'");
}

}  // namespace latentmark

#include <doctest.h>

#include <cmath>

#include "latentmark/attacks.hpp"

using namespace latentmark;

namespace {

double max_abs_diff(const LatentGrid& a, const LatentGrid& b) {
    return (a.array() - b.array()).abs().maxCoeff();
}

MixturePrior tiny_prior(int c, int h, int w) {
    MixtureComponent up, down;
    up.weight = 0.5;
    up.mean = LatentGrid::constant(c, h, w, 1.5);
    up.sigma2 = 2.0;
    up.label = "up";
    down.weight = 0.5;
    down.mean = LatentGrid::constant(c, h, w, -1.5);
    down.sigma2 = 2.0;
    down.label = "down";
    return MixturePrior({up, down});
}

AttackContext make_ctx(const MixturePrior& prior, const NoiseScheduleD& sched) {
    AttackContext ctx;
    ctx.prior = &prior;
    ctx.sched = &sched;
    ctx.sampler.timesteps = make_timestep_grid(1000, 10);
    return ctx;
}

// smooth bump away from the borders so interpolation losses stay small
LatentGrid center_blob(int n) {
    LatentGrid g(1, n, n);
    const double c = (n - 1) / 2.0;
    for (int y = 0; y < n; ++y)
        for (int x = 0; x < n; ++x) {
            const double r2 = (y - c) * (y - c) + (x - c) * (x - c);
            g(0, y, x) = std::exp(-r2 / (0.08 * n * n));
        }
    return g;
}

}  // namespace

TEST_CASE("horizontal flip is an involution") {
    LatentGrid g(1, 2, 3);
    double v = 0.0;
    for (int y = 0; y < 2; ++y)
        for (int x = 0; x < 3; ++x) g(0, y, x) = v += 1.0;

    const LatentGrid f = hflip_grid(g);
    CHECK(f(0, 0, 0) == 3.0);
    CHECK(f(0, 0, 1) == 2.0);
    CHECK(f(0, 0, 2) == 1.0);
    CHECK(f(0, 1, 0) == 6.0);
    CHECK(max_abs_diff(hflip_grid(f), g) == 0.0);
}

TEST_CASE("square rotations by right angles are exact") {
    Rng rng(501);
    const LatentGrid g = LatentGrid::gaussian(1, 6, 6, rng);
    LatentGrid spun = g;
    for (int i = 0; i < 4; ++i) spun = rotate_grid(spun, 90.0);
    CHECK(max_abs_diff(spun, g) == 0.0);
    CHECK(max_abs_diff(rotate_grid(rotate_grid(g, 90.0), -90.0), g) == 0.0);
    CHECK(max_abs_diff(rotate_grid(g, 0.0), g) == 0.0);
}

TEST_CASE("oblique rotation roughly inverts on a centered blob") {
    const LatentGrid g = center_blob(16);
    const LatentGrid back = rotate_grid(rotate_grid(g, 40.0), -40.0);
    CHECK(rms_diff(back, g) < 0.1);
    CHECK(back.array().isFinite().all());
}

TEST_CASE("value maps at unit factor are identities") {
    Rng rng(503);
    const LatentGrid g = LatentGrid::gaussian(1, 5, 5, rng);
    CHECK(max_abs_diff(brightness_grid(g, 1.0), g) == 0.0);
    CHECK(max_abs_diff(contrast_grid(g, 1.0), g) < 1e-14);
    CHECK(max_abs_diff(resize_through(g, 1.0), g) == 0.0);
    CHECK(max_abs_diff(center_crop_through(g, 1.0), g) == 0.0);
    CHECK_THROWS_AS(resize_through(g, 0.0), ParamError);
    CHECK_THROWS_AS(resize_through(g, 1.5), ParamError);
    CHECK_THROWS_AS(center_crop_through(g, -0.1), ParamError);
}

TEST_CASE("brightness scales and contrast pivots on the mean") {
    Rng rng(505);
    const LatentGrid g = LatentGrid::gaussian(1, 4, 4, rng);
    const LatentGrid bright = brightness_grid(g, 0.5);
    CHECK(max_abs_diff(bright, g) > 0.0);
    CHECK((bright.array() - 0.5 * g.array()).abs().maxCoeff() < 1e-14);

    const LatentGrid dim = contrast_grid(g, 0.5);
    CHECK(mean(dim) == doctest::Approx(mean(g)).epsilon(1e-10));
    CHECK(variance(dim) == doctest::Approx(0.25 * variance(g)).epsilon(1e-10));
}

TEST_CASE("saturation needs three channels") {
    Rng rng(507);
    const LatentGrid rgb = LatentGrid::gaussian(3, 4, 4, rng);
    CHECK(max_abs_diff(saturation_grid(rgb, 1.0), rgb) < 1e-14);
    const LatentGrid gray = saturation_grid(rgb, 0.0);
    // fully desaturated: all channels carry the channel mean
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) {
            const double m = (rgb(0, y, x) + rgb(1, y, x) + rgb(2, y, x)) / 3.0;
            for (int c = 0; c < 3; ++c)
                CHECK(gray(c, y, x) == doctest::Approx(m).epsilon(1e-12));
        }
    const LatentGrid mono = LatentGrid::gaussian(1, 4, 4, rng);
    CHECK_THROWS_AS(saturation_grid(mono, 0.5), ParamError);
}

TEST_CASE("quantization is idempotent and range preserving") {
    Rng rng(509);
    const LatentGrid g = LatentGrid::gaussian(1, 6, 6, rng);
    const LatentGrid q = quantize_grid(g, 6);
    CHECK(max_abs_diff(quantize_grid(q, 6), q) < 1e-12);
    CHECK(q.array().minCoeff() == doctest::Approx(g.array().minCoeff()).epsilon(1e-12));
    CHECK(q.array().maxCoeff() == doctest::Approx(g.array().maxCoeff()).epsilon(1e-12));
    // distortion bounded by one lattice cell
    const double cell = (g.array().maxCoeff() - g.array().minCoeff()) / 63.0;
    CHECK(max_abs_diff(q, g) <= cell);
    CHECK_THROWS_AS(quantize_grid(g, 0), ParamError);
    CHECK_THROWS_AS(quantize_grid(g, 17), ParamError);
    const LatentGrid flat = LatentGrid::constant(1, 3, 3, 2.0);
    CHECK(max_abs_diff(quantize_grid(flat, 4), flat) == 0.0);
}

TEST_CASE("random erase blanks one deterministic rectangle") {
    Rng rng(511);
    const LatentGrid g = LatentGrid::gaussian(1, 8, 8, rng);
    const LatentGrid a = random_erase_grid(g, 0.1, 77);
    const LatentGrid b = random_erase_grid(g, 0.1, 77);
    CHECK(max_abs_diff(a, b) == 0.0);
    CHECK(max_abs_diff(random_erase_grid(g, 0.0, 77), g) == 0.0);

    int changed = 0;
    for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
            if (a(0, y, x) != g(0, y, x)) {
                ++changed;
                CHECK(a(0, y, x) == 0.0);
            }
    CHECK(changed >= 4);  // a 10% patch of 64 cells, rounded as a square
    CHECK(changed <= 10);
    CHECK_THROWS_AS(random_erase_grid(g, 1.5, 77), ParamError);
}

TEST_CASE("additive noise has the requested scale") {
    const LatentGrid g = LatentGrid::constant(1, 40, 40, 1.0);
    const LatentGrid a = additive_noise_grid(g, 0.1, 99);
    const LatentGrid b = additive_noise_grid(g, 0.1, 99);
    CHECK(max_abs_diff(a, b) == 0.0);
    const double rms = rms_diff(a, g);
    CHECK(rms > 0.08);
    CHECK(rms < 0.12);
    CHECK(max_abs_diff(additive_noise_grid(g, 0.0, 99), g) == 0.0);
}

TEST_CASE("blur preserves constants and the desk width is a spatial no-op") {
    const LatentGrid flat = LatentGrid::constant(1, 8, 8, 3.0);
    CHECK(max_abs_diff(gaussian_blur_grid(flat, 1.3), flat) < 1e-12);

    Rng rng(513);
    const LatentGrid g = LatentGrid::gaussian(1, 8, 8, rng);
    // 11/512 of an 8 wide grid is far below one pixel, so the kernel is
    // a near delta and the image passes through at working precision
    CHECK(max_abs_diff(gaussian_blur_grid(g, kBlurSigmaFrac * 8.0), g) < 1e-6);
    CHECK(max_abs_diff(gaussian_blur_grid(g, 1.0), g) > 1e-2);
}

TEST_CASE("blur transpose is the adjoint of blur") {
    Rng rng(515);
    const LatentGrid u = LatentGrid::gaussian(1, 7, 7, rng);
    const LatentGrid v = LatentGrid::gaussian(1, 7, 7, rng);
    const double lhs = dot(gaussian_blur_grid(u, 1.1), v);
    const double rhs = dot(u, gaussian_blur_transpose(v, 1.1));
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("regeneration is gated by the attack strength") {
    const NoiseScheduleD sched = build_schedule<double>(1000, 1e-4, 2e-2);
    const MixturePrior prior = tiny_prior(1, 6, 6);
    SamplerConfig base;
    base.timesteps = make_timestep_grid(1000, 10);

    Rng rng(517);
    const LatentGrid img = LatentGrid::gaussian(1, 6, 6, rng);
    CHECK(max_abs_diff(regenerate(img, 0, prior, sched, base, 5), img) == 0.0);
    CHECK_THROWS_AS(regenerate(img, -3, prior, sched, base, 5), ParamError);
    CHECK_THROWS_AS(regenerate(img, 1000, prior, sched, base, 5), ParamError);

    // stronger re-noising should destroy more, on average over draws
    double weak = 0.0, strong = 0.0;
    for (std::uint64_t s = 0; s < 8; ++s) {
        weak += rms_diff(regenerate(img, 101, prior, sched, base, s), img) / 8.0;
        strong += rms_diff(regenerate(img, 701, prior, sched, base, s), img) / 8.0;
    }
    CHECK(weak < strong);
}

TEST_CASE("attack dispatch covers every advertised kind") {
    const NoiseScheduleD sched = build_schedule<double>(1000, 1e-4, 2e-2);
    const MixturePrior prior = tiny_prior(1, 8, 8);
    const AttackContext ctx = make_ctx(prior, sched);
    Rng rng(519);
    const LatentGrid g = LatentGrid::gaussian(1, 8, 8, rng);

    const std::vector<AttackSpec> specs = {
        {"none", {}, 0},
        {"hflip", {}, 0},
        {"rotate", {{"degrees", 40.0}}, 0},
        {"resize", {{"scale", 0.6}}, 0},
        {"center_crop", {{"ratio", 0.6}}, 0},
        {"gaussian_blur", {{"sigma_frac", 0.15}}, 0},
        {"brightness", {{"factor", 0.5}}, 0},
        {"contrast", {{"factor", 0.5}}, 0},
        {"quantize", {{"bits", 6.0}}, 0},
        {"random_erase", {{"area", 0.1}}, 21},
        {"additive_noise", {{"sigma", 0.1}}, 21},
        {"regenerate", {{"t_a", 301.0}}, 21},
    };
    for (const AttackSpec& spec : specs) {
        const LatentGrid out = apply_attack(g, spec, ctx);
        CHECK(out.same_shape(g));
        CHECK(out.array().isFinite().all());
    }

    AttackSpec unknown;
    unknown.kind = "melt";
    CHECK_THROWS_AS(apply_attack(g, unknown, ctx), ParamError);
}

TEST_CASE("attack dispatch routes the documented parameters") {
    const NoiseScheduleD sched = build_schedule<double>(1000, 1e-4, 2e-2);
    const MixturePrior prior = tiny_prior(1, 8, 8);
    const AttackContext ctx = make_ctx(prior, sched);
    Rng rng(521);
    const LatentGrid g = LatentGrid::gaussian(1, 8, 8, rng);

    AttackSpec spec;
    spec.kind = "none";
    CHECK(max_abs_diff(apply_attack(g, spec, ctx), g) == 0.0);

    spec.kind = "hflip";
    CHECK(max_abs_diff(apply_attack(g, spec, ctx), hflip_grid(g)) == 0.0);

    spec.kind = "rotate";
    spec.params = {{"degrees", 90.0}};
    CHECK(max_abs_diff(apply_attack(g, spec, ctx), rotate_grid(g, 90.0)) == 0.0);

    spec.kind = "brightness";
    spec.params = {{"factor", 0.25}};
    CHECK(max_abs_diff(apply_attack(g, spec, ctx), brightness_grid(g, 0.25)) == 0.0);

    spec.kind = "quantize";
    spec.params = {{"bits", 4.0}};
    CHECK(max_abs_diff(apply_attack(g, spec, ctx), quantize_grid(g, 4)) == 0.0);

    spec.kind = "random_erase";
    spec.params = {{"area", 0.1}};
    spec.seed = 33;
    const LatentGrid erased = apply_attack(g, spec, ctx);
    CHECK(max_abs_diff(erased, apply_attack(g, spec, ctx)) == 0.0);

    // regeneration needs the sampling context
    spec.kind = "regenerate";
    spec.params = {{"t_a", 301.0}};
    AttackContext bare;
    CHECK_THROWS_AS(apply_attack(g, spec, bare), ConfigError);
}

TEST_CASE("attack labels fold in the parameters") {
    AttackSpec spec;
    spec.kind = "resize";
    spec.params = {{"scale", 0.6}};
    const std::string label = spec.label();
    CHECK(label.find("resize") != std::string::npos);
    CHECK(label.find("0.6") != std::string::npos);
    AttackSpec plain;
    plain.kind = "hflip";
    CHECK(plain.label() == "hflip");
}

#include <doctest.h>

#include "latentmark/sampler.hpp"
#include "latentmark/watermark.hpp"

using namespace latentmark;

namespace {

MixtureComponent comp(double weight, double value, double sigma2, const char* label = "") {
    MixtureComponent c;
    c.weight = weight;
    c.mean = LatentGrid::constant(1, 4, 4, value);
    c.sigma2 = sigma2;
    c.label = label;
    return c;
}

}  // namespace

TEST_CASE("timestep grid hits the documented lattice") {
    const auto g20 = make_timestep_grid(1000, 20);
    REQUIRE(g20.size() == 20);
    CHECK(g20.front() == 951);
    CHECK(g20.back() == 1);
    CHECK(g20[1] == 901);
    bool has_251 = false;
    for (std::size_t i = 0; i < g20.size(); ++i) {
        if (g20[i] == 251) has_251 = true;
        if (i > 0) CHECK(g20[i] < g20[i - 1]);
    }
    CHECK(has_251);

    const auto g10 = make_timestep_grid(1000, 10);
    REQUIRE(g10.size() == 10);
    CHECK(g10.front() == 901);
    CHECK(g10.back() == 1);
}

TEST_CASE("ddim step with equal alpha bars is the identity") {
    // hand built schedule so two steps share an alpha bar
    NoiseScheduleD s;
    s.total_steps = 2;
    s.betas = {0.1, 0.0};
    s.alpha_bars = {1.0, 0.9, 0.9};
    Rng rng(7);
    const LatentGrid x = LatentGrid::gaussian(1, 4, 4, rng);
    const LatentGrid eps = LatentGrid::gaussian(1, 4, 4, rng);
    const LatentGrid out = ddim_step(x, eps, 2, 1, 0.0, nullptr, s);
    CHECK((out.array() == x.array()).all());
}

TEST_CASE("ddim step with zero epsilon rescales x") {
    const auto s = build_schedule<double>(1000, 1e-4, 2e-2);
    Rng rng(9);
    const LatentGrid x = LatentGrid::gaussian(1, 4, 4, rng);
    const LatentGrid eps = LatentGrid::constant(1, 4, 4, 0.0);
    const LatentGrid out = ddim_step(x, eps, 501, 451, 0.0, nullptr, s);
    const double c = std::sqrt(s.alpha_bar(451) / s.alpha_bar(501));
    CHECK((out.array() - c * x.array()).abs().maxCoeff() < 1e-14);
}

TEST_CASE("ddim step matches the term by term oracle") {
    const auto s = build_schedule<double>(1000, 1e-4, 2e-2);
    Rng rng(13);
    const LatentGrid x = LatentGrid::gaussian(1, 4, 4, rng);
    const LatentGrid eps = LatentGrid::gaussian(1, 4, 4, rng);
    const LatentGrid noise = LatentGrid::gaussian(1, 4, 4, rng);
    const int t = 501, tp = 451;
    const double sigma = 0.1;
    const double abt = s.alpha_bar(t), abp = s.alpha_bar(tp);

    const LatentGrid out = ddim_step(x, eps, t, tp, sigma, &noise, s);
    for (int y = 0; y < 4; ++y)
        for (int z = 0; z < 4; ++z) {
            const double pred = (x(0, y, z) - std::sqrt(1.0 - abt) * eps(0, y, z)) / std::sqrt(abt);
            const double want = std::sqrt(abp) * pred +
                                std::sqrt(1.0 - abp - sigma * sigma) * eps(0, y, z) +
                                sigma * noise(0, y, z);
            CHECK(out(0, y, z) == doctest::Approx(want).epsilon(1e-12));
        }
}

TEST_CASE("ddim step rejects a negative radicand") {
    const auto s = build_schedule<double>(1000, 1e-4, 2e-2);
    const LatentGrid x = LatentGrid::constant(1, 4, 4, 0.0);
    const LatentGrid noise = x;
    // 1 - abar_1 is about 1e-4, far below sigma^2 = 0.04
    CHECK_THROWS_AS(ddim_step(x, x, 51, 1, 0.2, &noise, s), ScheduleError);
}

TEST_CASE("step coeffs compose the same floats as the full step") {
    const auto s = build_schedule<double>(1000, 1e-4, 2e-2);
    Rng rng(15);
    const LatentGrid x = LatentGrid::gaussian(1, 4, 4, rng);
    const LatentGrid eps = LatentGrid::gaussian(1, 4, 4, rng);
    const StepCoeffs c = step_coeffs(s.alpha_bar(501), s.alpha_bar(451), 0.0);
    const LatentGrid a = combine_step(x, eps, c);
    const LatentGrid b = ddim_step(x, eps, 501, 451, 0.0, nullptr, s);
    CHECK((a.array() == b.array()).all());
}

TEST_CASE("sampler config validation") {
    const auto sched = build_schedule<double>(1000, 1e-4, 2e-2);
    SamplerConfig cfg;
    CHECK_THROWS_AS(cfg.validate(sched), ConfigError);
    cfg.timesteps = {500, 500};
    CHECK_THROWS_AS(cfg.validate(sched), ConfigError);
    cfg.timesteps = {1001};
    CHECK_THROWS_AS(cfg.validate(sched), ConfigError);
    cfg.timesteps = make_timestep_grid(1000, 20);
    cfg.validate(sched);
}

TEST_CASE("sampling is bit deterministic") {
    const auto sched = build_schedule<double>(1000, 1e-4, 2e-2);
    MixturePrior p({comp(1.0, -0.5, 0.5), comp(1.0, 0.5, 1.0)});
    SamplerConfig cfg;
    cfg.timesteps = make_timestep_grid(1000, 20);
    Rng rng(21);
    const LatentGrid x_T = LatentGrid::gaussian(1, 4, 4, rng);
    const LatentGrid a = sample(x_T, cfg, p, sched).x0;
    const LatentGrid b = sample(x_T, cfg, p, sched).x0;
    CHECK((a.array() == b.array()).all());
}

TEST_CASE("one step sampling collapses onto a tight component") {
    const auto sched = build_schedule<double>(1000, 1e-4, 2e-2);
    MixturePrior p({comp(1.0, 0.6, 1e-12)});
    SamplerConfig cfg;
    cfg.timesteps = {1000};
    Rng rng(23);
    const LatentGrid x_T = LatentGrid::gaussian(1, 4, 4, rng);
    const LatentGrid x0 = sample(x_T, cfg, p, sched).x0;
    CHECK((x0.array() - 0.6).abs().maxCoeff() < 1e-6);
}

TEST_CASE("zero watermarks reproduce the plain sample") {
    const auto sched = build_schedule<double>(1000, 1e-4, 2e-2);
    MixturePrior p({comp(1.0, -0.5, 0.5), comp(1.0, 0.5, 1.0)});
    SamplerConfig cfg;
    cfg.timesteps = make_timestep_grid(1000, 20);
    Rng rng(25);
    const LatentGrid x_T = LatentGrid::gaussian(1, 4, 4, rng);

    WatermarkPair pair;
    pair.w_s = LatentGrid::constant(1, 4, 4, 0.0);
    pair.w_d = LatentGrid::constant(1, 4, 4, 0.0);
    EmbedConfig embed;
    embed.t_detail = 251;
    WatermarkHooks hooks = make_hooks(pair, embed, WatermarkMode::dual);
    hooks.sigma_td_override = 0.0;  // align the sigma coefficient with the plain step

    const LatentGrid plain = sample(x_T, cfg, p, sched).x0;
    const LatentGrid hooked = sample(x_T, cfg, p, sched, &hooks).x0;
    CHECK((plain.array() == hooked.array()).all());
}

TEST_CASE("detail hook off the grid is rejected") {
    const auto sched = build_schedule<double>(1000, 1e-4, 2e-2);
    MixturePrior p({comp(1.0, 0.0, 1.0)});
    SamplerConfig cfg;
    cfg.timesteps = make_timestep_grid(1000, 20);
    Rng rng(27);
    const LatentGrid x_T = LatentGrid::gaussian(1, 4, 4, rng);
    WatermarkPair pair;
    pair.w_s = LatentGrid::constant(1, 4, 4, 0.0);
    pair.w_d = LatentGrid::constant(1, 4, 4, 0.0);
    EmbedConfig embed;
    embed.t_detail = 500;
    WatermarkHooks hooks = make_hooks(pair, embed, WatermarkMode::dual);
    CHECK_THROWS_AS(sample(x_T, cfg, p, sched, &hooks), ConfigError);
}

TEST_CASE("recorded trajectories carry every state") {
    const auto sched = build_schedule<double>(1000, 1e-4, 2e-2);
    MixturePrior p({comp(1.0, -0.5, 0.5), comp(1.0, 0.5, 1.0)});
    SamplerConfig cfg;
    cfg.timesteps = make_timestep_grid(1000, 20);
    Rng rng(33);
    const LatentGrid x_T = LatentGrid::gaussian(1, 4, 4, rng);
    const SampleResult res = sample(x_T, cfg, p, sched, nullptr, true);
    REQUIRE(res.trajectory.has_value());
    const Trajectory& tr = *res.trajectory;
    CHECK(tr.timesteps.size() == 20);
    CHECK(tr.states.size() == 21);
    CHECK(tr.eps_hats.size() == 20);
    CHECK((tr.states.front().array() == x_T.array()).all());
    CHECK((tr.states.back().array() == res.x0.array()).all());
}

TEST_CASE("guidance profile decays for separated components") {
    const auto sched = build_schedule<double>(1000, 1e-4, 2e-2);
    MixturePrior p({comp(1.0, -4.0, 0.25, "a"), comp(1.0, 4.0, 0.25, "b")});
    SamplerConfig cfg;
    cfg.timesteps = make_timestep_grid(1000, 20);
    cfg.condition = "a";
    cfg.guidance_scale = 3.0;
    Rng rng(35);
    const LatentGrid x_T = LatentGrid::gaussian(1, 4, 4, rng);
    const SampleResult res = sample(x_T, cfg, p, sched, nullptr, true);
    const auto prof = guidance_profile(*res.trajectory, 3.0, p, sched);
    REQUIRE(prof.size() == 20);

    double first = 0.0, last = 0.0;
    for (int i = 0; i < 8; ++i) first += prof[i].second / 8.0;
    for (int i = 12; i < 20; ++i) last += prof[i].second / 8.0;
    CHECK(last < first);

    // single component or zero scale means no guidance at all
    MixturePrior single({comp(1.0, 0.3, 1.0, "a")});
    SamplerConfig scfg = cfg;
    const SampleResult sres = sample(x_T, scfg, single, sched, nullptr, true);
    for (const auto& [t, mag] : guidance_profile(*sres.trajectory, 3.0, single, sched))
        CHECK(mag == doctest::Approx(0.0).epsilon(1e-15));
    for (const auto& [t, mag] : guidance_profile(*res.trajectory, 0.0, p, sched))
        CHECK(mag == 0.0);

    SamplerConfig ucfg;
    ucfg.timesteps = make_timestep_grid(1000, 20);
    const SampleResult ures = sample(x_T, ucfg, p, sched, nullptr, true);
    CHECK_THROWS_AS(guidance_profile(*ures.trajectory, 3.0, p, sched), ConditionError);
}

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "latentmark/optimizer.hpp"

using namespace latentmark;

namespace {

// one self-contained small instance shared by every case
struct Bench {
    NoiseScheduleD sched = build_schedule<double>(1000, 1e-4, 2e-2);
    MixturePrior prior;
    FeatureExtractor extractor;
    CarrierSet carriers;
    OptimizeSetup setup;

    Bench() : prior(make_components()), extractor(build_extractor(1, 4, 4, 24, 12, 401)) {
        Rng rng(403);
        Eigen::MatrixXd corpus(96, 12);
        for (int i = 0; i < 96; ++i)
            corpus.row(i) = extract(LatentGrid::gaussian(1, 4, 4, rng), extractor);
        carriers = whiten_carriers(corpus, 4, 405);

        setup.prior = &prior;
        setup.sched = &sched;
        setup.sampler.timesteps = make_timestep_grid(1000, 5);  // {801 ... 1}
        setup.embed.t_detail = 401;
        setup.extractor = &extractor;
        setup.carriers = &carriers;
        setup.transforms = {TrainTransform{}};  // identity
        setup.iterations = 10;
        setup.run_seed = 11;
    }

    static std::vector<MixtureComponent> make_components() {
        MixtureComponent up, down;
        up.weight = 0.5;
        up.mean = LatentGrid::constant(1, 4, 4, 1.5);
        up.sigma2 = 2.0;
        up.label = "up";
        down.weight = 0.5;
        down.mean = LatentGrid::constant(1, 4, 4, -1.5);
        down.sigma2 = 2.0;
        down.label = "down";
        return {up, down};
    }
};

Message fixed_message() {
    Message m;
    m.bits = {1, -1, -1, 1};
    return m;
}

}  // namespace

TEST_CASE("setup validation rejects missing pieces") {
    Bench b;
    OptimizeSetup broken = b.setup;
    broken.carriers = nullptr;
    CHECK_THROWS_AS(broken.validate(), ConfigError);
    broken = b.setup;
    broken.lr = 0.0;
    CHECK_THROWS_AS(broken.validate(), ParamError);
    broken = b.setup;
    broken.iterations = -1;
    CHECK_THROWS_AS(broken.validate(), ParamError);
    broken = b.setup;
    broken.margin = -0.5;
    CHECK_THROWS_AS(broken.validate(), ParamError);
    b.setup.validate();
}

TEST_CASE("transform names are stable") {
    const std::vector<std::pair<TrainTransform::Kind, std::string>> want = {
        {TrainTransform::Kind::identity, "identity"},
        {TrainTransform::Kind::hflip, "hflip"},
        {TrainTransform::Kind::brightness, "brightness"},
        {TrainTransform::Kind::contrast, "contrast"},
        {TrainTransform::Kind::gaussian_blur, "gaussian_blur"},
        {TrainTransform::Kind::additive_noise, "additive_noise"},
        {TrainTransform::Kind::regenerate, "regenerate"},
    };
    for (const auto& [kind, name] : want) {
        TrainTransform t;
        t.kind = kind;
        CHECK(t.name() == name);
    }
}

TEST_CASE("objective gradient matches finite differences") {
    Bench b;
    Rng rng(407);
    const LatentGrid x_T = LatentGrid::gaussian(1, 4, 4, rng);
    const WatermarkPair init = init_watermarks(1, 4, 4, 0.01, 409);
    const Message m = fixed_message();
    const std::uint64_t iter_seed = 3;

    const GradResult ref =
        objective_gradient(x_T, m, init, init, b.setup, iter_seed, GradMethod::reference);
    const GradResult adj =
        objective_gradient(x_T, m, init, init, b.setup, iter_seed, GradMethod::adjoint);

    Eigen::VectorXd vr(32), va(32);
    vr << ref.grad_ws.array().matrix(), ref.grad_wd.array().matrix();
    va << adj.grad_ws.array().matrix(), adj.grad_wd.array().matrix();
    REQUIRE(vr.norm() > 0.0);
    CHECK(va.dot(vr) / (va.norm() * vr.norm()) > 0.999);

    const auto evaluate = [&](const WatermarkPair& p) {
        return evaluate_objective(x_T, m, init, p, b.setup, iter_seed).loss.total;
    };
    const FdResult fd = finite_diff_gradient(evaluate, init, 1e-5, 20, 411);
    for (const FdCoord& c : fd.coords) {
        const double got = c.which == 0 ? ref.grad_ws.array()[c.idx] : ref.grad_wd.array()[c.idx];
        const double want =
            c.which == 0 ? fd.grad.grad_ws.array()[c.idx] : fd.grad.grad_wd.array()[c.idx];
        CHECK(got == doctest::Approx(want).epsilon(2e-4));
    }
}

TEST_CASE("gradient routing respects mode and weights") {
    Bench b;
    b.setup.weights.init = 0.0;
    b.setup.weights.low = 0.0;
    b.setup.weights.high = 0.0;
    Rng rng(413);
    const LatentGrid x_T = LatentGrid::gaussian(1, 4, 4, rng);
    const WatermarkPair init = init_watermarks(1, 4, 4, 0.01, 415);
    const Message m = fixed_message();

    const GradResult dual =
        objective_gradient(x_T, m, init, init, b.setup, 5, GradMethod::reference);
    CHECK(dual.grad_ws.array().abs().maxCoeff() > 0.0);
    CHECK(dual.grad_wd.array().abs().maxCoeff() > 0.0);

    b.setup.mode = WatermarkMode::structure_only;
    b.setup.embed.t_detail = -1;
    const GradResult structure =
        objective_gradient(x_T, m, init, init, b.setup, 5, GradMethod::reference);
    CHECK(structure.grad_ws.array().abs().maxCoeff() > 0.0);
    CHECK(structure.grad_wd.array().abs().maxCoeff() == 0.0);
}

TEST_CASE("repeated evaluations with one seed are identical") {
    Bench b;
    TrainTransform regen;
    regen.kind = TrainTransform::Kind::regenerate;
    regen.t_a = 401;
    b.setup.transforms = {TrainTransform{}, regen};

    Rng rng(417);
    const LatentGrid x_T = LatentGrid::gaussian(1, 4, 4, rng);
    const WatermarkPair init = init_watermarks(1, 4, 4, 0.01, 419);
    const Message m = fixed_message();

    const ObjectiveEval a = evaluate_objective(x_T, m, init, init, b.setup, 29);
    const ObjectiveEval c = evaluate_objective(x_T, m, init, init, b.setup, 29);
    CHECK(a.loss.total == c.loss.total);
    CHECK(rms_diff(a.x0w, c.x0w) == 0.0);

    const ObjectiveEval other = evaluate_objective(x_T, m, init, init, b.setup, 30);
    CHECK(other.loss.total != a.loss.total);  // fresh regeneration noise
}

TEST_CASE("zero budget returns the initialization") {
    Bench b;
    b.setup.iterations = 0;
    Rng rng(421);
    const LatentGrid x_T = LatentGrid::gaussian(1, 4, 4, rng);
    const WatermarkPair init = init_watermarks(1, 4, 4, 0.01, 423);

    const OptimizeResult res = optimize_watermark(x_T, fixed_message(), init, b.setup);
    CHECK(res.status == OptimizeStatus::budget_exhausted);
    CHECK(res.history.empty());
    CHECK(rms_diff(res.pair.w_s, init.w_s) == 0.0);
    CHECK(rms_diff(res.pair.w_d, init.w_d) == 0.0);
}

TEST_CASE("history tracks the weighted total") {
    Bench b;
    Rng rng(425);
    const LatentGrid x_T = LatentGrid::gaussian(1, 4, 4, rng);
    const WatermarkPair init = init_watermarks(1, 4, 4, 0.01, 427);

    const OptimizeResult res = optimize_watermark(x_T, fixed_message(), init, b.setup);
    REQUIRE(res.history.size() == 10);
    for (std::size_t i = 0; i < res.history.size(); ++i) {
        const HistoryRow& row = res.history[i];
        CHECK(row.iteration == static_cast<int>(i));
        CHECK(row.bit_acc >= 0.0);
        CHECK(row.bit_acc <= 1.0);
        const double want = b.setup.weights.msg * row.loss.msg +
                            b.setup.weights.init * row.loss.init +
                            b.setup.weights.low * row.loss.low +
                            b.setup.weights.high * row.loss.high;
        CHECK(row.loss.total == doctest::Approx(want).epsilon(1e-12));
    }
}

TEST_CASE("finished pairs reproduce their recorded sample") {
    Bench b;
    Rng rng(429);
    const LatentGrid x_T = LatentGrid::gaussian(1, 4, 4, rng);
    const WatermarkPair init = init_watermarks(1, 4, 4, 0.01, 431);

    const OptimizeResult res = optimize_watermark(x_T, fixed_message(), init, b.setup);
    const ObjectiveEval replay = evaluate_objective(x_T, fixed_message(), init, res.pair, b.setup, 0);
    CHECK(rms_diff(res.x0w, replay.x0w) == 0.0);
}

TEST_CASE("descent lowers the total on a deterministic objective") {
    Bench b;
    b.setup.iterations = 80;
    b.setup.early_stop_after = 0;
    Rng rng(433);
    const LatentGrid x_T = LatentGrid::gaussian(1, 4, 4, rng);
    const WatermarkPair init = init_watermarks(1, 4, 4, 0.01, 435);

    const OptimizeResult res = optimize_watermark(x_T, fixed_message(), init, b.setup);
    REQUIRE(res.history.size() == 80);
    std::vector<double> head, tail;
    for (int i = 0; i < 15; ++i) head.push_back(res.history[i].loss.total);
    for (int i = 65; i < 80; ++i) tail.push_back(res.history[i].loss.total);
    std::sort(head.begin(), head.end());
    std::sort(tail.begin(), tail.end());
    CHECK(tail[7] < head[7]);  // medians
}

TEST_CASE("anchors alone keep the watermarks near the draw") {
    Bench b;
    b.setup.weights.msg = 0.0;
    b.setup.iterations = 30;
    Rng rng(437);
    const LatentGrid x_T = LatentGrid::gaussian(1, 4, 4, rng);
    const WatermarkPair init = init_watermarks(1, 4, 4, 0.01, 439);

    const OptimizeResult res = optimize_watermark(x_T, fixed_message(), init, b.setup);
    CHECK(rms_diff(res.pair.w_s, init.w_s) < 0.05);
    CHECK(rms_diff(res.pair.w_d, init.w_d) < 0.05);
}

TEST_CASE("early stopping fires once the message is held") {
    Bench b;
    b.setup.margin = 0.0;
    b.setup.early_stop_after = 1;
    b.setup.iterations = 50;
    Rng rng(441);
    const LatentGrid x_T = LatentGrid::gaussian(1, 4, 4, rng);
    const WatermarkPair init = init_watermarks(1, 4, 4, 0.01, 443);

    // ask for the message the unoptimized pair already produces; with a zero
    // margin the hinge is flat there
    const ObjectiveEval probe = evaluate_objective(x_T, fixed_message(), init, init, b.setup, 0);
    const Message held = decode(extract(probe.x0w, b.extractor), b.carriers);

    const OptimizeResult res = optimize_watermark(x_T, held, init, b.setup);
    CHECK(res.status == OptimizeStatus::early_stopped);
    CHECK(res.history.size() == 1);
    CHECK(res.history.front().loss.msg == 0.0);
    CHECK(res.history.front().bit_acc == 1.0);
}

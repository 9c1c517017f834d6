#include <doctest.h>

#include <cmath>
#include <functional>

#include "latentmark/losses.hpp"

using namespace latentmark;

namespace {

double fd_coord(const LatentGrid& at, int c, int y, int x, double h,
                const std::function<double(const LatentGrid&)>& f) {
    LatentGrid g = at;
    g(c, y, x) += h;
    const double up = f(g);
    g(c, y, x) -= 2.0 * h;
    const double dn = f(g);
    return (up - dn) / (2.0 * h);
}

}  // namespace

TEST_CASE("anchor loss is the squared mean gap") {
    const LatentGrid a = LatentGrid::constant(1, 4, 4, 1.2);
    const LatentGrid b = LatentGrid::constant(1, 4, 4, 1.0);
    CHECK(l_init(a, a) == 0.0);
    CHECK(l_init(a, b) == doctest::Approx(0.04).epsilon(1e-12));

    Rng rng(31);
    const LatentGrid u = LatentGrid::gaussian(2, 3, 3, rng);
    const LatentGrid v = LatentGrid::gaussian(2, 3, 3, rng);
    const double gap = mean(u) - mean(v);
    CHECK(l_init(u, v) == doctest::Approx(gap * gap).epsilon(1e-12));

    const LatentGrid small = LatentGrid::constant(1, 3, 3, 0.0);
    CHECK_THROWS_AS(l_init(a, small), ShapeError);
}

TEST_CASE("anchor gradient is constant and matches finite differences") {
    Rng rng(33);
    const LatentGrid x_tw = LatentGrid::gaussian(1, 4, 4, rng);
    const LatentGrid x_t = LatentGrid::gaussian(1, 4, 4, rng);
    const LatentGrid g = l_init_grad_xw(x_tw, x_t);
    CHECK(g.array().maxCoeff() == doctest::Approx(g.array().minCoeff()).epsilon(1e-15));

    const auto f = [&](const LatentGrid& w) { return l_init(w, x_t); };
    CHECK(g(0, 1, 2) == doctest::Approx(fd_coord(x_tw, 0, 1, 2, 1e-6, f)).epsilon(1e-6));
}

TEST_CASE("moment drift loss vanishes at the anchor") {
    Rng rng(35);
    const LatentGrid ws = LatentGrid::gaussian(1, 5, 5, rng, 0.1);
    const LatentGrid wd = LatentGrid::gaussian(1, 5, 5, rng, 0.1);
    CHECK(l_low(ws, wd, ws, wd) == 0.0);
}

TEST_CASE("moment drift loss on a pure mean shift") {
    Rng rng(37);
    const LatentGrid ws = LatentGrid::gaussian(1, 5, 5, rng, 0.1);
    const LatentGrid wd = LatentGrid::gaussian(1, 5, 5, rng, 0.1);
    LatentGrid shifted = ws;
    shifted.array() += 0.1;  // variance untouched
    CHECK(l_low(shifted, wd, ws, wd) == doctest::Approx(0.01).epsilon(1e-10));
}

TEST_CASE("moment drift loss equals its four term expansion") {
    Rng rng(39);
    const LatentGrid ws = LatentGrid::gaussian(1, 4, 4, rng, 0.2);
    const LatentGrid wd = LatentGrid::gaussian(1, 4, 4, rng, 0.2);
    const LatentGrid ws0 = LatentGrid::gaussian(1, 4, 4, rng, 0.1);
    const LatentGrid wd0 = LatentGrid::gaussian(1, 4, 4, rng, 0.1);
    const double dms = mean(ws) - mean(ws0);
    const double dvs = variance(ws) - variance(ws0);
    const double dmd = mean(wd) - mean(wd0);
    const double dvd = variance(wd) - variance(wd0);
    const double want = dms * dms + dvs * dvs + dmd * dmd + dvd * dvd;
    CHECK(l_low(ws, wd, ws0, wd0) == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("moment drift gradient matches finite differences") {
    Rng rng(41);
    const LatentGrid w = LatentGrid::gaussian(1, 4, 4, rng, 0.3);
    const LatentGrid w0 = LatentGrid::gaussian(1, 4, 4, rng, 0.1);
    const LatentGrid zero = LatentGrid::zeros_like(w);
    const LatentGrid g = l_low_grad(w, w0);
    const auto f = [&](const LatentGrid& v) { return l_low(v, zero, w0, zero); };
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            CHECK(g(0, y, x) == doctest::Approx(fd_coord(w, 0, y, x, 1e-6, f)).epsilon(1e-5));
}

TEST_CASE("standardized moments on a hand pattern") {
    LatentGrid g(1, 2, 2);
    g(0, 0, 0) = 0.0;
    g(0, 0, 1) = 0.0;
    g(0, 1, 0) = 1.0;
    g(0, 1, 1) = 1.0;
    // z scores are exactly -1 -1 +1 +1
    CHECK(standardized_moment(g, 2) == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(standardized_moment(g, 3) == doctest::Approx(0.0).epsilon(1e-13));
    CHECK(standardized_moment(g, 4) == doctest::Approx(1.0).epsilon(1e-13));
    CHECK_THROWS_AS(standardized_moment(LatentGrid::constant(1, 2, 2, 3.0), 4), DegenerateError);
}

TEST_CASE("shape loss on a symmetric two point law") {
    LatentGrid g(1, 2, 2);
    g(0, 0, 0) = -1.0;
    g(0, 0, 1) = 1.0;
    g(0, 1, 0) = -1.0;
    g(0, 1, 1) = 1.0;
    // kurtosis 1, skewness 0, each grid contributes (1-3)^2
    CHECK(l_high(g, g) == doctest::Approx(8.0).epsilon(1e-12));
}

TEST_CASE("shape loss is small for large gaussian draws") {
    Rng rng(43);
    const LatentGrid a = LatentGrid::gaussian(1, 100, 100, rng);
    const LatentGrid b = LatentGrid::gaussian(1, 100, 100, rng);
    CHECK(l_high(a, b) >= 0.0);
    CHECK(l_high(a, b) < 0.05);
}

TEST_CASE("shape loss concentrates as the sample grows") {
    Rng rng(45);
    double coarse = 0.0, fine = 0.0;
    const int reps = 40;
    for (int r = 0; r < reps; ++r) {
        const LatentGrid small = LatentGrid::gaussian(1, 25, 40, rng);   // 1000
        const LatentGrid large = LatentGrid::gaussian(1, 100, 100, rng); // 10000
        coarse += l_high(small, small) / reps;
        fine += l_high(large, large) / reps;
    }
    CHECK(fine < coarse);
}

TEST_CASE("shape gradient matches finite differences") {
    Rng rng(47);
    const LatentGrid w = LatentGrid::gaussian(1, 4, 4, rng);
    const LatentGrid g = l_high_grad(w);
    const auto f = [&](const LatentGrid& v) { return l_high(v, v) / 2.0; };
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x)
            CHECK(g(0, y, x) == doctest::Approx(fd_coord(w, 0, y, x, 1e-6, f)).epsilon(2e-5));
    CHECK_THROWS_AS(l_high_grad(LatentGrid::constant(1, 3, 3, 1.0)), DegenerateError);
}

TEST_CASE("total loss weights the components") {
    LossWeights w;  // defaults 0.1, 100, 1000, 100
    const LossBreakdown b = total_loss(1.0, 0.01, 0.001, 0.002, w);
    CHECK(b.msg == 1.0);
    CHECK(b.init == 0.01);
    CHECK(b.low == 0.001);
    CHECK(b.high == 0.002);
    CHECK(b.total == doctest::Approx(0.1 + 1.0 + 1.0 + 0.2).epsilon(1e-12));

    const LossBreakdown zero = total_loss(0.0, 0.0, 0.0, 0.0, w);
    CHECK(zero.total == 0.0);

    CHECK_THROWS_AS(total_loss(-1.0, 0.0, 0.0, 0.0, w), ParamError);
    w.low = -5.0;
    CHECK_THROWS_AS(total_loss(0.0, 0.0, 0.0, 0.0, w), ParamError);
}

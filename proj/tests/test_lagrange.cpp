#include "qcpo/lagrange.hpp"
#include "qcpo/rng.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace qcpo;
using Catch::Approx;

TEST_CASE("empirical_quantile is the ceil(u*n)-th order statistic") {
    std::vector<double> v;
    for (int i = 1; i <= 100; ++i) v.push_back(i);
    REQUIRE(empirical_quantile(v, 0.9) == Approx(90.0));
    REQUIRE(empirical_quantile(v, 0.001) == Approx(1.0));

    std::vector<double> same(37, 4.25);
    for (double u : {0.1, 0.5, 0.9}) REQUIRE(empirical_quantile(same, u) == Approx(4.25));

    REQUIRE_THROWS_AS(empirical_quantile({}, 0.5), std::invalid_argument);
}

TEST_CASE("empirical_quantile approaches the analytic exponential quantile") {
    Rng rng(123);
    std::vector<double> v;
    v.reserve(100000);
    for (int i = 0; i < 100000; ++i) v.push_back(-std::log(1.0 - rng.uniform01()));
    REQUIRE(empirical_quantile(v, 0.9) == Approx(-std::log(0.1)).margin(0.03));
}

TEST_CASE("lagrange update: projection at zero") {
    LagrangeState st;
    st.lambda = 0.0;
    st.eta = 0.1;
    st.d_th = 15.0;
    st.eps0 = 0.1;
    st.window = 4;
    for (double c : {10.0, 10.0, 10.0, 10.0}) st.push_episode_cost(c);
    st = lagrange_update(st);
    REQUIRE(st.lambda == 0.0);
}

TEST_CASE("lagrange update: gradient step arithmetic") {
    LagrangeState st;
    st.lambda = 1.0;
    st.eta = 0.1;
    st.d_th = 15.0;
    st.eps0 = 0.1;
    st.window = 4;
    for (double c : {20.0, 20.0, 20.0, 20.0}) st.push_episode_cost(c);
    st = lagrange_update(st);
    REQUIRE(st.lambda == Approx(1.5));
}

TEST_CASE("lagrange update: fixed point when the constraint is tight") {
    LagrangeState st;
    st.lambda = 0.05;
    st.d_th = 12.0;
    st.window = 3;
    for (double c : {12.0, 12.0, 12.0}) st.push_episode_cost(c);
    st = lagrange_update(st);
    REQUIRE(st.lambda == Approx(0.05));
}

TEST_CASE("lagrange update skips before warm-up") {
    LagrangeState st;
    st.lambda = 0.7;
    st.window = 100;
    for (int i = 0; i < 99; ++i) st.push_episode_cost(50.0);
    st = lagrange_update(st);
    REQUIRE(st.lambda == 0.7);
    st.push_episode_cost(50.0);
    st = lagrange_update(st);
    REQUIRE(st.lambda > 0.7);
}

TEST_CASE("lambda is monotone while the statistic stays on one side") {
    Rng rng(5);
    LagrangeState st;
    st.window = 10;
    st.d_th = 1.0;
    st.eps0 = 0.2;
    for (int i = 0; i < 10; ++i) st.push_episode_cost(2.0 + rng.uniform01());
    double prev = st.lambda;
    for (int i = 0; i < 20; ++i) {
        st.push_episode_cost(2.0 + rng.uniform01());
        st = lagrange_update(st);
        REQUIRE(st.lambda >= prev);
        prev = st.lambda;
    }
    // now drive the statistic below the threshold
    for (int i = 0; i < 10; ++i) st.push_episode_cost(0.1);
    for (int i = 0; i < 20; ++i) {
        st.push_episode_cost(0.1);
        st = lagrange_update(st);
        REQUIRE(st.lambda <= prev);
        prev = st.lambda;
    }
    REQUIRE(st.lambda >= 0.0);
}

TEST_CASE("mean-driven controller replicates the expectation baseline") {
    LagrangeState st;
    st.use_mean = true;
    st.window = 4;
    st.d_th = 5.0;
    st.eta = 0.1;
    // quantile(0.9) of the buffer is 8, the mean is 4.25: the mean-driven
    // controller must relax while the quantile-driven one would tighten
    for (double c : {1.0, 4.0, 4.0, 8.0}) st.push_episode_cost(c);
    REQUIRE(st.statistic() == Approx(4.25));
    st.lambda = 1.0;
    st = lagrange_update(st);
    REQUIRE(st.lambda == Approx(1.0 + 0.1 * (4.25 - 5.0)));

    LagrangeState quant = st;
    quant.use_mean = false;
    REQUIRE(quant.statistic() == Approx(8.0));
}

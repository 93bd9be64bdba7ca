#include <doctest.h>

#include <cmath>

#include "noprop/checks.hpp"
#include "noprop/errors.hpp"
#include "noprop/schedule.hpp"

using namespace noprop;

TEST_CASE("cosine schedule endpoints and monotonicity") {
    const DiscreteSchedule sched = cosine_alpha_bar(10);
    CHECK(sched.alpha_bar[10] == doctest::Approx(0.999).epsilon(1e-15));  // clipped top
    CHECK(sched.alpha_bar[0] == doctest::Approx(1e-4).epsilon(1e-15));    // clipped bottom
    for (std::size_t t = 0; t < 10; ++t) CHECK(sched.alpha_bar[t] < sched.alpha_bar[t + 1]);

    // independently evaluated f(1)/f(0) for T = 2, s = 0.008
    const DiscreteSchedule tiny = cosine_alpha_bar(2);
    CHECK(static_cast<double>(tiny.alpha_bar[1]) ==
          doctest::Approx(0.49384359044063775).epsilon(1e-13));

    CHECK_THROWS_AS(cosine_alpha_bar(0), ConfigError);
    CHECK_THROWS_AS(cosine_alpha_bar(10, 0.008, 0.5, 0.2), ConfigError);
    CHECK_THROWS_AS(cosine_alpha_bar(10, 0.008, 0.0, 0.999), ConfigError);
}

TEST_CASE("posterior coefficients: identity step when no noise is added") {
    const auto pc = posterior_from_levels(0.9, 0.9);
    CHECK(pc.a == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(pc.b == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(pc.c == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("posterior coefficients at (0.72, 0.9)") {
    const auto pc = posterior_from_levels(0.72, 0.9);
    CHECK(pc.a == doctest::Approx(0.6776309271789385).epsilon(1e-13));
    CHECK(pc.b == doctest::Approx(0.3194382824999698).epsilon(1e-13));
    CHECK(pc.c == doctest::Approx(0.07142857142857144).epsilon(1e-13));
}

TEST_CASE("prior-dominated limit of the posterior") {
    const double ab_next = 0.4;
    const auto pc = posterior_from_levels(1e-6, ab_next);
    const double alpha = 1e-6 / ab_next;
    CHECK(pc.b == doctest::Approx(std::sqrt(alpha) * (1.0 - ab_next)).epsilon(1e-5));
}

TEST_CASE("posterior matches the grid Bayes oracle") {
    const auto r = checks::bayes_posterior_check(25, 3);
    INFO(r.name, " worst ", r.metric);
    CHECK(r.pass);
}

TEST_CASE("snr values and telescoping") {
    DiscreteSchedule sched;
    sched.T = 2;
    sched.alpha_bar = {0.1, 0.5, 0.9};
    CHECK(sched.snr(1) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(sched.snr(2) == doctest::Approx(9.0).epsilon(1e-13));
    CHECK_THROWS_AS(sched.snr(3), RangeError);
    CHECK_THROWS_AS(sched.snr_diff(0), RangeError);
    CHECK_THROWS_AS(sched.posterior(0), RangeError);
    CHECK_THROWS_AS(sched.posterior(3), RangeError);

    const DiscreteSchedule cosine = cosine_alpha_bar(10);
    double sum = 0;
    for (std::size_t t = 1; t <= 10; ++t) {
        CHECK(cosine.snr_diff(t) >= 0);
        sum += cosine.snr_diff(t);
    }
    CHECK(std::abs(sum - (cosine.snr(10) - cosine.snr(0))) < 1e-10);
}

TEST_CASE("trainable gamma endpoints and monotonicity") {
    ParamStore store;
    TrainableGamma::init_params(store, 8, -7.0, 7.0, 21);
    const TrainableGamma gamma(store);

    CHECK(gamma.gamma(0.0) == doctest::Approx(7.0).epsilon(1e-12));   // gamma(0) = g1
    CHECK(gamma.gamma(1.0) == doctest::Approx(-7.0).epsilon(1e-12));  // gamma(1) = g0
    CHECK(gamma.snr(1.0) > gamma.snr(0.0));

    double prev = gamma.gamma(0.0);
    for (int i = 1; i <= 1000; ++i) {
        const double t = static_cast<double>(i) / 1000.0;
        const double cur = gamma.gamma(t);
        CHECK(cur < prev);
        prev = cur;
    }
}

TEST_CASE("gamma prime matches finite differences of gamma") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        ParamStore store;
        TrainableGamma::init_params(store, 8, -7.0, 7.0, seed);
        const TrainableGamma gamma(store);
        for (double t = 0.1; t < 0.95; t += 0.1) {
            const double h = 1e-6;
            const double fd = (gamma.gamma(t + h) - gamma.gamma(t - h)) / (2 * h);
            const double an = gamma.gamma_prime(t);
            CHECK(std::abs(an - fd) / std::max(1.0, std::abs(an)) < 1e-6);
        }
    }
}

TEST_CASE("snr and alpha_bar stay mutually consistent") {
    ParamStore store;
    TrainableGamma::init_params(store, 8, -7.0, 7.0, 5);
    const TrainableGamma gamma(store);
    for (double t = 0.0; t <= 1.0; t += 0.05) {
        const double ab = gamma.alpha_bar(t);
        CHECK(std::abs(gamma.snr(t) - ab / (1.0 - ab)) / gamma.snr(t) < 1e-12);
        CHECK(gamma.snr_prime(t) >= 0);
    }
}

TEST_CASE("in-graph gamma evaluation agrees with the scalar path") {
    ParamStore store;
    TrainableGamma::init_params(store, 6, -7.0, 7.0, 8);
    const TrainableGamma gamma(store);
    Graph g;
    Tensor t_batch(Shape{4, 1});
    t_batch[0] = real(0.05);
    t_batch[1] = real(0.37);
    t_batch[2] = real(0.71);
    t_batch[3] = real(0.99);
    const auto nodes = gamma.build(g, "sched", g.leaf_const(t_batch), 4);
    for (std::size_t i = 0; i < 4; ++i) {
        const double t = static_cast<double>(t_batch[i]);
        CHECK(static_cast<double>(g.value(nodes.gamma)[i]) ==
              doctest::Approx(gamma.gamma(t)).epsilon(1e-12));
        CHECK(static_cast<double>(g.value(nodes.alpha_bar)[i]) ==
              doctest::Approx(gamma.alpha_bar(t)).epsilon(1e-12));
        CHECK(static_cast<double>(g.value(nodes.snr_prime)[i]) ==
              doctest::Approx(gamma.snr_prime(t)).epsilon(1e-10));
    }
}

TEST_CASE("marginal sampling moments") {
    const Tensor u = Tensor::vector1d({2, 0});
    RngStream stream = make_stream(33, "marginal");
    const std::size_t N = 100000;
    double mean0 = 0, mean1 = 0, var0 = 0, var1 = 0;
    std::vector<double> z0s(N), z1s(N);
    for (std::size_t i = 0; i < N; ++i) {
        const Tensor z = sample_q_marginal(u, 0.25, stream);
        z0s[i] = z[0];
        z1s[i] = z[1];
        mean0 += z[0];
        mean1 += z[1];
    }
    mean0 /= N;
    mean1 /= N;
    for (std::size_t i = 0; i < N; ++i) {
        var0 += (z0s[i] - mean0) * (z0s[i] - mean0);
        var1 += (z1s[i] - mean1) * (z1s[i] - mean1);
    }
    var0 /= N;
    var1 /= N;
    const double sigma = std::sqrt(0.75);
    const double tol = 3.0 * sigma / std::sqrt(static_cast<double>(N));
    CHECK(std::abs(mean0 - 1.0) < tol);  // sqrt(0.25) * 2
    CHECK(std::abs(mean1 - 0.0) < tol);
    CHECK(std::abs(var0 - 0.75) < 0.02);
    CHECK(std::abs(var1 - 0.75) < 0.02);

    CHECK_THROWS_AS(sample_q_marginal(u, 0.0, stream), RangeError);
    CHECK_THROWS_AS(sample_q_marginal(u, 1.0, stream), RangeError);
}

TEST_CASE("near-clean marginal stays close to the embedding") {
    const Tensor u = Tensor::vector1d({1, -2, 3});
    RngStream stream = make_stream(35, "clean");
    for (int i = 0; i < 100; ++i) {
        const Tensor z = sample_q_marginal(u, 0.999, stream);
        for (std::size_t k = 0; k < 3; ++k)
            CHECK(std::abs(static_cast<double>(z[k]) -
                           std::sqrt(0.999) * static_cast<double>(u[k])) <
                  std::sqrt(1 - 0.999) * 6.0);
    }
}

TEST_CASE("kernel composition reproduces the marginal") {
    // draw z_s ~ q(.|y) at a high level, then z_t | z_s for t < s
    const Tensor u = Tensor::vector1d({1.5, -0.5});
    const double ab_s = 0.8, ab_t = 0.3;
    RngStream stream = make_stream(37, "compose");
    const std::size_t N = 100000;
    double mean0 = 0, var0 = 0;
    std::vector<double> zs(N);
    const double ratio = ab_t / ab_s;
    for (std::size_t i = 0; i < N; ++i) {
        const Tensor z_s = sample_q_marginal(u, ab_s, stream);
        const double z_t =
            std::sqrt(ratio) * static_cast<double>(z_s[0]) + std::sqrt(1.0 - ratio) * stream.normal();
        zs[i] = z_t;
        mean0 += z_t;
    }
    mean0 /= N;
    for (std::size_t i = 0; i < N; ++i) var0 += (zs[i] - mean0) * (zs[i] - mean0);
    var0 /= N;
    const double expect_mean = std::sqrt(ab_t) * 1.5;
    const double expect_var = 1.0 - ab_t;
    CHECK(std::abs(mean0 - expect_mean) < 4.0 * std::sqrt(expect_var) / std::sqrt(static_cast<double>(N)));
    CHECK(std::abs(var0 - expect_var) < 0.02);
}

TEST_CASE("closed-form KL values") {
    CHECK(gaussian_kl_to_standard(Tensor::vector1d({3, 4}), 0.0) == doctest::Approx(0.0).epsilon(1e-15));
    CHECK(gaussian_kl_to_standard(Tensor::vector1d({1, 0}), 0.5) ==
          doctest::Approx(0.4431471805599453).epsilon(1e-14));
    CHECK_THROWS_AS(gaussian_kl_to_standard(Tensor::vector1d({1}), 1.0), RangeError);

    RngStream s = make_stream(41, "kl-nonneg");
    for (int i = 0; i < 1000; ++i) {
        Tensor u = Tensor::randn(Shape{1 + static_cast<std::size_t>(s.below(5))}, s, real(2));
        const double ab0 = s.uniform() * 0.999;
        CHECK(gaussian_kl_to_standard(u, ab0) >= 0.0);
    }
}

TEST_CASE("closed-form KL matches the Monte-Carlo estimator") {
    for (const auto& r : checks::mc_kl_checks(2)) {
        INFO(r.name, " -> ", r.note);
        CHECK(r.pass);
    }
}

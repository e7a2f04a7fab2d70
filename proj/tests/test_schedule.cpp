#include <catch2/catch_amalgamated.hpp>

#include <timedart/oracle.hpp>
#include <timedart/rng.hpp>
#include <timedart/schedule.hpp>

#include <cmath>
#include <vector>

using namespace timedart;

TEST_CASE("gamma starts at one for both schedules") {
    for (auto kind : {SchedulerKind::cosine, SchedulerKind::linear}) {
        const NoiseSchedule s = build_schedule(kind, 100);
        CHECK(s.gamma[0] == 1.0);
    }
    CHECK_THROWS_AS(build_schedule(SchedulerKind::cosine, 0), Error);
}

TEST_CASE("cosine schedule decreases strictly and ends noisy") {
    const NoiseSchedule s = build_schedule(SchedulerKind::cosine, 1000);
    for (std::size_t i = 1; i <= 1000; ++i) {
        REQUIRE(s.gamma[i] < s.gamma[i - 1]);
        REQUIRE(s.alpha[i - 1] > 0.0);
        REQUIRE(s.alpha[i - 1] < 1.0);
    }
    CHECK(s.gamma[1000] < 1e-3);
    CHECK(s.gamma[1000] < 0.05);
}

TEST_CASE("linear schedule matches a cumulative-product oracle") {
    const std::size_t T = 1000;
    const NoiseSchedule s = build_schedule(SchedulerKind::linear, T);
    // Scalar-loop oracle over the beta ramp 1e-4 .. 0.02.
    double product = 1.0;
    for (std::size_t step = 1; step <= T; ++step) {
        const double beta = 1e-4 + (0.02 - 1e-4) * double(step - 1) / double(T - 1);
        product *= 1.0 - beta;
    }
    CHECK(std::abs(s.gamma[T] - product) / product <= 1e-9);
    CHECK(s.gamma[T] < 0.05);
    for (std::size_t i = 1; i <= T; ++i) REQUIRE(s.gamma[i] < s.gamma[i - 1]);
}

TEST_CASE("gamma reconstructs from alpha to 1e-12") {
    for (auto kind : {SchedulerKind::cosine, SchedulerKind::linear}) {
        const NoiseSchedule s = build_schedule(kind, 750);
        double product = 1.0;
        for (std::size_t i = 1; i <= 750; ++i) {
            product *= s.alpha[i - 1];
            REQUIRE(std::abs(product - s.gamma[i]) <= 1e-12);
        }
    }
}

TEST_CASE("sample_steps is deterministic and covers the support") {
    RngStream a = RngStream::substream(3, "steps");
    RngStream b = RngStream::substream(3, "steps");
    const StepAssignment sa = sample_steps(64, 1000, a);
    const StepAssignment sb = sample_steps(64, 1000, b);
    CHECK(sa.steps == sb.steps);

    RngStream c(1);
    const StepAssignment singleton = sample_steps(16, 1, c);
    for (std::size_t s : singleton.steps) REQUIRE(s == 1);

    const StepAssignment same = StepAssignment::same(5, 500);
    for (std::size_t s : same.steps) REQUIRE(s == 500);
    CHECK_THROWS_AS(sample_steps(0, 10, c), Error);
}

TEST_CASE("independent draws are uniform over deciles") {
    // 1e5 draws over T=1000; each decile bin expected 1e4, sigma = sqrt(n p (1-p)).
    RngStream rng = RngStream::substream(99, "uniformity");
    const std::size_t draws = 100000;
    std::vector<std::size_t> bins(10, 0);
    for (std::size_t i = 0; i < draws; ++i) {
        const StepAssignment a = sample_steps(1, 1000, rng);
        ++bins[(a.steps[0] - 1) / 100];
    }
    const double sigma = std::sqrt(double(draws) * 0.1 * 0.9);
    for (std::size_t b = 0; b < 10; ++b) {
        CHECK(std::abs(double(bins[b]) - 10000.0) <= 3.0 * sigma);
    }
}

TEST_CASE("add_noise basics") {
    const NoiseSchedule s = build_schedule(SchedulerKind::cosine, 100);
    Tensor clean({4}, {0.5, -1.0, 2.0, 0.0});
    Tensor eps({4}, {1.0, 1.0, -1.0, 0.5});

    SECTION("step zero returns the clean patch exactly") {
        const Tensor noisy = add_noise(clean, 0, s, eps);
        for (std::size_t i = 0; i < 4; ++i) REQUIRE(noisy[i] == clean[i]);
    }

    SECTION("zero noise scales by sqrt(gamma)") {
        const Tensor zero_eps({4});
        for (std::size_t step : {std::size_t(1), std::size_t(50), std::size_t(100)}) {
            const Tensor noisy = add_noise(clean, step, s, zero_eps);
            for (std::size_t i = 0; i < 4; ++i) {
                REQUIRE(noisy[i] == Catch::Approx(std::sqrt(s.gamma[step]) * clean[i]).epsilon(1e-12));
            }
        }
    }

    SECTION("out-of-range step rejected") {
        CHECK_THROWS_AS(add_noise(clean, 101, s, eps), Error);
    }

    SECTION("linearity in the clean patch and the noise") {
        RngStream rng(31);
        for (int trial = 0; trial < 50; ++trial) {
            Tensor x({6}), e({6});
            for (std::size_t i = 0; i < 6; ++i) {
                x[i] = rng.normal();
                e[i] = rng.normal();
            }
            const double a = rng.uniform_range(-3, 3);
            const std::size_t step = static_cast<std::size_t>(rng.uniform_int(1, 100));
            Tensor ax({6}), ae({6});
            for (std::size_t i = 0; i < 6; ++i) {
                ax[i] = a * x[i];
                ae[i] = a * e[i];
            }
            const Tensor lhs = add_noise(ax, step, s, ae);
            const Tensor rhs = add_noise(x, step, s, e);
            for (std::size_t i = 0; i < 6; ++i) {
                REQUIRE(lhs[i] == Catch::Approx(a * rhs[i]).margin(1e-12));
            }
        }
    }
}

TEST_CASE("same-step noising preserves the normalized moments in expectation") {
    // The invariance argument: with one shared step, mean stays 0 and
    // variance stays 1 for a zero-mean unit-variance sequence.
    const NoiseSchedule s = build_schedule(SchedulerKind::cosine, 1000);
    const std::size_t L = 336;
    Tensor window({L});
    RngStream data(41);
    for (std::size_t i = 0; i < L; ++i) window[i] = data.normal();
    // Normalize exactly.
    double mean = 0.0;
    for (std::size_t i = 0; i < L; ++i) mean += window[i];
    mean /= double(L);
    double var = 0.0;
    for (std::size_t i = 0; i < L; ++i) var += (window[i] - mean) * (window[i] - mean);
    var /= double(L);
    for (std::size_t i = 0; i < L; ++i) window[i] = (window[i] - mean) / std::sqrt(var);

    RngStream mc(43);
    for (std::size_t step : {std::size_t(1), std::size_t(500), std::size_t(1000)}) {
        const auto stats = oracle::monte_carlo_noise_stats(
            window, StepAssignment::same(L / 8, step), s, 10000, mc);
        CHECK(std::abs(stats.mean) <= 0.02);
        CHECK(std::abs(stats.variance - 1.0) <= 0.05);
    }
}

TEST_CASE("independent steps break the variance invariance on heterogeneous input") {
    // Half the patches carry all the energy; noising them at step T while the
    // flat patches get step 1 pushes the global variance visibly above 1.
    const NoiseSchedule s = build_schedule(SchedulerKind::cosine, 1000);
    const std::size_t L = 336, P = 8, N = L / P;
    Tensor window({L});
    for (std::size_t j = 0; j < N; ++j) {
        for (std::size_t k = 0; k < P; ++k) {
            window[j * P + k] = j % 2 == 0 ? 0.0 : (k % 2 == 0 ? std::sqrt(2.0) : -std::sqrt(2.0));
        }
    }
    std::vector<std::size_t> steps(N);
    for (std::size_t j = 0; j < N; ++j) steps[j] = j % 2 == 0 ? 1000 : 1;

    RngStream mc(47);
    const auto stats =
        oracle::monte_carlo_noise_stats(window, StepAssignment::explicit_steps(steps), s, 10000, mc);
    CHECK((stats.variance < 0.95 || stats.variance > 1.05));
}

TEST_CASE("monte carlo oracle guards") {
    const NoiseSchedule s = build_schedule(SchedulerKind::cosine, 10);
    Tensor window({8});
    RngStream rng(1);
    CHECK_THROWS_AS(oracle::monte_carlo_noise_stats(window, StepAssignment::same(2, 1), s, 9, rng),
                    Error);
    // Step zero keeps the clean data, so the variance equals the data's own.
    Tensor ramp({8}, {-1, 1, -1, 1, -1, 1, -1, 1});
    const auto stats =
        oracle::monte_carlo_noise_stats(ramp, StepAssignment::same(2, 0), s, 200, rng);
    CHECK(stats.mean == Catch::Approx(0.0).margin(1e-12));
    CHECK(stats.variance == Catch::Approx(1.0).epsilon(1e-12));
}

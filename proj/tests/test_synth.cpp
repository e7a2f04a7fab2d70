#include <catch2/catch_amalgamated.hpp>

#include <timedart/synth.hpp>

#include <cmath>

using namespace timedart;

TEST_CASE("noiseless sinusoid mixture matches the closed form") {
    SynthSpec spec;
    spec.kind = SynthKind::sinusoid_mix;
    spec.length = 200;
    spec.channels = 2;
    spec.noise_std = 0.0;
    spec.frequencies = {0.01, 0.05};
    spec.amplitudes = {1.0, 0.5};
    spec.seed = 4;
    const SynthResult result = generate(spec);
    REQUIRE(result.series.channels() == 2);
    const double two_pi = 2.0 * 3.14159265358979323846;
    for (std::size_t c = 0; c < 2; ++c) {
        for (std::size_t t = 0; t < 200; ++t) {
            const double expected =
                1.0 * std::sin(two_pi * 0.01 * double(t) + 0.7 * double(c)) +
                0.5 * std::sin(two_pi * 0.05 * double(t) + 0.7 * double(c));
            REQUIRE(std::abs(result.series.values.at(c, t) - expected) <= 1e-9);
        }
    }
}

TEST_CASE("generation is deterministic under seed") {
    SynthSpec spec;
    spec.kind = SynthKind::ar_process;
    spec.length = 500;
    spec.ar_coeffs = {0.6, 0.3};
    spec.seed = 99;
    const SynthResult a = generate(spec);
    const SynthResult b = generate(spec);
    for (std::size_t i = 0; i < a.series.values.numel(); ++i) {
        REQUIRE(a.series.values[i] == b.series.values[i]);
    }
    spec.seed = 100;
    const SynthResult c = generate(spec);
    bool any_different = false;
    for (std::size_t i = 0; i < a.series.values.numel(); ++i) {
        if (a.series.values[i] != c.series.values[i]) any_different = true;
    }
    CHECK(any_different);
}

TEST_CASE("AR(2) sample autocorrelation matches Yule-Walker") {
    SynthSpec spec;
    spec.kind = SynthKind::ar_process;
    spec.length = 100000;
    spec.ar_coeffs = {0.6, 0.3};
    spec.noise_std = 0.1;
    spec.seed = 12;
    const SynthResult result = generate(spec);

    // Yule-Walker lag-1 value for x_t = a1 x_{t-1} + a2 x_{t-2} + e_t.
    const double expected = 0.6 / (1.0 - 0.3);

    const Tensor& x = result.series.values;
    double mean = 0.0;
    for (std::size_t t = 0; t < spec.length; ++t) mean += x.at(0, t);
    mean /= double(spec.length);
    double c0 = 0.0, c1 = 0.0;
    for (std::size_t t = 0; t < spec.length; ++t) {
        c0 += (x.at(0, t) - mean) * (x.at(0, t) - mean);
        if (t + 1 < spec.length) c1 += (x.at(0, t) - mean) * (x.at(0, t + 1) - mean);
    }
    const double rho1 = c1 / c0;
    CHECK(std::abs(rho1 - expected) <= 0.05);
}

TEST_CASE("stationarity check accepts and rejects correctly") {
    CHECK(ar_is_stationary({0.6, 0.3}));
    CHECK(ar_is_stationary({0.5}));
    CHECK(ar_is_stationary({1.2, -0.4})); // complex roots outside the unit circle
    CHECK_FALSE(ar_is_stationary({1.2}));
    CHECK_FALSE(ar_is_stationary({0.5, 0.6}));
    CHECK_FALSE(ar_is_stationary({0.5, 0.5}));

    SynthSpec bad;
    bad.kind = SynthKind::ar_process;
    bad.ar_coeffs = {1.2};
    CHECK_THROWS_AS(generate(bad), Error);
}

TEST_CASE("class_shapes emits balanced labeled windows") {
    SynthSpec spec;
    spec.kind = SynthKind::class_shapes;
    spec.num_classes = 3;
    spec.num_windows = 300;
    spec.window_len = 32;
    spec.noise_std = 0.0;
    spec.seed = 8;
    const SynthResult result = generate(spec);
    REQUIRE(result.labels.size() == 300);
    REQUIRE(result.series.length() == 300 * 32);

    std::size_t counts[3] = {0, 0, 0};
    for (int label : result.labels) {
        REQUIRE(label >= 0);
        REQUIRE(label < 3);
        ++counts[label];
    }
    CHECK(counts[0] == 100);
    CHECK(counts[1] == 100);
    CHECK(counts[2] == 100);

    // Same class, same waveform when noiseless.
    for (std::size_t t = 0; t < 32; ++t) {
        REQUIRE(result.series.values.at(0, t) == result.series.values.at(0, 3 * 32 + t));
    }
    bool differs = false;
    for (std::size_t t = 0; t < 32; ++t) {
        if (result.series.values.at(0, t) != result.series.values.at(0, 32 + t)) differs = true;
    }
    CHECK(differs);

    SynthSpec unbalanced = spec;
    unbalanced.num_windows = 299;
    CHECK_THROWS_AS(generate(unbalanced), Error);
}

#include <catch2/catch_amalgamated.hpp>

#include <timedart/graph.hpp>
#include <timedart/patch.hpp>
#include <timedart/rng.hpp>

#include <cmath>

using namespace timedart;

TEST_CASE("patchify splices windows into non-overlapping patches") {
    Tensor window({1, 6}, {1, 2, 3, 4, 5, 6});
    const Tensor patches = patchify(window, 3);
    REQUIRE(patches.shape() == std::vector<std::size_t>{1, 2, 3});
    CHECK(patches.at(0, 0, 0) == 1.0);
    CHECK(patches.at(0, 0, 2) == 3.0);
    CHECK(patches.at(0, 1, 0) == 4.0);
    CHECK(patches.at(0, 1, 2) == 6.0);
}

TEST_CASE("patchify arithmetic and rejection") {
    Tensor window({1, 336});
    CHECK(patchify(window, 2).dim(1) == 168);
    CHECK_THROWS_AS(patchify(window, 5), Error);

    Tensor one({2, 4}, {1, 2, 3, 4, 5, 6, 7, 8});
    const Tensor single = patchify(one, 4);
    CHECK(single.dim(1) == 1);
    const Tensor back = unpatchify(single);
    for (std::size_t i = 0; i < one.numel(); ++i) REQUIRE(back[i] == one[i]);
}

TEST_CASE("patchify round-trip is exact for random windows") {
    RngStream rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        const std::size_t channels = static_cast<std::size_t>(rng.uniform_int(1, 3));
        const std::size_t patch_len = static_cast<std::size_t>(rng.uniform_int(1, 8));
        const std::size_t num_patches = static_cast<std::size_t>(rng.uniform_int(1, 12));
        Tensor window({channels, patch_len * num_patches});
        for (std::size_t i = 0; i < window.numel(); ++i) window[i] = rng.normal();
        const Tensor back = unpatchify(patchify(window, patch_len));
        REQUIRE(back.same_shape(window));
        for (std::size_t i = 0; i < window.numel(); ++i) REQUIRE(back[i] == window[i]);
    }
}

TEST_CASE("positional table matches the closed form") {
    const std::size_t N = 24, D = 16;
    const Tensor table = positional_table(N, D);

    // Scalar-loop oracle, written directly from the definition.
    for (std::size_t pos = 0; pos < N; ++pos) {
        for (std::size_t i = 0; i < D / 2; ++i) {
            const double rate = std::pow(10000.0, 2.0 * double(i) / double(D));
            REQUIRE(std::abs(table.at(pos, 2 * i) - std::sin(double(pos) / rate)) <= 1e-6);
            REQUIRE(std::abs(table.at(pos, 2 * i + 1) - std::cos(double(pos) / rate)) <= 1e-6);
        }
    }

    // pos = 0: sin terms 0, cos terms 1.
    for (std::size_t d = 0; d < D; d += 2) {
        CHECK(table.at(0, d) == 0.0);
        CHECK(table.at(0, d + 1) == 1.0);
    }
    // First sinusoid at pos 1 is sin(1) regardless of D.
    CHECK(table.at(1, 0) == Catch::Approx(std::sin(1.0)).epsilon(1e-9));
    CHECK(positional_table(8, 64).at(1, 0) == Catch::Approx(0.8415).margin(5e-5));

    for (std::size_t i = 0; i < table.numel(); ++i) {
        REQUIRE(table[i] >= -1.0);
        REQUIRE(table[i] <= 1.0);
    }

    CHECK_THROWS_AS(positional_table(4, 7), Error);
}

TEST_CASE("embedding is an affine map per patch") {
    ad::Graph g;

    SECTION("identity weights reproduce patches") {
        Tensor patches({1, 2, 2}, {1, 2, 3, 4});
        Tensor weight({2, 2}, {1, 0, 0, 1});
        ad::Var out = ad::affine(ad::constant(g, patches), ad::leaf(g, weight),
                                 ad::leaf(g, Tensor({2})));
        for (std::size_t i = 0; i < patches.numel(); ++i) REQUIRE(out.val()[i] == patches[i]);
    }

    SECTION("hand-computed single patch") {
        // [1,2] @ [[1,0],[0,2]] + [0.5,0.5] = [1.5, 4.5]
        Tensor patch({1, 1, 2}, {1, 2});
        Tensor weight({2, 2}, {1, 0, 0, 2});
        Tensor bias({2}, {0.5, 0.5});
        ad::Var out =
            ad::affine(ad::constant(g, patch), ad::leaf(g, weight), ad::leaf(g, bias));
        CHECK(out.val()[0] == Catch::Approx(1.5));
        CHECK(out.val()[1] == Catch::Approx(4.5));
    }

    SECTION("batched result equals a per-patch loop oracle") {
        RngStream rng(17);
        const std::size_t B = 3, N = 5, P = 4, D = 6;
        Tensor patches({B, N, P});
        Tensor weight({P, D});
        Tensor bias({D});
        for (std::size_t i = 0; i < patches.numel(); ++i) patches[i] = rng.normal();
        for (std::size_t i = 0; i < weight.numel(); ++i) weight[i] = rng.normal();
        for (std::size_t i = 0; i < bias.numel(); ++i) bias[i] = rng.normal();

        ad::Var out =
            ad::affine(ad::constant(g, patches), ad::leaf(g, weight), ad::leaf(g, bias));
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t n = 0; n < N; ++n) {
                for (std::size_t d = 0; d < D; ++d) {
                    double acc = bias[d];
                    for (std::size_t p = 0; p < P; ++p) acc += patches.at(b, n, p) * weight.at(p, d);
                    REQUIRE(out.val().at(b, n, d) == Catch::Approx(acc).epsilon(1e-12));
                }
            }
        }
    }
}

TEST_CASE("sos_shift prepends the SOS vector and drops the final embedding") {
    ad::Graph g;
    const std::size_t B = 2, N = 4, D = 6;
    RngStream rng(23);
    Tensor emb({B, N, D});
    for (std::size_t i = 0; i < emb.numel(); ++i) emb[i] = rng.normal();
    Tensor sos({D});
    for (std::size_t i = 0; i < D; ++i) sos[i] = rng.normal();
    const Tensor pe = positional_table(N, D);

    ad::Var out = ad::sos_shift(ad::leaf(g, emb, false), ad::leaf(g, sos), pe);
    for (std::size_t b = 0; b < B; ++b) {
        for (std::size_t d = 0; d < D; ++d) {
            REQUIRE(out.val().at(b, 0, d) == Catch::Approx(sos[d] + pe.at(0, d)).epsilon(1e-12));
        }
        for (std::size_t j = 1; j < N; ++j) {
            for (std::size_t d = 0; d < D; ++d) {
                // Position j differs from input position j-1 by exactly pe[j].
                REQUIRE(out.val().at(b, j, d) ==
                        Catch::Approx(emb.at(b, j - 1, d) + pe.at(j, d)).epsilon(1e-12));
            }
        }
    }
}

TEST_CASE("sos_shift with zero pe and zero sos is a pure right shift") {
    ad::Graph g;
    const std::size_t N = 3, D = 2;
    Tensor emb({1, N, D}, {1, 2, 3, 4, 5, 6});
    ad::Var out = ad::sos_shift(ad::leaf(g, emb, false), ad::leaf(g, Tensor({D})), Tensor({N, D}));
    CHECK(out.val().at(0, 0, 0) == 0.0);
    CHECK(out.val().at(0, 0, 1) == 0.0);
    CHECK(out.val().at(0, 1, 0) == 1.0);
    CHECK(out.val().at(0, 2, 1) == 4.0);
    // The final clean embedding (5, 6) is excluded.
}

TEST_CASE("sos_shift degenerate length one") {
    ad::Graph g;
    Tensor emb({1, 1, 2}, {7, 8});
    Tensor sos({2}, {1.0, -1.0});
    const Tensor pe = positional_table(1, 2);
    ad::Var out = ad::sos_shift(ad::leaf(g, emb, false), ad::leaf(g, sos), pe);
    CHECK(out.val().at(0, 0, 0) == Catch::Approx(1.0 + pe.at(0, 0)));
    CHECK(out.val().at(0, 0, 1) == Catch::Approx(-1.0 + pe.at(0, 1)));
}

#include <catch2/catch_amalgamated.hpp>

#include <timedart/oracle.hpp>
#include <timedart/pretrain.hpp>
#include <timedart/synth.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>

using namespace timedart;

namespace {

ModelConfig tiny_model() {
    ModelConfig mc;
    mc.patch_len = 2;
    mc.model_dim = 8;
    mc.encoder_layers = 1;
    mc.decoder_layers = 1;
    mc.heads = 2;
    return mc;
}

PretrainConfig tiny_config() {
    PretrainConfig pc;
    pc.model = tiny_model();
    pc.total_steps = 50;
    pc.seed = 9;
    return pc;
}

Tensor random_batch(std::size_t rows, std::size_t cols, std::uint64_t seed) {
    Tensor batch({rows, cols});
    RngStream rng(seed);
    for (std::size_t i = 0; i < batch.numel(); ++i) batch[i] = rng.normal();
    return batch;
}

std::vector<Tensor> overfit_corpus(std::size_t windows, std::size_t length) {
    SynthSpec spec;
    spec.kind = SynthKind::sinusoid_mix;
    spec.length = windows * length;
    spec.frequencies = {0.02, 0.11};
    spec.amplitudes = {1.0, 0.4};
    spec.noise_std = 0.05;
    spec.seed = 31;
    const SynthResult synth = generate(spec);
    const auto slabs = make_windows(synth.series, length, 0, length);
    return prepare_pretrain_instances(slabs);
}

std::string file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

} // namespace

TEST_CASE("apply_ablation selects masks and loss") {
    PretrainConfig config = tiny_config();
    const EffectiveSetup standard = apply_ablation(config);
    CHECK(standard.encoder_mask.kind == MaskKind::causal);
    CHECK(standard.decoder_mask.kind == MaskKind::self_only);
    CHECK(standard.use_diffusion);

    config.no_ar = true;
    const EffectiveSetup no_ar = apply_ablation(config);
    CHECK(no_ar.encoder_mask.kind == MaskKind::none);
    CHECK(no_ar.decoder_mask.kind == MaskKind::none);
    CHECK(no_ar.use_diffusion);

    config.no_diff = true;
    const EffectiveSetup both = apply_ablation(config);
    CHECK(both.encoder_mask.kind == MaskKind::none);
    CHECK_FALSE(both.use_diffusion);

    config.no_ar = false;
    const EffectiveSetup no_diff = apply_ablation(config);
    CHECK(no_diff.encoder_mask.kind == MaskKind::causal);
    CHECK_FALSE(no_diff.use_diffusion);

    config.no_diff = false;
    config.mask_ratio = 0.4;
    CHECK(apply_ablation(config).decoder_mask.kind == MaskKind::partial_causal);
    config.mask_ratio = 0.0;
    CHECK(apply_ablation(config).decoder_mask.kind == MaskKind::causal);
}

TEST_CASE("diffusion loss matches the scalar-loop oracle") {
    const PretrainConfig config = tiny_config();
    RngStream rng(4);
    const ModelParams model = ModelParams::init(config.model, rng);
    const NoiseSchedule schedule = build_schedule(config.scheduler, config.total_steps);
    const Tensor batch = random_batch(3, 12, 21);

    for (const bool no_diff : {false, true}) {
        PretrainConfig variant = config;
        variant.no_diff = no_diff;
        PretrainStreams streams = PretrainStreams::from_seed(9);
        ad::Graph graph;
        BoundParams bound(graph, model.store);
        const PretrainForward fwd = pretrain_forward(bound, batch, variant, schedule, streams);
        const double reference = oracle::naive_mse(fwd.prediction.val(), fwd.clean);
        REQUIRE(std::abs(fwd.loss.val()[0] - reference) / reference <= 1e-6);
        REQUIRE(fwd.loss.val()[0] >= 0.0);
    }
}

TEST_CASE("a perfect reconstruction has zero loss") {
    ad::Graph graph;
    Tensor clean({2, 3, 4});
    RngStream rng(5);
    for (std::size_t i = 0; i < clean.numel(); ++i) clean[i] = rng.normal();
    const ad::Var loss = ad::mse_against(ad::constant(graph, clean), clean);
    CHECK(loss.val()[0] == 0.0);
}

TEST_CASE("pretrain_step gradients flow through the active path only") {
    const PretrainConfig config = tiny_config();
    RngStream rng(6);
    const ModelParams model = ModelParams::init(config.model, rng);
    const NoiseSchedule schedule = build_schedule(config.scheduler, config.total_steps);
    const Tensor batch = random_batch(2, 12, 22);

    SECTION("full model touches encoder, decoder and projector") {
        PretrainStreams streams = PretrainStreams::from_seed(9);
        const StepResult step = pretrain_step(batch, model, config, schedule, streams);
        REQUIRE(step.grads.size() == model.store.size());
        double enc_norm = 0.0, dec_norm = 0.0, embed_norm = 0.0, sos_norm = 0.0;
        for (const auto& [name, grad] : step.grads) {
            double norm = 0.0;
            for (std::size_t i = 0; i < grad.numel(); ++i) norm += grad[i] * grad[i];
            if (name.rfind("enc.", 0) == 0) enc_norm += norm;
            if (name.rfind("dec.", 0) == 0) dec_norm += norm;
            if (name.rfind("embed.", 0) == 0) embed_norm += norm;
            if (name == "sos") sos_norm += norm;
        }
        CHECK(enc_norm > 0.0);
        CHECK(dec_norm > 0.0);
        CHECK(embed_norm > 0.0);
        CHECK(sos_norm > 0.0);
    }

    SECTION("no_diff leaves decoder gradients exactly zero") {
        PretrainConfig variant = config;
        variant.no_diff = true;
        PretrainStreams streams = PretrainStreams::from_seed(9);
        const StepResult step = pretrain_step(batch, model, variant, schedule, streams);
        for (const auto& [name, grad] : step.grads) {
            if (name.rfind("dec.", 0) != 0) continue;
            for (std::size_t i = 0; i < grad.numel(); ++i) REQUIRE(grad[i] == 0.0);
        }
    }
}

TEST_CASE("analytic gradients match finite differences on the tiny model") {
    // Covers the shared embedding: its gradient accumulates the clean-path
    // and noisy-path contributions, and the finite-difference oracle sees
    // exactly the same two paths.
    const PretrainConfig config = tiny_config();
    RngStream rng(7);
    ModelParams model = ModelParams::init(config.model, rng);
    const NoiseSchedule schedule = build_schedule(config.scheduler, config.total_steps);
    const Tensor batch = random_batch(2, 8, 23);

    PretrainStreams streams = PretrainStreams::from_seed(9);
    const StepResult step = pretrain_step(batch, model, config, schedule, streams);

    const GradMap fd = oracle::finite_diff_gradient(
        model.store,
        [&]() {
            PretrainStreams eval_streams = PretrainStreams::from_seed(9);
            ad::Graph graph;
            BoundParams bound(graph, model.store);
            return pretrain_forward(bound, batch, config, schedule, eval_streams).loss.val()[0];
        },
        1e-3);

    std::size_t checked = 0, within = 0;
    for (const auto& [name, grad] : step.grads) {
        const Tensor& reference = fd.at(name);
        for (std::size_t i = 0; i < grad.numel(); ++i) {
            if (std::abs(grad[i]) <= 1e-8) continue;
            ++checked;
            const double rel = std::abs(grad[i] - reference[i]) /
                               std::max(std::abs(grad[i]), std::abs(reference[i]));
            if (rel <= 1e-4) ++within;
        }
    }
    REQUIRE(checked > 500);
    REQUIRE(double(within) / double(checked) >= 0.99);
}

TEST_CASE("pretrain_loop validates inputs") {
    PretrainConfig config = tiny_config();
    config.epochs = 0;
    CHECK_THROWS_AS(pretrain_loop({Tensor({8})}, config), Error);
    config.epochs = 1;
    CHECK_THROWS_AS(pretrain_loop({}, config), Error);
    config.model.patch_len = 3;
    CHECK_THROWS_AS(pretrain_loop({Tensor({8})}, config), Error);
}

TEST_CASE("overfit smoke: loss collapses on a tiny corpus") {
    const std::vector<Tensor> corpus = overfit_corpus(32, 64);
    REQUIRE(corpus.size() == 32);

    PretrainConfig config;
    config.model.patch_len = 4;
    config.model.model_dim = 16;
    config.model.encoder_layers = 2;
    config.model.decoder_layers = 1;
    config.model.heads = 8;
    config.total_steps = 1000;
    config.epochs = 50;
    config.batch_size = 4;
    config.learning_rate = 1e-3;
    config.seed = 1;

    const PretrainResult result = pretrain_loop(corpus, config);
    REQUIRE_FALSE(result.diverged);
    REQUIRE(result.epoch_losses.size() == 50);
    CHECK(result.epoch_losses[49] <= 0.1 * result.epoch_losses[0]);

    // Identical rerun reproduces the loss log bitwise.
    const PretrainResult repeat = pretrain_loop(corpus, config);
    for (std::size_t e = 0; e < 50; ++e) {
        REQUIRE(result.epoch_losses[e] == repeat.epoch_losses[e]);
    }
}

TEST_CASE("best-so-far loss trends down across seeds") {
    const std::vector<Tensor> corpus = overfit_corpus(24, 32);
    double first = 0.0, final_best = 0.0;
    for (std::uint64_t seed : {11ull, 12ull, 13ull}) {
        PretrainConfig config;
        config.model.patch_len = 4;
        config.model.model_dim = 8;
        config.model.encoder_layers = 1;
        config.model.decoder_layers = 1;
        config.model.heads = 2;
        config.total_steps = 200;
        config.epochs = 12;
        config.batch_size = 4;
        config.learning_rate = 1e-3;
        config.seed = seed;
        const PretrainResult result = pretrain_loop(corpus, config);
        first += result.epoch_losses.front();
        double best = result.epoch_losses.front();
        for (double loss : result.epoch_losses) best = std::min(best, loss);
        final_best += best;
        REQUIRE(best <= result.epoch_losses.front());
    }
    CHECK(final_best < first);
}

TEST_CASE("divergence aborts with the last good checkpoint") {
    const std::vector<Tensor> corpus = overfit_corpus(8, 16);
    PretrainConfig config;
    config.model.patch_len = 4;
    config.model.model_dim = 8;
    config.model.encoder_layers = 1;
    config.model.decoder_layers = 1;
    config.model.heads = 2;
    config.total_steps = 100;
    config.epochs = 6;
    config.batch_size = 4;
    // Large enough that squared activations overflow to inf after one update.
    config.learning_rate = 1e200;
    config.clip_norm = 0.0;
    config.seed = 3;
    const PretrainResult result = pretrain_loop(corpus, config);
    CHECK(result.diverged);
    CHECK(result.checkpoint.records.size() > 0);
    for (const auto& rec : result.checkpoint.records) {
        for (float v : rec.data) REQUIRE(std::isfinite(v));
    }
}

TEST_CASE("checkpoint round-trips are bitwise exact") {
    const PretrainConfig config = tiny_config();
    RngStream rng(8);
    ModelParams model = ModelParams::init(config.model, rng);
    auto snap = config_snapshot(config);
    snap["epoch"] = "7";
    const Checkpoint original = Checkpoint::capture(model.store, snap);

    const std::string path_a = "/tmp/timedart_test_ckpt_a.bin";
    const std::string path_b = "/tmp/timedart_test_ckpt_b.bin";
    original.save(path_a);
    const Checkpoint loaded = Checkpoint::load(path_a);
    loaded.save(path_b);
    REQUIRE(file_bytes(path_a) == file_bytes(path_b));
    CHECK(loaded.config_value("epoch") == "7");

    // Restored parameters drive an identical forward pass.
    ModelParams restored_a = ModelParams::init(config.model, rng);
    ModelParams restored_b = ModelParams::init(config.model, rng);
    original.restore(restored_a.store);
    loaded.restore(restored_b.store);
    const NoiseSchedule schedule = build_schedule(config.scheduler, config.total_steps);
    const Tensor batch = random_batch(2, 8, 29);
    PretrainStreams streams_a = PretrainStreams::from_seed(9);
    PretrainStreams streams_b = PretrainStreams::from_seed(9);
    const StepResult step_a = pretrain_step(batch, restored_a, config, schedule, streams_a);
    const StepResult step_b = pretrain_step(batch, restored_b, config, schedule, streams_b);
    REQUIRE(step_a.loss == step_b.loss);

    std::remove(path_a.c_str());
    std::remove(path_b.c_str());
}

TEST_CASE("checkpoint loader rejects corruption") {
    const PretrainConfig config = tiny_config();
    RngStream rng(9);
    ModelParams model = ModelParams::init(config.model, rng);
    const Checkpoint ckpt = Checkpoint::capture(model.store, config_snapshot(config));
    const std::string path = "/tmp/timedart_test_ckpt_corrupt.bin";
    ckpt.save(path);

    SECTION("bad magic") {
        std::string bytes = file_bytes(path);
        bytes[0] = 'X';
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        CHECK_THROWS_AS(Checkpoint::load(path), CheckpointError);
    }

    SECTION("truncated payload") {
        std::string bytes = file_bytes(path);
        bytes.resize(bytes.size() - 17);
        std::ofstream out(path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        out.close();
        CHECK_THROWS_AS(Checkpoint::load(path), CheckpointError);
    }

    SECTION("missing file") { CHECK_THROWS_AS(Checkpoint::load("/tmp/nope.ckpt"), CheckpointError); }

    std::remove(path.c_str());
}

#ifndef TIMEDART_PRETRAIN_HPP
#define TIMEDART_PRETRAIN_HPP

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "data.hpp"
#include "graph.hpp"
#include "model.hpp"
#include "patch.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace timedart {

class CheckpointError : public Error {
public:
    explicit CheckpointError(const std::string& msg) : Error(msg) {}
};

class DivergenceError : public Error {
public:
    explicit DivergenceError(const std::string& msg) : Error(msg) {}
};

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct PretrainConfig {
    ModelConfig model;
    std::size_t total_steps = 1000;
    SchedulerKind scheduler = SchedulerKind::cosine;
    /// Decoder visibility ratio: 1 = self_only, 0 = causal, between = partial.
    double mask_ratio = 1.0;
    bool no_ar = false;
    bool no_diff = false;
    std::size_t epochs = 50;
    std::size_t batch_size = 16;
    double learning_rate = 1e-4;
    double clip_norm = 5.0; // 0 disables gradient clipping
    std::uint64_t seed = 0;

    void validate() const {
        model.validate();
        if (epochs < 1) throw Error("PretrainConfig: epochs must be >= 1");
        if (batch_size < 1) throw Error("PretrainConfig: batch_size must be >= 1");
        if (learning_rate <= 0.0) throw Error("PretrainConfig: learning_rate must be positive");
        if (total_steps < 1) throw Error("PretrainConfig: total_steps must be >= 1");
        if (mask_ratio < 0.0 || mask_ratio > 1.0) {
            throw Error("PretrainConfig: mask_ratio must lie in [0, 1]");
        }
    }
};

/// Effective masks and loss selector after applying the ablation flags.
struct EffectiveSetup {
    MaskSpec encoder_mask;
    MaskSpec decoder_mask;
    bool use_diffusion = true;
};

inline EffectiveSetup apply_ablation(const PretrainConfig& config) {
    EffectiveSetup setup;
    setup.use_diffusion = !config.no_diff;
    if (config.no_ar) {
        setup.encoder_mask = MaskSpec::none();
        setup.decoder_mask = MaskSpec::none();
    } else {
        setup.encoder_mask = MaskSpec::causal();
        if (config.mask_ratio >= 1.0) {
            setup.decoder_mask = MaskSpec::self_only();
        } else if (config.mask_ratio <= 0.0) {
            setup.decoder_mask = MaskSpec::causal();
        } else {
            setup.decoder_mask = MaskSpec::partial_causal(config.mask_ratio);
        }
    }
    return setup;
}

/// Named randomness sub-streams used by one training run.
struct PretrainStreams {
    RngStream shuffle;
    RngStream steps;
    RngStream noise;
    RngStream mask;

    static PretrainStreams from_seed(std::uint64_t seed) {
        return {RngStream::substream(seed, "pretrain.shuffle"),
                RngStream::substream(seed, "pretrain.steps"),
                RngStream::substream(seed, "pretrain.noise"),
                RngStream::substream(seed, "pretrain.mask")};
    }
};

// ---------------------------------------------------------------------------
// One optimization step
// ---------------------------------------------------------------------------

struct StepResult {
    double loss = 0.0;
    GradMap grads;
};

/// Outputs of one pre-training forward pass, exposed so the loss can be
/// cross-checked against its scalar-loop oracle.
struct PretrainForward {
    ad::Var loss;
    ad::Var prediction; // [B x N x P]
    Tensor clean;       // [B x N x P]
    Tensor noisy;       // [B x N x P], empty under no_diff
};

/// Forward pipeline for one batch of normalized univariate windows [B x L]:
/// patchify -> shared embedding -> SOS shift + PE -> causal encoder; sample
/// per-patch steps -> corrupt -> shared embedding + PE -> denoising decoder
/// (masked self- and cross-attention) -> projector; mean squared error of the
/// reconstructions against the clean patches. With no_diff the decoder is
/// bypassed and the prediction comes from the encoder output alone.
inline PretrainForward pretrain_forward(BoundParams& params, const Tensor& batch,
                                        const PretrainConfig& config,
                                        const NoiseSchedule& schedule, PretrainStreams& streams,
                                        ForwardTrace* trace = nullptr) {
    if (batch.rank() != 2) throw Error("pretrain_forward: expected [B x L] batch");
    const std::size_t L = batch.dim(1);
    const std::size_t P = config.model.patch_len;
    if (L % P != 0) {
        throw Error("pretrain_forward: window length " + std::to_string(L) +
                    " not divisible by patch length " + std::to_string(P));
    }
    const std::size_t B = batch.dim(0);
    const std::size_t N = L / P;
    const EffectiveSetup setup = apply_ablation(config);

    const Tensor clean = patchify(batch, P); // [B x N x P]
    const Tensor pe = positional_table(N, config.model.model_dim);
    ad::Graph& g = params.graph();

    ad::Var clean_emb = ad::affine(ad::constant(g, clean), params["embed.W"], params["embed.b"]);
    ad::Var z_in = ad::sos_shift(clean_emb, params["sos"], pe);
    if (config.model.dropout > 0.0) z_in = ad::dropout(z_in, config.model.dropout, streams.noise);
    const Tensor enc_mask = build_mask(setup.encoder_mask, N, &streams.mask);
    ad::Var encoded = encoder_forward(params, z_in, enc_mask, config.model, trace);

    if (!setup.use_diffusion) {
        ad::Var prediction = project(params, encoded);
        return {ad::mse_against(prediction, clean), prediction, clean, Tensor()};
    }

    // Independent per-patch diffusion steps, one (step, noise) draw per patch.
    Tensor noisy({B, N, P});
    std::vector<double> epsilon(P);
    for (std::size_t b = 0; b < B; ++b) {
        const StepAssignment assignment = sample_steps(N, config.total_steps, streams.steps);
        for (std::size_t j = 0; j < N; ++j) {
            for (std::size_t k = 0; k < P; ++k) epsilon[k] = streams.noise.normal();
            const std::size_t offset = (b * N + j) * P;
            add_noise(clean.data() + offset, noisy.data() + offset, P, assignment.steps[j],
                      schedule, epsilon.data());
        }
    }

    ad::Var noisy_emb = ad::affine(ad::constant(g, noisy), params["embed.W"], params["embed.b"]);
    ad::Var z_noisy = ad::add_rows(noisy_emb, pe);
    if (config.model.dropout > 0.0) z_noisy = ad::dropout(z_noisy, config.model.dropout, streams.noise);
    const Tensor dec_mask = build_mask(setup.decoder_mask, N, &streams.mask);
    ad::Var decoded = decoder_forward(params, z_noisy, encoded, dec_mask, config.model, trace);
    ad::Var reconstruction = project(params, decoded);
    return {ad::mse_against(reconstruction, clean), reconstruction, clean, noisy};
}

inline StepResult pretrain_step(const Tensor& batch, const ModelParams& model,
                                const PretrainConfig& config, const NoiseSchedule& schedule,
                                PretrainStreams& streams) {
    ad::Graph graph;
    BoundParams bound(graph, model.store);
    const PretrainForward forward = pretrain_forward(bound, batch, config, schedule, streams);
    const ad::Var loss = forward.loss;
    if (!loss.val().all_finite()) throw DivergenceError("pretrain_step: non-finite loss");
    graph.backward(loss.id);

    StepResult result;
    result.loss = loss.val()[0];
    result.grads = bound.gradients();
    for (const auto& entry : model.store.entries()) {
        if (!result.grads.count(entry.name)) result.grads[entry.name] = Tensor(entry.value.shape());
    }
    return result;
}

// ---------------------------------------------------------------------------
// Optimizer
// ---------------------------------------------------------------------------

/// Adam with bias correction and optional global-norm gradient clipping.
class Adam {
public:
    explicit Adam(double learning_rate, double beta1 = 0.9, double beta2 = 0.999,
                  double epsilon = 1e-8)
        : lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(epsilon) {}

    void step(ParamStore& params, const GradMap& grads, double clip_norm = 0.0) {
        ++t_;
        double scale = 1.0;
        if (clip_norm > 0.0) {
            double total = 0.0;
            for (const auto& [name, grad] : grads) {
                (void)name;
                for (std::size_t i = 0; i < grad.numel(); ++i) total += grad[i] * grad[i];
            }
            const double norm = std::sqrt(total);
            if (norm > clip_norm) scale = clip_norm / norm;
        }
        const double bc1 = 1.0 - std::pow(beta1_, t_);
        const double bc2 = 1.0 - std::pow(beta2_, t_);
        for (const auto& [name, grad] : grads) {
            Tensor& value = params[name];
            auto& [m, v] = state_[name];
            if (m.empty()) {
                m = Tensor(grad.shape());
                v = Tensor(grad.shape());
            }
            for (std::size_t i = 0; i < grad.numel(); ++i) {
                const double gi = grad[i] * scale;
                m[i] = beta1_ * m[i] + (1.0 - beta1_) * gi;
                v[i] = beta2_ * v[i] + (1.0 - beta2_) * gi * gi;
                value[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
            }
        }
    }

private:
    double lr_, beta1_, beta2_, eps_;
    int t_ = 0;
    std::map<std::string, std::pair<Tensor, Tensor>> state_;
};

// ---------------------------------------------------------------------------
// Checkpoint
// ---------------------------------------------------------------------------

/// On-disk model snapshot. Parameters are quantized to 32-bit floats at
/// capture time, so save/load round-trips are bitwise exact.
struct Checkpoint {
    std::map<std::string, std::string> config;

    struct Record {
        std::string name;
        std::vector<std::uint64_t> dims;
        std::vector<float> data;
    };
    std::vector<Record> records;

    static constexpr std::array<char, 4> kMagic{'T', 'D', 'R', 'T'};
    static constexpr std::uint32_t kVersion = 1;

    static Checkpoint capture(const ParamStore& store, std::map<std::string, std::string> config) {
        Checkpoint ckpt;
        ckpt.config = std::move(config);
        for (const auto& entry : store.entries()) {
            Record rec;
            rec.name = entry.name;
            for (std::size_t d : entry.value.shape()) rec.dims.push_back(d);
            rec.data.reserve(entry.value.numel());
            for (std::size_t i = 0; i < entry.value.numel(); ++i) {
                rec.data.push_back(static_cast<float>(entry.value[i]));
            }
            ckpt.records.push_back(std::move(rec));
        }
        return ckpt;
    }

    void restore(ParamStore& store) const {
        for (const Record& rec : records) {
            Tensor& value = store[rec.name];
            std::vector<std::size_t> dims(rec.dims.begin(), rec.dims.end());
            if (value.shape() != dims) {
                throw CheckpointError("checkpoint parameter '" + rec.name + "' has shape mismatch");
            }
            for (std::size_t i = 0; i < rec.data.size(); ++i) {
                value[i] = static_cast<double>(rec.data[i]);
            }
        }
    }

    std::string config_value(const std::string& key) const {
        auto it = config.find(key);
        if (it == config.end()) throw CheckpointError("checkpoint config missing key '" + key + "'");
        return it->second;
    }

    void save(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
        out.write(kMagic.data(), 4);
        write_u32(out, kVersion);
        std::string block;
        for (const auto& [key, value] : config) block += key + "=" + value + "\n";
        write_u32(out, static_cast<std::uint32_t>(block.size()));
        out.write(block.data(), static_cast<std::streamsize>(block.size()));
        for (const Record& rec : records) {
            write_u32(out, static_cast<std::uint32_t>(rec.name.size()));
            out.write(rec.name.data(), static_cast<std::streamsize>(rec.name.size()));
            write_u32(out, static_cast<std::uint32_t>(rec.dims.size()));
            for (std::uint64_t d : rec.dims) write_u64(out, d);
            for (float f : rec.data) write_f32(out, f);
        }
        if (!out) throw CheckpointError("failed writing checkpoint: " + path);
    }

    static Checkpoint load(const std::string& path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw CheckpointError("cannot open checkpoint: " + path);
        std::array<char, 4> magic{};
        in.read(magic.data(), 4);
        if (!in || magic != kMagic) throw CheckpointError("bad checkpoint magic in " + path);
        const std::uint32_t version = read_u32(in, path);
        if (version != kVersion) {
            throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
        }
        const std::uint32_t block_len = read_u32(in, path);
        std::string block(block_len, '\0');
        in.read(block.data(), block_len);
        if (!in) throw CheckpointError("truncated checkpoint config block in " + path);

        Checkpoint ckpt;
        std::size_t pos = 0;
        while (pos < block.size()) {
            const std::size_t eol = block.find('\n', pos);
            const std::string line = block.substr(pos, eol - pos);
            pos = eol == std::string::npos ? block.size() : eol + 1;
            const std::size_t eq = line.find('=');
            if (eq != std::string::npos) ckpt.config[line.substr(0, eq)] = line.substr(eq + 1);
        }

        while (true) {
            std::uint32_t name_len = 0;
            in.read(reinterpret_cast<char*>(&name_len), 4);
            if (in.gcount() == 0 && in.eof()) break;
            if (!in) throw CheckpointError("truncated checkpoint record in " + path);
            Record rec;
            rec.name.resize(name_len);
            in.read(rec.name.data(), name_len);
            const std::uint32_t rank = read_u32(in, path);
            std::uint64_t numel = 1;
            for (std::uint32_t d = 0; d < rank; ++d) {
                const std::uint64_t dim = read_u64(in, path);
                rec.dims.push_back(dim);
                numel *= dim;
            }
            rec.data.resize(numel);
            in.read(reinterpret_cast<char*>(rec.data.data()),
                    static_cast<std::streamsize>(numel * sizeof(float)));
            if (!in) throw CheckpointError("truncated checkpoint payload in " + path);
            ckpt.records.push_back(std::move(rec));
        }
        return ckpt;
    }

private:
    static void write_u32(std::ofstream& out, std::uint32_t v) {
        unsigned char bytes[4];
        for (int i = 0; i < 4; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
        out.write(reinterpret_cast<char*>(bytes), 4);
    }
    static void write_u64(std::ofstream& out, std::uint64_t v) {
        unsigned char bytes[8];
        for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>(v >> (8 * i));
        out.write(reinterpret_cast<char*>(bytes), 8);
    }
    static void write_f32(std::ofstream& out, float f) {
        std::uint32_t bits = 0;
        std::memcpy(&bits, &f, 4);
        write_u32(out, bits);
    }
    static std::uint32_t read_u32(std::ifstream& in, const std::string& path) {
        unsigned char bytes[4];
        in.read(reinterpret_cast<char*>(bytes), 4);
        if (!in) throw CheckpointError("truncated checkpoint in " + path);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[i]) << (8 * i);
        return v;
    }
    static std::uint64_t read_u64(std::ifstream& in, const std::string& path) {
        unsigned char bytes[8];
        in.read(reinterpret_cast<char*>(bytes), 8);
        if (!in) throw CheckpointError("truncated checkpoint in " + path);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
        return v;
    }
};

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct PretrainResult {
    Checkpoint checkpoint;
    std::vector<double> epoch_losses;
    bool diverged = false;
    std::size_t completed_epochs = 0;
};

/// Normalize each window's lookback and flatten the channel-independent
/// instances into [L] training rows.
inline std::vector<Tensor> prepare_pretrain_instances(const std::vector<Window>& windows) {
    std::vector<Tensor> instances;
    const ChannelizedBatch channelized = channelize(windows);
    instances.reserve(channelized.instances.size());
    for (const Window& inst : channelized.instances) {
        auto [normalized, stats] = instance_normalize(inst.lookback);
        (void)stats;
        instances.push_back(normalized.reshaped({normalized.dim(1)}));
    }
    return instances;
}

inline std::map<std::string, std::string> config_snapshot(const PretrainConfig& config) {
    std::map<std::string, std::string> snap;
    snap["patch_len"] = std::to_string(config.model.patch_len);
    snap["model_dim"] = std::to_string(config.model.model_dim);
    snap["encoder_layers"] = std::to_string(config.model.encoder_layers);
    snap["decoder_layers"] = std::to_string(config.model.decoder_layers);
    snap["heads"] = std::to_string(config.model.heads);
    snap["ff_dim"] = std::to_string(config.model.effective_ff());
    snap["pre_norm"] = config.model.pre_norm ? "true" : "false";
    snap["dropout"] = std::to_string(config.model.dropout);
    snap["total_steps"] = std::to_string(config.total_steps);
    snap["scheduler"] = to_string(config.scheduler);
    snap["mask_ratio"] = std::to_string(config.mask_ratio);
    snap["no_ar"] = config.no_ar ? "true" : "false";
    snap["no_diff"] = config.no_diff ? "true" : "false";
    snap["epochs"] = std::to_string(config.epochs);
    snap["batch_size"] = std::to_string(config.batch_size);
    snap["learning_rate"] = std::to_string(config.learning_rate);
    snap["seed"] = std::to_string(config.seed);
    return snap;
}

inline PretrainResult pretrain_loop(const std::vector<Tensor>& instances,
                                    const PretrainConfig& config,
                                    const std::function<void(std::size_t, double)>& on_epoch = {}) {
    config.validate();
    if (instances.empty()) throw Error("pretrain_loop: empty dataset");
    const std::size_t L = instances[0].numel();
    if (L % config.model.patch_len != 0) {
        throw Error("pretrain_loop: window length not divisible by patch length");
    }

    RngStream init_rng = RngStream::substream(config.seed, "init");
    ModelParams model = ModelParams::init(config.model, init_rng);
    PretrainStreams streams = PretrainStreams::from_seed(config.seed);
    const NoiseSchedule schedule = build_schedule(config.scheduler, config.total_steps);
    Adam optimizer(config.learning_rate);

    auto snapshot = [&](std::size_t epoch) {
        auto snap = config_snapshot(config);
        snap["epoch"] = std::to_string(epoch);
        snap["rng_shuffle"] = streams.shuffle.serialize();
        snap["rng_steps"] = streams.steps.serialize();
        snap["rng_noise"] = streams.noise.serialize();
        snap["rng_mask"] = streams.mask.serialize();
        return Checkpoint::capture(model.store, std::move(snap));
    };

    PretrainResult result;
    result.checkpoint = snapshot(0);

    std::vector<std::size_t> order(instances.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        streams.shuffle.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(begin + config.batch_size, order.size());
            Tensor batch({end - begin, L});
            for (std::size_t i = begin; i < end; ++i) {
                const Tensor& inst = instances[order[i]];
                for (std::size_t t = 0; t < L; ++t) batch.at(i - begin, t) = inst[t];
            }
            StepResult step;
            try {
                step = pretrain_step(batch, model, config, schedule, streams);
            } catch (const NumericsError&) {
                result.diverged = true;
                return result;
            } catch (const DivergenceError&) {
                result.diverged = true;
                return result;
            }
            optimizer.step(model.store, step.grads, config.clip_norm);
            epoch_loss += step.loss * static_cast<double>(end - begin);
            seen += end - begin;
        }
        epoch_loss /= static_cast<double>(seen);
        result.epoch_losses.push_back(epoch_loss);
        result.completed_epochs = epoch;
        result.checkpoint = snapshot(epoch);
        if (on_epoch) on_epoch(epoch, epoch_loss);
    }
    return result;
}

} // namespace timedart

#endif // TIMEDART_PRETRAIN_HPP

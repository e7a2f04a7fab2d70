#ifndef TIMEDART_FINETUNE_HPP
#define TIMEDART_FINETUNE_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "data.hpp"
#include "graph.hpp"
#include "model.hpp"
#include "patch.hpp"
#include "pretrain.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace timedart {

enum class TaskKind { forecast, classify };
enum class FinetuneMode { full, linear_probe };

inline TaskKind task_from_string(const std::string& s) {
    if (s == "forecast") return TaskKind::forecast;
    if (s == "classify") return TaskKind::classify;
    throw Error("unknown task: " + s);
}

struct FinetuneConfig {
    FinetuneMode mode = FinetuneMode::full;
    double portion = 1.0; // few-shot fraction of the training windows
    std::size_t epochs = 10;
    std::size_t batch_size = 16;
    double learning_rate = 1e-4;
    double clip_norm = 5.0;
    bool keep_causal_mask = true;
    /// Feed downstream patches through the pre-training SOS shift instead of
    /// plain embedding + PE. Off by default: all N patches enter directly.
    bool use_sos_shift = false;
    std::uint64_t seed = 0;
    std::size_t horizon = 96;    // forecast head width
    std::size_t num_classes = 2; // classify head width

    void validate(TaskKind task) const {
        if (epochs < 1) throw Error("FinetuneConfig: epochs must be >= 1");
        if (batch_size < 1) throw Error("FinetuneConfig: batch_size must be >= 1");
        if (portion <= 0.0 || portion > 1.0) throw Error("FinetuneConfig: portion must lie in (0, 1]");
        if (learning_rate <= 0.0) throw Error("FinetuneConfig: learning_rate must be positive");
        if (task == TaskKind::forecast && horizon == 0) {
            throw Error("FinetuneConfig: forecast horizon must be >= 1");
        }
        if (task == TaskKind::classify && num_classes < 2) {
            throw Error("FinetuneConfig: need at least two classes");
        }
    }
};

// ---------------------------------------------------------------------------
// Downstream forward passes
// ---------------------------------------------------------------------------

/// How downstream windows are fed to the transferred encoder.
struct EncodeOptions {
    bool keep_causal_mask = true;
    bool use_sos_shift = false;

    static EncodeOptions from(const FinetuneConfig& config) {
        return {config.keep_causal_mask, config.use_sos_shift};
    }
};

namespace detail {

/// Encode a batch of normalized univariate instances [R x L]:
/// patchify -> shared embedding + PE -> encoder. The SOS shift is off by
/// default downstream; every patch enters at its own position.
inline ad::Var encode_instances(BoundParams& params, const Tensor& normalized,
                                const ModelConfig& config, const EncodeOptions& options) {
    const std::size_t L = normalized.dim(1);
    const std::size_t N = L / config.patch_len;
    const Tensor patches = patchify(normalized, config.patch_len);
    const Tensor pe = positional_table(N, config.model_dim);
    ad::Graph& g = params.graph();
    ad::Var emb = ad::affine(ad::constant(g, patches), params["embed.W"], params["embed.b"]);
    ad::Var z = options.use_sos_shift ? ad::sos_shift(emb, params["sos"], pe)
                                      : ad::add_rows(emb, pe);
    const Tensor mask =
        build_mask(options.keep_causal_mask ? MaskSpec::causal() : MaskSpec::none(), N, nullptr);
    return encoder_forward(params, z, mask, config);
}

} // namespace detail

/// Flatten-head forecast over a batch of normalized instances [R x L];
/// returns normalized predictions [R x H].
inline ad::Var forecast_forward_batch(BoundParams& params, const Tensor& normalized,
                                      const ModelConfig& config, const EncodeOptions& options) {
    ad::Var encoded = detail::encode_instances(params, normalized, config, options);
    ad::Var flat = ad::flatten_rows(encoded);
    return ad::affine(flat, params["head.W"], params["head.b"]);
}

/// Forecast one multivariate window channel-independently: instance
/// normalization, encoder, flatten head, then denormalization with the
/// lookback's own statistics. Returns [C x H].
inline Tensor forecast_forward(const ParamStore& store, const ModelConfig& config,
                               const Tensor& lookback, std::size_t horizon,
                               const EncodeOptions& options = {}) {
    if (lookback.dim(1) % config.patch_len != 0) {
        throw Error("forecast_forward: lookback length not divisible by patch length");
    }
    auto [normalized, stats] = instance_normalize(lookback);
    ad::Graph graph;
    BoundParams bound(graph, store, [](const std::string&) { return false; });
    ad::Var pred = forecast_forward_batch(bound, normalized, config, options);
    Tensor out({lookback.dim(0), horizon});
    for (std::size_t c = 0; c < lookback.dim(0); ++c) {
        for (std::size_t h = 0; h < horizon; ++h) out.at(c, h) = pred.val().at(c, h);
    }
    return denormalize(out, stats);
}

/// Max-pooling classification head over a batch of windows whose channels
/// were stacked into [B*C x L] normalized instances: encoder outputs are
/// max-pooled jointly over (channel, position) before the affine head.
inline ad::Var classify_forward_batch(BoundParams& params, const Tensor& normalized,
                                      std::size_t channels, const ModelConfig& config,
                                      const EncodeOptions& options) {
    ad::Var encoded = detail::encode_instances(params, normalized, config, options);
    ad::Var pooled = ad::group_maxpool(encoded, channels);
    return ad::affine(pooled, params["head.W"], params["head.b"]);
}

/// Class logits for one multivariate window.
inline Tensor classify_forward(const ParamStore& store, const ModelConfig& config,
                               const Tensor& window, const EncodeOptions& options = {}) {
    auto [normalized, stats] = instance_normalize(window);
    (void)stats;
    ad::Graph graph;
    BoundParams bound(graph, store, [](const std::string&) { return false; });
    ad::Var logits = classify_forward_batch(bound, normalized, window.dim(0), config, options);
    return logits.val().reshaped({logits.val().numel()});
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

struct ForecastMetrics {
    double mse = 0.0;
    double mae = 0.0;
};

/// MSE and MAE over aligned prediction/target pairs, in denormalized space.
inline ForecastMetrics evaluate_forecast(const std::vector<Tensor>& predictions,
                                         const std::vector<Tensor>& targets) {
    if (predictions.size() != targets.size() || predictions.empty()) {
        throw Error("evaluate_forecast: prediction/target count mismatch or empty");
    }
    double se = 0.0, ae = 0.0;
    std::size_t count = 0;
    for (std::size_t w = 0; w < predictions.size(); ++w) {
        require_same_shape(predictions[w], targets[w], "evaluate_forecast");
        for (std::size_t i = 0; i < predictions[w].numel(); ++i) {
            const double e = predictions[w][i] - targets[w][i];
            se += e * e;
            ae += std::abs(e);
            ++count;
        }
    }
    return {se / static_cast<double>(count), ae / static_cast<double>(count)};
}

struct ClassifyMetrics {
    double accuracy = 0.0;
    double macro_f1 = 0.0;
};

/// Accuracy and macro-F1 from [B x K] logits. Classes absent from both the
/// predictions and the labels contribute an F1 of zero.
inline ClassifyMetrics evaluate_classify(const Tensor& logits, const std::vector<int>& labels) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size() || labels.empty()) {
        throw Error("evaluate_classify: logits/labels mismatch or empty");
    }
    const std::size_t classes = logits.dim(1);
    std::vector<std::size_t> tp(classes, 0), fp(classes, 0), fn(classes, 0);
    std::size_t correct = 0;
    for (std::size_t b = 0; b < labels.size(); ++b) {
        std::size_t pred = 0;
        for (std::size_t k = 1; k < classes; ++k) {
            if (logits.at(b, k) > logits.at(b, pred)) pred = k;
        }
        const auto truth = static_cast<std::size_t>(labels[b]);
        if (truth >= classes) throw Error("evaluate_classify: label out of range");
        if (pred == truth) {
            ++correct;
            ++tp[truth];
        } else {
            ++fp[pred];
            ++fn[truth];
        }
    }
    double f1_sum = 0.0;
    for (std::size_t k = 0; k < classes; ++k) {
        const double denom = static_cast<double>(2 * tp[k] + fp[k] + fn[k]);
        f1_sum += denom == 0.0 ? 0.0 : 2.0 * static_cast<double>(tp[k]) / denom;
    }
    return {static_cast<double>(correct) / static_cast<double>(labels.size()),
            f1_sum / static_cast<double>(classes)};
}

// ---------------------------------------------------------------------------
// Fine-tuning loop
// ---------------------------------------------------------------------------

struct MetricRow {
    std::size_t epoch;
    std::string split;
    std::string metric;
    double value;
};

struct FinetuneResult {
    Checkpoint checkpoint;
    std::vector<MetricRow> log;
};

/// Attach the task head to a parameter store when absent.
inline void ensure_head(ParamStore& store, const ModelConfig& config, TaskKind task,
                        std::size_t lookback_len, const FinetuneConfig& finetune, RngStream& rng) {
    if (store.has("head.W")) return;
    const std::size_t num_patches = lookback_len / config.patch_len;
    const std::size_t in_dim = task == TaskKind::forecast ? num_patches * config.model_dim
                                                          : config.model_dim;
    const std::size_t out_dim =
        task == TaskKind::forecast ? finetune.horizon : finetune.num_classes;
    detail::init_affine(store, "head", in_dim, out_dim, rng);
}

/// Chronological few-shot prefix: the first ceil(portion * count) windows.
inline std::size_t few_shot_count(std::size_t total, double portion) {
    const auto selected =
        static_cast<std::size_t>(std::ceil(portion * static_cast<double>(total)));
    return std::min(std::max<std::size_t>(selected, 1), total);
}

namespace detail {

struct ForecastBatch {
    Tensor normalized;          // [R x L]
    std::vector<double> scale;  // per-instance std
    std::vector<double> shift;  // per-instance mean
    Tensor raw_horizon;         // [R x H]
};

inline ForecastBatch build_forecast_batch(const std::vector<const Window*>& windows) {
    std::size_t rows = 0;
    for (const Window* w : windows) rows += w->lookback.dim(0);
    const std::size_t L = windows[0]->lookback.dim(1);
    const std::size_t H = windows[0]->horizon->dim(1);
    ForecastBatch batch;
    batch.normalized = Tensor({rows, L});
    batch.raw_horizon = Tensor({rows, H});
    batch.scale.reserve(rows);
    batch.shift.reserve(rows);
    std::size_t r = 0;
    for (const Window* w : windows) {
        auto [norm, stats] = instance_normalize(w->lookback);
        for (std::size_t c = 0; c < w->lookback.dim(0); ++c, ++r) {
            for (std::size_t t = 0; t < L; ++t) batch.normalized.at(r, t) = norm.at(c, t);
            for (std::size_t t = 0; t < H; ++t) batch.raw_horizon.at(r, t) = w->horizon->at(c, t);
            batch.scale.push_back(stats.std[c]);
            batch.shift.push_back(stats.mean[c]);
        }
    }
    return batch;
}

} // namespace detail

/// Fine-tune the transferred encoder (plus a fresh head) on labeled windows.
/// linear_probe freezes everything but the head; few-shot selects the
/// chronological prefix of the training windows.
inline FinetuneResult finetune(const std::vector<Window>& train_windows,
                               const std::vector<Window>& val_windows, ModelParams& model,
                               const FinetuneConfig& config, TaskKind task) {
    config.validate(task);
    if (train_windows.empty()) throw Error("finetune: empty training set");
    if (task == TaskKind::forecast && !train_windows[0].horizon) {
        throw Error("finetune: forecast windows need horizons");
    }
    if (task == TaskKind::classify && !train_windows[0].label) {
        throw Error("finetune: classification windows need labels");
    }
    const std::size_t L = train_windows[0].lookback.dim(1);
    if (L % model.config.patch_len != 0) {
        throw Error("finetune: lookback length not divisible by patch length");
    }

    RngStream head_rng = RngStream::substream(config.seed, "finetune.init");
    RngStream shuffle_rng = RngStream::substream(config.seed, "finetune.shuffle");
    ensure_head(model.store, model.config, task, L, config, head_rng);

    const std::size_t subset = few_shot_count(train_windows.size(), config.portion);
    std::vector<std::size_t> order(subset);
    for (std::size_t i = 0; i < subset; ++i) order[i] = i;

    auto trainable = [&](const std::string& name) {
        return config.mode == FinetuneMode::full || name.rfind("head.", 0) == 0;
    };

    Adam optimizer(config.learning_rate);
    FinetuneResult result;

    const std::size_t channels = train_windows[0].lookback.dim(0);
    for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t begin = 0; begin < order.size(); begin += config.batch_size) {
            const std::size_t end = std::min(begin + config.batch_size, order.size());
            std::vector<const Window*> batch_windows;
            for (std::size_t i = begin; i < end; ++i) batch_windows.push_back(&train_windows[order[i]]);

            ad::Graph graph;
            BoundParams bound(graph, model.store, trainable);
            ad::Var loss{nullptr, -1};
            if (task == TaskKind::forecast) {
                detail::ForecastBatch batch = detail::build_forecast_batch(batch_windows);
                ad::Var pred = forecast_forward_batch(bound, batch.normalized, model.config,
                                                      EncodeOptions::from(config));
                ad::Var denorm = ad::scale_rows(pred, batch.scale, batch.shift);
                loss = ad::mse_against(denorm, batch.raw_horizon);
            } else {
                Tensor stacked({batch_windows.size() * channels, L});
                std::vector<int> labels;
                std::size_t r = 0;
                for (const Window* w : batch_windows) {
                    auto [norm, stats] = instance_normalize(w->lookback);
                    (void)stats;
                    for (std::size_t c = 0; c < channels; ++c, ++r) {
                        for (std::size_t t = 0; t < L; ++t) stacked.at(r, t) = norm.at(c, t);
                    }
                    labels.push_back(*w->label);
                }
                ad::Var logits = classify_forward_batch(bound, stacked, channels, model.config,
                                                        EncodeOptions::from(config));
                loss = ad::cross_entropy(logits, labels);
            }
            if (!loss.val().all_finite()) throw DivergenceError("finetune: non-finite loss");
            graph.backward(loss.id);
            optimizer.step(model.store, bound.gradients(), config.clip_norm);
            epoch_loss += loss.val()[0] * static_cast<double>(end - begin);
            seen += end - begin;
        }
        result.log.push_back({epoch, "train", "loss", epoch_loss / static_cast<double>(seen)});

        if (!val_windows.empty()) {
            if (task == TaskKind::forecast) {
                std::vector<Tensor> preds, targets;
                for (const Window& w : val_windows) {
                    preds.push_back(forecast_forward(model.store, model.config, w.lookback,
                                                     config.horizon, EncodeOptions::from(config)));
                    targets.push_back(*w.horizon);
                }
                const ForecastMetrics m = evaluate_forecast(preds, targets);
                result.log.push_back({epoch, "val", "mse", m.mse});
                result.log.push_back({epoch, "val", "mae", m.mae});
            } else {
                Tensor logits({val_windows.size(), config.num_classes});
                std::vector<int> labels;
                for (std::size_t w = 0; w < val_windows.size(); ++w) {
                    const Tensor row = classify_forward(model.store, model.config,
                                                        val_windows[w].lookback,
                                                        EncodeOptions::from(config));
                    for (std::size_t k = 0; k < config.num_classes; ++k) logits.at(w, k) = row[k];
                    labels.push_back(*val_windows[w].label);
                }
                const ClassifyMetrics m = evaluate_classify(logits, labels);
                result.log.push_back({epoch, "val", "accuracy", m.accuracy});
                result.log.push_back({epoch, "val", "macro_f1", m.macro_f1});
            }
        }
    }

    std::map<std::string, std::string> snap;
    snap["task"] = task == TaskKind::forecast ? "forecast" : "classify";
    snap["mode"] = config.mode == FinetuneMode::full ? "full" : "linear_probe";
    snap["portion"] = std::to_string(config.portion);
    snap["train_windows"] = std::to_string(subset);
    snap["patch_len"] = std::to_string(model.config.patch_len);
    snap["model_dim"] = std::to_string(model.config.model_dim);
    snap["encoder_layers"] = std::to_string(model.config.encoder_layers);
    snap["decoder_layers"] = std::to_string(model.config.decoder_layers);
    snap["heads"] = std::to_string(model.config.heads);
    snap["ff_dim"] = std::to_string(model.config.effective_ff());
    snap["pre_norm"] = model.config.pre_norm ? "true" : "false";
    snap["dropout"] = std::to_string(model.config.dropout);
    snap["keep_causal_mask"] = config.keep_causal_mask ? "true" : "false";
    snap["use_sos_shift"] = config.use_sos_shift ? "true" : "false";
    snap["lookback"] = std::to_string(L);
    snap["horizon"] = std::to_string(config.horizon);
    snap["num_classes"] = std::to_string(config.num_classes);
    snap["seed"] = std::to_string(config.seed);
    result.checkpoint = Checkpoint::capture(model.store, std::move(snap));
    return result;
}

} // namespace timedart

#endif // TIMEDART_FINETUNE_HPP

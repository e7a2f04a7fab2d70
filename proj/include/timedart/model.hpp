#ifndef TIMEDART_MODEL_HPP
#define TIMEDART_MODEL_HPP

#include <cstddef>
#include <functional>
#include <map>
#include <string>
#include <unordered_map>
#include <vector>

#include "graph.hpp"
#include "patch.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace timedart {

/// Thrown when a forward pass produces non-finite activations.
class NumericsError : public Error {
public:
    explicit NumericsError(const std::string& msg) : Error(msg) {}
};

// ---------------------------------------------------------------------------
// Attention masks
// ---------------------------------------------------------------------------

enum class MaskKind { causal, self_only, partial_causal, none };

/// Attention-visibility policy. partial_causal(r) keeps the diagonal and a
/// random subset of round((1-r) * j) earlier keys per query row j, so r = 1
/// reduces to self_only and r = 0 to causal.
struct MaskSpec {
    MaskKind kind = MaskKind::causal;
    double ratio = 0.0;

    static MaskSpec causal() { return {MaskKind::causal, 0.0}; }
    static MaskSpec self_only() { return {MaskKind::self_only, 0.0}; }
    static MaskSpec none() { return {MaskKind::none, 0.0}; }
    static MaskSpec partial_causal(double ratio) { return {MaskKind::partial_causal, ratio}; }
};

inline const char* to_string(MaskKind kind) {
    switch (kind) {
        case MaskKind::causal: return "causal";
        case MaskKind::self_only: return "self_only";
        case MaskKind::partial_causal: return "partial_causal";
        case MaskKind::none: return "none";
    }
    return "?";
}

/// Build the [N x N] visibility matrix (1 = query row may attend key column).
inline Tensor build_mask(const MaskSpec& spec, std::size_t size, RngStream* rng = nullptr) {
    if (size == 0) throw Error("build_mask: size must be >= 1");
    if (spec.kind == MaskKind::partial_causal && (spec.ratio < 0.0 || spec.ratio > 1.0)) {
        throw Error("build_mask: partial_causal ratio must lie in [0, 1]");
    }
    Tensor mask({size, size});
    switch (spec.kind) {
        case MaskKind::none:
            std::fill(mask.vec().begin(), mask.vec().end(), 1.0);
            break;
        case MaskKind::causal:
            for (std::size_t q = 0; q < size; ++q) {
                for (std::size_t k = 0; k <= q; ++k) mask.at(q, k) = 1.0;
            }
            break;
        case MaskKind::self_only:
            for (std::size_t q = 0; q < size; ++q) mask.at(q, q) = 1.0;
            break;
        case MaskKind::partial_causal: {
            if (!rng) throw Error("build_mask: partial_causal requires an rng stream");
            for (std::size_t q = 0; q < size; ++q) {
                mask.at(q, q) = 1.0;
                const auto visible =
                    static_cast<std::size_t>(std::llround((1.0 - spec.ratio) * static_cast<double>(q)));
                std::vector<std::size_t> prior(q);
                for (std::size_t k = 0; k < q; ++k) prior[k] = k;
                rng->shuffle(prior);
                for (std::size_t i = 0; i < visible; ++i) mask.at(q, prior[i]) = 1.0;
            }
            break;
        }
    }
    return mask;
}

// ---------------------------------------------------------------------------
// Parameters
// ---------------------------------------------------------------------------

/// Named parameter collection with stable iteration order. Each name is
/// registered exactly once.
class ParamStore {
public:
    void add(const std::string& name, Tensor value) {
        if (index_.count(name)) throw Error("ParamStore: duplicate parameter '" + name + "'");
        index_[name] = entries_.size();
        entries_.push_back({name, std::move(value)});
    }

    bool has(const std::string& name) const { return index_.count(name) != 0; }

    Tensor& operator[](const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("ParamStore: unknown parameter '" + name + "'");
        return entries_[it->second].value;
    }
    const Tensor& operator[](const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw Error("ParamStore: unknown parameter '" + name + "'");
        return entries_[it->second].value;
    }

    struct Entry {
        std::string name;
        Tensor value;
    };
    const std::vector<Entry>& entries() const { return entries_; }
    std::vector<Entry>& entries() { return entries_; }
    std::size_t size() const { return entries_.size(); }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

using GradMap = std::map<std::string, Tensor>;

/// Architecture hyperparameters shared by pre-training and fine-tuning.
struct ModelConfig {
    std::size_t patch_len = 2;
    std::size_t model_dim = 32;
    std::size_t encoder_layers = 2;
    std::size_t decoder_layers = 1;
    std::size_t heads = 8;
    std::size_t ff_dim = 0; // 0 = 4 * model_dim
    bool pre_norm = false;
    double dropout = 0.0;

    std::size_t effective_ff() const { return ff_dim == 0 ? 4 * model_dim : ff_dim; }

    void validate() const {
        if (patch_len == 0) throw Error("ModelConfig: patch_len must be >= 1");
        if (model_dim == 0 || model_dim % 2 != 0) {
            throw Error("ModelConfig: model_dim must be positive and even");
        }
        if (heads == 0 || model_dim % heads != 0) {
            throw Error("ModelConfig: model_dim must be divisible by heads");
        }
    }
};

namespace detail {

inline void init_affine(ParamStore& store, const std::string& prefix, std::size_t in_dim,
                        std::size_t out_dim, RngStream& rng) {
    Tensor w({in_dim, out_dim});
    const double bound = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (std::size_t i = 0; i < w.numel(); ++i) w[i] = rng.uniform_range(-bound, bound);
    Tensor b({out_dim});
    for (std::size_t i = 0; i < b.numel(); ++i) b[i] = rng.uniform_range(-bound, bound);
    store.add(prefix + ".W", std::move(w));
    store.add(prefix + ".b", std::move(b));
}

inline void init_norm(ParamStore& store, const std::string& prefix, std::size_t dim) {
    store.add(prefix + ".gain", Tensor::full({dim}, 1.0));
    store.add(prefix + ".bias", Tensor({dim}));
}

inline void init_attention(ParamStore& store, const std::string& prefix, std::size_t dim,
                           RngStream& rng) {
    init_affine(store, prefix + ".q", dim, dim, rng);
    init_affine(store, prefix + ".k", dim, dim, rng);
    init_affine(store, prefix + ".v", dim, dim, rng);
    init_affine(store, prefix + ".o", dim, dim, rng);
}

inline void init_ff(ParamStore& store, const std::string& prefix, std::size_t dim, std::size_t ff,
                    RngStream& rng) {
    init_affine(store, prefix + ".1", dim, ff, rng);
    init_affine(store, prefix + ".2", ff, dim, rng);
}

} // namespace detail

/// Full TimeDART parameter set: shared patch embedding, SOS vector, causal
/// encoder, denoising decoder, and the projector back to patch space. The
/// embedding is registered once and serves both the clean and noisy paths.
struct ModelParams {
    ModelConfig config;
    ParamStore store;

    static ModelParams init(const ModelConfig& config, RngStream& rng) {
        config.validate();
        ModelParams params;
        params.config = config;
        const std::size_t dim = config.model_dim;
        const std::size_t ff = config.effective_ff();

        detail::init_affine(params.store, "embed", config.patch_len, dim, rng);
        params.store.add("sos", Tensor({dim}));
        for (std::size_t l = 0; l < config.encoder_layers; ++l) {
            const std::string prefix = "enc." + std::to_string(l);
            detail::init_attention(params.store, prefix + ".attn", dim, rng);
            detail::init_norm(params.store, prefix + ".norm1", dim);
            detail::init_ff(params.store, prefix + ".ff", dim, ff, rng);
            detail::init_norm(params.store, prefix + ".norm2", dim);
        }
        for (std::size_t l = 0; l < config.decoder_layers; ++l) {
            const std::string prefix = "dec." + std::to_string(l);
            detail::init_attention(params.store, prefix + ".self", dim, rng);
            detail::init_norm(params.store, prefix + ".norm1", dim);
            detail::init_attention(params.store, prefix + ".cross", dim, rng);
            detail::init_norm(params.store, prefix + ".norm2", dim);
            detail::init_ff(params.store, prefix + ".ff", dim, ff, rng);
            detail::init_norm(params.store, prefix + ".norm3", dim);
        }
        detail::init_affine(params.store, "proj", dim, config.patch_len, rng);
        return params;
    }
};

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

/// Binds parameters into a tape lazily, so parameters on unused paths never
/// enter the graph. Frozen names are bound as constants.
class BoundParams {
public:
    BoundParams(ad::Graph& graph, const ParamStore& store,
                std::function<bool(const std::string&)> trainable = {})
        : graph_(&graph), store_(&store), trainable_(std::move(trainable)) {}

    ad::Var operator[](const std::string& name) {
        auto it = bound_.find(name);
        if (it != bound_.end()) return it->second;
        const bool requires_grad = trainable_ ? trainable_(name) : true;
        ad::Var var = ad::leaf(*graph_, (*store_)[name], requires_grad);
        bound_.emplace(name, var);
        return var;
    }

    /// Collect accumulated gradients for every bound trainable parameter.
    GradMap gradients() const {
        GradMap grads;
        for (const auto& [name, var] : bound_) {
            if (!graph_->requires_grad(var.id)) continue;
            if (graph_->has_grad(var.id)) {
                grads[name] = graph_->grad(var.id);
            } else {
                grads[name] = Tensor(var.val().shape());
            }
        }
        return grads;
    }

    const std::unordered_map<std::string, ad::Var>& bound() const { return bound_; }

    ad::Graph& graph() { return *graph_; }

private:
    ad::Graph* graph_;
    const ParamStore* store_;
    std::function<bool(const std::string&)> trainable_;
    std::unordered_map<std::string, ad::Var> bound_;
};

/// Per-layer attention weights captured during a forward pass, for tests.
struct ForwardTrace {
    std::vector<Tensor> attention; // each [B x heads x Nq x Nk]
};

namespace detail {

inline void check_finite(const Tensor& t, const char* stage, std::size_t layer) {
    if (!t.all_finite()) {
        throw NumericsError(std::string("non-finite activations in ") + stage + " layer " +
                            std::to_string(layer));
    }
}

inline ad::Var attention_sublayer(BoundParams& params, const std::string& prefix, ad::Var queries,
                                  ad::Var keys_values, const Tensor& mask, std::size_t heads,
                                  Tensor* probs_out) {
    ad::Var q = ad::affine(queries, params[prefix + ".q.W"], params[prefix + ".q.b"]);
    ad::Var k = ad::affine(keys_values, params[prefix + ".k.W"], params[prefix + ".k.b"]);
    ad::Var v = ad::affine(keys_values, params[prefix + ".v.W"], params[prefix + ".v.b"]);
    ad::Var attended = ad::multihead_attention(q, k, v, mask, heads, probs_out);
    return ad::affine(attended, params[prefix + ".o.W"], params[prefix + ".o.b"]);
}

inline ad::Var ff_sublayer(BoundParams& params, const std::string& prefix, ad::Var x) {
    ad::Var hidden = ad::gelu(ad::affine(x, params[prefix + ".1.W"], params[prefix + ".1.b"]));
    return ad::affine(hidden, params[prefix + ".2.W"], params[prefix + ".2.b"]);
}

/// One residual block, post-norm by default: y = LN(x + sublayer(x)).
/// Pre-norm variant: y = x + sublayer(LN(x)).
template <typename Sublayer>
inline ad::Var residual_block(BoundParams& params, const std::string& norm_prefix, ad::Var x,
                              bool pre_norm, Sublayer&& sublayer) {
    ad::Var gain = params[norm_prefix + ".gain"];
    ad::Var bias = params[norm_prefix + ".bias"];
    if (pre_norm) {
        return ad::add(x, sublayer(ad::layer_norm(x, gain, bias)));
    }
    return ad::layer_norm(ad::add(x, sublayer(x)), gain, bias);
}

} // namespace detail

/// Causal Transformer encoder: stack of self-attention blocks under one
/// visibility mask. Input [B x N x D], output [B x N x D].
inline ad::Var encoder_forward(BoundParams& params, ad::Var input, const Tensor& mask,
                               const ModelConfig& config, ForwardTrace* trace = nullptr) {
    ad::Var x = input;
    for (std::size_t l = 0; l < config.encoder_layers; ++l) {
        const std::string prefix = "enc." + std::to_string(l);
        Tensor probs;
        x = detail::residual_block(params, prefix + ".norm1", x, config.pre_norm, [&](ad::Var h) {
            return detail::attention_sublayer(params, prefix + ".attn", h, h, mask, config.heads,
                                              trace ? &probs : nullptr);
        });
        if (trace) trace->attention.push_back(probs);
        x = detail::residual_block(params, prefix + ".norm2", x, config.pre_norm,
                                   [&](ad::Var h) { return detail::ff_sublayer(params, prefix + ".ff", h); });
        detail::check_finite(x.val(), "encoder", l);
    }
    return x;
}

/// Denoising decoder: per layer, masked self-attention over the noisy
/// queries, cross-attention against the encoder outputs (keys and values),
/// then feed-forward. The same visibility policy governs both attentions, so
/// under self_only the j-th output depends on exactly the j-th noisy input
/// and the j-th encoder output.
inline ad::Var decoder_forward(BoundParams& params, ad::Var noisy_input, ad::Var encoder_out,
                               const Tensor& mask, const ModelConfig& config,
                               ForwardTrace* trace = nullptr) {
    ad::Var x = noisy_input;
    for (std::size_t l = 0; l < config.decoder_layers; ++l) {
        const std::string prefix = "dec." + std::to_string(l);
        Tensor self_probs, cross_probs;
        x = detail::residual_block(params, prefix + ".norm1", x, config.pre_norm, [&](ad::Var h) {
            return detail::attention_sublayer(params, prefix + ".self", h, h, mask, config.heads,
                                              trace ? &self_probs : nullptr);
        });
        x = detail::residual_block(params, prefix + ".norm2", x, config.pre_norm, [&](ad::Var h) {
            return detail::attention_sublayer(params, prefix + ".cross", h, encoder_out, mask,
                                              config.heads, trace ? &cross_probs : nullptr);
        });
        if (trace) {
            trace->attention.push_back(self_probs);
            trace->attention.push_back(cross_probs);
        }
        x = detail::residual_block(params, prefix + ".norm3", x, config.pre_norm,
                                   [&](ad::Var h) { return detail::ff_sublayer(params, prefix + ".ff", h); });
        detail::check_finite(x.val(), "decoder", l);
    }
    return x;
}

/// Map decoder representations back to patch space: [B x N x D] -> [B x N x P].
inline ad::Var project(BoundParams& params, ad::Var x) {
    return ad::affine(x, params["proj.W"], params["proj.b"]);
}

/// Reverse-mode gradients of a scalar loss for every registered parameter.
/// Parameters the loss never touches report zero gradients.
inline GradMap gradient(const ParamStore& store,
                        const std::function<ad::Var(BoundParams&)>& loss_fn) {
    ad::Graph graph;
    BoundParams bound(graph, store);
    ad::Var loss = loss_fn(bound);
    if (!loss.val().all_finite()) throw NumericsError("gradient: loss is non-finite");
    graph.backward(loss.id);
    GradMap grads = bound.gradients();
    for (const auto& entry : store.entries()) {
        if (!grads.count(entry.name)) grads[entry.name] = Tensor(entry.value.shape());
        if (!grads[entry.name].all_finite()) {
            throw NumericsError("gradient: non-finite gradient for parameter '" + entry.name + "'");
        }
    }
    return grads;
}

} // namespace timedart

#endif // TIMEDART_MODEL_HPP

#ifndef TIMEDART_GRAPH_HPP
#define TIMEDART_GRAPH_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <utility>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace timedart {
namespace ad {

/// Reverse-mode tape. Nodes are appended in evaluation order, so the reverse
/// sweep is a simple backwards walk; each op records a closure that scatters
/// its output gradient into its parents. One Graph per training step.
class Graph {
public:
    using Backprop = std::function<void(Graph&, int self)>;

    int add(Tensor value, bool requires_grad, Backprop backprop = {}) {
        Node node;
        node.value = std::move(value);
        node.requires_grad = requires_grad;
        node.backprop = std::move(backprop);
        nodes_.push_back(std::move(node));
        return static_cast<int>(nodes_.size()) - 1;
    }

    const Tensor& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
    Tensor& value(int id) { return nodes_[static_cast<std::size_t>(id)].value; }

    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }

    /// Gradient buffer for a node, allocated as zeros on first touch.
    Tensor& grad(int id) {
        Node& node = nodes_[static_cast<std::size_t>(id)];
        if (node.grad.empty()) node.grad = Tensor(node.value.shape());
        return node.grad;
    }

    bool has_grad(int id) const { return !nodes_[static_cast<std::size_t>(id)].grad.empty(); }

    /// Reverse sweep from a scalar root.
    void backward(int root) {
        if (value(root).numel() != 1) throw Error("backward: root must be a scalar");
        grad(root)[0] = 1.0;
        for (int i = root; i >= 0; --i) {
            Node& node = nodes_[static_cast<std::size_t>(i)];
            if (node.backprop && node.requires_grad && !node.grad.empty()) {
                node.backprop(*this, i);
            }
        }
    }

    std::size_t size() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        Backprop backprop;
    };
    std::vector<Node> nodes_;
};

/// Lightweight handle to a tape node.
struct Var {
    Graph* graph = nullptr;
    int id = -1;

    const Tensor& val() const { return graph->value(id); }
    bool requires_grad() const { return graph->requires_grad(id); }
};

inline Var leaf(Graph& g, Tensor value, bool requires_grad = true) {
    return {&g, g.add(std::move(value), requires_grad)};
}

inline Var constant(Graph& g, Tensor value) { return {&g, g.add(std::move(value), false)}; }

// ---------------------------------------------------------------------------
// Elementwise and structural ops
// ---------------------------------------------------------------------------

inline Var add(Var a, Var b) {
    Graph& g = *a.graph;
    require_same_shape(a.val(), b.val(), "add");
    Tensor out(a.val().shape());
    {
        const double* pa = a.val().data();
        const double* pb = b.val().data();
        double* po = out.data();
        for (std::size_t i = 0; i < out.numel(); ++i) po[i] = pa[i] + pb[i];
    }
    const int ia = a.id, ib = b.id;
    const bool rg = g.requires_grad(ia) || g.requires_grad(ib);
    int id = g.add(std::move(out), rg, [ia, ib](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        for (int parent : {ia, ib}) {
            if (!gr.requires_grad(parent)) continue;
            Tensor& dp = gr.grad(parent);
            for (std::size_t i = 0; i < dy.numel(); ++i) dp[i] += dy[i];
        }
    });
    return {&g, id};
}

/// Add a constant [N x D] table to every batch row of x [B x N x D].
inline Var add_rows(Var x, const Tensor& table) {
    Graph& g = *x.graph;
    const Tensor& xv = x.val();
    if (xv.rank() != 3 || table.rank() != 2 || xv.dim(1) != table.dim(0) ||
        xv.dim(2) != table.dim(1)) {
        throw Error("add_rows: shape mismatch " + xv.shape_string() + " vs " + table.shape_string());
    }
    Tensor out(xv.shape());
    const std::size_t batch = xv.dim(0), rows = xv.dim(1), cols = xv.dim(2);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t n = 0; n < rows; ++n) {
            for (std::size_t d = 0; d < cols; ++d) {
                out.at(b, n, d) = xv.at(b, n, d) + table.at(n, d);
            }
        }
    }
    const int ix = x.id;
    int id = g.add(std::move(out), g.requires_grad(ix), [ix](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        Tensor& dx = gr.grad(ix);
        for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
    });
    return {&g, id};
}

/// y = x @ W + b over the last dimension; leading dimensions are batch.
inline Var affine(Var x, Var weight, Var bias) {
    Graph& g = *x.graph;
    const Tensor& xv = x.val();
    const Tensor& wv = weight.val();
    const Tensor& bv = bias.val();
    if (wv.rank() != 2) throw Error("affine: weight must be [In x Out]");
    const std::size_t in_dim = wv.dim(0), out_dim = wv.dim(1);
    if (xv.rank() < 1 || xv.shape().back() != in_dim) {
        throw Error("affine: input " + xv.shape_string() + " does not match weight " +
                    wv.shape_string());
    }
    if (bv.numel() != out_dim) throw Error("affine: bias size mismatch");

    std::vector<std::size_t> out_shape = xv.shape();
    out_shape.back() = out_dim;
    const std::size_t rows = xv.numel() / in_dim;
    Tensor out(out_shape);
    {
        const double* px = xv.data();
        const double* pw = wv.data();
        const double* pb = bv.data();
        double* po = out.data();
        for (std::size_t m = 0; m < rows; ++m) {
            double* orow = po + m * out_dim;
            for (std::size_t o = 0; o < out_dim; ++o) orow[o] = pb[o];
            const double* xrow = px + m * in_dim;
            for (std::size_t i = 0; i < in_dim; ++i) {
                const double xi = xrow[i];
                const double* wrow = pw + i * out_dim;
                for (std::size_t o = 0; o < out_dim; ++o) orow[o] += xi * wrow[o];
            }
        }
    }

    const int ix = x.id, iw = weight.id, ib = bias.id;
    const bool rg = g.requires_grad(ix) || g.requires_grad(iw) || g.requires_grad(ib);
    int id = g.add(std::move(out), rg,
                   [ix, iw, ib, rows, in_dim, out_dim](Graph& gr, int self) {
        const double* dy = gr.grad(self).data();
        const double* px = gr.value(ix).data();
        const double* pw = gr.value(iw).data();
        if (gr.requires_grad(ix)) {
            double* dx = gr.grad(ix).data();
            for (std::size_t m = 0; m < rows; ++m) {
                const double* dyrow = dy + m * out_dim;
                double* dxrow = dx + m * in_dim;
                for (std::size_t i = 0; i < in_dim; ++i) {
                    const double* wrow = pw + i * out_dim;
                    double acc = 0.0;
                    for (std::size_t o = 0; o < out_dim; ++o) acc += dyrow[o] * wrow[o];
                    dxrow[i] += acc;
                }
            }
        }
        if (gr.requires_grad(iw)) {
            double* dw = gr.grad(iw).data();
            for (std::size_t m = 0; m < rows; ++m) {
                const double* dyrow = dy + m * out_dim;
                const double* xrow = px + m * in_dim;
                for (std::size_t i = 0; i < in_dim; ++i) {
                    const double xi = xrow[i];
                    double* dwrow = dw + i * out_dim;
                    for (std::size_t o = 0; o < out_dim; ++o) dwrow[o] += xi * dyrow[o];
                }
            }
        }
        if (gr.requires_grad(ib)) {
            double* db = gr.grad(ib).data();
            for (std::size_t m = 0; m < rows; ++m) {
                const double* dyrow = dy + m * out_dim;
                for (std::size_t o = 0; o < out_dim; ++o) db[o] += dyrow[o];
            }
        }
    });
    return {&g, id};
}

/// Prepend the learnable SOS vector and shift clean embeddings right by one,
/// dropping the last; the positional table is added to every shifted row.
///   out[b, 0, :] = sos + pe[0];  out[b, j, :] = emb[b, j-1, :] + pe[j]
inline Var sos_shift(Var embeddings, Var sos, const Tensor& pe) {
    Graph& g = *embeddings.graph;
    const Tensor& ev = embeddings.val();
    if (ev.rank() != 3) throw Error("sos_shift: expected [B x N x D] embeddings");
    const std::size_t batch = ev.dim(0), rows = ev.dim(1), dim = ev.dim(2);
    if (sos.val().numel() != dim) throw Error("sos_shift: sos dim mismatch");
    if (pe.rank() != 2 || pe.dim(0) != rows || pe.dim(1) != dim) {
        throw Error("sos_shift: positional table must be [N x D]");
    }
    Tensor out(ev.shape());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t d = 0; d < dim; ++d) out.at(b, 0, d) = sos.val()[d] + pe.at(0, d);
        for (std::size_t j = 1; j < rows; ++j) {
            for (std::size_t d = 0; d < dim; ++d) {
                out.at(b, j, d) = ev.at(b, j - 1, d) + pe.at(j, d);
            }
        }
    }
    const int ie = embeddings.id, is = sos.id;
    const bool rg = g.requires_grad(ie) || g.requires_grad(is);
    int id = g.add(std::move(out), rg, [ie, is, batch, rows, dim](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        if (gr.requires_grad(is)) {
            Tensor& ds = gr.grad(is);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t d = 0; d < dim; ++d) ds[d] += dy.at(b, 0, d);
            }
        }
        if (gr.requires_grad(ie)) {
            Tensor& de = gr.grad(ie);
            for (std::size_t b = 0; b < batch; ++b) {
                for (std::size_t j = 1; j < rows; ++j) {
                    for (std::size_t d = 0; d < dim; ++d) {
                        de.at(b, j - 1, d) += dy.at(b, j, d);
                    }
                }
            }
        }
    });
    return {&g, id};
}

/// Exact GELU: 0.5 x (1 + erf(x / sqrt(2))).
inline Var gelu(Var x) {
    Graph& g = *x.graph;
    const Tensor& xv = x.val();
    Tensor out(xv.shape());
    constexpr double inv_sqrt2 = 0.70710678118654752440;
    for (std::size_t i = 0; i < xv.numel(); ++i) {
        out[i] = 0.5 * xv[i] * (1.0 + std::erf(xv[i] * inv_sqrt2));
    }
    const int ix = x.id;
    int id = g.add(std::move(out), g.requires_grad(ix), [ix](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        const Tensor& xin = gr.value(ix);
        Tensor& dx = gr.grad(ix);
        constexpr double inv_sqrt2 = 0.70710678118654752440;
        constexpr double inv_sqrt2pi = 0.39894228040143267794;
        for (std::size_t i = 0; i < dy.numel(); ++i) {
            const double v = xin[i];
            const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
            const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
            dx[i] += dy[i] * (cdf + v * pdf);
        }
    });
    return {&g, id};
}

/// Inverted dropout; the sampled keep-mask is baked into the tape node.
inline Var dropout(Var x, double rate, RngStream& rng) {
    if (rate <= 0.0) return x;
    if (rate >= 1.0) throw Error("dropout: rate must be < 1");
    Graph& g = *x.graph;
    const Tensor& xv = x.val();
    auto mask = std::make_shared<std::vector<double>>(xv.numel());
    const double keep_scale = 1.0 / (1.0 - rate);
    Tensor out(xv.shape());
    for (std::size_t i = 0; i < xv.numel(); ++i) {
        (*mask)[i] = rng.uniform() >= rate ? keep_scale : 0.0;
        out[i] = xv[i] * (*mask)[i];
    }
    const int ix = x.id;
    int id = g.add(std::move(out), g.requires_grad(ix), [ix, mask](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        Tensor& dx = gr.grad(ix);
        for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i] * (*mask)[i];
    });
    return {&g, id};
}

/// Per-position layer normalization over the last dimension with learnable
/// gain and bias.
inline Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-5) {
    Graph& g = *x.graph;
    const Tensor& xv = x.val();
    const std::size_t dim = xv.shape().back();
    const std::size_t rows = xv.numel() / dim;
    if (gain.val().numel() != dim || bias.val().numel() != dim) {
        throw Error("layer_norm: gain/bias dim mismatch");
    }
    auto xhat = std::make_shared<Tensor>(xv.shape());
    auto inv_std = std::make_shared<std::vector<double>>(rows);
    Tensor out(xv.shape());
    {
        const double* px = xv.data();
        const double* pg = gain.val().data();
        const double* pb = bias.val().data();
        double* ph = xhat->data();
        double* po = out.data();
        for (std::size_t m = 0; m < rows; ++m) {
            const double* row = px + m * dim;
            double mean = 0.0;
            for (std::size_t d = 0; d < dim; ++d) mean += row[d];
            mean /= static_cast<double>(dim);
            double var = 0.0;
            for (std::size_t d = 0; d < dim; ++d) {
                const double c = row[d] - mean;
                var += c * c;
            }
            var /= static_cast<double>(dim);
            const double istd = 1.0 / std::sqrt(var + eps);
            (*inv_std)[m] = istd;
            for (std::size_t d = 0; d < dim; ++d) {
                const double h = (row[d] - mean) * istd;
                ph[m * dim + d] = h;
                po[m * dim + d] = pg[d] * h + pb[d];
            }
        }
    }
    const int ix = x.id, ig = gain.id, ib = bias.id;
    const bool rg = g.requires_grad(ix) || g.requires_grad(ig) || g.requires_grad(ib);
    int id = g.add(std::move(out), rg,
                   [ix, ig, ib, xhat, inv_std, rows, dim](Graph& gr, int self) {
        const double* dy = gr.grad(self).data();
        const double* ph = xhat->data();
        const double* pg = gr.value(ig).data();
        if (gr.requires_grad(ig)) {
            double* dgain = gr.grad(ig).data();
            for (std::size_t m = 0; m < rows; ++m) {
                for (std::size_t d = 0; d < dim; ++d) {
                    dgain[d] += dy[m * dim + d] * ph[m * dim + d];
                }
            }
        }
        if (gr.requires_grad(ib)) {
            double* dbias = gr.grad(ib).data();
            for (std::size_t m = 0; m < rows; ++m) {
                for (std::size_t d = 0; d < dim; ++d) dbias[d] += dy[m * dim + d];
            }
        }
        if (gr.requires_grad(ix)) {
            double* dx = gr.grad(ix).data();
            const double inv_dim = 1.0 / static_cast<double>(dim);
            for (std::size_t m = 0; m < rows; ++m) {
                double sum_dh = 0.0, sum_dh_h = 0.0;
                for (std::size_t d = 0; d < dim; ++d) {
                    const double dh = dy[m * dim + d] * pg[d];
                    sum_dh += dh;
                    sum_dh_h += dh * ph[m * dim + d];
                }
                const double istd = (*inv_std)[m];
                for (std::size_t d = 0; d < dim; ++d) {
                    const double dh = dy[m * dim + d] * pg[d];
                    dx[m * dim + d] +=
                        istd * (dh - inv_dim * sum_dh - inv_dim * ph[m * dim + d] * sum_dh_h);
                }
            }
        }
    });
    return {&g, id};
}

/// Scaled dot-product attention over `heads` head slices of the model dim.
/// The visibility matrix carries 1 for visible keys and 0 for masked ones;
/// masked scores receive -1e9 before normalization, which underflows to an
/// exactly zero weight after the softmax.
///
/// q: [B x Nq x D], k/v: [B x Nk x D], visibility: [Nq x Nk].
/// When probs_out is given it receives the [B x heads x Nq x Nk] weights.
inline Var multihead_attention(Var q, Var k, Var v, const Tensor& visibility, std::size_t heads,
                               Tensor* probs_out = nullptr) {
    Graph& g = *q.graph;
    const Tensor& qv = q.val();
    const Tensor& kv = k.val();
    const Tensor& vv = v.val();
    if (qv.rank() != 3 || kv.rank() != 3 || vv.rank() != 3) {
        throw Error("multihead_attention: expected [B x N x D] inputs");
    }
    const std::size_t batch = qv.dim(0), nq = qv.dim(1), dim = qv.dim(2);
    const std::size_t nk = kv.dim(1);
    if (kv.dim(0) != batch || vv.dim(0) != batch || vv.dim(1) != nk || kv.dim(2) != dim ||
        vv.dim(2) != dim) {
        throw Error("multihead_attention: q/k/v shape mismatch");
    }
    if (heads == 0 || dim % heads != 0) {
        throw Error("multihead_attention: model dim " + std::to_string(dim) +
                    " not divisible by heads " + std::to_string(heads));
    }
    if (visibility.rank() != 2 || visibility.dim(0) != nq || visibility.dim(1) != nk) {
        throw Error("multihead_attention: visibility must be [Nq x Nk]");
    }
    const std::size_t head_dim = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    constexpr double mask_bias = -1e9;

    auto probs = std::make_shared<Tensor>(std::vector<std::size_t>{batch, heads, nq, nk});
    Tensor out({batch, nq, dim});
    std::vector<double> scores(nk);
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t off = h * head_dim;
            for (std::size_t qi = 0; qi < nq; ++qi) {
                double max_score = -std::numeric_limits<double>::infinity();
                for (std::size_t ki = 0; ki < nk; ++ki) {
                    double dot = 0.0;
                    for (std::size_t d = 0; d < head_dim; ++d) {
                        dot += qv.at(b, qi, off + d) * kv.at(b, ki, off + d);
                    }
                    double s = dot * scale;
                    if (visibility.at(qi, ki) == 0.0) s += mask_bias;
                    scores[ki] = s;
                    max_score = std::max(max_score, s);
                }
                double denom = 0.0;
                for (std::size_t ki = 0; ki < nk; ++ki) {
                    const double e = std::exp(scores[ki] - max_score);
                    scores[ki] = e;
                    denom += e;
                }
                for (std::size_t ki = 0; ki < nk; ++ki) {
                    probs->data()[((b * heads + h) * nq + qi) * nk + ki] = scores[ki] / denom;
                }
                for (std::size_t d = 0; d < head_dim; ++d) {
                    double acc = 0.0;
                    for (std::size_t ki = 0; ki < nk; ++ki) {
                        acc += probs->data()[((b * heads + h) * nq + qi) * nk + ki] *
                               vv.at(b, ki, off + d);
                    }
                    out.at(b, qi, off + d) = acc;
                }
            }
        }
    }
    if (probs_out) *probs_out = *probs;

    const int iq = q.id, ik = k.id, iv = v.id;
    const bool rg = g.requires_grad(iq) || g.requires_grad(ik) || g.requires_grad(iv);
    int id = g.add(std::move(out), rg,
                   [iq, ik, iv, probs, batch, heads, nq, nk, head_dim, scale](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        const Tensor& qv = gr.value(iq);
        const Tensor& kv = gr.value(ik);
        const Tensor& vv = gr.value(iv);
        const bool need_q = gr.requires_grad(iq);
        const bool need_k = gr.requires_grad(ik);
        const bool need_v = gr.requires_grad(iv);
        Tensor* dq = need_q ? &gr.grad(iq) : nullptr;
        Tensor* dk = need_k ? &gr.grad(ik) : nullptr;
        Tensor* dv = need_v ? &gr.grad(iv) : nullptr;

        std::vector<double> dprob(nk), dscore(nk);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t h = 0; h < heads; ++h) {
                const std::size_t off = h * head_dim;
                for (std::size_t qi = 0; qi < nq; ++qi) {
                    const double* prow = probs->data() + ((b * heads + h) * nq + qi) * nk;
                    // dV and dP from the weighted-sum output
                    for (std::size_t ki = 0; ki < nk; ++ki) {
                        double acc = 0.0;
                        for (std::size_t d = 0; d < head_dim; ++d) {
                            acc += dy.at(b, qi, off + d) * vv.at(b, ki, off + d);
                        }
                        dprob[ki] = acc;
                    }
                    if (need_v) {
                        for (std::size_t ki = 0; ki < nk; ++ki) {
                            const double p = prow[ki];
                            if (p == 0.0) continue;
                            for (std::size_t d = 0; d < head_dim; ++d) {
                                dv->at(b, ki, off + d) += p * dy.at(b, qi, off + d);
                            }
                        }
                    }
                    // softmax backward
                    double dot = 0.0;
                    for (std::size_t ki = 0; ki < nk; ++ki) dot += dprob[ki] * prow[ki];
                    for (std::size_t ki = 0; ki < nk; ++ki) {
                        dscore[ki] = prow[ki] * (dprob[ki] - dot);
                    }
                    if (need_q) {
                        for (std::size_t d = 0; d < head_dim; ++d) {
                            double acc = 0.0;
                            for (std::size_t ki = 0; ki < nk; ++ki) {
                                acc += dscore[ki] * kv.at(b, ki, off + d);
                            }
                            dq->at(b, qi, off + d) += scale * acc;
                        }
                    }
                    if (need_k) {
                        for (std::size_t ki = 0; ki < nk; ++ki) {
                            const double ds = dscore[ki];
                            if (ds == 0.0) continue;
                            for (std::size_t d = 0; d < head_dim; ++d) {
                                dk->at(b, ki, off + d) += scale * ds * qv.at(b, qi, off + d);
                            }
                        }
                    }
                }
            }
        }
    });
    return {&g, id};
}

/// Flatten [B x N x D] to [B x N*D].
inline Var flatten_rows(Var x) {
    Graph& g = *x.graph;
    const Tensor& xv = x.val();
    if (xv.rank() != 3) throw Error("flatten_rows: expected [B x N x D]");
    Tensor out = xv.reshaped({xv.dim(0), xv.dim(1) * xv.dim(2)});
    const int ix = x.id;
    int id = g.add(std::move(out), g.requires_grad(ix), [ix](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        Tensor& dx = gr.grad(ix);
        for (std::size_t i = 0; i < dy.numel(); ++i) dx[i] += dy[i];
    });
    return {&g, id};
}

/// Coordinate-wise max over groups of `group` consecutive batch rows and all
/// sequence positions: [R x N x D] -> [R/group x D].
inline Var group_maxpool(Var x, std::size_t group) {
    Graph& g = *x.graph;
    const Tensor& xv = x.val();
    if (xv.rank() != 3) throw Error("group_maxpool: expected [R x N x D]");
    if (group == 0 || xv.dim(0) % group != 0) {
        throw Error("group_maxpool: batch rows not divisible by group size");
    }
    const std::size_t out_batch = xv.dim(0) / group;
    const std::size_t rows = xv.dim(1), dim = xv.dim(2);
    Tensor out({out_batch, dim});
    auto argmax = std::make_shared<std::vector<std::size_t>>(out_batch * dim);
    for (std::size_t b = 0; b < out_batch; ++b) {
        for (std::size_t d = 0; d < dim; ++d) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t best_idx = 0;
            for (std::size_t gidx = 0; gidx < group; ++gidx) {
                for (std::size_t n = 0; n < rows; ++n) {
                    const std::size_t flat = ((b * group + gidx) * rows + n) * dim + d;
                    const double v = xv[flat];
                    if (v > best) {
                        best = v;
                        best_idx = flat;
                    }
                }
            }
            out.at(b, d) = best;
            (*argmax)[b * dim + d] = best_idx;
        }
    }
    const int ix = x.id;
    int id = g.add(std::move(out), g.requires_grad(ix),
                   [ix, argmax, out_batch, dim](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        Tensor& dx = gr.grad(ix);
        for (std::size_t b = 0; b < out_batch; ++b) {
            for (std::size_t d = 0; d < dim; ++d) {
                dx[(*argmax)[b * dim + d]] += dy.at(b, d);
            }
        }
    });
    return {&g, id};
}

/// Per-row affine rescale: y[b, :] = x[b, :] * scale[b] + shift[b]. Used to
/// denormalize per-instance predictions inside the loss.
inline Var scale_rows(Var x, std::vector<double> scale, std::vector<double> shift) {
    Graph& g = *x.graph;
    const Tensor& xv = x.val();
    if (xv.rank() != 2 || xv.dim(0) != scale.size() || scale.size() != shift.size()) {
        throw Error("scale_rows: shape mismatch");
    }
    const std::size_t batch = xv.dim(0), cols = xv.dim(1);
    Tensor out(xv.shape());
    for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t c = 0; c < cols; ++c) out.at(b, c) = xv.at(b, c) * scale[b] + shift[b];
    }
    const int ix = x.id;
    auto scale_copy = std::make_shared<std::vector<double>>(std::move(scale));
    int id = g.add(std::move(out), g.requires_grad(ix),
                   [ix, scale_copy, batch, cols](Graph& gr, int self) {
        const Tensor& dy = gr.grad(self);
        Tensor& dx = gr.grad(ix);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t c = 0; c < cols; ++c) {
                dx.at(b, c) += dy.at(b, c) * (*scale_copy)[b];
            }
        }
    });
    return {&g, id};
}

/// Scalar mean of (pred - target)^2 over every element.
inline Var mse_against(Var pred, const Tensor& target) {
    Graph& g = *pred.graph;
    require_same_shape(pred.val(), target, "mse_against");
    const std::size_t count = target.numel();
    double acc = 0.0;
    for (std::size_t i = 0; i < count; ++i) {
        const double d = pred.val()[i] - target[i];
        acc += d * d;
    }
    Tensor out = Tensor::scalar(acc / static_cast<double>(count));
    const int ip = pred.id;
    auto target_copy = std::make_shared<Tensor>(target);
    int id = g.add(std::move(out), g.requires_grad(ip),
                   [ip, target_copy, count](Graph& gr, int self) {
        const double scale = gr.grad(self)[0] * 2.0 / static_cast<double>(count);
        const Tensor& pv = gr.value(ip);
        Tensor& dp = gr.grad(ip);
        for (std::size_t i = 0; i < count; ++i) {
            dp[i] += scale * (pv[i] - (*target_copy)[i]);
        }
    });
    return {&g, id};
}

/// Mean softmax cross-entropy of [B x K] logits against integer labels.
inline Var cross_entropy(Var logits, const std::vector<int>& labels) {
    Graph& g = *logits.graph;
    const Tensor& lv = logits.val();
    if (lv.rank() != 2 || lv.dim(0) != labels.size()) {
        throw Error("cross_entropy: logits/labels mismatch");
    }
    const std::size_t batch = lv.dim(0), classes = lv.dim(1);
    for (int label : labels) {
        if (label < 0 || static_cast<std::size_t>(label) >= classes) {
            throw Error("cross_entropy: label out of range");
        }
    }
    auto probs = std::make_shared<Tensor>(lv.shape());
    double total = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
        double max_logit = -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < classes; ++k) max_logit = std::max(max_logit, lv.at(b, k));
        double denom = 0.0;
        for (std::size_t k = 0; k < classes; ++k) denom += std::exp(lv.at(b, k) - max_logit);
        const double log_denom = std::log(denom) + max_logit;
        for (std::size_t k = 0; k < classes; ++k) {
            probs->at(b, k) = std::exp(lv.at(b, k) - log_denom);
        }
        total += log_denom - lv.at(b, static_cast<std::size_t>(labels[b]));
    }
    Tensor out = Tensor::scalar(total / static_cast<double>(batch));
    const int il = logits.id;
    auto labels_copy = std::make_shared<std::vector<int>>(labels);
    int id = g.add(std::move(out), g.requires_grad(il),
                   [il, probs, labels_copy, batch, classes](Graph& gr, int self) {
        const double scale = gr.grad(self)[0] / static_cast<double>(batch);
        Tensor& dl = gr.grad(il);
        for (std::size_t b = 0; b < batch; ++b) {
            for (std::size_t k = 0; k < classes; ++k) {
                const double indicator =
                    k == static_cast<std::size_t>((*labels_copy)[b]) ? 1.0 : 0.0;
                dl.at(b, k) += scale * (probs->at(b, k) - indicator);
            }
        }
    });
    return {&g, id};
}

/// Scalar sum of every element.
inline Var sum_all(Var x) {
    Graph& g = *x.graph;
    double acc = 0.0;
    for (std::size_t i = 0; i < x.val().numel(); ++i) acc += x.val()[i];
    const int ix = x.id;
    int id = g.add(Tensor::scalar(acc), g.requires_grad(ix), [ix](Graph& gr, int self) {
        const double dy = gr.grad(self)[0];
        Tensor& dx = gr.grad(ix);
        for (std::size_t i = 0; i < dx.numel(); ++i) dx[i] += dy;
    });
    return {&g, id};
}

/// Scalar a + b for combining losses.
inline Var add_scalars(Var a, Var b) { return add(a, b); }

/// Scale a scalar node by a constant.
inline Var scale_scalar(Var x, double factor) {
    Graph& g = *x.graph;
    Tensor out = Tensor::scalar(x.val()[0] * factor);
    const int ix = x.id;
    int id = g.add(std::move(out), g.requires_grad(ix), [ix, factor](Graph& gr, int self) {
        gr.grad(ix)[0] += gr.grad(self)[0] * factor;
    });
    return {&g, id};
}

} // namespace ad
} // namespace timedart

#endif // TIMEDART_GRAPH_HPP

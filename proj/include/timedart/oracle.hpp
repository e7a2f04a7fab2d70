#ifndef TIMEDART_ORACLE_HPP
#define TIMEDART_ORACLE_HPP

#include <cmath>
#include <cstddef>
#include <functional>
#include <vector>

#include "model.hpp"
#include "rng.hpp"
#include "schedule.hpp"
#include "tensor.hpp"

namespace timedart {
namespace oracle {

// Brute-force reference implementations used by the test suites. These share
// no attention, loss, or noising code with the production path; everything is
// recomputed with explicit scalar loops in 64-bit.

/// Reference multi-head attention for one sequence: Q, K, V are [N x D],
/// visibility is [Nq x Nk]. The softmax here runs over the visible keys only,
/// a formulation independent of the additive-bias route in production.
inline Tensor naive_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                              const Tensor& visibility, std::size_t heads = 1) {
    const std::size_t nq = q.dim(0), dim = q.dim(1), nk = k.dim(0);
    const std::size_t head_dim = dim / heads;
    Tensor out({nq, dim});
    for (std::size_t h = 0; h < heads; ++h) {
        for (std::size_t qi = 0; qi < nq; ++qi) {
            std::vector<double> weight(nk, 0.0);
            double max_score = 0.0;
            bool first = true;
            for (std::size_t ki = 0; ki < nk; ++ki) {
                if (visibility.at(qi, ki) == 0.0) continue;
                double score = 0.0;
                for (std::size_t d = 0; d < head_dim; ++d) {
                    score += q.at(qi, h * head_dim + d) * k.at(ki, h * head_dim + d);
                }
                score /= std::sqrt(static_cast<double>(head_dim));
                weight[ki] = score;
                if (first || score > max_score) max_score = score;
                first = false;
            }
            double total = 0.0;
            for (std::size_t ki = 0; ki < nk; ++ki) {
                if (visibility.at(qi, ki) == 0.0) continue;
                weight[ki] = std::exp(weight[ki] - max_score);
                total += weight[ki];
            }
            for (std::size_t d = 0; d < head_dim; ++d) {
                double acc = 0.0;
                for (std::size_t ki = 0; ki < nk; ++ki) {
                    if (visibility.at(qi, ki) == 0.0) continue;
                    acc += weight[ki] / total * v.at(ki, h * head_dim + d);
                }
                out.at(qi, h * head_dim + d) = acc;
            }
        }
    }
    return out;
}

/// Mean squared error recomputed with an explicit element loop.
inline double naive_mse(const Tensor& prediction, const Tensor& target) {
    double total = 0.0;
    std::size_t count = 0;
    for (std::size_t i = 0; i < prediction.numel(); ++i) {
        const double diff = prediction[i] - target[i];
        total += diff * diff;
        ++count;
    }
    return total / static_cast<double>(count);
}

/// Central finite differences of a scalar loss with respect to every
/// registered parameter. The realized step is measured after rounding so the
/// quotient uses the perturbation that actually happened.
inline GradMap finite_diff_gradient(ParamStore& params, const std::function<double()>& loss,
                                    double h = 1e-3) {
    GradMap grads;
    for (auto& entry : params.entries()) {
        Tensor grad(entry.value.shape());
        for (std::size_t i = 0; i < entry.value.numel(); ++i) {
            const double original = entry.value[i];
            entry.value[i] = original + h;
            const double hi_point = entry.value[i];
            const double hi = loss();
            entry.value[i] = original - h;
            const double lo_point = entry.value[i];
            const double lo = loss();
            entry.value[i] = original;
            grad[i] = (hi - lo) / (hi_point - lo_point);
        }
        grads[entry.name] = std::move(grad);
    }
    return grads;
}

struct NoiseStats {
    double mean = 0.0;
    double variance = 0.0;
};

/// Monte Carlo statistics of a noised window under a fixed per-patch step
/// assignment. Fresh standard-normal noise is drawn every trial; the noising
/// arithmetic is restated here rather than shared with the forward process.
inline NoiseStats monte_carlo_noise_stats(const Tensor& window, const StepAssignment& steps,
                                          const NoiseSchedule& schedule, std::size_t trials,
                                          RngStream& rng) {
    if (trials < 100) throw Error("monte_carlo_noise_stats: need at least 100 trials");
    const std::size_t length = window.numel();
    const std::size_t num_patches = steps.steps.size();
    if (num_patches == 0 || length % num_patches != 0) {
        throw Error("monte_carlo_noise_stats: window length not divisible into patches");
    }
    const std::size_t patch_len = length / num_patches;

    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
        for (std::size_t j = 0; j < num_patches; ++j) {
            const double g = schedule.gamma[steps.steps[j]];
            const double keep = std::sqrt(g);
            const double corrupt = std::sqrt(1.0 - g);
            for (std::size_t i = 0; i < patch_len; ++i) {
                const double noisy = keep * window[j * patch_len + i] + corrupt * rng.normal();
                sum += noisy;
                sum_sq += noisy * noisy;
            }
        }
    }
    const double count = static_cast<double>(trials * length);
    NoiseStats stats;
    stats.mean = sum / count;
    stats.variance = sum_sq / count - stats.mean * stats.mean;
    return stats;
}

} // namespace oracle
} // namespace timedart

#endif // TIMEDART_ORACLE_HPP

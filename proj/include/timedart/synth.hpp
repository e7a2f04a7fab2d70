#ifndef TIMEDART_SYNTH_HPP
#define TIMEDART_SYNTH_HPP

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "data.hpp"
#include "rng.hpp"
#include "tensor.hpp"

namespace timedart {

enum class SynthKind { sinusoid_mix, ar_process, class_shapes };

inline SynthKind synth_kind_from_string(const std::string& s) {
    if (s == "sinusoid_mix") return SynthKind::sinusoid_mix;
    if (s == "ar_process") return SynthKind::ar_process;
    if (s == "class_shapes") return SynthKind::class_shapes;
    throw Error("unknown synth kind: " + s);
}

/// Specification of a synthetic corpus. sinusoid_mix sums the given
/// frequency/amplitude components per channel; ar_process drives an
/// autoregressive recursion with unit-normal innovations; class_shapes emits
/// balanced labeled windows of distinct waveforms, concatenated end to end.
struct SynthSpec {
    SynthKind kind = SynthKind::sinusoid_mix;
    std::size_t length = 1024;
    std::size_t channels = 1;
    double noise_std = 0.0;
    std::uint64_t seed = 0;

    // sinusoid_mix
    std::vector<double> frequencies{0.01, 0.05};
    std::vector<double> amplitudes{1.0, 0.5};

    // ar_process
    std::vector<double> ar_coeffs{0.6, 0.3};

    // class_shapes
    std::size_t num_classes = 3;
    std::size_t window_len = 64;
    std::size_t num_windows = 300;
};

struct SynthResult {
    MultivariateSeries series;
    std::vector<int> labels; // one per window for class_shapes, else empty
};

/// Schur-Cohn stability test: the AR recursion x_t = sum_i a_i x_{t-i} + e_t
/// is stationary iff every reflection coefficient of the step-down recursion
/// has magnitude below one.
inline bool ar_is_stationary(const std::vector<double>& coeffs) {
    std::vector<double> a = coeffs;
    for (std::size_t order = a.size(); order > 0; --order) {
        const double kappa = a[order - 1];
        if (std::abs(kappa) >= 1.0) return false;
        std::vector<double> next(order - 1);
        const double denom = 1.0 - kappa * kappa;
        for (std::size_t i = 0; i + 1 < order; ++i) {
            next[i] = (a[i] + kappa * a[order - 2 - i]) / denom;
        }
        a = std::move(next);
    }
    return true;
}

namespace detail {

inline double class_template_value(std::size_t klass, double phase) {
    // Distinct waveforms per class: sine, square, triangle, sawtooth, then
    // higher-harmonic sines.
    const double two_pi = 2.0 * 3.14159265358979323846;
    switch (klass % 4) {
        case 0: return std::sin(two_pi * phase * static_cast<double>(1 + klass / 4));
        case 1: return std::sin(two_pi * phase * static_cast<double>(1 + klass / 4)) >= 0.0 ? 1.0 : -1.0;
        case 2: {
            const double t = std::fmod(phase * static_cast<double>(1 + klass / 4), 1.0);
            return t < 0.5 ? 4.0 * t - 1.0 : 3.0 - 4.0 * t;
        }
        default: {
            const double t = std::fmod(phase * static_cast<double>(1 + klass / 4), 1.0);
            return 2.0 * t - 1.0;
        }
    }
}

} // namespace detail

inline SynthResult generate(const SynthSpec& spec) {
    if (spec.channels == 0) throw Error("generate: channels must be >= 1");
    RngStream noise = RngStream::substream(spec.seed, "synth.noise");
    SynthResult result;
    result.series.frequency_hint = std::nullopt;

    switch (spec.kind) {
        case SynthKind::sinusoid_mix: {
            if (spec.frequencies.size() != spec.amplitudes.size()) {
                throw Error("generate: frequencies/amplitudes size mismatch");
            }
            Tensor values({spec.channels, spec.length});
            const double two_pi = 2.0 * 3.14159265358979323846;
            for (std::size_t c = 0; c < spec.channels; ++c) {
                const double channel_phase = 0.7 * static_cast<double>(c);
                for (std::size_t t = 0; t < spec.length; ++t) {
                    double v = 0.0;
                    for (std::size_t k = 0; k < spec.frequencies.size(); ++k) {
                        v += spec.amplitudes[k] *
                             std::sin(two_pi * spec.frequencies[k] * static_cast<double>(t) +
                                      channel_phase);
                    }
                    values.at(c, t) = v + spec.noise_std * noise.normal();
                }
            }
            result.series.values = std::move(values);
            break;
        }
        case SynthKind::ar_process: {
            if (!ar_is_stationary(spec.ar_coeffs)) {
                throw Error("generate: AR coefficients define a non-stationary process");
            }
            const std::size_t order = spec.ar_coeffs.size();
            const std::size_t burn_in = 200;
            Tensor values({spec.channels, spec.length});
            for (std::size_t c = 0; c < spec.channels; ++c) {
                std::vector<double> history(order, 0.0);
                for (std::size_t t = 0; t < burn_in + spec.length; ++t) {
                    double v = noise.normal() * (spec.noise_std > 0.0 ? spec.noise_std : 1.0);
                    for (std::size_t i = 0; i < order; ++i) v += spec.ar_coeffs[i] * history[i];
                    for (std::size_t i = order; i > 1; --i) history[i - 1] = history[i - 2];
                    if (order > 0) history[0] = v;
                    if (t >= burn_in) values.at(c, t - burn_in) = v;
                }
            }
            result.series.values = std::move(values);
            break;
        }
        case SynthKind::class_shapes: {
            if (spec.num_classes < 2) throw Error("generate: class_shapes needs >= 2 classes");
            if (spec.num_windows % spec.num_classes != 0) {
                throw Error("generate: num_windows must be divisible by num_classes for balance");
            }
            Tensor values({spec.channels, spec.num_windows * spec.window_len});
            result.labels.resize(spec.num_windows);
            for (std::size_t w = 0; w < spec.num_windows; ++w) {
                const int klass = static_cast<int>(w % spec.num_classes);
                result.labels[w] = klass;
                for (std::size_t c = 0; c < spec.channels; ++c) {
                    const double channel_phase = 0.13 * static_cast<double>(c);
                    for (std::size_t t = 0; t < spec.window_len; ++t) {
                        const double phase =
                            static_cast<double>(t) / static_cast<double>(spec.window_len) * 2.0 +
                            channel_phase;
                        values.at(c, w * spec.window_len + t) =
                            detail::class_template_value(static_cast<std::size_t>(klass), phase) +
                            spec.noise_std * noise.normal();
                    }
                }
            }
            result.series.values = std::move(values);
            break;
        }
    }

    for (std::size_t c = 0; c < spec.channels; ++c) {
        result.series.channel_names.push_back("ch" + std::to_string(c));
    }
    return result;
}

} // namespace timedart

#endif // TIMEDART_SYNTH_HPP

#ifndef TIMEDART_SCHEDULE_HPP
#define TIMEDART_SCHEDULE_HPP

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "rng.hpp"
#include "tensor.hpp"

namespace timedart {

enum class SchedulerKind { cosine, linear };

inline SchedulerKind scheduler_from_string(const std::string& s) {
    if (s == "cosine") return SchedulerKind::cosine;
    if (s == "linear") return SchedulerKind::linear;
    throw Error("unknown scheduler kind: " + s);
}

inline const char* to_string(SchedulerKind k) {
    return k == SchedulerKind::cosine ? "cosine" : "linear";
}

/// Forward-process noise schedule: per-step retention alpha(s) for s = 1..T
/// and the cumulative product gamma(s) with gamma(0) = 1, so s = 0 always
/// denotes the clean patch.
struct NoiseSchedule {
    SchedulerKind kind = SchedulerKind::cosine;
    std::size_t total_steps = 0;
    std::vector<double> alpha; // alpha[s-1] = alpha(s), s = 1..T
    std::vector<double> gamma; // gamma[s], s = 0..T

    double gamma_at(std::size_t s) const { return gamma[s]; }
};

/// Cosine schedule: gamma(s) = f(s)/f(0) with
/// f(s) = cos^2(((s/T + 0.008) / 1.008) * pi/2), per-step ratios clamped to
/// [0.001, 0.9999] and gamma re-accumulated from the clamped ratios so the
/// stored arrays stay exactly consistent. Linear schedule: beta rising
/// linearly from 1e-4 to 0.02, alpha(s) = 1 - beta(s).
inline NoiseSchedule build_schedule(SchedulerKind kind, std::size_t total_steps) {
    if (total_steps < 1) throw Error("build_schedule: total_steps must be >= 1");
    NoiseSchedule schedule;
    schedule.kind = kind;
    schedule.total_steps = total_steps;
    schedule.alpha.resize(total_steps);

    const double T = static_cast<double>(total_steps);
    if (kind == SchedulerKind::cosine) {
        const double pi_half = 3.14159265358979323846 / 2.0;
        auto f = [&](double s) {
            const double x = std::cos((s / T + 0.008) / 1.008 * pi_half);
            return x * x;
        };
        const double f0 = f(0.0);
        double prev = 1.0;
        for (std::size_t s = 1; s <= total_steps; ++s) {
            const double g = f(static_cast<double>(s)) / f0;
            const double ratio = g / prev;
            schedule.alpha[s - 1] = std::clamp(ratio, 0.001, 0.9999);
            prev = g;
        }
    } else {
        const double beta_start = 1e-4;
        const double beta_end = 0.02;
        for (std::size_t s = 1; s <= total_steps; ++s) {
            const double frac =
                total_steps == 1 ? 0.0 : static_cast<double>(s - 1) / static_cast<double>(total_steps - 1);
            schedule.alpha[s - 1] = 1.0 - (beta_start + (beta_end - beta_start) * frac);
        }
    }

    schedule.gamma.resize(total_steps + 1);
    schedule.gamma[0] = 1.0;
    for (std::size_t s = 1; s <= total_steps; ++s) {
        schedule.gamma[s] = schedule.gamma[s - 1] * schedule.alpha[s - 1];
    }
    return schedule;
}

/// Per-patch diffusion steps. Independent mode draws each step i.i.d. uniform
/// over {1..T}; same mode broadcasts one step to every patch.
struct StepAssignment {
    std::vector<std::size_t> steps;
    bool independent = true;

    static StepAssignment same(std::size_t count, std::size_t step) {
        StepAssignment a;
        a.independent = false;
        a.steps.assign(count, step);
        return a;
    }
    static StepAssignment explicit_steps(std::vector<std::size_t> steps) {
        StepAssignment a;
        a.independent = false;
        a.steps = std::move(steps);
        return a;
    }
};

inline StepAssignment sample_steps(std::size_t count, std::size_t total_steps, RngStream& rng) {
    if (count == 0) throw Error("sample_steps: count must be >= 1");
    StepAssignment a;
    a.steps.resize(count);
    for (std::size_t i = 0; i < count; ++i) {
        a.steps[i] = static_cast<std::size_t>(rng.uniform_int(1, static_cast<std::int64_t>(total_steps)));
    }
    return a;
}

/// Forward diffusion of one patch: x^s = sqrt(gamma(s)) x0 + sqrt(1 - gamma(s)) eps.
inline void add_noise(const double* clean, double* noisy, std::size_t count, std::size_t step,
                      const NoiseSchedule& schedule, const double* epsilon) {
    if (step > schedule.total_steps) {
        throw Error("add_noise: step " + std::to_string(step) + " out of range [0, " +
                    std::to_string(schedule.total_steps) + "]");
    }
    const double g = schedule.gamma[step];
    const double signal = std::sqrt(g);
    const double noise = std::sqrt(1.0 - g);
    for (std::size_t i = 0; i < count; ++i) {
        noisy[i] = signal * clean[i] + noise * epsilon[i];
    }
}

inline Tensor add_noise(const Tensor& clean_patch, std::size_t step, const NoiseSchedule& schedule,
                        const Tensor& epsilon) {
    require_same_shape(clean_patch, epsilon, "add_noise");
    Tensor out(clean_patch.shape());
    add_noise(clean_patch.data(), out.data(), clean_patch.numel(), step, schedule, epsilon.data());
    return out;
}

} // namespace timedart

#endif // TIMEDART_SCHEDULE_HPP

#pragma once

// Diffusion constants: beta[t], alpha[t] = 1 - beta[t], and the running
// product alpha_bar with the alpha_bar[0] = 1 sentinel so t = 1 needs no
// special case. Indexing is 1-based in t throughout the library.

#include <cmath>
#include <vector>

#include "tinydpm/errors.hpp"

namespace tinydpm {

struct ScheduleEntry {
    double beta;
    double alpha;
    double alpha_bar;       // at t
    double alpha_bar_prev;  // at t-1
};

class NoiseSchedule {
public:
    NoiseSchedule() = default;

    NoiseSchedule(int T, std::vector<double> beta) : T_(T), beta_(std::move(beta)) {
        if (T_ < 1) throw UsageError("NoiseSchedule: T must be >= 1");
        if (static_cast<int>(beta_.size()) != T_)
            throw UsageError("NoiseSchedule: beta length != T");
        alpha_.resize(beta_.size());
        alpha_bar_.resize(beta_.size() + 1);
        alpha_bar_[0] = 1.0;
        for (int t = 1; t <= T_; ++t) {
            double b = beta_[static_cast<size_t>(t - 1)];
            if (!(b > 0.0 && b < 1.0))
                throw UsageError("NoiseSchedule: beta out of (0,1) at t=" + std::to_string(t));
            alpha_[static_cast<size_t>(t - 1)] = 1.0 - b;
            alpha_bar_[static_cast<size_t>(t)] = alpha_bar_[static_cast<size_t>(t - 1)] * (1.0 - b);
        }
    }

    int T() const { return T_; }

    ScheduleEntry at(int t) const {
        if (t < 1 || t > T_)
            throw UsageError("schedule_at: t=" + std::to_string(t) + " outside [1," +
                             std::to_string(T_) + "]");
        return {beta_[static_cast<size_t>(t - 1)], alpha_[static_cast<size_t>(t - 1)],
                alpha_bar_[static_cast<size_t>(t)], alpha_bar_[static_cast<size_t>(t - 1)]};
    }

    double beta(int t) const { return at(t).beta; }
    double alpha(int t) const { return at(t).alpha; }

    // alpha_bar with the t=0 sentinel included: valid for 0 <= t <= T.
    double alpha_bar(int t) const {
        if (t < 0 || t > T_) throw UsageError("alpha_bar: t out of range");
        return alpha_bar_[static_cast<size_t>(t)];
    }

    // Variance of q(x_{t-1} | x_t, x_0): beta_t * (1 - abar_{t-1}) / (1 - abar_t).
    double posterior_var(int t) const {
        auto e = at(t);
        double denom = std::max(1.0 - e.alpha_bar, 1e-12);
        return e.beta * (1.0 - e.alpha_bar_prev) / denom;
    }

    const std::vector<double>& betas() const { return beta_; }

private:
    int T_ = 0;
    std::vector<double> beta_, alpha_, alpha_bar_;
};

inline NoiseSchedule build_linear_schedule(int T, double beta_start = 1e-4,
                                           double beta_end = 0.02) {
    if (T < 1) throw UsageError("build_linear_schedule: T must be >= 1");
    if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0))
        throw UsageError("build_linear_schedule: need 0 < beta_start <= beta_end < 1");
    std::vector<double> beta(static_cast<size_t>(T));
    if (T == 1) {
        beta[0] = beta_start;
    } else {
        for (int t = 0; t < T; ++t)
            beta[static_cast<size_t>(t)] =
                beta_start + (beta_end - beta_start) * static_cast<double>(t) / (T - 1);
    }
    return NoiseSchedule(T, std::move(beta));
}

}  // namespace tinydpm

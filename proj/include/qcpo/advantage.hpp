#pragma once

// Density-ratio weighted quantile advantages, their clipped-log smoothing, and
// the combined PPO advantage. Everything here reads frozen old-network
// outputs; nothing is differentiated through.

#include "qcpo/tail.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace qcpo {

// ln of mu = p_num((q_s - cost)/gamma) / (gamma * p_den(q_s)), computed in log
// space so extreme tails cannot overflow. The TD-target argument is floored at
// 1e-6 before the density evaluation.
inline double log_mu_weight(double cost, double q_s, const WeibullParams& next_state_tail,
                            const WeibullParams& state_tail, double gamma) {
    if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("log_mu_weight: gamma in (0,1)");
    double target = std::max((q_s - cost) / gamma, 1e-6);
    double log_num = weibull_log_pdf(target, next_state_tail);
    double log_den = std::log(gamma) + weibull_log_pdf(std::max(q_s, 1e-6), state_tail);
    double lm = log_num - log_den;
    if (!std::isfinite(lm))
        throw std::runtime_error("log_mu_weight: non-finite density ratio (q_s=" + std::to_string(q_s) +
                                 ")");
    return lm;
}

inline double mu_weight(double cost, double q_s, const WeibullParams& next_state_tail,
                        const WeibullParams& state_tail, double gamma) {
    double lm = std::clamp(log_mu_weight(cost, q_s, next_state_tail, state_tail, gamma), -700.0, 700.0);
    return std::exp(lm);  // clamped so the weight stays strictly positive and finite
}

// 1 + clip(ln mu, -c_clip, c_clip); hard-clamped to [1 - c_clip, 1 + c_clip]
inline double smooth_mu_from_log(double log_mu, double c_clip) {
    if (!(c_clip > 0.0)) throw std::invalid_argument("smooth_mu: c_clip must be > 0");
    return 1.0 + std::clamp(log_mu, -c_clip, c_clip);
}

inline double smooth_mu(double mu, double c_clip) {
    if (!(mu > 0.0)) throw std::invalid_argument("smooth_mu: mu must be > 0");
    return smooth_mu_from_log(std::log(mu), c_clip);
}

struct AdvantageRecord {
    double reward_adv = 0.0;
    double quantile_adv = 0.0;
    double combined_adv = 0.0;
    double raw_mu = 1.0;
    double smoothed_mu = 1.0;
};

// One-step TD advantage off the frozen value head; zero bootstrap at terminal.
inline double reward_advantage(double reward, double v_s, double v_next, bool terminal, double gamma) {
    return reward + (terminal ? 0.0 : gamma * v_next) - v_s;
}

// Smoothed-mu weighted quantile TD error at the constraint fraction. Terminal
// transitions have no next-state distribution; their weight is the neutral 1.
struct QuantileAdvantageInput {
    double cost = 0.0;
    bool terminal = false;
    double q_s = 0.0;      // old quantile head at the constraint fraction, state s
    double q_next = 0.0;   // same at s'
    WeibullParams tail_next;  // old tail heads at s'
    WeibullParams tail_s;     // old tail heads at s (Theorem-form denominator variant)
};

struct QuantileAdvantageResult {
    double advantage = 0.0;
    double raw_mu = 1.0;
    double smoothed_mu = 1.0;
    double log_mu_variant_gap = 0.0;  // |ln mu(s'-params) - ln mu(s-params)| diagnostic
};

inline QuantileAdvantageResult quantile_advantage(const QuantileAdvantageInput& in, double gamma,
                                                  double c_clip) {
    QuantileAdvantageResult out;
    double td = in.cost + (in.terminal ? 0.0 : gamma * in.q_next) - in.q_s;
    if (in.terminal) {
        out.raw_mu = 1.0;
        out.smoothed_mu = 1.0;
    } else {
        // implementation form: both densities under the next-state tail
        double lm = log_mu_weight(in.cost, in.q_s, in.tail_next, in.tail_next, gamma);
        double lm_state = log_mu_weight(in.cost, in.q_s, in.tail_next, in.tail_s, gamma);
        out.raw_mu = std::exp(std::min(lm, 700.0));
        out.smoothed_mu = smooth_mu_from_log(lm, c_clip);
        out.log_mu_variant_gap = std::abs(lm - lm_state);
    }
    out.advantage = out.smoothed_mu * td;
    return out;
}

// reward_adv - lambda * cost_side_adv, with lambda captured at call time
inline double combined_advantage(double reward_adv, double cost_side_adv, double lambda) {
    if (lambda < 0.0) throw std::invalid_argument("combined_advantage: lambda must be >= 0");
    return reward_adv - lambda * cost_side_adv;
}

// Policy-dependent additional cost (mu - 1) * (c + gamma * q(s')); a logged
// diagnostic only, the trained quantity is the mu-weighted TD error.
inline double additional_cost_diag(double mu, double cost, double q_next, bool terminal, double gamma) {
    return (mu - 1.0) * (cost + (terminal ? 0.0 : gamma * q_next));
}

}  // namespace qcpo

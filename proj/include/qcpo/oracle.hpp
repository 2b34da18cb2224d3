#pragma once

// Independent verification oracles: Monte-Carlo rollout statistics, a
// brute-force pinball minimizer, and an exact tabular fixture for the
// density-ratio TD identity. Nothing here touches the learner's code paths.

#include "qcpo/env.hpp"
#include "qcpo/lagrange.hpp"
#include "qcpo/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace qcpo {

// Discounted cost sum of one full episode under the given policy.
inline double rollout_cost(const StochasticPolicy& policy, Environment& env, double gamma, Rng& rng) {
    env.reset(rng.next_u64());
    double sum = 0.0, g = 1.0;
    while (!env.episode_over()) {
        Transition tr = env.step(policy(env.observation(), rng));
        sum += g * tr.cost;
        g *= gamma;
    }
    return sum;
}

inline std::vector<double> mc_episode_costs(const StochasticPolicy& policy, Environment& env,
                                            int n_rollouts, double gamma, Rng& rng) {
    std::vector<double> costs;
    costs.reserve(n_rollouts);
    for (int i = 0; i < n_rollouts; ++i) costs.push_back(rollout_cost(policy, env, gamma, rng));
    return costs;
}

// Empirical u-quantile of n_rollouts discounted episode cost sums.
inline double mc_quantile(const StochasticPolicy& policy, Environment& env, double u, int n_rollouts,
                          double gamma, Rng& rng) {
    if (n_rollouts < 100) throw std::invalid_argument("mc_quantile: need at least 100 rollouts");
    return empirical_quantile(mc_episode_costs(policy, env, n_rollouts, gamma, rng), u);
}

// Fraction of episodes whose discounted cost sum exceeds d_th.
inline double mc_outage(const StochasticPolicy& policy, Environment& env, double d_th, int n_rollouts,
                        double gamma, Rng& rng) {
    std::vector<double> costs = mc_episode_costs(policy, env, n_rollouts, gamma, rng);
    int over = 0;
    for (double c : costs) over += (c > d_th) ? 1 : 0;
    return static_cast<double>(over) / costs.size();
}

struct PinballMin {
    double argmin = 0.0;
    double loss = 0.0;
};

// Grid-search argmin of the mean pinball loss over the sample range. This is
// the independent oracle for quantile-critic calibration tests.
inline PinballMin pinball_bruteforce_min(const std::vector<double>& samples, double u, int grid_points = 2001) {
    if (samples.empty()) throw std::invalid_argument("pinball_bruteforce_min: empty samples");
    double lo = *std::min_element(samples.begin(), samples.end());
    double hi = *std::max_element(samples.begin(), samples.end());
    auto mean_loss = [&](double q) {
        double loss = 0.0;
        for (double x : samples) {
            double d = x - q;
            loss += (u - (d < 0.0 ? 1.0 : 0.0)) * d;
        }
        return loss / samples.size();
    };
    std::vector<double> losses(grid_points);
    double min_loss = std::numeric_limits<double>::infinity();
    for (int i = 0; i < grid_points; ++i) {
        double q = lo + (hi - lo) * (grid_points == 1 ? 0.0 : static_cast<double>(i) / (grid_points - 1));
        losses[i] = mean_loss(q);
        min_loss = std::min(min_loss, losses[i]);
    }
    // leftmost minimizer; the pinball objective can be exactly flat between
    // order statistics, where rounding noise would otherwise pick arbitrarily
    double tol = 1e-9 * (1.0 + std::abs(min_loss));
    for (int i = 0; i < grid_points; ++i) {
        if (losses[i] <= min_loss + tol) {
            double q = lo + (hi - lo) * (grid_points == 1 ? 0.0 : static_cast<double>(i) / (grid_points - 1));
            return {q, losses[i]};
        }
    }
    return {lo, min_loss};
}

// ---------------------------------------------------------------------------
// Tabular fixture with exactly computable cost-to-go distributions.
// Dynamics must form a DAG so the distribution enumerates finitely.

struct CostAtom {
    double value = 0.0;
    double prob = 1.0;
};

struct TabularAction {
    double policy_prob = 1.0;
    std::vector<CostAtom> cost;  // distribution of the immediate cost
    int next_state = -1;         // -1 = terminal
};

struct TabularMdp {
    std::vector<std::vector<TabularAction>> actions_by_state;
    double gamma = 0.9;
};

using AtomDist = std::vector<CostAtom>;  // finite-support distribution (value, mass)

inline void add_atom(std::map<double, double>& acc, double v, double m) {
    // merge values that agree to the last few ulps
    auto it = acc.lower_bound(v - 1e-12);
    if (it != acc.end() && std::abs(it->first - v) <= 1e-12) {
        it->second += m;
    } else {
        acc[v] += m;
    }
}

// Exact distribution of the discounted cost-to-go from `state`.
inline AtomDist exact_cost_distribution(const TabularMdp& mdp, int state,
                                        std::map<int, AtomDist>* memo = nullptr) {
    if (state < 0) return {{0.0, 1.0}};
    if (memo) {
        auto it = memo->find(state);
        if (it != memo->end()) return it->second;
    }
    std::map<double, double> acc;
    for (const TabularAction& a : mdp.actions_by_state.at(state)) {
        AtomDist down = exact_cost_distribution(mdp, a.next_state, memo);
        for (const CostAtom& c : a.cost)
            for (const CostAtom& d : down)
                add_atom(acc, c.value + mdp.gamma * d.value, a.policy_prob * c.prob * d.prob);
    }
    AtomDist out;
    for (auto& [v, m] : acc) out.push_back({v, m});
    if (memo) (*memo)[state] = out;
    return out;
}

inline double atom_quantile(const AtomDist& dist, double u) {
    double acc = 0.0;
    for (const CostAtom& a : dist) {
        acc += a.prob;
        if (acc >= u - 1e-12) return a.value;
    }
    return dist.back().value;
}

// Gaussian-kernel smoothed density of a finite-support distribution.
inline double smoothed_density(const AtomDist& dist, double x, double bandwidth) {
    const double inv = 1.0 / (bandwidth * 2.5066282746310002);  // 1/(h*sqrt(2*pi))
    double p = 0.0;
    for (const CostAtom& a : dist) {
        double z = (x - a.value) / bandwidth;
        p += a.prob * inv * std::exp(-0.5 * z * z);
    }
    return p;
}

inline double min_support_gap(const AtomDist& dist) {
    double gap = std::numeric_limits<double>::infinity();
    for (std::size_t i = 1; i < dist.size(); ++i) gap = std::min(gap, dist[i].value - dist[i - 1].value);
    return gap;
}

struct TdIdentityReport {
    bool degenerate = false;     // point-mass cost-to-go; identity is vacuous
    double quantile = 0.0;       // q_u at the checked state
    double lhs_density = 0.0;    // gamma * p(q_u) at the checked state (exact)
    double rhs_mc_mean = 0.0;    // MC estimate of E_pi[p_next((q_u - c)/gamma)]
    double z_pdf = 0.0;          // z-score of rhs vs lhs
    double mu_mc_mean = 0.0;     // MC estimate of E_pi[mu]
    double z_mu = 0.0;           // z-score of E_pi[mu] vs 1
};

// Checks the distributional TD density identity and E_pi[mu] = 1 on a tabular
// MDP with exactly known finite-support cost distributions. Densities are
// kernel-smoothed; the next-state bandwidth is scaled by 1/gamma so that the
// smoothed identity holds exactly and the z-scores measure pure MC error.
// `flip_cost_sign` is a deliberate-fault hook for mutation tests.
inline TdIdentityReport td_identity_check(const TabularMdp& mdp, int state, double u, long n_mc,
                                          Rng& rng, bool flip_cost_sign = false) {
    std::map<int, AtomDist> memo;
    AtomDist dist_s = exact_cost_distribution(mdp, state, &memo);

    TdIdentityReport rep;
    if (dist_s.size() < 2) {
        rep.degenerate = true;
        return rep;
    }

    double q = atom_quantile(dist_s, u);
    rep.quantile = q;
    double h = 0.25 * min_support_gap(dist_s);
    double g = mdp.gamma;
    rep.lhs_density = g * smoothed_density(dist_s, q, h);

    const auto& actions = mdp.actions_by_state.at(state);
    std::vector<double> act_probs;
    for (const TabularAction& a : actions) act_probs.push_back(a.policy_prob);

    double sum_p = 0.0, sumsq_p = 0.0, sum_mu = 0.0, sumsq_mu = 0.0;
    for (long i = 0; i < n_mc; ++i) {
        const TabularAction& a = actions[rng.categorical(act_probs)];
        std::vector<double> cost_probs;
        for (const CostAtom& c : a.cost) cost_probs.push_back(c.prob);
        double c = a.cost[rng.categorical(cost_probs)].value;
        AtomDist dist_next = exact_cost_distribution(mdp, a.next_state, &memo);
        double target = (flip_cost_sign ? (q + c) : (q - c)) / g;
        double p_next = smoothed_density(dist_next, target, h / g);
        double mu = p_next / rep.lhs_density;
        sum_p += p_next;
        sumsq_p += p_next * p_next;
        sum_mu += mu;
        sumsq_mu += mu * mu;
    }
    double n = static_cast<double>(n_mc);
    rep.rhs_mc_mean = sum_p / n;
    double var_p = std::max(sumsq_p / n - rep.rhs_mc_mean * rep.rhs_mc_mean, 1e-300);
    rep.z_pdf = (rep.rhs_mc_mean - rep.lhs_density) / std::sqrt(var_p / n);
    rep.mu_mc_mean = sum_mu / n;
    double var_mu = std::max(sumsq_mu / n - rep.mu_mc_mean * rep.mu_mc_mean, 1e-300);
    rep.z_mu = (rep.mu_mc_mean - 1.0) / std::sqrt(var_mu / n);
    return rep;
}

// The default 3-state fixture: a start state with two actions leading to two
// intermediate states with Bernoulli-style costs, then termination.
inline TabularMdp make_tabular_fixture() {
    TabularMdp mdp;
    mdp.gamma = 0.9;
    mdp.actions_by_state = {
        {{0.6, {{0.5, 1.0}}, 1}, {0.4, {{0.3, 1.0}}, 2}},  // s0
        {{1.0, {{1.0, 0.5}, {3.0, 0.5}}, -1}},             // s1
        {{1.0, {{0.0, 0.75}, {2.0, 0.25}}, -1}},           // s2
    };
    return mdp;
}

// Degenerate fixture: a deterministic one-step cost, point-mass cost-to-go.
inline TabularMdp make_degenerate_fixture() {
    TabularMdp mdp;
    mdp.gamma = 0.9;
    mdp.actions_by_state = {{{1.0, {{2.0, 1.0}}, -1}}};
    return mdp;
}

struct DualityReport {
    double quantile = 0.0;
    double outage = 0.0;
    double expected = 0.0;  // 1 - u
    double sigma = 0.0;     // combined MC standard error
    double z = 0.0;
};

// Quantile/outage duality: for continuous cost distributions,
// P(X > q_u) = 1 - u up to Monte-Carlo error from both estimates.
inline DualityReport quantile_outage_duality(const StochasticPolicy& policy, Environment& env, double u,
                                             int n_quantile, int n_outage, double gamma, Rng& rng) {
    DualityReport rep;
    rep.quantile = mc_quantile(policy, env, u, n_quantile, gamma, rng);
    rep.outage = mc_outage(policy, env, rep.quantile, n_outage, gamma, rng);
    rep.expected = 1.0 - u;
    rep.sigma = std::sqrt(u * (1.0 - u) * (1.0 / n_quantile + 1.0 / n_outage));
    rep.z = (rep.outage - rep.expected) / rep.sigma;
    return rep;
}

}  // namespace qcpo

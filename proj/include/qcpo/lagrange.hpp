#pragma once

// Projected-gradient Lagrange multiplier controller. The constraint statistic
// is the empirical (1 - eps0)-quantile of the most recent W episode cost sums
// (or their mean, for the expectation-constrained baseline).

#include <algorithm>
#include <cmath>
#include <deque>
#include <stdexcept>
#include <vector>

namespace qcpo {

// Order-statistic quantile: the ceil(u * n)-th smallest value,
// i.e. inf{x : F_hat(x) >= u}.
inline double empirical_quantile(std::vector<double> values, double u) {
    if (values.empty()) throw std::invalid_argument("empirical_quantile: empty list");
    if (!(u > 0.0 && u < 1.0)) throw std::invalid_argument("empirical_quantile: u must be in (0,1)");
    std::size_t n = values.size();
    std::size_t k = static_cast<std::size_t>(std::ceil(u * n));
    if (k < 1) k = 1;
    if (k > n) k = n;
    std::nth_element(values.begin(), values.begin() + (k - 1), values.end());
    return values[k - 1];
}

inline double mean_of(const std::vector<double>& values) {
    if (values.empty()) throw std::invalid_argument("mean_of: empty list");
    double s = 0.0;
    for (double v : values) s += v;
    return s / values.size();
}

struct LagrangeState {
    double lambda = 0.0;
    double eta = 0.1;
    double d_th = 10.0;
    double eps0 = 0.1;
    std::size_t window = 100;
    bool use_mean = false;  // drive on the buffer mean instead of its quantile
    std::deque<double> episode_costs;

    void push_episode_cost(double c) {
        episode_costs.push_back(c);
        while (episode_costs.size() > window) episode_costs.pop_front();
    }

    bool warmed_up() const { return episode_costs.size() >= window; }

    std::vector<double> buffer() const { return {episode_costs.begin(), episode_costs.end()}; }

    // Current constraint statistic over whatever the buffer holds (0 if empty).
    double statistic() const {
        if (episode_costs.empty()) return 0.0;
        std::vector<double> b = buffer();
        return use_mean ? mean_of(b) : empirical_quantile(b, 1.0 - eps0);
    }
};

// One projected-gradient step; skipped (not an error) before the buffer has
// filled once.
inline LagrangeState lagrange_update(LagrangeState state) {
    if (!state.warmed_up()) return state;
    double stat = state.statistic();
    state.lambda = std::max(state.lambda + state.eta * (stat - state.d_th), 0.0);
    return state;
}

}  // namespace qcpo

#pragma once

// Quantile critic pieces: midpoint fractions, the asymmetric Huber kernel,
// TD target assembly against the frozen old network, and the value-head losses.

#include "qcpo/autodiff.hpp"
#include "qcpo/net.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace qcpo {

// u_i = (2i - 1) / (2 n_q), strictly increasing midpoints in (0,1)
inline std::vector<double> quantile_fractions(int n_q) {
    if (n_q < 1) throw std::invalid_argument("quantile_fractions: n_q must be >= 1");
    std::vector<double> u(n_q);
    for (int i = 0; i < n_q; ++i) u[i] = (2.0 * (i + 1) - 1.0) / (2.0 * n_q);
    return u;
}

// L_kappa(x): quadratic inside |x| <= kappa, linear outside, C^1 at the seam
inline double huber(double x, double kappa) {
    if (!(kappa > 0.0)) throw std::invalid_argument("huber: kappa must be > 0");
    double ax = std::abs(x);
    return ax <= kappa ? 0.5 * x * x : kappa * (ax - 0.5 * kappa);
}

// |u - 1{x<0}| L_kappa(x) / kappa
inline double quantile_huber_loss(double delta, double u, double kappa) {
    if (!(u > 0.0 && u < 1.0)) throw std::invalid_argument("quantile_huber_loss: u must be in (0,1)");
    return std::abs(u - (delta < 0.0 ? 1.0 : 0.0)) * huber(delta, kappa) / kappa;
}

// C(s) ~ (1/n_q) sum_i q_{u_i}(s)
inline double cost_value_from_quantiles(const Eigen::RowVectorXd& q) {
    return q.size() ? q.mean() : 0.0;
}

// Reads the critic output at an arbitrary fraction, linearly interpolating
// between the fixed midpoints (exact when u lands on a midpoint).
inline double quantile_at(const Eigen::RowVectorXd& q_values, const std::vector<double>& fractions,
                          double u) {
    const int n = static_cast<int>(fractions.size());
    if (q_values.size() != n) throw std::invalid_argument("quantile_at: size mismatch");
    if (u <= fractions.front()) return q_values(0);
    if (u >= fractions.back()) return q_values(n - 1);
    int hi = 1;
    while (fractions[hi] < u) ++hi;
    double w = (u - fractions[hi - 1]) / (fractions[hi] - fractions[hi - 1]);
    return (1.0 - w) * q_values(hi - 1) + w * q_values(hi);
}

// Target matrix: row r, column j holds c_r + gamma * q_old_j(s'_r); terminal
// transitions bootstrap with zero.
inline Mat quantile_td_targets(const Eigen::VectorXd& costs, const std::vector<bool>& terminal,
                               const Mat& q_old_next, double gamma) {
    const int n = static_cast<int>(costs.size());
    if (q_old_next.rows() != n || static_cast<int>(terminal.size()) != n)
        throw std::invalid_argument("quantile_td_targets: row mismatch");
    Mat targets(n, q_old_next.cols());
    for (int r = 0; r < n; ++r)
        for (int j = 0; j < q_old_next.cols(); ++j)
            targets(r, j) = costs(r) + (terminal[r] ? 0.0 : gamma * q_old_next(r, j));
    return targets;
}

// Untaped loss value: (1/(n * n_q^2)) sum_{r,i,j} l_{Huber,u_i}(targets_rj - q_ri)
inline double quantile_td_loss_value(const Mat& q_s, const Mat& targets,
                                     const std::vector<double>& fractions, double kappa) {
    if (q_s.rows() != targets.rows()) throw std::invalid_argument("quantile_td_loss_value: rows");
    double loss = 0.0;
    for (int r = 0; r < q_s.rows(); ++r)
        for (int i = 0; i < q_s.cols(); ++i)
            for (int j = 0; j < targets.cols(); ++j)
                loss += quantile_huber_loss(targets(r, j) - q_s(r, i), fractions[i], kappa);
    return loss / (static_cast<double>(q_s.rows()) * q_s.cols() * targets.cols());
}

// Fraction of adjacent quantile pairs out of order, over a batch of outputs.
inline double quantile_crossing_rate(const Mat& q) {
    if (q.cols() < 2 || q.rows() == 0) return 0.0;
    long crossings = 0;
    for (int r = 0; r < q.rows(); ++r)
        for (int c = 1; c < q.cols(); ++c) crossings += (q(r, c) < q(r, c - 1)) ? 1 : 0;
    return static_cast<double>(crossings) / (static_cast<double>(q.rows()) * (q.cols() - 1));
}

}  // namespace qcpo

#pragma once

// Weibull approximation of the right tail of the discounted cost-to-go,
// fitted in log scale to the rightmost quantile estimates.

#include "qcpo/net.hpp"
#include "qcpo/rng.hpp"

#include <cmath>
#include <stdexcept>
#include <utility>
#include <vector>

namespace qcpo {

struct WeibullParams {
    double alpha = 1.0;  // shape, produced by a (0,4) scaled-sigmoid head
    double beta = 1.0;   // scale, produced by an exp head
};

// 1 - F(x) = exp(-(x/beta)^alpha)
inline double weibull_survival(double x, const WeibullParams& p) {
    if (x < 0.0) throw std::invalid_argument("weibull_survival: x must be >= 0");
    return std::exp(-std::pow(x / p.beta, p.alpha));
}

inline double weibull_log_pdf(double x, const WeibullParams& p) {
    if (!(x > 0.0)) throw std::invalid_argument("weibull_log_pdf: x must be > 0");
    double lx = std::log(x / p.beta);
    return std::log(p.alpha / p.beta) + (p.alpha - 1.0) * lx - std::exp(p.alpha * lx);
}

// (alpha/beta) (x/beta)^(alpha-1) exp(-(x/beta)^alpha)
inline double weibull_pdf(double x, const WeibullParams& p) { return std::exp(weibull_log_pdf(x, p)); }

// beta * (-log(1-u))^(1/alpha)
inline double weibull_quantile(double u, const WeibullParams& p) {
    if (!(u > 0.0 && u < 1.0)) throw std::invalid_argument("weibull_quantile: u must be in (0,1)");
    return p.beta * std::pow(-std::log1p(-u), 1.0 / p.alpha);
}

// Mean squared log-scale quantile error:
// (1/k) sum_i 0.5 * (log beta + log(c_{u_i})/alpha - log q_i)^2, c_u = -log(1-u).
// Quantile estimates at or below zero are floored at 1e-6; `flagged` reports it.
inline double tail_fit_loss(const std::vector<std::pair<double, double>>& top_quantiles,
                            const WeibullParams& p, bool* flagged = nullptr) {
    if (top_quantiles.size() < 2) throw std::invalid_argument("tail_fit_loss: need k >= 2 points");
    if (flagged) *flagged = false;
    double loss = 0.0;
    for (const auto& [u, q] : top_quantiles) {
        if (!(u > 0.0 && u < 1.0)) throw std::invalid_argument("tail_fit_loss: fraction out of range");
        double qq = q;
        if (qq < 1e-6) {
            qq = 1e-6;
            if (flagged) *flagged = true;
        }
        double resid = std::log(p.beta) + std::log(-std::log1p(-u)) / p.alpha - std::log(qq);
        loss += 0.5 * resid * resid;
    }
    return loss / top_quantiles.size();
}

struct TailFitResult {
    WeibullParams params;
    double loss = 0.0;
    int iterations = 0;
};

// Gradient-descent fit of scalar (alpha, beta) through the same output heads
// the network uses (4*sigmoid and exp), so the recovered parameters respect
// the head ranges. Used by the recovery checks and the verify suite.
inline TailFitResult fit_weibull_tail(const std::vector<std::pair<double, double>>& top_quantiles,
                                      int max_iters = 40000, double lr = 0.02) {
    ParamStore store;
    store.add_slice("tail.raw", 1, 2);  // [pre-sigmoid alpha, pre-exp beta]
    store.values = {0.0, 0.0};
    Adam opt(lr, 0, 2);

    auto params_of = [](const ParamStore& s) {
        return WeibullParams{4.0 / (1.0 + std::exp(-s.values[0])), std::exp(s.values[1])};
    };

    TailFitResult res;
    for (int it = 0; it < max_iters; ++it) {
        WeibullParams p = params_of(store);
        double dla = 0.0, dlb = 0.0;  // d loss / d alpha, d beta
        double loss = 0.0;
        for (const auto& [u, q] : top_quantiles) {
            double qq = std::max(q, 1e-6);
            double lcu = std::log(-std::log1p(-u));
            double resid = std::log(p.beta) + lcu / p.alpha - std::log(qq);
            loss += 0.5 * resid * resid;
            dla += resid * (-lcu / (p.alpha * p.alpha));
            dlb += resid / p.beta;
        }
        loss /= top_quantiles.size();
        dla /= top_quantiles.size();
        dlb /= top_quantiles.size();
        res.loss = loss;
        res.iterations = it + 1;
        if (loss < 1e-12) break;
        // chain through the heads
        double sig = p.alpha / 4.0;
        std::vector<double> grad(store.size(), 0.0);
        grad[0] = dla * 4.0 * sig * (1.0 - sig);
        grad[1] = dlb * p.beta;
        opt.step(store, grad);
    }
    res.params = params_of(store);
    res.loss = tail_fit_loss(top_quantiles, res.params);
    return res;
}

}  // namespace qcpo

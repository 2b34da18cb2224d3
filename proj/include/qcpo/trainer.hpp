#pragma once

// The training loop: collect a batch on-policy, fit the reward value head,
// the quantile head and the Weibull tail heads for several epochs, freeze the
// fitted networks, compute combined advantages, run clipped-surrogate policy
// epochs, then update the Lagrange multiplier from the episode-cost buffer.

#include "qcpo/advantage.hpp"
#include "qcpo/critic.hpp"
#include "qcpo/env.hpp"
#include "qcpo/lagrange.hpp"
#include "qcpo/net.hpp"
#include "qcpo/tail.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <functional>
#include <memory>
#include <stdexcept>
#include <vector>

namespace qcpo {

enum class TrainMode { qcpo, expcp };

struct TrainerConfig {
    EnvConfig env;
    double gamma = 0.99;
    double lr = 1e-4;
    int n_q = 25;
    int tail_k = 8;
    double kappa = 0.1;  // Huber kernel width; small keeps the pinball minimizer near the quantile
    double r_clip = 0.1;
    double c_clip = 0.5;
    double eta = 0.1;
    int batch_steps = 4000;
    int subtraj_len = 100;
    int epochs_per_batch = 8;
    long max_env_steps = 2000000;
    double d_th = 10.0;
    double eps0 = 0.1;
    TrainMode mode = TrainMode::qcpo;
    std::uint64_t seed = 0;
    std::vector<int> hidden = {64, 64};
    double entropy_coef = 0.0;
    bool normalize_adv = true;
    bool lambda_frozen = false;      // keep lambda at its initial value (plain-PPO reduction)
    double constraint_gamma = 0.99;  // discounting for the episode-cost buffer and outage metric
    int lagrange_window = 100;
    double final_policy_scale = 0.01;

    void validate() const {
        if (!(gamma > 0.0 && gamma < 1.0)) throw std::invalid_argument("config: gamma in (0,1)");
        if (!(constraint_gamma > 0.0 && constraint_gamma <= 1.0))
            throw std::invalid_argument("config: constraint_gamma in (0,1]");
        if (!(eps0 > 0.0 && eps0 < 1.0)) throw std::invalid_argument("config: eps0 in (0,1)");
        if (!(r_clip > 0.0) || !(c_clip > 0.0)) throw std::invalid_argument("config: clips must be > 0");
        if (!(eta > 0.0)) throw std::invalid_argument("config: eta must be > 0");
        if (n_q < 1) throw std::invalid_argument("config: n_q >= 1");
        if (tail_k < 2 || tail_k > n_q) throw std::invalid_argument("config: tail_k in [2, n_q]");
        if (batch_steps < 1) throw std::invalid_argument("config: batch_steps >= 1");
        if (subtraj_len < 1 || batch_steps % subtraj_len != 0)
            throw std::invalid_argument("config: batch_steps must be a multiple of subtraj_len");
        if (epochs_per_batch < 1) throw std::invalid_argument("config: epochs_per_batch >= 1");
        if (!(kappa > 0.0)) throw std::invalid_argument("config: kappa > 0");
        if (max_env_steps < 0) throw std::invalid_argument("config: max_env_steps >= 0");
    }
};

struct IterationMetrics {
    long iter = 0;
    long env_steps = 0;
    double avg_return_100ep = 0.0;
    double outage_prob_100ep = 0.0;
    double avg_cost_sum_100ep = 0.0;
    double lambda = 0.0;
    double emp_quantile = 0.0;
    double policy_loss = 0.0;
    double quantile_loss = 0.0;
    double value_loss = 0.0;
    double tail_loss = 0.0;
    double mean_kl = 0.0;
    double qx_rate = 0.0;
};

struct BatchData {
    Mat obs, next_obs;
    std::vector<int> actions;
    Eigen::VectorXd rewards, costs, logp_old;
    Mat logits_old;
    std::vector<bool> terminal;  // reached a terminal state
    std::vector<bool> ended;     // terminal or truncated
    int size() const { return static_cast<int>(actions.size()); }
};

// Backward-discounted targets over fixed-length sub-trajectory slices.
// Terminal steps stop the recursion; slice boundaries and truncations
// bootstrap with the supplied next-state estimate.
inline Eigen::VectorXd discounted_targets_with_bootstrap(const Eigen::VectorXd& base,
                                                         const std::vector<bool>& terminal,
                                                         const std::vector<bool>& ended,
                                                         const Eigen::VectorXd& bootstrap_next,
                                                         double gamma, int subtraj_len) {
    const int n = static_cast<int>(base.size());
    if (n % subtraj_len != 0)
        throw std::invalid_argument("discounted_targets: length must be a multiple of subtraj_len");
    Eigen::VectorXd y(n);
    for (int s = 0; s < n; s += subtraj_len) {
        for (int t = s + subtraj_len - 1; t >= s; --t) {
            if (terminal[t])
                y(t) = base(t);
            else if (ended[t] || t == s + subtraj_len - 1)
                y(t) = base(t) + gamma * bootstrap_next(t);
            else
                y(t) = base(t) + gamma * y(t + 1);
        }
    }
    return y;
}

class Trainer {
public:
    explicit Trainer(TrainerConfig cfg) : cfg_(std::move(cfg)), rng_(derive_seed(cfg_.seed, 1)) {
        cfg_.validate();
        cfg_.env.seed = derive_seed(cfg_.seed, 2);
        env_ = make_env(cfg_.env);
        env_->reset(cfg_.env.seed);
        obs_dim_ = env_->observation_dim();
        n_actions_ = env_->num_actions();
        fractions_ = quantile_fractions(cfg_.n_q);

        Rng init_rng(derive_seed(cfg_.seed, 0));
        auto range_begin = [&] { return store_.size(); };
        int b0 = range_begin();
        policy_ = Mlp::create(store_, "policy", {obs_dim_, cfg_.hidden, n_actions_, Head::linear},
                              init_rng, cfg_.final_policy_scale);
        int b1 = range_begin();
        value_ = Mlp::create(store_, "value", {obs_dim_, cfg_.hidden, 1, Head::linear}, init_rng);
        int b2 = range_begin();
        quantile_ = Mlp::create(store_, "quantile", {obs_dim_, cfg_.hidden, cfg_.n_q, Head::exp},
                                init_rng);
        int b3 = range_begin();
        alpha_ = Mlp::create(store_, "alpha", {obs_dim_, cfg_.hidden, 1, Head::scaled_sigmoid4},
                             init_rng);
        beta_ = Mlp::create(store_, "beta", {obs_dim_, cfg_.hidden, 1, Head::exp}, init_rng);
        int b4 = range_begin();

        opt_policy_ = Adam(cfg_.lr, b0, b1 - b0);
        opt_value_ = Adam(cfg_.lr, b1, b2 - b1);
        opt_quantile_ = Adam(cfg_.lr, b2, b3 - b2);
        opt_tail_ = Adam(cfg_.lr, b3, b4 - b3);

        lagrange_.lambda = 0.0;
        lagrange_.eta = cfg_.eta;
        lagrange_.d_th = cfg_.d_th;
        lagrange_.eps0 = cfg_.eps0;
        lagrange_.window = cfg_.lagrange_window;
        lagrange_.use_mean = (cfg_.mode == TrainMode::expcp);

        log_cu_.resize(cfg_.tail_k);
        for (int i = 0; i < cfg_.tail_k; ++i) {
            double u = fractions_[cfg_.n_q - cfg_.tail_k + i];
            log_cu_(i) = std::log(-std::log1p(-u));
        }
    }

    IterationMetrics train_iteration() {
        collect();
        IterationMetrics m;
        m.iter = ++iter_;
        m.env_steps = env_steps_;

        const BatchData& b = batch_;
        const int n = b.size();

        // --- targets from the frozen pre-update networks, once per batch ---
        ParamStore old_store = store_;
        Mat q_old_next = quantile_.forward(old_store, b.next_obs);
        Mat td_targets = quantile_td_targets(b.costs, b.terminal, q_old_next, cfg_.gamma);
        Eigen::VectorXd v_old_next = value_.forward(old_store, b.next_obs).col(0);
        Eigen::VectorXd value_targets = discounted_targets_with_bootstrap(
            b.rewards, b.terminal, b.ended, v_old_next, cfg_.gamma, cfg_.subtraj_len);
        Eigen::VectorXd cmean_old_next = q_old_next.rowwise().mean();
        Eigen::VectorXd cost_targets = discounted_targets_with_bootstrap(
            b.costs, b.terminal, b.ended, cmean_old_next, cfg_.gamma, cfg_.subtraj_len);

        // --- critic, quantile and tail epochs ---
        for (int e = 0; e < cfg_.epochs_per_batch; ++e) {
            {
                ad::Tape t;
                GradBinder bind{&t};
                auto v = value_.forward_taped(bind, store_, b.obs);
                auto loss = t.half_mse(v, value_targets);
                m.value_loss = t.val(loss)(0, 0);
                t.backward(loss);
                std::vector<double> grad(store_.size(), 0.0);
                bind.scatter(grad);
                opt_value_.step(store_, grad);
            }
            {
                ad::Tape t;
                GradBinder bind{&t};
                auto q = quantile_.forward_taped(bind, store_, b.obs);
                auto loss = t.add(t.quantile_huber_td(q, td_targets, fractions_, cfg_.kappa),
                                  t.half_mse_rowmean(q, cost_targets));
                m.quantile_loss = t.val(loss)(0, 0);
                t.backward(loss);
                std::vector<double> grad(store_.size(), 0.0);
                bind.scatter(grad);
                opt_quantile_.step(store_, grad);
            }
            {
                // tail heads track the current quantile estimates, gradients
                // stopped at the quantile network
                Mat q_now = quantile_.forward(store_, b.obs);
                Mat log_q(n, cfg_.tail_k);
                for (int r = 0; r < n; ++r)
                    for (int i = 0; i < cfg_.tail_k; ++i)
                        log_q(r, i) = std::log(std::max(q_now(r, cfg_.n_q - cfg_.tail_k + i), 1e-6));
                ad::Tape t;
                GradBinder bind{&t};
                auto a = alpha_.forward_taped(bind, store_, b.obs);
                auto bb = beta_.forward_taped(bind, store_, b.obs);
                auto loss = t.weibull_logquantile_fit(a, bb, log_cu_, log_q);
                m.tail_loss = t.val(loss)(0, 0);
                t.backward(loss);
                std::vector<double> grad(store_.size(), 0.0);
                bind.scatter(grad);
                opt_tail_.step(store_, grad);
            }
        }

        // --- freeze the fitted networks, compute advantages ---
        ParamStore adv_store = store_;
        Mat v_s = value_.forward(adv_store, b.obs);
        Mat v_n = value_.forward(adv_store, b.next_obs);
        Mat q_s = quantile_.forward(adv_store, b.obs);
        Mat q_n = quantile_.forward(adv_store, b.next_obs);
        Mat al_n = alpha_.forward(adv_store, b.next_obs);
        Mat be_n = beta_.forward(adv_store, b.next_obs);
        Mat al_s = alpha_.forward(adv_store, b.obs);
        Mat be_s = beta_.forward(adv_store, b.obs);
        m.qx_rate = quantile_crossing_rate(q_s);

        double lambda_now = lagrange_.lambda;
        last_advantages_.assign(n, {});
        Eigen::VectorXd combined(n);
        double gap_sum = 0.0;
        for (int r = 0; r < n; ++r) {
            AdvantageRecord& rec = last_advantages_[r];
            rec.reward_adv =
                reward_advantage(b.rewards(r), v_s(r, 0), v_n(r, 0), b.terminal[r], cfg_.gamma);
            if (cfg_.mode == TrainMode::qcpo) {
                QuantileAdvantageInput in;
                in.cost = b.costs(r);
                in.terminal = b.terminal[r];
                in.q_s = quantile_at(q_s.row(r), fractions_, 1.0 - cfg_.eps0);
                in.q_next = quantile_at(q_n.row(r), fractions_, 1.0 - cfg_.eps0);
                in.tail_next = {al_n(r, 0), be_n(r, 0)};
                in.tail_s = {al_s(r, 0), be_s(r, 0)};
                auto res = quantile_advantage(in, cfg_.gamma, cfg_.c_clip);
                rec.quantile_adv = res.advantage;
                rec.raw_mu = res.raw_mu;
                rec.smoothed_mu = res.smoothed_mu;
                gap_sum += res.log_mu_variant_gap;
            } else {
                double c_s = q_s.row(r).mean();
                double c_n = q_n.row(r).mean();
                rec.quantile_adv =
                    b.costs(r) + (b.terminal[r] ? 0.0 : cfg_.gamma * c_n) - c_s;
            }
            rec.combined_adv = combined_advantage(rec.reward_adv, rec.quantile_adv, lambda_now);
            combined(r) = rec.combined_adv;
        }
        mu_variant_divergence_ = gap_sum / n;

        if (cfg_.normalize_adv) {
            double mean = combined.mean();
            double sd = std::sqrt((combined.array() - mean).square().sum() / n);
            combined = (combined.array() - mean) / (sd + 1e-8);
        }

        // --- clipped-surrogate policy epochs ---
        for (int e = 0; e < cfg_.epochs_per_batch; ++e) {
            ad::Tape t;
            GradBinder bind{&t};
            auto logits = policy_.forward_taped(bind, store_, b.obs);
            auto loss = t.ppo_categorical(logits, b.actions, b.logp_old, combined, cfg_.r_clip);
            if (cfg_.entropy_coef != 0.0)
                loss = t.add(loss, t.scale(t.categorical_entropy_mean(logits), -cfg_.entropy_coef));
            m.policy_loss = t.val(loss)(0, 0);
            t.backward(loss);
            std::vector<double> grad(store_.size(), 0.0);
            bind.scatter(grad);
            opt_policy_.step(store_, grad);
        }

        // --- KL diagnostic between the behavior policy and the updated one ---
        Mat logits_new = policy_.forward(store_, b.obs);
        double kl = 0.0;
        for (int r = 0; r < n; ++r)
            kl += kl_categorical(b.logits_old.row(r).transpose(), logits_new.row(r).transpose());
        m.mean_kl = kl / n;

        // --- multiplier update ---
        if (!cfg_.lambda_frozen) lagrange_ = lagrange_update(lagrange_);
        m.lambda = lagrange_.lambda;

        // --- trailing-100-episode metrics ---
        if (!recent_episodes_.empty()) {
            double ret = 0.0, cost = 0.0;
            int over = 0;
            for (const auto& ep : recent_episodes_) {
                ret += ep.first;
                cost += ep.second;
                over += (ep.second > cfg_.d_th) ? 1 : 0;
            }
            double cnt = static_cast<double>(recent_episodes_.size());
            m.avg_return_100ep = ret / cnt;
            m.avg_cost_sum_100ep = cost / cnt;
            m.outage_prob_100ep = over / cnt;
        }
        if (!lagrange_.episode_costs.empty())
            m.emp_quantile = empirical_quantile(lagrange_.buffer(), 1.0 - cfg_.eps0);
        return m;
    }

    std::vector<IterationMetrics> run(
        const std::function<void(const IterationMetrics&, Trainer&)>& sink = {}) {
        std::vector<IterationMetrics> history;
        while (env_steps_ + cfg_.batch_steps <= cfg_.max_env_steps) {
            IterationMetrics m = train_iteration();
            history.push_back(m);
            if (sink) sink(m, *this);
        }
        return history;
    }

    const TrainerConfig& config() const { return cfg_; }
    const ParamStore& store() const { return store_; }
    ParamStore& store() { return store_; }
    const BatchData& last_batch() const { return batch_; }
    const std::vector<AdvantageRecord>& last_advantages() const { return last_advantages_; }
    double lambda() const { return lagrange_.lambda; }
    long env_steps() const { return env_steps_; }
    double mu_variant_divergence() const { return mu_variant_divergence_; }
    const Mlp& policy_net() const { return policy_; }
    const Mlp& value_net() const { return value_; }
    const Mlp& quantile_net() const { return quantile_; }
    const Mlp& alpha_net() const { return alpha_; }
    const Mlp& beta_net() const { return beta_; }
    const std::vector<double>& fractions() const { return fractions_; }

    Eigen::VectorXd policy_logits(const Obs& o) const {
        Mat x(1, obs_dim_);
        for (int i = 0; i < obs_dim_; ++i) x(0, i) = o[i];
        return policy_.forward(store_, x).row(0).transpose();
    }

    std::vector<double> policy_probs(const Obs& o) const {
        Eigen::VectorXd p = softmax(policy_logits(o));
        return {p.data(), p.data() + p.size()};
    }

    // Stochastic policy closure over a snapshot of the current parameters.
    StochasticPolicy snapshot_policy() const {
        auto snap = std::make_shared<ParamStore>(store_);
        Mlp pol = policy_;
        int d = obs_dim_, na = n_actions_;
        return [snap, pol, d, na](const Obs& o, Rng& rng) {
            Mat x(1, d);
            for (int i = 0; i < d; ++i) x(0, i) = o[i];
            Eigen::VectorXd p = softmax(pol.forward(*snap, x).row(0).transpose());
            std::vector<double> probs(p.data(), p.data() + na);
            return rng.categorical(probs);
        };
    }

private:
    void collect() {
        const int n = cfg_.batch_steps;
        BatchData b;
        b.obs.resize(n, obs_dim_);
        b.next_obs.resize(n, obs_dim_);
        b.logits_old.resize(n, n_actions_);
        b.actions.resize(n);
        b.rewards.resize(n);
        b.costs.resize(n);
        b.logp_old.resize(n);
        b.terminal.assign(n, false);
        b.ended.assign(n, false);

        for (int i = 0; i < n; ++i) {
            if (env_->episode_over()) {
                env_->reset(rng_.next_u64());
                ep_return_ = ep_cost_constraint_ = 0.0;
                ep_gamma_pow_ = 1.0;
            }
            Obs o = env_->observation();
            Mat x(1, obs_dim_);
            for (int k = 0; k < obs_dim_; ++k) x(0, k) = o[k];
            Eigen::VectorXd logits = policy_.forward(store_, x).row(0).transpose();
            Eigen::VectorXd p = softmax(logits);
            std::vector<double> probs(p.data(), p.data() + n_actions_);
            int a = rng_.categorical(probs);

            Transition tr = env_->step(a);
            for (int k = 0; k < obs_dim_; ++k) {
                b.obs(i, k) = tr.state[k];
                b.next_obs(i, k) = tr.next_state[k];
            }
            b.logits_old.row(i) = logits.transpose();
            b.actions[i] = a;
            b.rewards(i) = tr.reward;
            b.costs(i) = tr.cost;
            b.logp_old(i) = categorical_logprob(logits, a);
            b.terminal[i] = tr.done;
            b.ended[i] = tr.done || tr.truncated;

            ep_return_ += tr.reward;
            ep_cost_constraint_ += ep_gamma_pow_ * tr.cost;
            ep_gamma_pow_ *= cfg_.constraint_gamma;
            if (b.ended[i]) {
                lagrange_.push_episode_cost(ep_cost_constraint_);
                recent_episodes_.push_back({ep_return_, ep_cost_constraint_});
                while (recent_episodes_.size() > 100) recent_episodes_.pop_front();
            }
        }
        env_steps_ += n;
        batch_ = std::move(b);
    }

    TrainerConfig cfg_;
    Rng rng_;
    std::unique_ptr<Environment> env_;
    int obs_dim_ = 0;
    int n_actions_ = 0;
    std::vector<double> fractions_;
    Eigen::RowVectorXd log_cu_;

    ParamStore store_;
    Mlp policy_, value_, quantile_, alpha_, beta_;
    Adam opt_policy_, opt_value_, opt_quantile_, opt_tail_;

    LagrangeState lagrange_;
    std::deque<std::pair<double, double>> recent_episodes_;  // (return, constraint cost)
    BatchData batch_;
    std::vector<AdvantageRecord> last_advantages_;
    double mu_variant_divergence_ = 0.0;

    double ep_return_ = 0.0;
    double ep_cost_constraint_ = 0.0;
    double ep_gamma_pow_ = 1.0;
    long env_steps_ = 0;
    long iter_ = 0;
};

}  // namespace qcpo

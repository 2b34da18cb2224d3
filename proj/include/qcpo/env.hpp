#pragma once

// Desk-scale constrained MDPs. Both environments have deterministic state
// dynamics (next state is a pure function of state and action); randomness
// enters only through the cost draws, so the discounted cost-to-go stays a
// non-degenerate random variable.

#include "qcpo/rng.hpp"

#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace qcpo {

using Obs = std::vector<double>;

struct Transition {
    Obs state;
    int action = 0;
    double reward = 0.0;
    double cost = 0.0;   // always >= 0
    Obs next_state;
    bool done = false;       // reached a terminal state
    bool truncated = false;  // hit the step cap in a non-terminal state
};

struct Trajectory {
    std::vector<Transition> transitions;
    double discounted_cost_sum = 0.0;
    double undiscounted_return = 0.0;
};

// sum_t gamma^t c_t over the trajectory's own transitions
inline double episode_cost_sum(const Trajectory& traj, double gamma) {
    if (traj.transitions.empty()) throw std::invalid_argument("episode_cost_sum: empty trajectory");
    double sum = 0.0, g = 1.0;
    for (const Transition& t : traj.transitions) {
        sum += g * t.cost;
        g *= gamma;
    }
    return sum;
}

enum class EnvId { two_path, hazard_grid };

struct GridCell {
    int x = 0, y = 0;
    bool operator==(const GridCell& o) const { return x == o.x && y == o.y; }
};

struct EnvConfig {
    EnvId env_id = EnvId::two_path;
    int max_steps = 64;
    std::uint64_t seed = 0;

    // two_path
    int path_length = 10;
    double path1_base_cost = 0.4;
    double path1_spike_cost = 5.0;
    double path1_spike_prob = 0.08;
    double path2_step_cost = 0.9;

    // hazard_grid
    int grid_size = 7;
    std::vector<GridCell> hazards;  // empty -> default wall layout
    double hazard_base_cost = 0.5;
    double hazard_extra_cost = 0.5;
    double hazard_extra_prob = 0.5;
};

inline std::vector<GridCell> default_hazard_wall(int grid_size) {
    // vertical wall one column left of center-right, open only at y = 0
    std::vector<GridCell> cells;
    int x = grid_size / 2;
    for (int y = 1; y < grid_size; ++y) cells.push_back({x, y});
    return cells;
}

class Environment {
public:
    virtual ~Environment() = default;
    virtual Obs reset(std::uint64_t seed) = 0;
    virtual Transition step(int action) = 0;
    virtual int observation_dim() const = 0;
    virtual int num_actions() const = 0;
    virtual bool episode_over() const = 0;
    virtual Obs observation() const = 0;
    virtual std::unique_ptr<Environment> clone() const = 0;
};

// Two paths of equal length to a goal. Path 1 has the lower expected per-step
// cost but a spiky right tail; path 2 is deterministic. Rewards are shaped by
// distance-to-goal delta plus a goal bonus and are identical for both paths,
// so the cost side alone decides which path a constrained learner prefers.
class TwoPathEnv final : public Environment {
public:
    explicit TwoPathEnv(const EnvConfig& cfg) : cfg_(cfg), rng_(cfg.seed) { reset(cfg.seed); }

    Obs reset(std::uint64_t seed) override {
        rng_.reseed(seed);
        path_ = 0;  // 0 = start node, 1/2 = on a path
        pos_ = 0;
        steps_ = 0;
        over_ = false;
        return observation();
    }

    Transition step(int action) override {
        if (over_) throw std::logic_error("TwoPathEnv::step: episode is over");
        if (action < 0 || action >= 2) throw std::invalid_argument("TwoPathEnv::step: bad action");
        Transition tr;
        tr.state = observation();
        tr.action = action;
        if (path_ == 0) {
            path_ = (action == 0) ? 1 : 2;
            pos_ = 0;
            tr.cost = 0.0;
            tr.reward = 1.0;  // distance 11 -> 10
        } else {
            pos_ += 1;
            tr.cost = draw_cost();
            bool at_goal = (pos_ == cfg_.path_length);
            tr.reward = 1.0 + (at_goal ? 1.0 : 0.0);
            if (at_goal) over_ = true;
        }
        steps_ += 1;
        tr.done = over_;
        if (!over_ && steps_ >= cfg_.max_steps) {
            tr.truncated = true;
            over_ = true;
        }
        tr.next_state = observation();
        return tr;
    }

    int observation_dim() const override { return 4; }
    int num_actions() const override { return 2; }
    bool episode_over() const override { return over_; }

    Obs observation() const override {
        return {path_ == 0 ? 1.0 : 0.0, path_ == 1 ? 1.0 : 0.0, path_ == 2 ? 1.0 : 0.0,
                static_cast<double>(pos_) / cfg_.path_length};
    }

    std::unique_ptr<Environment> clone() const override { return std::make_unique<TwoPathEnv>(*this); }

private:
    double draw_cost() {
        if (path_ == 1)
            return cfg_.path1_base_cost +
                   (rng_.bernoulli(cfg_.path1_spike_prob) ? cfg_.path1_spike_cost : 0.0);
        return cfg_.path2_step_cost;
    }

    EnvConfig cfg_;
    Rng rng_;
    int path_ = 0;
    int pos_ = 0;
    int steps_ = 0;
    bool over_ = false;
};

// 4-connected grid with a hazard wall. The agent shuttles between two goal
// corners; crossing the wall is the short route but charges a stochastic cost
// on entry, while the single safe opening forces a long detour. Episodes end
// only at the step cap.
class HazardGridEnv final : public Environment {
public:
    explicit HazardGridEnv(const EnvConfig& cfg) : cfg_(cfg), rng_(cfg.seed) {
        if (cfg_.hazards.empty()) cfg_.hazards = default_hazard_wall(cfg_.grid_size);
        goals_ = {{cfg_.grid_size - 1, cfg_.grid_size - 1}, {0, cfg_.grid_size - 1}};
        reset(cfg_.seed);
    }

    Obs reset(std::uint64_t seed) override {
        rng_.reseed(seed);
        agent_ = {0, 0};
        goal_idx_ = 0;
        steps_ = 0;
        over_ = false;
        return observation();
    }

    Transition step(int action) override {
        if (over_) throw std::logic_error("HazardGridEnv::step: episode is over");
        if (action < 0 || action >= 4) throw std::invalid_argument("HazardGridEnv::step: bad action");
        Transition tr;
        tr.state = observation();
        tr.action = action;

        GridCell prev = agent_;
        GridCell next = moved(prev, action);
        GridCell goal = goals_[goal_idx_];

        tr.reward = dist(prev, goal) - dist(next, goal);
        if (next == goal) {
            tr.reward += 1.0;
            goal_idx_ ^= 1;
        }
        if (is_hazard(next) && !(next == prev))
            tr.cost = cfg_.hazard_base_cost +
                      (rng_.bernoulli(cfg_.hazard_extra_prob) ? cfg_.hazard_extra_cost : 0.0);

        agent_ = next;
        steps_ += 1;
        tr.done = false;
        if (steps_ >= cfg_.max_steps) {
            tr.truncated = true;
            over_ = true;
        }
        tr.next_state = observation();
        return tr;
    }

    int observation_dim() const override { return 6; }
    int num_actions() const override { return 4; }
    bool episode_over() const override { return over_; }

    Obs observation() const override {
        double n = cfg_.grid_size - 1.0;
        GridCell g = goals_[goal_idx_];
        return {agent_.x / n, agent_.y / n, g.x / n, g.y / n, (g.x - agent_.x) / n, (g.y - agent_.y) / n};
    }

    std::unique_ptr<Environment> clone() const override { return std::make_unique<HazardGridEnv>(*this); }

    const std::vector<GridCell>& hazards() const { return cfg_.hazards; }

private:
    GridCell moved(GridCell c, int action) const {
        switch (action) {
            case 0: c.x += 1; break;
            case 1: c.x -= 1; break;
            case 2: c.y += 1; break;
            case 3: c.y -= 1; break;
        }
        c.x = std::max(0, std::min(cfg_.grid_size - 1, c.x));
        c.y = std::max(0, std::min(cfg_.grid_size - 1, c.y));
        return c;
    }

    bool is_hazard(const GridCell& c) const {
        for (const GridCell& h : cfg_.hazards)
            if (h == c) return true;
        return false;
    }

    static double dist(const GridCell& a, const GridCell& b) {
        double dx = a.x - b.x, dy = a.y - b.y;
        return std::sqrt(dx * dx + dy * dy);
    }

    EnvConfig cfg_;
    Rng rng_;
    std::vector<GridCell> goals_;
    GridCell agent_;
    int goal_idx_ = 0;
    int steps_ = 0;
    bool over_ = false;
};

inline std::unique_ptr<Environment> make_env(const EnvConfig& cfg) {
    switch (cfg.env_id) {
        case EnvId::two_path: return std::make_unique<TwoPathEnv>(cfg);
        case EnvId::hazard_grid: return std::make_unique<HazardGridEnv>(cfg);
    }
    throw std::invalid_argument("make_env: unknown env id");
}

// A stochastic policy maps an observation to an action, drawing from rng.
using StochasticPolicy = std::function<int(const Obs&, Rng&)>;

struct EpisodeRecord {
    double return_sum = 0.0;          // undiscounted reward sum
    double cost_sum = 0.0;            // undiscounted cost sum
    double discounted_cost_sum = 0.0; // with the gamma passed to collect_batch
    int length = 0;
};

struct TrajectoryBatch {
    std::vector<Transition> steps;          // exactly n_steps transitions
    std::vector<EpisodeRecord> completed;   // episodes that ended inside this batch
};

// Collects exactly n_steps transitions, resetting the environment whenever an
// episode ends. The env is reseeded per episode from rng so the whole batch is
// a pure function of (env config, policy, rng state). A partial episode at the
// batch boundary is not reported in `completed`.
inline TrajectoryBatch collect_batch(const StochasticPolicy& policy, Environment& env, int n_steps,
                                     Rng& rng, double gamma = 0.99) {
    if (n_steps < 1) throw std::invalid_argument("collect_batch: n_steps must be >= 1");
    TrajectoryBatch batch;
    batch.steps.reserve(n_steps);
    EpisodeRecord ep;
    double g = 1.0;
    env.reset(rng.next_u64());
    for (int i = 0; i < n_steps; ++i) {
        Obs obs = env.observation();
        int action = policy(obs, rng);
        Transition tr = env.step(action);
        ep.return_sum += tr.reward;
        ep.cost_sum += tr.cost;
        ep.discounted_cost_sum += g * tr.cost;
        ep.length += 1;
        g *= gamma;
        bool ended = tr.done || tr.truncated;
        batch.steps.push_back(std::move(tr));
        if (ended) {
            batch.completed.push_back(ep);
            ep = EpisodeRecord{};
            g = 1.0;
            if (i + 1 < n_steps) env.reset(rng.next_u64());
        }
    }
    return batch;
}

}  // namespace qcpo

#ifndef IMAP_ENVS_TABULAR_MDP_HPP
#define IMAP_ENVS_TABULAR_MDP_HPP

#include <array>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "imap/env.hpp"

namespace imap {

/**
 * Small, fully enumerable two-agent MDP with a known ground-truth reward R*(s, a).
 *
 * Joint actions are indexed a = a1 * m2 + a2. Every episode lasts exactly `horizon` steps.
 */
struct TabularMDP {
    static constexpr std::size_t max_states = 8;
    static constexpr int max_actions = 3;
    static constexpr int max_horizon = 4;

    std::size_t n_states = 0;
    std::array<int, 2> actions{1, 1};
    int horizon = 1;
    double gamma = 0.99;
    std::vector<double> transition;  // [(s * J + a) * S + s']
    std::vector<double> reward;      // [s * J + a]
    std::vector<double> initial;     // [s]

    [[nodiscard]] int joint_actions() const noexcept { return actions[0] * actions[1]; }
    [[nodiscard]] int joint_index(int a1, int a2) const noexcept { return a1 * actions[1] + a2; }
    [[nodiscard]] std::array<int, 2> split(int a) const noexcept { return {a / actions[1], a % actions[1]}; }

    [[nodiscard]] double p(std::size_t s, int a, std::size_t s_next) const
    {
        return transition[(s * static_cast<std::size_t>(joint_actions()) + static_cast<std::size_t>(a)) * n_states
                          + s_next];
    }

    [[nodiscard]] double r(std::size_t s, int a) const
    {
        return reward[s * static_cast<std::size_t>(joint_actions()) + static_cast<std::size_t>(a)];
    }

    void validate() const
    {
        if(n_states < 1 || n_states > max_states) {
            throw ConfigError("TabularMDP: state count must lie in [1, 8]");
        }
        for(int m : actions) {
            if(m < 1 || m > max_actions) {
                throw ConfigError("TabularMDP: per-agent action count must lie in [1, 3]");
            }
        }
        if(horizon < 1 || horizon > max_horizon) {
            throw ConfigError("TabularMDP: horizon must lie in [1, 4]");
        }
        if(!(gamma > 0.0 && gamma <= 1.0)) {
            throw ConfigError("TabularMDP: gamma must lie in (0, 1]");
        }
        const auto J = static_cast<std::size_t>(joint_actions());
        if(transition.size() != n_states * J * n_states || reward.size() != n_states * J
           || initial.size() != n_states) {
            throw ConfigError("TabularMDP: table sizes do not match the state/action counts");
        }
        auto check_row = [](std::span<const double> row, const char* what) {
            double sum = 0.0;
            for(double v : row) {
                if(!(v >= 0.0 && v <= 1.0)) {
                    throw ConfigError(std::string("TabularMDP: ") + what + " has an entry outside [0, 1]");
                }
                sum += v;
            }
            if(std::abs(sum - 1.0) > 1e-12) {
                throw ConfigError(std::string("TabularMDP: ") + what + " does not sum to 1");
            }
        };
        for(std::size_t row = 0; row < n_states * J; ++row) {
            check_row(std::span<const double>(transition).subspan(row * n_states, n_states), "transition row");
        }
        check_row(initial, "initial distribution");
        if(!all_finite(reward)) {
            throw ConfigError("TabularMDP: reward table must be finite");
        }
    }

    /**
     * Random MDP: each (s, a) row moves to `branching` distinct next states with random
     * probabilities, rewards uniform in [-1, 1], start state 0.
     */
    [[nodiscard]] static TabularMDP random(
        std::uint64_t seed, std::size_t states = 4, int actions_per_agent = 2, int horizon = 3, double gamma = 0.9,
        std::size_t branching = 2)
    {
        Rng rng(derive_seed(seed, 0x7AB));
        TabularMDP mdp;
        mdp.n_states = states;
        mdp.actions = {actions_per_agent, actions_per_agent};
        mdp.horizon = horizon;
        mdp.gamma = gamma;
        const auto J = static_cast<std::size_t>(mdp.joint_actions());
        mdp.transition.assign(states * J * states, 0.0);
        mdp.reward.resize(states * J);
        std::uniform_real_distribution<double> unit(0.0, 1.0);
        std::uniform_real_distribution<double> rew(-1.0, 1.0);
        branching = std::min(branching, states);
        for(std::size_t row = 0; row < states * J; ++row) {
            std::vector<std::size_t> targets(states);
            std::iota(targets.begin(), targets.end(), std::size_t{0});
            for(std::size_t k = 0; k < branching; ++k) {
                std::uniform_int_distribution<std::size_t> pick(k, states - 1);
                std::swap(targets[k], targets[pick(rng)]);
            }
            std::vector<double> w(branching);
            double total = 0.0;
            for(auto& x : w) {
                x = 0.2 + unit(rng);
                total += x;
            }
            double assigned = 0.0;
            for(std::size_t k = 0; k + 1 < branching; ++k) {
                const double pk = w[k] / total;
                mdp.transition[row * states + targets[k]] = pk;
                assigned += pk;
            }
            mdp.transition[row * states + targets[branching - 1]] = 1.0 - assigned;
        }
        for(auto& x : mdp.reward) {
            x = rew(rng);
        }
        mdp.initial.assign(states, 0.0);
        mdp.initial[0] = 1.0;
        mdp.validate();
        return mdp;
    }

    /**
     * Fixture whose reward decomposes across agents, R*(s, a) = scale (u1(s, a1) + u2(s, a2)), with
     * deterministic dynamics driven by agent 1 only. Such rewards are representable by a linearly
     * mixed implicit reward model, so trajectory scores are identifiable up to a constant.
     */
    [[nodiscard]] static TabularMDP separable_fixture(
        std::uint64_t seed, std::size_t states = 4, int actions_per_agent = 3, int horizon = 3, double gamma = 0.9,
        double reward_scale = 1.0)
    {
        Rng rng(derive_seed(seed, 0x5E9A));
        TabularMDP mdp;
        mdp.n_states = states;
        mdp.actions = {actions_per_agent, actions_per_agent};
        mdp.horizon = horizon;
        mdp.gamma = gamma;
        const auto J = static_cast<std::size_t>(mdp.joint_actions());
        const auto m = static_cast<std::size_t>(actions_per_agent);
        std::uniform_real_distribution<double> rew(-1.0, 1.0);
        std::vector<double> u1(states * m), u2(states * m);
        for(auto& x : u1) {
            x = std::round(rew(rng) * 100.0) / 100.0;
        }
        for(auto& x : u2) {
            x = std::round(rew(rng) * 100.0) / 100.0;
        }
        std::uniform_int_distribution<std::size_t> next_state(0, states - 1);
        std::vector<std::size_t> successor(states * m);
        for(auto& s : successor) {
            s = next_state(rng);
        }
        mdp.transition.assign(states * J * states, 0.0);
        mdp.reward.resize(states * J);
        for(std::size_t s = 0; s < states; ++s) {
            for(int a = 0; a < static_cast<int>(J); ++a) {
                const auto [a1, a2] = mdp.split(a);
                const std::size_t row = s * J + static_cast<std::size_t>(a);
                mdp.reward[row] =
                    reward_scale * (u1[s * m + static_cast<std::size_t>(a1)] + u2[s * m + static_cast<std::size_t>(a2)]);
                mdp.transition[row * states + successor[s * m + static_cast<std::size_t>(a1)]] = 1.0;
            }
        }
        mdp.initial.assign(states, 0.0);
        mdp.initial[0] = 1.0;
        mdp.validate();
        return mdp;
    }
};

/// Stationary joint policy over TabularMDP states: probs[s * J + a].
struct JointPolicyTable {
    std::size_t n_states = 0;
    int joint_actions = 0;
    std::vector<double> probs;

    [[nodiscard]] double operator()(std::size_t s, int a) const
    {
        return probs[s * static_cast<std::size_t>(joint_actions) + static_cast<std::size_t>(a)];
    }

    [[nodiscard]] static JointPolicyTable uniform(const TabularMDP& mdp)
    {
        const int J = mdp.joint_actions();
        return {mdp.n_states, J, std::vector<double>(mdp.n_states * static_cast<std::size_t>(J), 1.0 / J)};
    }

    [[nodiscard]] static JointPolicyTable deterministic(const TabularMDP& mdp, const std::vector<int>& choice)
    {
        if(choice.size() != mdp.n_states) {
            throw DimensionError("deterministic policy needs one joint action per state");
        }
        const int J = mdp.joint_actions();
        JointPolicyTable pol{mdp.n_states, J, std::vector<double>(mdp.n_states * static_cast<std::size_t>(J), 0.0)};
        for(std::size_t s = 0; s < mdp.n_states; ++s) {
            if(choice[s] < 0 || choice[s] >= J) {
                throw PreconditionError("deterministic policy picks an invalid joint action");
            }
            pol.probs[s * static_cast<std::size_t>(J) + static_cast<std::size_t>(choice[s])] = 1.0;
        }
        return pol;
    }

    void validate(const TabularMDP& mdp) const
    {
        if(n_states != mdp.n_states || joint_actions != mdp.joint_actions()
           || probs.size() != n_states * static_cast<std::size_t>(joint_actions)) {
            throw DimensionError("policy table does not match the MDP");
        }
        for(std::size_t s = 0; s < n_states; ++s) {
            double sum = 0.0;
            for(int a = 0; a < joint_actions; ++a) {
                const double p = (*this)(s, a);
                if(!(p >= 0.0 && p <= 1.0)) {
                    throw PreconditionError("policy probability outside [0, 1]");
                }
                sum += p;
            }
            if(std::abs(sum - 1.0) > 1e-9) {
                throw PreconditionError("policy row does not sum to 1");
            }
        }
    }
};

struct EnumeratedTrajectory {
    std::vector<std::size_t> states;  // s_0 .. s_H (the last entry is the state after the final step)
    std::vector<int> actions;         // joint action indices a_0 .. a_{H-1}
    double probability = 0.0;
    double ret = 0.0;  // sum_t gamma^t R*(s_t, a_t)
};

/// Per-step reward used when re-scoring enumerated trajectories: (s, joint action, t).
using TabularReward = std::function<double(std::size_t, int, int)>;

[[nodiscard]] inline double trajectory_return(
    const TabularMDP& mdp, const EnumeratedTrajectory& traj, const TabularReward& reward)
{
    double ret = 0.0;
    for(std::size_t t = 0; t < traj.actions.size(); ++t) {
        ret += std::pow(mdp.gamma, static_cast<double>(t)) * reward(traj.states[t], traj.actions[t], static_cast<int>(t));
    }
    return ret;
}

/**
 * Every trajectory with positive probability under `policy`, with its probability and discounted
 * ground-truth return. Throws PreconditionError when more than `max_count` would be produced.
 */
[[nodiscard]] inline std::vector<EnumeratedTrajectory> enumerate_trajectories(
    const TabularMDP& mdp, const JointPolicyTable& policy, std::size_t max_count = 1'000'000)
{
    mdp.validate();
    policy.validate(mdp);
    std::vector<EnumeratedTrajectory> out;
    EnumeratedTrajectory cur;
    const int J = mdp.joint_actions();

    std::function<void(std::size_t, double, double, int)> expand = [&](std::size_t s, double prob, double ret, int t) {
        if(t == mdp.horizon) {
            if(out.size() >= max_count) {
                throw PreconditionError("trajectory enumeration exceeds the limit of " + std::to_string(max_count));
            }
            EnumeratedTrajectory done = cur;
            done.probability = prob;
            done.ret = ret;
            out.push_back(std::move(done));
            return;
        }
        for(int a = 0; a < J; ++a) {
            const double pa = policy(s, a);
            if(pa <= 0.0) {
                continue;
            }
            const double step_ret = ret + std::pow(mdp.gamma, t) * mdp.r(s, a);
            for(std::size_t s2 = 0; s2 < mdp.n_states; ++s2) {
                const double ps = mdp.p(s, a, s2);
                if(ps <= 0.0) {
                    continue;
                }
                cur.actions.push_back(a);
                cur.states.push_back(s2);
                expand(s2, prob * pa * ps, step_ret, t + 1);
                cur.actions.pop_back();
                cur.states.pop_back();
            }
        }
    };

    for(std::size_t s0 = 0; s0 < mdp.n_states; ++s0) {
        if(mdp.initial[s0] <= 0.0) {
            continue;
        }
        cur.states = {s0};
        cur.actions.clear();
        expand(s0, mdp.initial[s0], 0.0, 0);
    }
    return out;
}

/**
 * Env adapter for a TabularMDP. Both agents observe a one-hot code of (state, step); the joint
 * observation follows the shared convention (concatenation plus t/T).
 */
class TabularEnv final : public Env {
  public:
    explicit TabularEnv(TabularMDP mdp) : mdp_(std::move(mdp))
    {
        mdp_.validate();
        const std::size_t obs = observation_size();
        spec_.n_agents = 2;
        spec_.obs_dims = {obs, obs};
        spec_.joint_obs_dim = 2 * obs + 1;
        spec_.action_spaces = {DiscreteSpace{mdp_.actions[0]}, DiscreteSpace{mdp_.actions[1]}};
        spec_.horizon = mdp_.horizon;
    }

    [[nodiscard]] const EnvSpec& spec() const override { return spec_; }
    [[nodiscard]] std::string name() const override { return "tabular"; }
    [[nodiscard]] const TabularMDP& mdp() const noexcept { return mdp_; }

    [[nodiscard]] std::size_t observation_size() const noexcept
    {
        return mdp_.n_states * static_cast<std::size_t>(mdp_.horizon + 1);
    }

    [[nodiscard]] std::vector<double> local_observation(std::size_t s, int t) const
    {
        std::vector<double> o(observation_size(), 0.0);
        o[s * static_cast<std::size_t>(mdp_.horizon + 1) + static_cast<std::size_t>(t)] = 1.0;
        return o;
    }

    [[nodiscard]] Observation observation(std::size_t s, int t) const
    {
        Observation o;
        auto local = local_observation(s, t);
        o.local = {local, local};
        o.joint = make_joint_observation(o.local, t, mdp_.horizon);
        return o;
    }

    Observation reset(std::uint64_t seed) override
    {
        rng_.seed(derive_seed(seed, 0x7AB1E));
        s_ = sample_categorical(mdp_.initial, rng_);
        t_ = 0;
        done_ = false;
        ret_ = 0.0;
        visits_.assign(mdp_.n_states, 0.0);
        visits_[s_] += 1.0;
        return observation(s_, t_);
    }

    StepResult step(const std::vector<Action>& joint_action) override
    {
        if(done_) {
            throw PreconditionError("TabularEnv::step after episode end");
        }
        check_joint_action(joint_action);
        const int a = mdp_.joint_index(std::get<int>(joint_action[0]), std::get<int>(joint_action[1]));
        std::vector<double> row(mdp_.n_states);
        for(std::size_t s2 = 0; s2 < mdp_.n_states; ++s2) {
            row[s2] = mdp_.p(s_, a, s2);
        }
        const std::size_t next = sample_categorical(row, rng_);
        StepResult result;
        result.transition = make_transition(s_, a, next, t_);
        ret_ += std::pow(mdp_.gamma, t_) * mdp_.r(s_, a);
        s_ = next;
        ++t_;
        visits_[s_] += 1.0;
        done_ = t_ >= mdp_.horizon;
        if(done_) {
            result.episodic_return = ret_;
        }
        return result;
    }

    [[nodiscard]] std::vector<Statistic> summary() const override
    {
        return {{"State Visits", visits_, true}, {"Team Score", {ret_}, false}};
    }

    [[nodiscard]] std::unique_ptr<Env> clone() const override { return std::make_unique<TabularEnv>(*this); }

    [[nodiscard]] Transition make_transition(std::size_t s, int a, std::size_t next, int t) const
    {
        Transition tr;
        auto now = observation(s, t);
        auto after = observation(next, t + 1);
        tr.joint_obs = std::move(now.joint);
        tr.local_obs = std::move(now.local);
        const auto [a1, a2] = mdp_.split(a);
        tr.actions = {Action{a1}, Action{a2}};
        tr.next_joint_obs = std::move(after.joint);
        tr.next_local_obs = std::move(after.local);
        tr.done = t + 1 >= mdp_.horizon;
        tr.t = t;
        return tr;
    }

    /// Materializes an enumerated trajectory as a regular Trajectory (return = its ground-truth return).
    [[nodiscard]] Trajectory make_trajectory(const EnumeratedTrajectory& e) const
    {
        Trajectory traj;
        for(std::size_t t = 0; t < e.actions.size(); ++t) {
            traj.transitions.push_back(make_transition(e.states[t], e.actions[t], e.states[t + 1], static_cast<int>(t)));
        }
        traj.episodic_return = e.ret;
        return traj;
    }

  private:
    TabularMDP mdp_;
    EnvSpec spec_;
    Rng rng_;
    std::size_t s_ = 0;
    int t_ = 0;
    bool done_ = false;
    double ret_ = 0.0;
    std::vector<double> visits_;
};

}  // namespace imap

#endif  // IMAP_ENVS_TABULAR_MDP_HPP

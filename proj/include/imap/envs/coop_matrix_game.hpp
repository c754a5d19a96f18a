#ifndef IMAP_ENVS_COOP_MATRIX_GAME_HPP
#define IMAP_ENVS_COOP_MATRIX_GAME_HPP

#include <cmath>
#include <string>
#include <vector>

#include "imap/env.hpp"

namespace imap {

/**
 * Repeated two-agent cooperative matrix game with a hidden payoff table.
 *
 * Every step both agents pick one of `actions` actions; the team payoff of the joint action is
 * accumulated privately and only the discounted sum is revealed when the horizon is reached.
 * Each agent observes a one-hot encoding of the step counter.
 */
class CoopMatrixGame final : public Env {
  public:
    struct Config {
        int actions = 3;
        int horizon = 5;
        double gamma = 0.99;
        std::vector<double> payoff;  // row-major [a1 * actions + a2]
    };

    /// Climbing game payoffs (a deceptive coordination problem), the default fixture.
    [[nodiscard]] static std::vector<double> climbing_payoff()
    {
        return {11.0, -30.0, 0.0, -30.0, 7.0, 6.0, 0.0, 0.0, 5.0};
    }

    /// Payoffs drawn uniformly from [-1, 1] and rounded to 3 decimals.
    [[nodiscard]] static std::vector<double> payoff_from_seed(std::uint64_t seed, int actions = 3)
    {
        Rng rng(derive_seed(seed, 0xC0FFEE));
        std::uniform_real_distribution<double> dist(-1.0, 1.0);
        std::vector<double> table(static_cast<std::size_t>(actions * actions));
        for(auto& p : table) {
            p = std::round(dist(rng) * 1000.0) / 1000.0;
        }
        return table;
    }

    CoopMatrixGame() : CoopMatrixGame(Config{3, 5, 0.99, climbing_payoff()}) {}

    explicit CoopMatrixGame(Config cfg) : cfg_(std::move(cfg))
    {
        if(cfg_.actions < 1 || cfg_.horizon < 1) {
            throw ConfigError("CoopMatrixGame: actions and horizon must be positive");
        }
        if(cfg_.payoff.size() != static_cast<std::size_t>(cfg_.actions * cfg_.actions)) {
            throw ConfigError("CoopMatrixGame: payoff table must have actions^2 entries");
        }
        if(!(cfg_.gamma > 0.0 && cfg_.gamma <= 1.0)) {
            throw ConfigError("CoopMatrixGame: gamma must lie in (0, 1]");
        }
        const auto obs = static_cast<std::size_t>(cfg_.horizon + 1);
        spec_.n_agents = 2;
        spec_.obs_dims = {obs, obs};
        spec_.joint_obs_dim = 2 * obs + 1;
        spec_.action_spaces = {DiscreteSpace{cfg_.actions}, DiscreteSpace{cfg_.actions}};
        spec_.horizon = cfg_.horizon;
    }

    [[nodiscard]] const EnvSpec& spec() const override { return spec_; }
    [[nodiscard]] std::string name() const override { return "coop_matrix"; }
    [[nodiscard]] const Config& config() const noexcept { return cfg_; }

    [[nodiscard]] double payoff(int a1, int a2) const
    {
        return cfg_.payoff.at(static_cast<std::size_t>(a1 * cfg_.actions + a2));
    }

    Observation reset(std::uint64_t /*seed*/) override
    {
        t_ = 0;
        done_ = false;
        accumulated_ = 0.0;
        payoffs_.clear();
        return observe();
    }

    StepResult step(const std::vector<Action>& joint_action) override
    {
        if(done_) {
            throw PreconditionError("CoopMatrixGame::step after episode end");
        }
        check_joint_action(joint_action);
        StepResult result;
        Observation before = observe();
        const int a1 = std::get<int>(joint_action[0]);
        const int a2 = std::get<int>(joint_action[1]);
        const double p = payoff(a1, a2);
        accumulated_ += std::pow(cfg_.gamma, t_) * p;
        payoffs_.push_back(p);
        auto& tr = result.transition;
        tr.joint_obs = std::move(before.joint);
        tr.local_obs = std::move(before.local);
        tr.actions = joint_action;
        tr.t = t_;
        ++t_;
        done_ = t_ >= cfg_.horizon;
        Observation after = observe();
        tr.next_joint_obs = std::move(after.joint);
        tr.next_local_obs = std::move(after.local);
        tr.done = done_;
        if(done_) {
            result.episodic_return = accumulated_;
        }
        return result;
    }

    [[nodiscard]] std::vector<Statistic> summary() const override
    {
        return {
            {"Payoff Per Step", payoffs_, false},
            {"Team Score", {accumulated_}, false},
        };
    }

    [[nodiscard]] std::unique_ptr<Env> clone() const override { return std::make_unique<CoopMatrixGame>(*this); }

    /// Best achievable episodic return, by exhaustive search over per-step joint actions.
    [[nodiscard]] double optimal_return() const
    {
        const int joint = cfg_.actions * cfg_.actions;
        double best = -std::numeric_limits<double>::infinity();
        std::vector<int> seq(static_cast<std::size_t>(cfg_.horizon), 0);
        while(true) {
            double ret = 0.0;
            for(int t = 0; t < cfg_.horizon; ++t) {
                const int a = seq[static_cast<std::size_t>(t)];
                ret += std::pow(cfg_.gamma, t) * cfg_.payoff[static_cast<std::size_t>(a)];
            }
            best = std::max(best, ret);
            int k = 0;
            while(k < cfg_.horizon && ++seq[static_cast<std::size_t>(k)] == joint) {
                seq[static_cast<std::size_t>(k)] = 0;
                ++k;
            }
            if(k == cfg_.horizon) {
                break;
            }
        }
        return best;
    }

  private:
    [[nodiscard]] Observation observe() const
    {
        Observation o;
        std::vector<double> step_code(static_cast<std::size_t>(cfg_.horizon + 1), 0.0);
        step_code[static_cast<std::size_t>(t_)] = 1.0;
        o.local = {step_code, step_code};
        o.joint = make_joint_observation(o.local, t_, cfg_.horizon);
        return o;
    }

    Config cfg_;
    EnvSpec spec_;
    int t_ = 0;
    bool done_ = false;
    double accumulated_ = 0.0;
    std::vector<double> payoffs_;
};

}  // namespace imap

#endif  // IMAP_ENVS_COOP_MATRIX_GAME_HPP

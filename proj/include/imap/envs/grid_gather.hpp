#ifndef IMAP_ENVS_GRID_GATHER_HPP
#define IMAP_ENVS_GRID_GATHER_HPP

#include <algorithm>
#include <array>
#include <numeric>
#include <string>
#include <vector>

#include "imap/env.hpp"

namespace imap {

/**
 * Partially observable item-gathering gridworld.
 *
 * Agents move on a square grid (stay/up/down/left/right) and pick up items by stepping onto them.
 * Each agent sees a 3x3 window (item / other agent / wall channels) plus its own normalized
 * coordinates. The team return, items collected minus step_penalty per elapsed step, is revealed
 * when every item is gone or the horizon is hit. Layouts are drawn from the reset seed.
 */
class GridGather final : public Env {
  public:
    struct Config {
        int size = 5;
        int agents = 2;
        int items = 4;
        int horizon = 25;
        double step_penalty = 0.01;
    };

    struct Cell {
        int x = 0;
        int y = 0;
        bool operator==(const Cell&) const = default;
    };

    struct Layout {
        std::vector<Cell> agents;
        std::vector<Cell> items;
    };

    static constexpr int action_count = 5;
    static constexpr std::size_t window_features = 27;

    GridGather() : GridGather(Config{}) {}

    explicit GridGather(Config cfg) : cfg_(cfg)
    {
        if(cfg_.size < 2 || cfg_.agents < 2 || cfg_.agents > 4 || cfg_.items < 1 || cfg_.horizon < 1) {
            throw ConfigError("GridGather: need size >= 2, 2..4 agents, >= 1 item and horizon >= 1");
        }
        if(cfg_.agents + cfg_.items > cfg_.size * cfg_.size) {
            throw ConfigError("GridGather: grid too small for agents and items");
        }
        const std::size_t obs = window_features + 2;
        const auto n = static_cast<std::size_t>(cfg_.agents);
        spec_.n_agents = n;
        spec_.obs_dims.assign(n, obs);
        spec_.joint_obs_dim = n * obs + 1;
        spec_.action_spaces.assign(n, DiscreteSpace{action_count});
        spec_.horizon = cfg_.horizon;
    }

    [[nodiscard]] const EnvSpec& spec() const override { return spec_; }
    [[nodiscard]] std::string name() const override { return "grid_gather"; }
    [[nodiscard]] const Config& config() const noexcept { return cfg_; }

    /// Layout generated for a reset seed (distinct cells; agents never start on an item).
    [[nodiscard]] Layout layout_for_seed(std::uint64_t seed) const
    {
        Rng rng(derive_seed(seed, 0x6121D));
        std::vector<int> cells(static_cast<std::size_t>(cfg_.size * cfg_.size));
        std::iota(cells.begin(), cells.end(), 0);
        // partial Fisher-Yates with an explicit draw so layouts do not depend on std::shuffle
        const std::size_t needed = static_cast<std::size_t>(cfg_.agents + cfg_.items);
        for(std::size_t k = 0; k < needed; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, cells.size() - 1);
            std::swap(cells[k], cells[pick(rng)]);
        }
        Layout layout;
        for(std::size_t k = 0; k < needed; ++k) {
            Cell c{cells[k] % cfg_.size, cells[k] / cfg_.size};
            if(k < static_cast<std::size_t>(cfg_.agents)) {
                layout.agents.push_back(c);
            } else {
                layout.items.push_back(c);
            }
        }
        return layout;
    }

    [[nodiscard]] const Layout& current_layout() const noexcept { return state_; }

    Observation reset(std::uint64_t seed) override
    {
        state_ = layout_for_seed(seed);
        item_alive_.assign(state_.items.size(), true);
        collected_.assign(static_cast<std::size_t>(cfg_.agents), 0.0);
        moves_.assign(static_cast<std::size_t>(cfg_.agents), 0.0);
        t_ = 0;
        done_ = false;
        truncated_ = false;
        return observe();
    }

    StepResult step(const std::vector<Action>& joint_action) override
    {
        if(done_) {
            throw PreconditionError("GridGather::step after episode end");
        }
        check_joint_action(joint_action);
        StepResult result;
        Observation before = observe();
        for(std::size_t i = 0; i < state_.agents.size(); ++i) {
            Cell& c = state_.agents[i];
            const Cell prev = c;
            switch(std::get<int>(joint_action[i])) {
                case 1: c.y = std::max(0, c.y - 1); break;
                case 2: c.y = std::min(cfg_.size - 1, c.y + 1); break;
                case 3: c.x = std::max(0, c.x - 1); break;
                case 4: c.x = std::min(cfg_.size - 1, c.x + 1); break;
                default: break;
            }
            if(!(prev == c)) {
                moves_[i] += 1.0;
            }
        }
        for(std::size_t i = 0; i < state_.agents.size(); ++i) {
            for(std::size_t k = 0; k < state_.items.size(); ++k) {
                if(item_alive_[k] && state_.items[k] == state_.agents[i]) {
                    item_alive_[k] = false;
                    collected_[i] += 1.0;
                }
            }
        }
        auto& tr = result.transition;
        tr.joint_obs = std::move(before.joint);
        tr.local_obs = std::move(before.local);
        tr.actions = joint_action;
        tr.t = t_;
        ++t_;
        const bool cleared = items_remaining() == 0;
        done_ = cleared || t_ >= cfg_.horizon;
        truncated_ = done_ && !cleared;
        Observation after = observe();
        tr.next_joint_obs = std::move(after.joint);
        tr.next_local_obs = std::move(after.local);
        tr.done = done_;
        if(done_) {
            result.episodic_return = team_return();
            result.truncated = truncated_;
        }
        return result;
    }

    [[nodiscard]] std::vector<Statistic> summary() const override
    {
        return {
            {"Items Collected Per Agent", collected_, true},
            {"Cells Moved Per Agent", moves_, true},
            {"Items Remaining", {static_cast<double>(items_remaining())}, true},
            {"Team Score", {team_return()}, false},
        };
    }

    [[nodiscard]] std::unique_ptr<Env> clone() const override { return std::make_unique<GridGather>(*this); }

  private:
    [[nodiscard]] int items_remaining() const
    {
        return static_cast<int>(std::count(item_alive_.begin(), item_alive_.end(), true));
    }

    [[nodiscard]] double team_return() const
    {
        const double collected = std::accumulate(collected_.begin(), collected_.end(), 0.0);
        return collected - cfg_.step_penalty * static_cast<double>(t_);
    }

    [[nodiscard]] Observation observe() const
    {
        Observation o;
        const double denom = static_cast<double>(cfg_.size - 1);
        for(std::size_t i = 0; i < state_.agents.size(); ++i) {
            std::vector<double> view(window_features + 2, 0.0);
            const Cell me = state_.agents[i];
            std::size_t cell = 0;
            for(int dy = -1; dy <= 1; ++dy) {
                for(int dx = -1; dx <= 1; ++dx, ++cell) {
                    const Cell c{me.x + dx, me.y + dy};
                    double* slot = view.data() + 3 * cell;
                    if(c.x < 0 || c.y < 0 || c.x >= cfg_.size || c.y >= cfg_.size) {
                        slot[2] = 1.0;
                        continue;
                    }
                    for(std::size_t k = 0; k < state_.items.size(); ++k) {
                        if(item_alive_[k] && state_.items[k] == c) {
                            slot[0] = 1.0;
                        }
                    }
                    for(std::size_t j = 0; j < state_.agents.size(); ++j) {
                        if(j != i && state_.agents[j] == c) {
                            slot[1] = 1.0;
                        }
                    }
                }
            }
            view[window_features] = static_cast<double>(me.x) / denom;
            view[window_features + 1] = static_cast<double>(me.y) / denom;
            o.local.push_back(std::move(view));
        }
        o.joint = make_joint_observation(o.local, t_, cfg_.horizon);
        return o;
    }

    Config cfg_;
    EnvSpec spec_;
    Layout state_;
    std::vector<bool> item_alive_;
    std::vector<double> collected_;
    std::vector<double> moves_;
    int t_ = 0;
    bool done_ = false;
    bool truncated_ = false;
};

}  // namespace imap

#endif  // IMAP_ENVS_GRID_GATHER_HPP

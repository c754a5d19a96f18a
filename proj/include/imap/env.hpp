#ifndef IMAP_ENV_HPP
#define IMAP_ENV_HPP

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "imap/common.hpp"

namespace imap {

struct DiscreteSpace {
    int size = 0;
};

struct BoxSpace {
    std::size_t dim = 0;
    double low = -1.0;
    double high = 1.0;
};

using ActionSpace = std::variant<DiscreteSpace, BoxSpace>;

/// A single agent's action: an index for discrete spaces, a real vector for boxes.
using Action = std::variant<int, std::vector<double>>;

[[nodiscard]] inline bool is_discrete(const ActionSpace& space) noexcept
{
    return std::holds_alternative<DiscreteSpace>(space);
}

/// Width of the action encoding fed to value approximators (one-hot for discrete spaces).
[[nodiscard]] inline std::size_t action_encoding_size(const ActionSpace& space) noexcept
{
    if(const auto* d = std::get_if<DiscreteSpace>(&space)) {
        return static_cast<std::size_t>(d->size);
    }
    return std::get<BoxSpace>(space).dim;
}

inline void validate_action(const ActionSpace& space, const Action& action)
{
    if(const auto* d = std::get_if<DiscreteSpace>(&space)) {
        const int* idx = std::get_if<int>(&action);
        if(idx == nullptr || *idx < 0 || *idx >= d->size) {
            throw PreconditionError(
                "invalid discrete action (expected an index in [0, " + std::to_string(d->size) + "))");
        }
        return;
    }
    const auto& box = std::get<BoxSpace>(space);
    const auto* vec = std::get_if<std::vector<double>>(&action);
    if(vec == nullptr || vec->size() != box.dim || !all_finite(*vec)) {
        throw PreconditionError("invalid continuous action (expected " + std::to_string(box.dim) + " finite values)");
    }
}

/// Writes the action encoding into `out` (which must have action_encoding_size(space) entries).
inline void encode_action(const ActionSpace& space, const Action& action, std::span<double> out)
{
    validate_action(space, action);
    if(std::holds_alternative<DiscreteSpace>(space)) {
        std::fill(out.begin(), out.end(), 0.0);
        out[static_cast<std::size_t>(std::get<int>(action))] = 1.0;
        return;
    }
    const auto& vec = std::get<std::vector<double>>(action);
    std::copy(vec.begin(), vec.end(), out.begin());
}

struct EnvSpec {
    std::size_t n_agents = 0;
    std::vector<std::size_t> obs_dims;  // per agent
    std::size_t joint_obs_dim = 0;
    std::vector<ActionSpace> action_spaces;  // per agent
    int horizon = 1;

    void validate() const
    {
        if(n_agents < 1) {
            throw ConfigError("EnvSpec: need at least one agent");
        }
        if(obs_dims.size() != n_agents || action_spaces.size() != n_agents) {
            throw ConfigError("EnvSpec: per-agent lists must have n_agents entries");
        }
        if(horizon < 1) {
            throw ConfigError("EnvSpec: horizon must be at least 1");
        }
        if(joint_obs_dim == 0) {
            throw ConfigError("EnvSpec: joint observation must be non-empty");
        }
        for(auto d : obs_dims) {
            if(d == 0) {
                throw ConfigError("EnvSpec: observation sizes must be positive");
            }
        }
    }
};

struct Observation {
    std::vector<double> joint;
    std::vector<std::vector<double>> local;
};

/// One environment step. There is deliberately no reward field: learners only see episodic returns.
struct Transition {
    std::vector<double> joint_obs;
    std::vector<std::vector<double>> local_obs;
    std::vector<Action> actions;  // joint action, one entry per agent
    std::vector<double> next_joint_obs;
    std::vector<std::vector<double>> next_local_obs;
    std::vector<double> behavior_log_probs;  // filled by rollout collection, one per agent
    bool done = false;
    int t = 0;
};

/// Named final-state statistic used in trajectory summaries.
struct Statistic {
    std::string name;
    std::vector<double> values;
    bool integral = false;
};

struct Trajectory {
    std::vector<Transition> transitions;
    std::optional<double> episodic_return;
    bool truncated = false;  // ended by the horizon rather than a natural terminal state
    std::vector<Statistic> metadata;

    [[nodiscard]] std::size_t length() const noexcept { return transitions.size(); }

    [[nodiscard]] bool complete() const noexcept
    {
        return !transitions.empty() && transitions.back().done && episodic_return.has_value();
    }

    [[nodiscard]] double return_value() const
    {
        if(!episodic_return) {
            throw PreconditionError("trajectory has no episodic return (not terminated)");
        }
        return *episodic_return;
    }
};

using TrajectoryRef = std::shared_ptr<const Trajectory>;

struct StepResult {
    Transition transition;
    std::optional<double> episodic_return;  // present iff transition.done
    bool truncated = false;
};

/**
 * Cooperative multi-agent environment with sparse episodic feedback.
 *
 * step() never reports a per-step reward; the episodic return arrives with the terminating step.
 * Once done, further step() calls throw until the next reset().
 */
class Env {
  public:
    virtual ~Env() = default;

    [[nodiscard]] virtual const EnvSpec& spec() const = 0;
    [[nodiscard]] virtual std::string name() const = 0;
    virtual Observation reset(std::uint64_t seed) = 0;
    virtual StepResult step(const std::vector<Action>& joint_action) = 0;
    /// Final-state statistics of the current episode (rendered into preference prompts).
    [[nodiscard]] virtual std::vector<Statistic> summary() const = 0;
    [[nodiscard]] virtual std::unique_ptr<Env> clone() const = 0;

  protected:
    void check_joint_action(const std::vector<Action>& joint_action) const
    {
        const auto& s = spec();
        if(joint_action.size() != s.n_agents) {
            throw PreconditionError(
                "joint action has " + std::to_string(joint_action.size()) + " entries, expected "
                + std::to_string(s.n_agents));
        }
        for(std::size_t i = 0; i < s.n_agents; ++i) {
            validate_action(s.action_spaces[i], joint_action[i]);
        }
    }
};

/// Joint observation convention shared by the built-in envs: concatenated local views + t/T.
[[nodiscard]] inline std::vector<double> make_joint_observation(
    const std::vector<std::vector<double>>& local, int t, int horizon)
{
    std::vector<double> joint;
    for(const auto& o : local) {
        joint.insert(joint.end(), o.begin(), o.end());
    }
    joint.push_back(static_cast<double>(t) / static_cast<double>(horizon));
    return joint;
}

}  // namespace imap

#endif  // IMAP_ENV_HPP

#ifndef IMAP_ROLLOUT_HPP
#define IMAP_ROLLOUT_HPP

#include <algorithm>
#include <exception>
#include <memory>
#include <numeric>
#include <thread>
#include <utility>
#include <vector>

#include "imap/actor.hpp"
#include "imap/env.hpp"

namespace imap {

/// Complete trajectories from one collection round plus a flat (trajectory, step) index.
class RolloutBatch {
  public:
    RolloutBatch() = default;

    RolloutBatch(std::vector<TrajectoryRef> trajectories, std::uint64_t policy_version)
        : trajectories_(std::move(trajectories)), version_(policy_version)
    {
        for(std::size_t k = 0; k < trajectories_.size(); ++k) {
            const auto& traj = *trajectories_[k];
            if(!traj.complete()) {
                throw PreconditionError("RolloutBatch: trajectory " + std::to_string(k) + " is not complete");
            }
            for(std::size_t t = 0; t < traj.length(); ++t) {
                index_.emplace_back(k, t);
            }
        }
    }

    [[nodiscard]] const std::vector<TrajectoryRef>& trajectories() const noexcept { return trajectories_; }
    [[nodiscard]] std::uint64_t policy_version() const noexcept { return version_; }
    [[nodiscard]] std::size_t size() const noexcept { return trajectories_.size(); }
    [[nodiscard]] bool empty() const noexcept { return trajectories_.empty(); }
    [[nodiscard]] std::size_t transition_count() const noexcept { return index_.size(); }

    /// (trajectory index, step index) of flat transition `k`.
    [[nodiscard]] std::pair<std::size_t, std::size_t> locate(std::size_t k) const
    {
        if(k >= index_.size()) {
            throw PreconditionError("RolloutBatch: transition index " + std::to_string(k) + " out of range");
        }
        return index_[k];
    }

    [[nodiscard]] const Transition& transition(std::size_t k) const
    {
        const auto [traj, t] = locate(k);
        return trajectories_[traj]->transitions[t];
    }

    [[nodiscard]] double mean_return() const
    {
        if(trajectories_.empty()) {
            return 0.0;
        }
        double total = 0.0;
        for(const auto& traj : trajectories_) {
            total += traj->return_value();
        }
        return total / static_cast<double>(trajectories_.size());
    }

  private:
    std::vector<TrajectoryRef> trajectories_;
    std::vector<std::pair<std::size_t, std::size_t>> index_;
    std::uint64_t version_ = 0;
};

/// Log-probability of agent i's action at flat transition k under the behavior policy.
[[nodiscard]] inline double stored_logprob(const RolloutBatch& batch, std::size_t k, std::size_t i)
{
    const auto& tr = batch.transition(k);
    if(i >= tr.behavior_log_probs.size()) {
        throw PreconditionError("stored_logprob: agent index " + std::to_string(i) + " out of range");
    }
    return tr.behavior_log_probs[i];
}

struct CollectOptions {
    std::size_t episodes = 32;
    std::uint64_t seed = 0;
    std::uint64_t policy_version = 0;
    std::size_t workers = 1;
    bool greedy = false;  // act with the mode instead of sampling
};

/// Runs one episode; the env is reset with derive_seed(seed, episode) and actions use their own stream.
[[nodiscard]] inline Trajectory run_episode(
    Env& env, const std::vector<Actor>& actors, std::uint64_t seed, std::uint64_t episode, bool greedy)
{
    const auto& spec = env.spec();
    if(actors.size() != spec.n_agents) {
        throw DimensionError("rollout: one actor per agent required");
    }
    Rng rng(derive_seed(derive_seed(seed, episode), 0xAC7));
    Observation obs = env.reset(derive_seed(seed, episode));
    Trajectory traj;
    for(int step = 0; step < spec.horizon; ++step) {
        std::vector<Action> joint;
        std::vector<double> logps;
        for(std::size_t i = 0; i < spec.n_agents; ++i) {
            if(greedy) {
                joint.push_back(actors[i].mode(obs.local[i]));
                logps.push_back(actors[i].log_prob(obs.local[i], joint.back()));
            } else {
                auto [a, lp] = actors[i].sample(obs.local[i], rng);
                joint.push_back(std::move(a));
                logps.push_back(lp);
            }
        }
        StepResult res = env.step(joint);
        res.transition.behavior_log_probs = std::move(logps);
        obs.joint = res.transition.next_joint_obs;
        obs.local = res.transition.next_local_obs;
        const bool done = res.transition.done;
        traj.transitions.push_back(std::move(res.transition));
        if(done) {
            traj.episodic_return = res.episodic_return;
            traj.truncated = res.truncated;
            break;
        }
    }
    if(!traj.complete()) {
        throw PreconditionError(env.name() + ": episode did not terminate within the horizon");
    }
    traj.metadata = env.summary();
    return traj;
}

/**
 * Collects `episodes` complete trajectories. Episode e always uses seeds derived from (seed, e), and
 * results are stored by episode id, so the batch is identical for any worker count.
 */
[[nodiscard]] inline RolloutBatch collect(const Env& prototype, const std::vector<Actor>& actors, const CollectOptions& opt)
{
    std::vector<TrajectoryRef> out(opt.episodes);
    const std::size_t workers = std::max<std::size_t>(1, std::min(opt.workers, opt.episodes));
    std::vector<std::exception_ptr> failures(workers);
    auto work = [&](std::size_t w) {
        try {
            auto env = prototype.clone();
            for(std::size_t e = w; e < opt.episodes; e += workers) {
                try {
                    out[e] = std::make_shared<const Trajectory>(run_episode(*env, actors, opt.seed, e, opt.greedy));
                } catch(const std::exception& ex) {
                    throw Error("rollout failed in episode " + std::to_string(e) + " (env " + prototype.name()
                                + ", seed " + std::to_string(opt.seed) + "): " + ex.what());
                }
            }
        } catch(...) {
            failures[w] = std::current_exception();
        }
    };
    if(workers == 1) {
        work(0);
    } else {
        std::vector<std::jthread> pool;
        for(std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back(work, w);
        }
    }
    for(const auto& f : failures) {
        if(f) {
            std::rethrow_exception(f);
        }
    }
    return RolloutBatch(std::move(out), opt.policy_version);
}

/// Shuffled partition of [0, count) into minibatches of at most `minibatch_size` indices.
[[nodiscard]] inline std::vector<std::vector<std::size_t>> make_minibatches(
    std::size_t count, std::size_t minibatch_size, std::uint64_t shuffle_seed)
{
    if(minibatch_size == 0) {
        throw PreconditionError("minibatch size must be positive");
    }
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(derive_seed(shuffle_seed, 0x5F1));
    for(std::size_t k = count; k > 1; --k) {
        std::uniform_int_distribution<std::size_t> pick(0, k - 1);
        std::swap(order[k - 1], order[pick(rng)]);
    }
    std::vector<std::vector<std::size_t>> batches;
    for(std::size_t start = 0; start < count; start += minibatch_size) {
        const std::size_t end = std::min(count, start + minibatch_size);
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return batches;
}

}  // namespace imap

#endif  // IMAP_ROLLOUT_HPP

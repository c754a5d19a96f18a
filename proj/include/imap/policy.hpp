#ifndef IMAP_POLICY_HPP
#define IMAP_POLICY_HPP

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "imap/actor.hpp"
#include "imap/checkpoint.hpp"
#include "imap/reward_model.hpp"
#include "imap/rollout.hpp"

namespace imap {

struct PpoConfig {
    double gamma = 0.99;
    double gae_lambda = 0.95;
    double clip = 0.2;
    double value_clip = 0.2;
    double entropy_coef = 0.01;
    std::size_t epochs = 10;
    std::size_t minibatch = 256;
    double actor_lr = 5e-4;
    double critic_lr = 5e-4;
    double grad_clip = 10.0;
    bool standardize = true;
    bool uncorrected_delta = false;

    void validate() const
    {
        if(!(clip > 0.0) || !(value_clip > 0.0)) {
            throw ConfigError("ppo: clip and value_clip must be positive");
        }
        if(!(entropy_coef >= 0.0)) {
            throw ConfigError("ppo: entropy_coef must be non-negative");
        }
        if(!(gamma >= 0.0 && gamma <= 1.0) || !(gae_lambda >= 0.0 && gae_lambda <= 1.0)) {
            throw ConfigError("ppo: gamma and gae_lambda must lie in [0, 1]");
        }
        if(epochs == 0 || minibatch == 0) {
            throw ConfigError("ppo: epochs and minibatch must be positive");
        }
        if(!(actor_lr >= 0.0) || !(critic_lr >= 0.0)) {
            throw ConfigError("ppo: learning rates must be non-negative");
        }
    }
};

/// n decentralized actors plus a centralized critic V(s) over the joint observation.
struct PolicyBundle {
    std::vector<Actor> actors;
    Mlp critic;

    PolicyBundle() = default;

    PolicyBundle(const EnvSpec& spec, const std::vector<std::size_t>& hidden, Rng& rng)
    {
        spec.validate();
        for(std::size_t i = 0; i < spec.n_agents; ++i) {
            actors.emplace_back(spec.obs_dims[i], spec.action_spaces[i], hidden, rng);
        }
        std::vector<std::size_t> sizes{spec.joint_obs_dim};
        sizes.insert(sizes.end(), hidden.begin(), hidden.end());
        sizes.push_back(1);
        critic = Mlp::random(sizes, rng);
    }

    [[nodiscard]] std::vector<NamedBlock> named_blocks() const
    {
        std::vector<NamedBlock> out;
        for(std::size_t i = 0; i < actors.size(); ++i) {
            out.push_back({"actor" + std::to_string(i), actors[i].net().parameters()});
            if(!actors[i].discrete()) {
                out.push_back({"actor" + std::to_string(i) + ".log_std", actors[i].log_std()});
            }
        }
        out.push_back({"critic", critic.parameters()});
        return out;
    }

    void load_blocks(const std::vector<NamedBlock>& blocks)
    {
        auto assign = [&](ParameterBlock& dst, const std::string& name) {
            const auto& src = find_block(blocks, name);
            if(!src.same_layout(dst)) {
                throw CheckpointError("block '" + name + "' does not match the policy architecture");
            }
            dst = src;
        };
        for(std::size_t i = 0; i < actors.size(); ++i) {
            assign(actors[i].net().parameters(), "actor" + std::to_string(i));
            if(!actors[i].discrete()) {
                assign(actors[i].log_std(), "actor" + std::to_string(i) + ".log_std");
            }
        }
        assign(critic.parameters(), "critic");
    }
};

/// A_t = delta_t + gamma lambda A_{t+1}, with A_T = delta_T.
[[nodiscard]] inline Vector gae_from_deltas(const Vector& delta, double gamma, double lambda)
{
    Vector adv(delta.size());
    double next = 0.0;
    for(Eigen::Index t = delta.size(); t-- > 0;) {
        next = delta(t) + gamma * lambda * next;
        adv(t) = next;
    }
    return adv;
}

/// Critic values V(s_t) and V(s_{t+1}) along a trajectory; V(s_{t+1}) = 0 after a done step.
struct CriticValues {
    Vector now;
    Vector next;
};

[[nodiscard]] inline CriticValues critic_values(const Mlp& critic, const Trajectory& traj)
{
    const auto T = static_cast<Eigen::Index>(traj.length());
    const auto d = static_cast<Eigen::Index>(critic.input_size());
    Matrix x(d, T), x_next(d, T);
    for(Eigen::Index t = 0; t < T; ++t) {
        const auto& tr = traj.transitions[static_cast<std::size_t>(t)];
        if(static_cast<Eigen::Index>(tr.joint_obs.size()) != d) {
            throw DimensionError("critic input size does not match the joint observation");
        }
        x.col(t) = Eigen::Map<const Vector>(tr.joint_obs.data(), d);
        x_next.col(t) = Eigen::Map<const Vector>(tr.next_joint_obs.data(), d);
    }
    CriticValues cv;
    cv.now = critic.forward_batch(x).row(0).transpose();
    cv.next = critic.forward_batch(x_next).row(0).transpose();
    for(Eigen::Index t = 0; t < T; ++t) {
        if(traj.transitions[static_cast<std::size_t>(t)].done) {
            cv.next(t) = 0.0;
        }
    }
    return cv;
}

struct GaeResult {
    Vector advantages;
    Vector returns;  // A_t + V_old(s_t)
};

[[nodiscard]] inline GaeResult gae_global(
    const CriticValues& cv, const Vector& rewards, double gamma, double lambda)
{
    if(rewards.size() != cv.now.size()) {
        throw DimensionError("gae_global: one reward per step required");
    }
    const Vector delta = rewards + gamma * cv.next - cv.now;
    GaeResult out;
    out.advantages = gae_from_deltas(delta, gamma, lambda);
    out.returns = out.advantages + cv.now;
    return out;
}

[[nodiscard]] inline GaeResult gae_global(
    const Mlp& critic, const Trajectory& traj, const Vector& rewards, double gamma, double lambda)
{
    return gae_global(critic_values(critic, traj), rewards, gamma, lambda);
}

/**
 * delta_local_i = r_i + (gamma V(s') - V(s)) / (n w_i), or with `uncorrected`
 * r_i + (gamma / w_i)(V(s') - V(s)).
 */
[[nodiscard]] inline double local_delta(
    double r_i, double w_i, std::size_t n, double v_now, double v_next, double gamma, bool uncorrected = false)
{
    if(!(w_i >= min_mixer_weight)) {
        throw PreconditionError("local advantage needs mixer weight >= 1e-3, got " + std::to_string(w_i));
    }
    if(uncorrected) {
        return r_i + (gamma / w_i) * (v_next - v_now);
    }
    return r_i + (gamma * v_next - v_now) / (static_cast<double>(n) * w_i);
}

/// Local GAE streams for every agent (n x T) from local implicit rewards.
[[nodiscard]] inline Matrix gae_local(const Matrix& local_rewards, const std::vector<double>& weights,
                                      const CriticValues& cv, double gamma, double lambda, bool uncorrected = false)
{
    const auto n = local_rewards.rows();
    const auto T = local_rewards.cols();
    if(static_cast<Eigen::Index>(weights.size()) != n || cv.now.size() != T) {
        throw DimensionError("gae_local: shape mismatch");
    }
    Matrix adv(n, T);
    for(Eigen::Index i = 0; i < n; ++i) {
        Vector delta(T);
        for(Eigen::Index t = 0; t < T; ++t) {
            delta(t) = local_delta(local_rewards(i, t), weights[static_cast<std::size_t>(i)], static_cast<std::size_t>(n),
                                   cv.now(t), cv.next(t), gamma, uncorrected);
        }
        adv.row(i) = gae_from_deltas(delta, gamma, lambda).transpose();
    }
    return adv;
}

[[nodiscard]] inline Matrix gae_local(const ImplicitRewardModel& model, const Mlp& critic, const Trajectory& traj,
                                      double lambda, bool uncorrected = false)
{
    const auto rewards = model.implicit_rewards(traj);
    return gae_local(rewards.local, model.mixer().weights(), critic_values(critic, traj), model.gamma(), lambda,
                     uncorrected);
}

/**
 * max_t |A_tot_t - sum_i w_i A_local_{i,t} - c_t (1 - gamma) w| with
 * c_t = sum_{l=0}^{T-1-t} (gamma lambda)^l, using unstandardized streams.
 */
[[nodiscard]] inline double check_prop2(const ImplicitRewardModel& model, const Mlp& critic, const Trajectory& traj,
                                        double lambda, bool uncorrected = false)
{
    const double gamma = model.gamma();
    const auto weights = model.mixer().weights();
    for(std::size_t i = 0; i < weights.size(); ++i) {
        if(!(weights[i] >= min_mixer_weight)) {
            throw PreconditionError("check_prop2: mixer weight w_" + std::to_string(i) + " below 1e-3");
        }
    }
    const auto rewards = model.implicit_rewards(traj);
    const auto cv = critic_values(critic, traj);
    const Vector a_tot = gae_global(cv, rewards.global, gamma, lambda).advantages;
    const Matrix a_loc = gae_local(rewards.local, weights, cv, gamma, lambda, uncorrected);
    const double bias = model.mixer().bias();
    const auto T = a_tot.size();
    double worst = 0.0;
    double c = 0.0;
    for(Eigen::Index t = T; t-- > 0;) {
        c = 1.0 + gamma * lambda * c;
        double mixed = c * (1.0 - gamma) * bias;
        for(std::size_t i = 0; i < weights.size(); ++i) {
            mixed += weights[i] * a_loc(static_cast<Eigen::Index>(i), t);
        }
        worst = std::max(worst, std::abs(a_tot(t) - mixed));
    }
    return worst;
}

/// In-place zero-mean / unit-variance standardization (left unchanged when the spread is ~0).
inline void standardize(Vector& x)
{
    if(x.size() < 2) {
        return;
    }
    const double mean = x.mean();
    const double var = (x.array() - mean).square().mean();
    x.array() -= mean;
    if(var > 1e-16) {
        x /= std::sqrt(var);
    }
}

struct ActorLossValue {
    double loss = 0.0;
    double entropy = 0.0;
    double clip_fraction = 0.0;
    bool skipped = false;  // non-finite importance ratio
};

/**
 * Clipped surrogate for one agent:
 *   -mean(min(rho A, clip(rho, 1-eps, 1+eps) A)) - eta mean(H),
 * rho = exp(log pi(a|o) - old_log_prob). Gradients go to `grad` when given.
 */
[[nodiscard]] inline ActorLossValue actor_surrogate(const Actor& actor, const Matrix& obs,
                                                    const std::vector<Action>& actions, const Vector& old_log_prob,
                                                    const Vector& advantages, double clip, double entropy_coef,
                                                    ActorGradient* grad)
{
    const auto N = obs.cols();
    if(old_log_prob.size() != N || advantages.size() != N) {
        throw DimensionError("actor loss: batch vectors differ in length");
    }
    ActorLossValue out;
    if(N == 0) {
        return out;
    }
    const PolicyEval ev = actor.evaluate(obs, actions);
    const Vector ratio = (ev.log_prob - old_log_prob).array().exp().matrix();
    if(!all_finite(std::span<const double>(ratio.data(), static_cast<std::size_t>(ratio.size())))) {
        out.skipped = true;
        return out;
    }
    Vector d_logp = Vector::Zero(N);
    const double inv_n = 1.0 / static_cast<double>(N);
    std::size_t clipped = 0;
    for(Eigen::Index c = 0; c < N; ++c) {
        const double a = advantages(c);
        const double unclipped = ratio(c) * a;
        const double clipped_value = std::clamp(ratio(c), 1.0 - clip, 1.0 + clip) * a;
        if(unclipped <= clipped_value) {
            out.loss -= unclipped * inv_n;
            d_logp(c) = -unclipped * inv_n;  // d(rho A)/d log pi = rho A
        } else {
            out.loss -= clipped_value * inv_n;
            ++clipped;
        }
    }
    out.entropy = ev.entropy.mean();
    out.loss -= entropy_coef * out.entropy;
    out.clip_fraction = static_cast<double>(clipped) * inv_n;
    if(grad != nullptr) {
        actor.backward(ev, d_logp, Vector::Constant(N, -entropy_coef * inv_n), *grad);
    }
    return out;
}

/// Per-agent minibatch inputs for the actor losses.
struct AgentBatch {
    Matrix obs;
    std::vector<Action> actions;
    Vector old_log_prob;
};

/**
 * Sum over agents of the clipped surrogate. `advantages[i]` is agent i's advantage column: the
 * local stream for the dual loss, or the shared global stream (same vector for all agents).
 */
[[nodiscard]] inline ActorLossValue actor_loss(const PolicyBundle& bundle, const std::vector<AgentBatch>& batch,
                                               const std::vector<Vector>& advantages, const PpoConfig& cfg,
                                               std::vector<ActorGradient>* grads)
{
    ActorLossValue total;
    for(std::size_t i = 0; i < bundle.actors.size(); ++i) {
        auto v = actor_surrogate(bundle.actors[i], batch.at(i).obs, batch[i].actions, batch[i].old_log_prob,
                                 advantages.at(i), cfg.clip, cfg.entropy_coef, grads ? &grads->at(i) : nullptr);
        if(v.skipped) {
            total.skipped = true;
            return total;
        }
        total.loss += v.loss;
        total.entropy += v.entropy / static_cast<double>(bundle.actors.size());
        total.clip_fraction += v.clip_fraction / static_cast<double>(bundle.actors.size());
    }
    return total;
}

[[nodiscard]] inline ActorLossValue actor_loss_dual(const PolicyBundle& bundle, const std::vector<AgentBatch>& batch,
                                                    const std::vector<Vector>& local_advantages, const PpoConfig& cfg,
                                                    std::vector<ActorGradient>* grads)
{
    if(local_advantages.size() != bundle.actors.size()) {
        throw DimensionError("actor_loss_dual: one advantage stream per agent required");
    }
    return actor_loss(bundle, batch, local_advantages, cfg, grads);
}

[[nodiscard]] inline ActorLossValue actor_loss_global(const PolicyBundle& bundle, const std::vector<AgentBatch>& batch,
                                                      const Vector& global_advantages, const PpoConfig& cfg,
                                                      std::vector<ActorGradient>* grads)
{
    return actor_loss(bundle, batch, std::vector<Vector>(bundle.actors.size(), global_advantages), cfg, grads);
}

/// mean_t max((V - R)^2, (clip(V, V_old - eps_v, V_old + eps_v) - R)^2)
[[nodiscard]] inline double critic_loss(const Mlp& critic, const Matrix& joint_obs, const Vector& targets,
                                        const Vector& old_values, double value_clip, ParameterBlock* grad)
{
    const auto N = joint_obs.cols();
    if(targets.size() != N || old_values.size() != N) {
        throw DimensionError("critic_loss: batch vectors differ in length");
    }
    if(N == 0) {
        return 0.0;
    }
    Tape tape;
    const Vector v = critic.forward_batch(joint_obs, tape).row(0).transpose();
    const double inv_n = 1.0 / static_cast<double>(N);
    double loss = 0.0;
    Matrix up = Matrix::Zero(1, N);
    for(Eigen::Index c = 0; c < N; ++c) {
        const double delta = v(c) - old_values(c);
        const double vc = old_values(c) + std::clamp(delta, -value_clip, value_clip);
        const double lu = (v(c) - targets(c)) * (v(c) - targets(c));
        const double lc = (vc - targets(c)) * (vc - targets(c));
        if(lu >= lc) {
            loss += lu * inv_n;
            up(0, c) = 2.0 * (v(c) - targets(c)) * inv_n;
        } else {
            loss += lc * inv_n;
            const bool inside = delta > -value_clip && delta < value_clip;
            up(0, c) = inside ? 2.0 * (vc - targets(c)) * inv_n : 0.0;
        }
    }
    if(grad != nullptr) {
        critic.backward(tape, up, *grad);
    }
    return loss;
}

/// Advantage streams and targets for a whole batch, flattened in RolloutBatch order.
struct AdvantageTable {
    Vector global;             // A_tot
    std::vector<Vector> local; // per agent; empty when no reward model is involved
    Vector returns;            // R-hat targets
    Vector old_values;         // V_old(s_t)
};

/**
 * Builds the table from per-trajectory global rewards and, when `local_rewards` is given
 * (n x T per trajectory, with mixer `weights`), the local streams too.
 */
[[nodiscard]] inline AdvantageTable build_advantages(const Mlp& critic, const RolloutBatch& batch,
                                                     const std::vector<Vector>& global_rewards,
                                                     const std::vector<Matrix>* local_rewards,
                                                     const std::vector<double>& weights, const PpoConfig& cfg)
{
    const auto total = static_cast<Eigen::Index>(batch.transition_count());
    AdvantageTable table;
    table.global.resize(total);
    table.returns.resize(total);
    table.old_values.resize(total);
    if(local_rewards != nullptr) {
        table.local.assign(weights.size(), Vector(total));
    }
    Eigen::Index offset = 0;
    for(std::size_t k = 0; k < batch.size(); ++k) {
        const auto& traj = *batch.trajectories()[k];
        const auto cv = critic_values(critic, traj);
        const auto g = gae_global(cv, global_rewards.at(k), cfg.gamma, cfg.gae_lambda);
        const auto T = g.advantages.size();
        table.global.segment(offset, T) = g.advantages;
        table.returns.segment(offset, T) = g.returns;
        table.old_values.segment(offset, T) = cv.now;
        if(local_rewards != nullptr) {
            const Matrix a_loc =
                gae_local(local_rewards->at(k), weights, cv, cfg.gamma, cfg.gae_lambda, cfg.uncorrected_delta);
            for(std::size_t i = 0; i < weights.size(); ++i) {
                table.local[i].segment(offset, T) = a_loc.row(static_cast<Eigen::Index>(i)).transpose();
            }
        }
        offset += T;
    }
    return table;
}

enum class ActorAdvantage { local, global };

struct IterationStats {
    double actor_loss = 0.0;
    double critic_loss = 0.0;
    double entropy = 0.0;
    double clip_fraction = 0.0;
    std::size_t skipped_minibatches = 0;
};

/// PPO optimizer state for a PolicyBundle; one Adam state per actor plus one for the critic.
class PpoLearner {
  public:
    PpoLearner(PolicyBundle& bundle, PpoConfig cfg) : bundle_(bundle), cfg_(cfg), actor_opt_(bundle.actors.size())
    {
        cfg_.validate();
    }

    [[nodiscard]] const PpoConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] PpoConfig& config() noexcept { return cfg_; }

    /// Runs cfg.epochs passes of shuffled minibatch updates over the batch.
    IterationStats update(const RolloutBatch& batch, AdvantageTable table, ActorAdvantage mode, std::uint64_t shuffle_seed)
    {
        IterationStats stats;
        const std::size_t N = batch.transition_count();
        if(N == 0) {
            return stats;
        }
        const std::size_t n = bundle_.actors.size();
        if(mode == ActorAdvantage::local && table.local.size() != n) {
            throw PreconditionError("local-advantage update requires local advantage streams");
        }
        if(cfg_.standardize) {
            standardize(table.global);
            for(auto& l : table.local) {
                standardize(l);
            }
        }
        std::size_t updates = 0;
        for(std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
            for(const auto& mb : make_minibatches(N, cfg_.minibatch, derive_seed(shuffle_seed, epoch))) {
                const auto M = static_cast<Eigen::Index>(mb.size());
                std::vector<AgentBatch> agents(n);
                std::vector<Vector> adv(n, Vector(M));
                Matrix joint(static_cast<Eigen::Index>(bundle_.critic.input_size()), M);
                Vector targets(M), old_values(M);
                for(std::size_t i = 0; i < n; ++i) {
                    agents[i].obs.resize(static_cast<Eigen::Index>(bundle_.actors[i].obs_dim()), M);
                    agents[i].old_log_prob.resize(M);
                    agents[i].actions.reserve(mb.size());
                }
                for(Eigen::Index c = 0; c < M; ++c) {
                    const std::size_t k = mb[static_cast<std::size_t>(c)];
                    const Transition& tr = batch.transition(k);
                    joint.col(c) = Eigen::Map<const Vector>(tr.joint_obs.data(), joint.rows());
                    targets(c) = table.returns(static_cast<Eigen::Index>(k));
                    old_values(c) = table.old_values(static_cast<Eigen::Index>(k));
                    for(std::size_t i = 0; i < n; ++i) {
                        agents[i].obs.col(c) = Eigen::Map<const Vector>(tr.local_obs[i].data(), agents[i].obs.rows());
                        agents[i].actions.push_back(tr.actions[i]);
                        agents[i].old_log_prob(c) = tr.behavior_log_probs.at(i);
                        adv[i](c) = mode == ActorAdvantage::local ? table.local[i](static_cast<Eigen::Index>(k))
                                                                  : table.global(static_cast<Eigen::Index>(k));
                    }
                }
                std::vector<ActorGradient> grads;
                for(const auto& a : bundle_.actors) {
                    grads.push_back(a.make_gradient());
                }
                const auto al = actor_loss(bundle_, agents, adv, cfg_, &grads);
                ParameterBlock cgrad = ParameterBlock::zeros_like(bundle_.critic.parameters());
                const double cl = critic_loss(bundle_.critic, joint, targets, old_values, cfg_.value_clip, &cgrad);
                if(al.skipped) {
                    ++stats.skipped_minibatches;
                } else {
                    for(std::size_t i = 0; i < n; ++i) {
                        auto g = grads[i].blocks();
                        clip_grad_norm(g, cfg_.grad_clip);
                        auto p = bundle_.actors[i].parameter_blocks();
                        std::vector<const ParameterBlock*> cg(g.begin(), g.end());
                        actor_opt_[i].step(p, cg, cfg_.actor_lr);
                    }
                    stats.actor_loss += al.loss;
                    stats.entropy += al.entropy;
                    stats.clip_fraction += al.clip_fraction;
                }
                ParameterBlock* cg[] = {&cgrad};
                clip_grad_norm(cg, cfg_.grad_clip);
                ParameterBlock* cp[] = {&bundle_.critic.parameters()};
                const ParameterBlock* ccg[] = {&cgrad};
                critic_opt_.step(cp, ccg, cfg_.critic_lr);
                stats.critic_loss += cl;
                ++updates;
            }
        }
        const std::size_t applied = updates - stats.skipped_minibatches;
        if(applied > 0) {
            stats.actor_loss /= static_cast<double>(applied);
            stats.entropy /= static_cast<double>(applied);
            stats.clip_fraction /= static_cast<double>(applied);
        }
        if(updates > 0) {
            stats.critic_loss /= static_cast<double>(updates);
        }
        return stats;
    }

  private:
    PolicyBundle& bundle_;
    PpoConfig cfg_;
    std::vector<AdamOptimizer> actor_opt_;
    AdamOptimizer critic_opt_;
};

/**
 * One PPO stage with a frozen reward model: computes global and local implicit rewards, builds the
 * advantage table and runs the minibatch epochs. `mode` chooses the actor advantage stream.
 */
inline IterationStats train_iteration(PpoLearner& learner, const PolicyBundle& bundle, const ImplicitRewardModel& model,
                                      const RolloutBatch& batch, ActorAdvantage mode, std::uint64_t shuffle_seed)
{
    std::vector<Vector> global;
    std::vector<Matrix> local;
    for(const auto& traj : batch.trajectories()) {
        auto r = model.implicit_rewards(*traj);
        global.push_back(std::move(r.global));
        local.push_back(std::move(r.local));
    }
    auto cfg = learner.config();
    if(std::abs(cfg.gamma - model.gamma()) > 1e-15) {
        throw PreconditionError("train_iteration: reward model and PPO must share gamma");
    }
    auto table = build_advantages(bundle.critic, batch, global, &local, model.mixer().weights(), cfg);
    return learner.update(batch, std::move(table), mode, shuffle_seed);
}

/// Tabular factorized softmax policy pi(a|s) = prod_i softmax(theta_i[s])[a_i].
struct TabularSoftmaxPolicy {
    std::size_t n_states = 0;
    std::vector<int> actions;                // per agent
    std::vector<std::vector<double>> logits; // per agent, [s * m_i + a_i]

    [[nodiscard]] double prob(std::size_t i, std::size_t s, int a) const
    {
        const auto m = static_cast<std::size_t>(actions[i]);
        const double* z = logits[i].data() + s * m;
        const double top = *std::max_element(z, z + m);
        double total = 0.0;
        for(std::size_t k = 0; k < m; ++k) {
            total += std::exp(z[k] - top);
        }
        return std::exp(z[static_cast<std::size_t>(a)] - top) / total;
    }

    [[nodiscard]] std::size_t parameter_count() const
    {
        std::size_t total = 0;
        for(const auto& l : logits) {
            total += l.size();
        }
        return total;
    }

    /// Score grad_theta log pi(a|s), block-stacked over agents.
    [[nodiscard]] Vector score(std::size_t s, const std::vector<int>& a) const
    {
        Vector g = Vector::Zero(static_cast<Eigen::Index>(parameter_count()));
        Eigen::Index offset = 0;
        for(std::size_t i = 0; i < actions.size(); ++i) {
            const auto m = static_cast<Eigen::Index>(actions[i]);
            for(Eigen::Index k = 0; k < m; ++k) {
                const double p = prob(i, s, static_cast<int>(k));
                g(offset + static_cast<Eigen::Index>(s) * m + k) = (k == a[i] ? 1.0 : 0.0) - p;
            }
            offset += static_cast<Eigen::Index>(logits[i].size());
        }
        return g;
    }
};

/// One (s, a) sample with its weight and advantage values.
struct Prop3Sample {
    std::size_t state = 0;
    std::vector<int> actions;
    double weight = 1.0;
    double adv_tot = 0.0;
    std::vector<double> adv_local;
    double constant = 0.0;  // the (1 - gamma) w c term carried by adv_tot
};

struct Prop3Report {
    double residual = 0.0;  // || g_joint - sum_i w_i blockstack(g_local_i) - score term ||
    Vector g_joint;
    Vector g_decomposed;
    Vector score_term;
};

/**
 * Compares the joint policy gradient sum_k weight_k score_k A_tot_k with the block-stacked,
 * w-weighted local gradients plus the score-function term carried by the constant.
 */
[[nodiscard]] inline Prop3Report check_prop3(const TabularSoftmaxPolicy& policy, const std::vector<Prop3Sample>& samples,
                                             const std::vector<double>& weights)
{
    const auto P = static_cast<Eigen::Index>(policy.parameter_count());
    Prop3Report r;
    r.g_joint = Vector::Zero(P);
    r.g_decomposed = Vector::Zero(P);
    r.score_term = Vector::Zero(P);
    for(const auto& smp : samples) {
        const Vector sc = policy.score(smp.state, smp.actions);
        r.g_joint += smp.weight * smp.adv_tot * sc;
        r.score_term += smp.weight * smp.constant * sc;
        Eigen::Index offset = 0;
        for(std::size_t i = 0; i < policy.actions.size(); ++i) {
            const auto len = static_cast<Eigen::Index>(policy.logits[i].size());
            r.g_decomposed.segment(offset, len) += smp.weight * weights.at(i) * smp.adv_local.at(i) * sc.segment(offset, len);
            offset += len;
        }
    }
    r.residual = (r.g_joint - r.g_decomposed - r.score_term).norm();
    return r;
}

}  // namespace imap

#endif  // IMAP_POLICY_HPP

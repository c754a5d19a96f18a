#ifndef IMAP_BASELINES_HPP
#define IMAP_BASELINES_HPP

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "imap/actor.hpp"
#include "imap/checkpoint.hpp"
#include "imap/preference.hpp"
#include "imap/reward_model.hpp"

namespace imap {

/// Zero reward everywhere except the final step, which carries the episodic return.
[[nodiscard]] inline Vector sparse_mappo_rewards(const Trajectory& traj)
{
    Vector r = Vector::Zero(static_cast<Eigen::Index>(traj.length()));
    if(traj.length() > 0) {
        r(r.size() - 1) = traj.return_value();
    }
    return r;
}

/// Per-pair mean of -log sigmoid(S(winner) - S(loser)) with S = sum_t gamma^t reward(transition).
[[nodiscard]] inline double bt_loss_from_rewards(const std::vector<PreferencePair>& pairs,
                                                 const std::function<double(const Transition&)>& reward, double gamma)
{
    if(pairs.empty()) {
        return 0.0;
    }
    auto score = [&](const Trajectory& traj) {
        double s = 0.0;
        for(const auto& tr : traj.transitions) {
            s += std::pow(gamma, tr.t) * reward(tr);
        }
        return s;
    };
    double loss = 0.0;
    for(const auto& p : pairs) {
        loss -= log_logistic(score(*p.winner) - score(*p.loser));
    }
    return loss / static_cast<double>(pairs.size());
}

/// Supervised reward regressor R_psi(s, a) over the joint observation and the joint action encoding.
class SupervisedRewardNet {
  public:
    SupervisedRewardNet() = default;

    SupervisedRewardNet(const EnvSpec& spec, const std::vector<std::size_t>& hidden, Rng& rng)
        : spaces_(spec.action_spaces)
    {
        std::size_t in = spec.joint_obs_dim;
        for(const auto& s : spaces_) {
            in += action_encoding_size(s);
        }
        std::vector<std::size_t> sizes{in};
        sizes.insert(sizes.end(), hidden.begin(), hidden.end());
        sizes.push_back(1);
        net_ = Mlp::random(sizes, rng);
    }

    [[nodiscard]] Mlp& net() noexcept { return net_; }
    [[nodiscard]] const Mlp& net() const noexcept { return net_; }

    [[nodiscard]] std::vector<double> input(const Transition& tr) const
    {
        std::vector<double> x(tr.joint_obs);
        for(std::size_t i = 0; i < spaces_.size(); ++i) {
            const std::size_t off = x.size();
            x.resize(off + action_encoding_size(spaces_[i]));
            encode_action(spaces_[i], tr.actions.at(i), std::span<double>(x).subspan(off));
        }
        return x;
    }

    [[nodiscard]] double reward(const Transition& tr) const { return net_.forward(input(tr))(0); }

    [[nodiscard]] Vector rewards(const Trajectory& traj) const
    {
        Vector r(static_cast<Eigen::Index>(traj.length()));
        for(std::size_t t = 0; t < traj.length(); ++t) {
            r(static_cast<Eigen::Index>(t)) = reward(traj.transitions[t]);
        }
        return r;
    }

  private:
    std::vector<ActionSpace> spaces_;
    Mlp net_;
};

/**
 * Bradley-Terry cross-entropy of logistic(S(sigma_1) - S(sigma_2)) against the label; pairs are
 * stored winner-first, so the target is always 1. Mean over pairs.
 */
[[nodiscard]] inline double sl_reward_loss(const SupervisedRewardNet& net, const std::vector<PreferencePair>& pairs,
                                           double gamma, ParameterBlock* grad)
{
    if(pairs.empty()) {
        return 0.0;
    }
    const double inv_p = 1.0 / static_cast<double>(pairs.size());
    double loss = 0.0;
    for(const auto& p : pairs) {
        const Trajectory* sides[2] = {p.winner.get(), p.loser.get()};
        Tape tapes[2];
        Vector r[2];
        double score[2] = {0.0, 0.0};
        for(int k = 0; k < 2; ++k) {
            const auto T = static_cast<Eigen::Index>(sides[k]->length());
            Matrix x(static_cast<Eigen::Index>(net.net().input_size()), T);
            for(Eigen::Index t = 0; t < T; ++t) {
                const auto in = net.input(sides[k]->transitions[static_cast<std::size_t>(t)]);
                x.col(t) = Eigen::Map<const Vector>(in.data(), x.rows());
            }
            r[k] = net.net().forward_batch(x, tapes[k]).row(0).transpose();
            for(Eigen::Index t = 0; t < T; ++t) {
                score[k] += std::pow(gamma, sides[k]->transitions[static_cast<std::size_t>(t)].t) * r[k](t);
            }
        }
        const double delta = score[0] - score[1];
        loss -= log_logistic(delta) * inv_p;
        if(grad != nullptr) {
            const double d_delta = -logistic(-delta) * inv_p;
            for(int k = 0; k < 2; ++k) {
                const auto T = r[k].size();
                Matrix up(1, T);
                for(Eigen::Index t = 0; t < T; ++t) {
                    up(0, t) = (k == 0 ? d_delta : -d_delta)
                               * std::pow(gamma, sides[k]->transitions[static_cast<std::size_t>(t)].t);
                }
                net.net().backward(tapes[k], up, *grad);
            }
        }
    }
    return loss;
}

/// Minibatch Adam training of the supervised reward net on the shared preference stream.
class SlRewardTrainer {
  public:
    SlRewardTrainer(SupervisedRewardNet& net, double gamma, double lr, std::size_t pair_batch, double grad_clip = 10.0)
        : net_(net), gamma_(gamma), lr_(lr), pair_batch_(pair_batch), grad_clip_(grad_clip)
    {
    }

    std::vector<double> train(const std::vector<PreferencePair>& pairs, std::size_t steps, Rng& rng)
    {
        std::vector<double> losses;
        if(steps == 0) {
            return losses;
        }
        if(pairs.empty()) {
            throw PreconditionError("SL reward training needs preference pairs");
        }
        ParameterBlock grad = ParameterBlock::zeros_like(net_.net().parameters());
        for(std::size_t s = 0; s < steps; ++s) {
            grad.zero();
            std::vector<PreferencePair> batch;
            for(auto k : sample_indices(pairs.size(), pair_batch_, rng)) {
                batch.push_back(pairs[k]);
            }
            const double loss = sl_reward_loss(net_, batch, gamma_, &grad);
            if(!std::isfinite(loss) || loss > 1e6) {
                throw DivergenceError("supervised reward loss diverged: " + std::to_string(loss));
            }
            ParameterBlock* g[] = {&grad};
            clip_grad_norm(g, grad_clip_);
            ParameterBlock* p[] = {&net_.net().parameters()};
            const ParameterBlock* cg[] = {&grad};
            opt_.step(p, cg, lr_);
            losses.push_back(loss);
        }
        return losses;
    }

  private:
    SupervisedRewardNet& net_;
    double gamma_;
    double lr_;
    std::size_t pair_batch_;
    double grad_clip_;
    AdamOptimizer opt_;
};

/// exp((Q_tot - V_tot) / beta) clamped to [e^-10, e^10], one per transition.
[[nodiscard]] inline Vector ipl_weights(const ImplicitRewardModel& model, std::span<const Transition* const> trs, double beta)
{
    if(!(beta > 0.0)) {
        throw PreconditionError("online IPL temperature must be positive");
    }
    Vector w(static_cast<Eigen::Index>(trs.size()));
    for(std::size_t k = 0; k < trs.size(); ++k) {
        const double a = model.soft_advantage(*trs[k]) / beta;
        w(static_cast<Eigen::Index>(k)) = std::exp(std::clamp(a, -10.0, 10.0));
    }
    return w;
}

/// Weighted behaviour-cloning loss -sum_k w_k log pi(a_k|o_k) / sum_k w_k for one actor.
[[nodiscard]] inline double bc_loss(const Actor& actor, const Matrix& obs, const std::vector<Action>& actions,
                                    const Vector& weights, ActorGradient* grad)
{
    const double total = weights.sum();
    if(!(total > 0.0) || !std::isfinite(total)) {
        throw PreconditionError("weighted behaviour cloning needs positive finite weights");
    }
    const PolicyEval ev = actor.evaluate(obs, actions);
    const double loss = -weights.dot(ev.log_prob) / total;
    if(grad != nullptr) {
        actor.backward(ev, -weights / total, Vector::Zero(weights.size()), *grad);
    }
    return loss;
}

/**
 * Fits each actor to the buffer actions by weighted behaviour cloning (full batch Adam). Returns the
 * final summed loss.
 */
inline double online_ipl_extract(std::vector<Actor>& actors, const ImplicitRewardModel& model,
                                 std::span<const Transition* const> buffer, double beta, std::size_t steps, double lr)
{
    if(buffer.empty()) {
        throw PreconditionError("online IPL extraction needs a non-empty buffer");
    }
    const Vector w = ipl_weights(model, buffer, beta);
    const auto N = static_cast<Eigen::Index>(buffer.size());
    double last = 0.0;
    for(std::size_t i = 0; i < actors.size(); ++i) {
        Matrix obs(static_cast<Eigen::Index>(actors[i].obs_dim()), N);
        std::vector<Action> acts;
        for(Eigen::Index c = 0; c < N; ++c) {
            const auto& o = buffer[static_cast<std::size_t>(c)]->local_obs.at(i);
            obs.col(c) = Eigen::Map<const Vector>(o.data(), obs.rows());
            acts.push_back(buffer[static_cast<std::size_t>(c)]->actions.at(i));
        }
        AdamOptimizer opt;
        double loss = 0.0;
        for(std::size_t s = 0; s < steps; ++s) {
            auto g = actors[i].make_gradient();
            loss = bc_loss(actors[i], obs, acts, w, &g);
            auto gb = g.blocks();
            clip_grad_norm(gb, 10.0);
            auto p = actors[i].parameter_blocks();
            std::vector<const ParameterBlock*> cg(gb.begin(), gb.end());
            opt.step(p, cg, lr);
        }
        if(steps == 0) {
            loss = bc_loss(actors[i], obs, acts, w, nullptr);
        }
        last += loss;
    }
    return last;
}

}  // namespace imap

#endif  // IMAP_BASELINES_HPP

#ifndef IMAP_REWARD_MODEL_HPP
#define IMAP_REWARD_MODEL_HPP

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "imap/checkpoint.hpp"
#include "imap/env.hpp"
#include "imap/nn.hpp"
#include "imap/preference.hpp"

namespace imap {

inline constexpr double min_mixer_weight = 1e-3;

/**
 * Shared linear mixer M_w[x] = sum_i w_i x_i + w with w_i = softplus(raw_i) + 1e-3.
 * Parameter layout: segment 0 = raw weights (n x 1), segment 1 = bias (1 x 1).
 */
class LinearMixer {
  public:
    LinearMixer() = default;

    /// Unit weights, zero bias.
    explicit LinearMixer(std::size_t n) : params_({{n, 1}, {1, 1}})
    {
        if(n == 0) {
            throw DimensionError("LinearMixer needs at least one agent");
        }
        const double raw = inverse_softplus(1.0 - min_mixer_weight);
        for(std::size_t i = 0; i < n; ++i) {
            params_.values[i] = raw;
        }
    }

    /// Mixer with the given effective weights; each must exceed 1e-3.
    [[nodiscard]] static LinearMixer with_weights(const std::vector<double>& weights, double bias)
    {
        LinearMixer m(weights.size());
        for(std::size_t i = 0; i < weights.size(); ++i) {
            if(!(weights[i] > min_mixer_weight) || !std::isfinite(weights[i])) {
                throw PreconditionError(
                    "mixer weight w_" + std::to_string(i) + " = " + std::to_string(weights[i])
                    + " violates positivity (w_i must exceed 1e-3)");
            }
            m.params_.values[i] = inverse_softplus(weights[i] - min_mixer_weight);
        }
        m.params_.values[weights.size()] = bias;
        return m;
    }

    [[nodiscard]] std::size_t agents() const noexcept { return params_.shapes.empty() ? 0 : params_.shapes[0].rows; }
    [[nodiscard]] double weight(std::size_t i) const { return softplus(params_.values.at(i)) + min_mixer_weight; }
    /// d w_i / d raw_i
    [[nodiscard]] double weight_slope(std::size_t i) const { return logistic(params_.values.at(i)); }
    [[nodiscard]] double bias() const { return params_.values.at(agents()); }

    [[nodiscard]] std::vector<double> weights() const
    {
        std::vector<double> w(agents());
        for(std::size_t i = 0; i < w.size(); ++i) {
            w[i] = weight(i);
        }
        return w;
    }

    [[nodiscard]] double mix(std::span<const double> locals) const
    {
        if(locals.size() != agents()) {
            throw DimensionError("LinearMixer::mix: expected one value per agent");
        }
        double total = bias();
        for(std::size_t i = 0; i < locals.size(); ++i) {
            total += weight(i) * locals[i];
        }
        return total;
    }

    [[nodiscard]] ParameterBlock& parameters() noexcept { return params_; }
    [[nodiscard]] const ParameterBlock& parameters() const noexcept { return params_; }

  private:
    ParameterBlock params_;
};

/// phi(x) = -lambda x^2; the loss adds -phi, i.e. lambda x^2.
struct PhiRegularizer {
    double lambda = 0.5;

    [[nodiscard]] double phi(double x) const noexcept { return -lambda * x * x; }
};

struct RewardModelGradient {
    std::vector<ParameterBlock> q;
    std::vector<ParameterBlock> v;
    ParameterBlock mixer;

    void zero()
    {
        for(auto& g : q) {
            g.zero();
        }
        for(auto& g : v) {
            g.zero();
        }
        mixer.zero();
    }
};

struct LossValue {
    double loss = 0.0;
    std::size_t saturated = 0;  // extreme-V exponent arguments clamped at 50
};

/// Per-step implicit rewards of one trajectory: global R_t and local r_{i,t} (n x T).
struct ImplicitRewards {
    Vector global;
    Matrix local;
};

/**
 * Implicit reward model: local q_i(o_i, a_i) and v_i(o_i) approximators combined by one shared
 * LinearMixer into Q_tot and V_tot, with temperature beta and discount gamma.
 *
 * At terminal transitions the local next-state values are taken as zero, so V_tot(s') reduces to
 * the mixer bias and  R = sum_i w_i r_i + (1 - gamma) w  holds on every transition.
 */
class ImplicitRewardModel {
  public:
    ImplicitRewardModel() = default;

    ImplicitRewardModel(const EnvSpec& spec, const std::vector<std::size_t>& hidden, double beta, double gamma, Rng& rng)
        : spaces_(spec.action_spaces), mixer_(spec.n_agents), beta_(beta), gamma_(gamma)
    {
        spec.validate();
        if(!(beta_ > 0.0)) {
            throw ConfigError("reward model temperature beta must be positive");
        }
        if(!(gamma_ >= 0.0 && gamma_ <= 1.0)) {
            throw ConfigError("reward model gamma must lie in [0, 1]");
        }
        for(std::size_t i = 0; i < spec.n_agents; ++i) {
            std::vector<std::size_t> qs{spec.obs_dims[i] + action_encoding_size(spaces_[i])};
            qs.insert(qs.end(), hidden.begin(), hidden.end());
            qs.push_back(1);
            std::vector<std::size_t> vs{spec.obs_dims[i]};
            vs.insert(vs.end(), hidden.begin(), hidden.end());
            vs.push_back(1);
            q_.push_back(Mlp::random(qs, rng));
            v_.push_back(Mlp::random(vs, rng));
        }
    }

    [[nodiscard]] std::size_t agents() const noexcept { return q_.size(); }
    [[nodiscard]] double beta() const noexcept { return beta_; }
    [[nodiscard]] double gamma() const noexcept { return gamma_; }
    void set_gamma(double g) { gamma_ = g; }
    [[nodiscard]] LinearMixer& mixer() noexcept { return mixer_; }
    [[nodiscard]] const LinearMixer& mixer() const noexcept { return mixer_; }
    [[nodiscard]] Mlp& q_net(std::size_t i) { return q_.at(i); }
    [[nodiscard]] const Mlp& q_net(std::size_t i) const { return q_.at(i); }
    [[nodiscard]] Mlp& v_net(std::size_t i) { return v_.at(i); }
    [[nodiscard]] const Mlp& v_net(std::size_t i) const { return v_.at(i); }
    [[nodiscard]] const std::vector<ActionSpace>& action_spaces() const noexcept { return spaces_; }

    [[nodiscard]] RewardModelGradient make_gradient() const
    {
        RewardModelGradient g;
        for(const auto& net : q_) {
            g.q.push_back(ParameterBlock::zeros_like(net.parameters()));
        }
        for(const auto& net : v_) {
            g.v.push_back(ParameterBlock::zeros_like(net.parameters()));
        }
        g.mixer = ParameterBlock::zeros_like(mixer_.parameters());
        return g;
    }

    [[nodiscard]] std::vector<double> q_input(std::size_t i, std::span<const double> obs, const Action& a) const
    {
        std::vector<double> x(obs.begin(), obs.end());
        x.resize(obs.size() + action_encoding_size(spaces_.at(i)));
        encode_action(spaces_[i], a, std::span<double>(x).subspan(obs.size()));
        return x;
    }

    [[nodiscard]] double local_q(std::size_t i, std::span<const double> obs, const Action& a) const
    {
        return q_.at(i).forward(q_input(i, obs, a))(0);
    }

    [[nodiscard]] double local_v(std::size_t i, std::span<const double> obs) const { return v_.at(i).forward(obs)(0); }

    [[nodiscard]] double q_tot(const std::vector<std::vector<double>>& local_obs, const std::vector<Action>& actions) const
    {
        check_agents(local_obs.size());
        std::vector<double> q(agents());
        for(std::size_t i = 0; i < agents(); ++i) {
            q[i] = local_q(i, local_obs[i], actions.at(i));
        }
        return mixer_.mix(q);
    }

    [[nodiscard]] double v_tot(const std::vector<std::vector<double>>& local_obs) const
    {
        check_agents(local_obs.size());
        std::vector<double> v(agents());
        for(std::size_t i = 0; i < agents(); ++i) {
            v[i] = local_v(i, local_obs[i]);
        }
        return mixer_.mix(v);
    }

    /// r_i = q_i(o_i, a_i) - gamma v_i(o_i'), with v_i(o_i') = 0 at terminal transitions.
    [[nodiscard]] double implicit_reward_local(std::size_t i, const Transition& tr) const
    {
        const double next = tr.done ? 0.0 : local_v(i, tr.next_local_obs.at(i));
        return local_q(i, tr.local_obs.at(i), tr.actions.at(i)) - gamma_ * next;
    }

    /// R = Q_tot(s, a) - gamma V_tot(s').
    [[nodiscard]] double implicit_reward_global(const Transition& tr) const
    {
        const double q = q_tot(tr.local_obs, tr.actions);
        const double v_next = tr.done ? mixer_.bias() : v_tot(tr.next_local_obs);
        return q - gamma_ * v_next;
    }

    /// Q_tot(s, a) - V_tot(s).
    [[nodiscard]] double soft_advantage(const Transition& tr) const
    {
        return q_tot(tr.local_obs, tr.actions) - v_tot(tr.local_obs);
    }

    /// Batched local values for a list of transitions.
    struct Eval {
        Matrix q;       // n x N
        Matrix v;       // n x N, v_i(o_i)
        Matrix v_next;  // n x N, v_i(o_i'), zero at terminal transitions
        Vector not_done;
        std::vector<Tape> q_tape, v_tape, v_next_tape;
    };

    [[nodiscard]] Eval evaluate(std::span<const Transition* const> trs, bool need_current_v) const
    {
        const auto N = static_cast<Eigen::Index>(trs.size());
        const auto n = static_cast<Eigen::Index>(agents());
        Eval ev;
        ev.q.resize(n, N);
        ev.v_next.resize(n, N);
        ev.not_done.resize(N);
        ev.q_tape.resize(agents());
        ev.v_next_tape.resize(agents());
        if(need_current_v) {
            ev.v.resize(n, N);
            ev.v_tape.resize(agents());
        }
        for(Eigen::Index c = 0; c < N; ++c) {
            ev.not_done(c) = trs[static_cast<std::size_t>(c)]->done ? 0.0 : 1.0;
        }
        for(std::size_t i = 0; i < agents(); ++i) {
            const auto obs_dim = static_cast<Eigen::Index>(v_[i].input_size());
            const auto act_dim = static_cast<Eigen::Index>(action_encoding_size(spaces_[i]));
            Matrix xq(obs_dim + act_dim, N);
            Matrix xv_next(obs_dim, N);
            Matrix xv;
            if(need_current_v) {
                xv.resize(obs_dim, N);
            }
            std::vector<double> enc(static_cast<std::size_t>(act_dim));
            for(Eigen::Index c = 0; c < N; ++c) {
                const Transition& tr = *trs[static_cast<std::size_t>(c)];
                const auto& o = tr.local_obs.at(i);
                const auto& o2 = tr.next_local_obs.at(i);
                if(static_cast<Eigen::Index>(o.size()) != obs_dim || static_cast<Eigen::Index>(o2.size()) != obs_dim) {
                    throw DimensionError("reward model: local observation size mismatch for agent " + std::to_string(i));
                }
                encode_action(spaces_[i], tr.actions.at(i), enc);
                xq.col(c).head(obs_dim) = Eigen::Map<const Vector>(o.data(), obs_dim);
                xq.col(c).tail(act_dim) = Eigen::Map<const Vector>(enc.data(), act_dim);
                xv_next.col(c) = Eigen::Map<const Vector>(o2.data(), obs_dim);
                if(need_current_v) {
                    xv.col(c) = Eigen::Map<const Vector>(o.data(), obs_dim);
                }
            }
            const auto row = static_cast<Eigen::Index>(i);
            ev.q.row(row) = q_[i].forward_batch(xq, ev.q_tape[i]).row(0);
            ev.v_next.row(row) = v_[i].forward_batch(xv_next, ev.v_next_tape[i]).row(0).cwiseProduct(ev.not_done.transpose());
            if(need_current_v) {
                ev.v.row(row) = v_[i].forward_batch(xv, ev.v_tape[i]).row(0);
            }
        }
        return ev;
    }

    /// Global implicit rewards for an evaluated batch.
    [[nodiscard]] Vector global_rewards(const Eval& ev) const
    {
        Vector r = Vector::Constant(ev.q.cols(), (1.0 - gamma_) * mixer_.bias());
        for(std::size_t i = 0; i < agents(); ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            r += mixer_.weight(i) * (ev.q.row(row) - gamma_ * ev.v_next.row(row)).transpose();
        }
        return r;
    }

    [[nodiscard]] ImplicitRewards implicit_rewards(const Trajectory& traj) const
    {
        std::vector<const Transition*> trs;
        for(const auto& tr : traj.transitions) {
            trs.push_back(&tr);
        }
        const Eval ev = evaluate(trs, false);
        return {global_rewards(ev), ev.q - gamma_ * ev.v_next};
    }

    /**
     * Accumulates gradients given dL/dR_t for every transition of `ev` (R = global implicit reward).
     * Touches q, v (through V_tot(s')) and the mixer.
     */
    void backward_global(const Eval& ev, const Vector& d_reward, RewardModelGradient& grad) const
    {
        for(std::size_t i = 0; i < agents(); ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            const double w = mixer_.weight(i);
            const Matrix up_q = w * d_reward.transpose();
            q_[i].backward(ev.q_tape[i], up_q, grad.q[i]);
            const Matrix up_v = (-gamma_ * w) * d_reward.transpose().cwiseProduct(ev.not_done.transpose());
            v_[i].backward(ev.v_next_tape[i], up_v, grad.v[i]);
            const double dw = d_reward.dot((ev.q.row(row) - gamma_ * ev.v_next.row(row)).transpose());
            grad.mixer.values[i] += dw * mixer_.weight_slope(i);
        }
        grad.mixer.values[agents()] += (1.0 - gamma_) * d_reward.sum();
    }

    /**
     * Mean over pairs of  -log sigmoid(S(winner) - S(loser)) + lambda sum_{t in both} (gamma^t R_t)^2,
     * with S(sigma) = sum_t gamma^t R_t. Pass grad = nullptr to only evaluate.
     */
    LossValue preference_loss(
        const std::vector<PreferencePair>& pairs, const PhiRegularizer& reg, RewardModelGradient* grad) const
    {
        if(pairs.empty()) {
            return {};
        }
        std::unordered_map<const Trajectory*, std::size_t> slot;
        std::vector<const Trajectory*> trajs;
        auto index_of = [&](const TrajectoryRef& ref) {
            if(!ref) {
                throw PreconditionError("preference_loss: pair references a missing trajectory");
            }
            auto [it, fresh] = slot.try_emplace(ref.get(), trajs.size());
            if(fresh) {
                trajs.push_back(ref.get());
            }
            return it->second;
        };
        std::vector<std::pair<std::size_t, std::size_t>> idx;
        idx.reserve(pairs.size());
        for(const auto& p : pairs) {
            idx.emplace_back(index_of(p.winner), index_of(p.loser));
        }
        std::vector<const Transition*> flat;
        std::vector<std::size_t> start(trajs.size() + 1, 0);
        for(std::size_t k = 0; k < trajs.size(); ++k) {
            start[k] = flat.size();
            for(const auto& tr : trajs[k]->transitions) {
                flat.push_back(&tr);
            }
        }
        start[trajs.size()] = flat.size();
        const Eval ev = evaluate(flat, false);
        const Vector r = global_rewards(ev);
        Vector disc(r.size());
        for(std::size_t c = 0; c < flat.size(); ++c) {
            disc(static_cast<Eigen::Index>(c)) = std::pow(gamma_, flat[c]->t);
        }
        std::vector<double> score(trajs.size(), 0.0), reg_term(trajs.size(), 0.0);
        for(std::size_t k = 0; k < trajs.size(); ++k) {
            for(std::size_t c = start[k]; c < start[k + 1]; ++c) {
                const auto e = static_cast<Eigen::Index>(c);
                score[k] += disc(e) * r(e);
                reg_term[k] += (disc(e) * r(e)) * (disc(e) * r(e));
            }
        }
        const double inv_p = 1.0 / static_cast<double>(pairs.size());
        std::vector<double> d_score(trajs.size(), 0.0), multiplicity(trajs.size(), 0.0);
        double loss = 0.0;
        for(const auto& [w, l] : idx) {
            const double delta = score[w] - score[l];
            loss -= log_logistic(delta);
            loss += reg.lambda * (reg_term[w] + reg_term[l]);
            const double d_delta = -logistic(-delta) * inv_p;
            d_score[w] += d_delta;
            d_score[l] -= d_delta;
            multiplicity[w] += inv_p;
            multiplicity[l] += inv_p;
        }
        loss *= inv_p;
        if(grad != nullptr) {
            Vector d_r(r.size());
            for(std::size_t k = 0; k < trajs.size(); ++k) {
                for(std::size_t c = start[k]; c < start[k + 1]; ++c) {
                    const auto e = static_cast<Eigen::Index>(c);
                    d_r(e) = d_score[k] * disc(e) + multiplicity[k] * 2.0 * reg.lambda * disc(e) * disc(e) * r(e);
                }
            }
            backward_global(ev, d_r, *grad);
        }
        return {loss, 0};
    }

    /**
     * Mean of exp(d) - d - 1 with d = (M_w[q](s, a) - M_w[v](s)) / beta + offset. Gradients flow
     * to the local v networks only. A nonzero offset of ln|A| re-centres the fixed point on the
     * log-sum-exp when joint actions are sampled uniformly.
     */
    LossValue extreme_v_loss(std::span<const Transition* const> trs, RewardModelGradient* grad, double offset = 0.0) const
    {
        if(trs.empty()) {
            throw PreconditionError("extreme_v_loss needs at least one transition");
        }
        const Eval ev = evaluate(trs, true);
        const auto N = ev.q.cols();
        Vector d = Vector::Constant(N, offset);
        for(std::size_t i = 0; i < agents(); ++i) {
            const auto row = static_cast<Eigen::Index>(i);
            d += (mixer_.weight(i) / beta_) * (ev.q.row(row) - ev.v.row(row)).transpose();
        }
        LossValue out;
        Vector slope(N);
        for(Eigen::Index c = 0; c < N; ++c) {
            double arg = d(c);
            if(arg > 50.0) {
                arg = 50.0;
                ++out.saturated;
            }
            const double e = std::exp(arg);
            out.loss += e - d(c) - 1.0;
            slope(c) = (e - 1.0) / static_cast<double>(N);
        }
        out.loss /= static_cast<double>(N);
        if(grad != nullptr) {
            for(std::size_t i = 0; i < agents(); ++i) {
                const Matrix up = (-mixer_.weight(i) / beta_) * slope.transpose();
                v_[i].backward(ev.v_tape[i], up, grad->v[i]);
            }
        }
        return out;
    }

    [[nodiscard]] std::vector<NamedBlock> named_blocks(const std::string& prefix = "reward") const
    {
        std::vector<NamedBlock> out;
        for(std::size_t i = 0; i < agents(); ++i) {
            out.push_back({prefix + ".q" + std::to_string(i), q_[i].parameters()});
            out.push_back({prefix + ".v" + std::to_string(i), v_[i].parameters()});
        }
        out.push_back({prefix + ".mixer", mixer_.parameters()});
        return out;
    }

    void load_blocks(const std::vector<NamedBlock>& blocks, const std::string& prefix = "reward")
    {
        auto assign = [&](ParameterBlock& dst, const std::string& name) {
            const auto& src = find_block(blocks, name);
            if(!src.same_layout(dst)) {
                throw CheckpointError("block '" + name + "' does not match the model architecture");
            }
            dst = src;
        };
        for(std::size_t i = 0; i < agents(); ++i) {
            assign(q_[i].parameters(), prefix + ".q" + std::to_string(i));
            assign(v_[i].parameters(), prefix + ".v" + std::to_string(i));
        }
        assign(mixer_.parameters(), prefix + ".mixer");
    }

    /// Replaces the mixer (e.g. with fixed weights for identity checks).
    void set_mixer(LinearMixer m)
    {
        if(m.agents() != agents()) {
            throw DimensionError("set_mixer: agent count mismatch");
        }
        mixer_ = std::move(m);
    }

  private:
    void check_agents(std::size_t n) const
    {
        if(n != agents()) {
            throw DimensionError("reward model expects " + std::to_string(agents()) + " local observations");
        }
    }

    std::vector<ActionSpace> spaces_;
    std::vector<Mlp> q_;
    std::vector<Mlp> v_;
    LinearMixer mixer_;
    double beta_ = 1.0;
    double gamma_ = 0.99;
};

struct RewardTrainConfig {
    double lr = 5e-4;
    double v_lr = 5e-4;
    std::size_t pair_batch = 64;
    std::size_t transition_batch = 256;
    PhiRegularizer regularizer{};
    double grad_clip = 10.0;
    double extreme_v_offset = 0.0;
    double divergence_threshold = 1e6;
};

struct RewardTrainTrace {
    std::vector<double> preference_loss;
    std::vector<double> extreme_v_loss;
    std::size_t saturated = 0;

    [[nodiscard]] double last_preference_loss() const { return preference_loss.empty() ? 0.0 : preference_loss.back(); }
    [[nodiscard]] double last_extreme_v_loss() const { return extreme_v_loss.empty() ? 0.0 : extreme_v_loss.back(); }
};

/// Partial Fisher-Yates: `take` distinct indices out of [0, count).
[[nodiscard]] inline std::vector<std::size_t> sample_indices(std::size_t count, std::size_t take, Rng& rng)
{
    std::vector<std::size_t> idx(count);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    take = std::min(take, count);
    for(std::size_t k = 0; k < take; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, count - 1);
        std::swap(idx[k], idx[pick(rng)]);
    }
    idx.resize(take);
    return idx;
}

/**
 * Alternating optimisation of the implicit reward model: each gradient step first takes one
 * preference-loss step on (q, mixer), then one extreme-V step on v. Optimizer state persists
 * across calls.
 */
class RewardModelTrainer {
  public:
    RewardModelTrainer(ImplicitRewardModel& model, RewardTrainConfig cfg) : model_(model), cfg_(cfg) {}

    [[nodiscard]] const RewardTrainConfig& config() const noexcept { return cfg_; }

    void set_learning_rates(double lr, double v_lr)
    {
        cfg_.lr = lr;
        cfg_.v_lr = v_lr;
    }

    RewardTrainTrace train(const std::vector<PreferencePair>& pairs, std::span<const Transition* const> transitions,
                           std::size_t steps, Rng& rng)
    {
        RewardTrainTrace trace;
        if(steps == 0) {
            return trace;
        }
        if(pairs.empty() || transitions.empty()) {
            throw PreconditionError("train_reward_model needs preference pairs and transitions");
        }
        auto grad = model_.make_gradient();
        for(std::size_t s = 0; s < steps; ++s) {
            grad.zero();
            std::vector<PreferencePair> batch;
            for(auto k : sample_indices(pairs.size(), cfg_.pair_batch, rng)) {
                batch.push_back(pairs[k]);
            }
            const auto pref = model_.preference_loss(batch, cfg_.regularizer, &grad);
            guard(pref.loss, "preference loss", s);
            {
                std::vector<ParameterBlock*> params, grads;
                for(std::size_t i = 0; i < model_.agents(); ++i) {
                    params.push_back(&model_.q_net(i).parameters());
                    grads.push_back(&grad.q[i]);
                }
                params.push_back(&model_.mixer().parameters());
                grads.push_back(&grad.mixer);
                clip_grad_norm(grads, cfg_.grad_clip);
                std::vector<const ParameterBlock*> cgrads(grads.begin(), grads.end());
                q_opt_.step(params, cgrads, cfg_.lr);
            }
            grad.zero();
            std::vector<const Transition*> trs;
            for(auto k : sample_indices(transitions.size(), cfg_.transition_batch, rng)) {
                trs.push_back(transitions[k]);
            }
            const auto ev = model_.extreme_v_loss(trs, &grad, cfg_.extreme_v_offset);
            guard(ev.loss, "extreme-V loss", s);
            {
                std::vector<ParameterBlock*> params, grads;
                for(std::size_t i = 0; i < model_.agents(); ++i) {
                    params.push_back(&model_.v_net(i).parameters());
                    grads.push_back(&grad.v[i]);
                }
                clip_grad_norm(grads, cfg_.grad_clip);
                std::vector<const ParameterBlock*> cgrads(grads.begin(), grads.end());
                v_opt_.step(params, cgrads, cfg_.v_lr);
            }
            trace.preference_loss.push_back(pref.loss);
            trace.extreme_v_loss.push_back(ev.loss);
            trace.saturated += ev.saturated;
        }
        return trace;
    }

    /// Extreme-V steps alone (q and mixer held fixed), over the full transition list each step.
    std::vector<double> fit_values(std::span<const Transition* const> transitions, std::size_t steps)
    {
        std::vector<double> losses;
        auto grad = model_.make_gradient();
        for(std::size_t s = 0; s < steps; ++s) {
            grad.zero();
            const auto ev = model_.extreme_v_loss(transitions, &grad, cfg_.extreme_v_offset);
            guard(ev.loss, "extreme-V loss", s);
            std::vector<ParameterBlock*> params, grads;
            for(std::size_t i = 0; i < model_.agents(); ++i) {
                params.push_back(&model_.v_net(i).parameters());
                grads.push_back(&grad.v[i]);
            }
            clip_grad_norm(grads, cfg_.grad_clip);
            std::vector<const ParameterBlock*> cgrads(grads.begin(), grads.end());
            v_opt_.step(params, cgrads, cfg_.v_lr);
            losses.push_back(ev.loss);
        }
        return losses;
    }

  private:
    void guard(double loss, const char* what, std::size_t step) const
    {
        if(!std::isfinite(loss) || loss > cfg_.divergence_threshold) {
            throw DivergenceError(std::string("reward model diverged: ") + what + " = " + std::to_string(loss)
                                  + " at gradient step " + std::to_string(step));
        }
    }

    ImplicitRewardModel& model_;
    RewardTrainConfig cfg_;
    AdamOptimizer q_opt_;
    AdamOptimizer v_opt_;
};

}  // namespace imap

#endif  // IMAP_REWARD_MODEL_HPP

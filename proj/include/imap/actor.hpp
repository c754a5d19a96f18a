#ifndef IMAP_ACTOR_HPP
#define IMAP_ACTOR_HPP

#include <algorithm>
#include <cmath>
#include <numbers>
#include <span>
#include <vector>

#include "imap/env.hpp"
#include "imap/nn.hpp"

namespace imap {

inline constexpr double log_std_min = -5.0;
inline constexpr double log_std_max = 2.0;

/// Gradient storage matching Actor::parameter_blocks().
struct ActorGradient {
    ParameterBlock net;
    ParameterBlock log_std;  // empty for discrete heads

    void zero()
    {
        net.zero();
        log_std.zero();
    }

    [[nodiscard]] std::vector<ParameterBlock*> blocks()
    {
        std::vector<ParameterBlock*> out{&net};
        if(log_std.size() > 0) {
            out.push_back(&log_std);
        }
        return out;
    }
};

/// Batched evaluation of log-probabilities and entropies; keeps what backward() needs.
struct PolicyEval {
    Matrix output;  // logits (discrete) or means (continuous), one column per sample
    Matrix probs;   // softmax(logits) for discrete heads
    Matrix actions; // encoded actions (one-hot or raw vector)
    Vector log_prob;
    Vector entropy;
    Tape tape;
};

/**
 * Decentralized policy pi_i(a_i | o_i) over one agent's local observation.
 *
 * Discrete spaces use a softmax over MLP logits; continuous spaces use a diagonal Gaussian whose
 * mean is the MLP output and whose state-independent log-std is a learned vector clamped to
 * [-5, 2].
 */
class Actor {
  public:
    Actor() = default;

    Actor(std::size_t obs_dim, ActionSpace space, const std::vector<std::size_t>& hidden, Rng& rng)
        : space_(space)
    {
        std::vector<std::size_t> sizes{obs_dim};
        sizes.insert(sizes.end(), hidden.begin(), hidden.end());
        sizes.push_back(action_encoding_size(space_));
        if(sizes.back() == 0) {
            throw DimensionError("Actor: action space is empty");
        }
        net_ = Mlp::random(sizes, rng, 0.01);
        if(!is_discrete(space_)) {
            log_std_ = ParameterBlock({{sizes.back(), 1}});
        }
    }

    [[nodiscard]] const ActionSpace& space() const noexcept { return space_; }
    [[nodiscard]] bool discrete() const noexcept { return is_discrete(space_); }
    [[nodiscard]] Mlp& net() noexcept { return net_; }
    [[nodiscard]] const Mlp& net() const noexcept { return net_; }
    [[nodiscard]] ParameterBlock& log_std() noexcept { return log_std_; }
    [[nodiscard]] const ParameterBlock& log_std() const noexcept { return log_std_; }
    [[nodiscard]] std::size_t obs_dim() const noexcept { return net_.input_size(); }

    [[nodiscard]] std::vector<ParameterBlock*> parameter_blocks()
    {
        std::vector<ParameterBlock*> out{&net_.parameters()};
        if(!discrete()) {
            out.push_back(&log_std_);
        }
        return out;
    }

    [[nodiscard]] ActorGradient make_gradient() const
    {
        return {ParameterBlock::zeros_like(net_.parameters()), ParameterBlock::zeros_like(log_std_)};
    }

    [[nodiscard]] std::size_t action_dim() const noexcept { return net_.output_size(); }

    /// Action probabilities for a discrete head.
    [[nodiscard]] Vector probabilities(std::span<const double> obs) const
    {
        if(!discrete()) {
            throw PreconditionError("Actor::probabilities requires a discrete action space");
        }
        return softmax(net_.forward(obs));
    }

    [[nodiscard]] double log_prob(std::span<const double> obs, const Action& action) const
    {
        Matrix o = Eigen::Map<const Matrix>(obs.data(), static_cast<Eigen::Index>(obs.size()), 1);
        return evaluate(o, {action}).log_prob(0);
    }

    [[nodiscard]] double entropy(std::span<const double> obs) const
    {
        if(discrete()) {
            return entropy_of(probabilities(obs));
        }
        return gaussian_entropy();
    }

    /// Draws an action and returns it with its log-probability.
    [[nodiscard]] std::pair<Action, double> sample(std::span<const double> obs, Rng& rng) const
    {
        const Vector out = net_.forward(obs);
        if(discrete()) {
            const Vector p = softmax(out);
            const auto a = static_cast<int>(sample_categorical(std::span<const double>(p.data(), p.size()), rng));
            return {Action{a}, std::log(p(a))};
        }
        std::normal_distribution<double> normal(0.0, 1.0);
        std::vector<double> a(static_cast<std::size_t>(out.size()));
        double lp = 0.0;
        for(Eigen::Index k = 0; k < out.size(); ++k) {
            const double ls = clamped_log_std(static_cast<std::size_t>(k));
            const double eps = normal(rng);
            a[static_cast<std::size_t>(k)] = out(k) + std::exp(ls) * eps;
            lp += -0.5 * eps * eps - ls - 0.5 * std::log(2.0 * std::numbers::pi);
        }
        return {Action{std::move(a)}, lp};
    }

    /// Most likely action (argmax or Gaussian mean).
    [[nodiscard]] Action mode(std::span<const double> obs) const
    {
        const Vector out = net_.forward(obs);
        if(discrete()) {
            Eigen::Index best = 0;
            out.maxCoeff(&best);
            return Action{static_cast<int>(best)};
        }
        return Action{std::vector<double>(out.data(), out.data() + out.size())};
    }

    /// Log-probabilities and entropies for a batch (observations as columns).
    [[nodiscard]] PolicyEval evaluate(const Matrix& obs, const std::vector<Action>& actions) const
    {
        if(static_cast<std::size_t>(obs.cols()) != actions.size()) {
            throw DimensionError("Actor::evaluate: observation and action counts differ");
        }
        PolicyEval ev;
        ev.output = net_.forward_batch(obs, ev.tape);
        const auto n = obs.cols();
        const auto k = ev.output.rows();
        ev.actions = Matrix::Zero(k, n);
        for(Eigen::Index c = 0; c < n; ++c) {
            std::vector<double> enc(static_cast<std::size_t>(k));
            encode_action(space_, actions[static_cast<std::size_t>(c)], enc);
            ev.actions.col(c) = Eigen::Map<const Vector>(enc.data(), k);
        }
        ev.log_prob.resize(n);
        ev.entropy.resize(n);
        if(discrete()) {
            ev.probs.resize(k, n);
            for(Eigen::Index c = 0; c < n; ++c) {
                const Vector z = ev.output.col(c);
                const double top = z.maxCoeff();
                const double lse = top + std::log((z.array() - top).exp().sum());
                ev.probs.col(c) = (z.array() - lse).exp().matrix();
                Eigen::Index a = 0;
                ev.actions.col(c).maxCoeff(&a);
                ev.log_prob(c) = z(a) - lse;
                ev.entropy(c) = entropy_of(ev.probs.col(c));
            }
        } else {
            const double h = gaussian_entropy();
            for(Eigen::Index c = 0; c < n; ++c) {
                double lp = 0.0;
                for(Eigen::Index j = 0; j < k; ++j) {
                    const double ls = clamped_log_std(static_cast<std::size_t>(j));
                    const double u = (ev.actions(j, c) - ev.output(j, c)) / std::exp(ls);
                    lp += -0.5 * u * u - ls - 0.5 * std::log(2.0 * std::numbers::pi);
                }
                ev.log_prob(c) = lp;
                ev.entropy(c) = h;
            }
        }
        return ev;
    }

    /// Accumulates gradients of sum_c (d_logp(c) * log_prob(c) + d_ent(c) * entropy(c)).
    void backward(const PolicyEval& ev, const Vector& d_logp, const Vector& d_ent, ActorGradient& grad) const
    {
        const auto n = ev.output.cols();
        const auto k = ev.output.rows();
        if(d_logp.size() != n || d_ent.size() != n) {
            throw DimensionError("Actor::backward: coefficient vectors do not match the batch");
        }
        Matrix upstream(k, n);
        if(discrete()) {
            for(Eigen::Index c = 0; c < n; ++c) {
                const Vector p = ev.probs.col(c);
                const Vector logp = p.array().max(1e-300).log().matrix();
                const double h = ev.entropy(c);
                // d log p_a / dz = onehot(a) - p ;  dH/dz_j = -p_j (log p_j + H)
                upstream.col(c) = d_logp(c) * (ev.actions.col(c) - p)
                                  - d_ent(c) * (p.array() * (logp.array() + h)).matrix();
            }
        } else {
            for(Eigen::Index c = 0; c < n; ++c) {
                for(Eigen::Index j = 0; j < k; ++j) {
                    const double ls = clamped_log_std(static_cast<std::size_t>(j));
                    const double var = std::exp(2.0 * ls);
                    const double diff = ev.actions(j, c) - ev.output(j, c);
                    upstream(j, c) = d_logp(c) * diff / var;
                    if(log_std_active(static_cast<std::size_t>(j))) {
                        // d log p / d ls = u^2 - 1 ;  dH / d ls = 1
                        grad.log_std.values[static_cast<std::size_t>(j)] += d_logp(c) * (diff * diff / var - 1.0) + d_ent(c);
                    }
                }
            }
        }
        net_.backward(ev.tape, upstream, grad.net);
    }

  private:
    [[nodiscard]] static Vector softmax(const Vector& z)
    {
        const double top = z.maxCoeff();
        Vector e = (z.array() - top).exp().matrix();
        return e / e.sum();
    }

    [[nodiscard]] static double entropy_of(const Vector& p)
    {
        double h = 0.0;
        for(Eigen::Index k = 0; k < p.size(); ++k) {
            if(p(k) > 0.0) {
                h -= p(k) * std::log(p(k));
            }
        }
        return h;
    }

    [[nodiscard]] double clamped_log_std(std::size_t j) const
    {
        return std::clamp(log_std_.values[j], log_std_min, log_std_max);
    }

    [[nodiscard]] bool log_std_active(std::size_t j) const
    {
        return log_std_.values[j] > log_std_min && log_std_.values[j] < log_std_max;
    }

    [[nodiscard]] double gaussian_entropy() const
    {
        double h = 0.0;
        for(std::size_t j = 0; j < log_std_.size(); ++j) {
            h += clamped_log_std(j) + 0.5 * (1.0 + std::log(2.0 * std::numbers::pi));
        }
        return h;
    }

    ActionSpace space_{DiscreteSpace{1}};
    Mlp net_;
    ParameterBlock log_std_;
};

}  // namespace imap

#endif  // IMAP_ACTOR_HPP

#ifndef IMAP_ORACLE_HPP
#define IMAP_ORACLE_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "imap/envs/tabular_mdp.hpp"
#include "imap/policy.hpp"
#include "imap/preference.hpp"
#include "imap/reward_model.hpp"

namespace imap {

/// J_R(pi) = sum over trajectories of P_pi(sigma) R(sigma), with R given per step.
[[nodiscard]] inline double policy_value_exact(const TabularMDP& mdp, const JointPolicyTable& policy,
                                               const TabularReward& reward)
{
    double total = 0.0;
    for(const auto& traj : enumerate_trajectories(mdp, policy)) {
        total += traj.probability * trajectory_return(mdp, traj, reward);
    }
    return total;
}

[[nodiscard]] inline double policy_value_exact(const TabularMDP& mdp, const JointPolicyTable& policy)
{
    return policy_value_exact(mdp, policy, [&](std::size_t s, int a, int) { return mdp.r(s, a); });
}

/// Every deterministic stationary joint policy, one joint action per state (J^S of them).
[[nodiscard]] inline std::vector<std::vector<int>> deterministic_policies(const TabularMDP& mdp, std::size_t limit = 1'000'000)
{
    const auto J = static_cast<std::size_t>(mdp.joint_actions());
    double count = std::pow(static_cast<double>(J), static_cast<double>(mdp.n_states));
    if(count > static_cast<double>(limit)) {
        throw PreconditionError("too many deterministic policies to enumerate");
    }
    std::vector<std::vector<int>> out;
    std::vector<int> choice(mdp.n_states, 0);
    while(true) {
        out.push_back(choice);
        std::size_t k = 0;
        while(k < choice.size() && ++choice[k] == static_cast<int>(J)) {
            choice[k] = 0;
            ++k;
        }
        if(k == choice.size()) {
            break;
        }
    }
    return out;
}

struct Prop1Report {
    double shift = 0.0;
    std::size_t policies = 0;
    std::vector<std::size_t> optimal_original;
    std::vector<std::size_t> optimal_shifted;
    double max_value_shift_error = 0.0;  // max over policies of |J'(pi) - J(pi) - c|
    bool identical = false;
};

/**
 * Shifts every trajectory return by c (a bonus c / gamma^(H-1) on the final step), enumerates all
 * deterministic joint policies and compares the optimal sets under the original and shifted rewards.
 */
[[nodiscard]] inline Prop1Report check_prop1(const TabularMDP& mdp, double c)
{
    Prop1Report rep;
    rep.shift = c;
    const int last = mdp.horizon - 1;
    const double bonus = c / std::pow(mdp.gamma, last);
    const TabularReward original = [&](std::size_t s, int a, int) { return mdp.r(s, a); };
    const TabularReward shifted = [&](std::size_t s, int a, int t) { return mdp.r(s, a) + (t == last ? bonus : 0.0); };
    const auto policies = deterministic_policies(mdp);
    rep.policies = policies.size();
    std::vector<double> j0(policies.size()), j1(policies.size());
    for(std::size_t k = 0; k < policies.size(); ++k) {
        const auto pol = JointPolicyTable::deterministic(mdp, policies[k]);
        const auto trajs = enumerate_trajectories(mdp, pol);
        double a = 0.0, b = 0.0;
        for(const auto& tr : trajs) {
            a += tr.probability * trajectory_return(mdp, tr, original);
            b += tr.probability * trajectory_return(mdp, tr, shifted);
        }
        j0[k] = a;
        j1[k] = b;
        rep.max_value_shift_error = std::max(rep.max_value_shift_error, std::abs(b - a - c));
    }
    auto argmax_set = [](const std::vector<double>& j, double tol) {
        const double best = *std::max_element(j.begin(), j.end());
        std::vector<std::size_t> out;
        for(std::size_t k = 0; k < j.size(); ++k) {
            if(j[k] >= best - tol) {
                out.push_back(k);
            }
        }
        return out;
    };
    const double tol = 1e-9 * std::max(1.0, std::abs(c));
    rep.optimal_original = argmax_set(j0, tol);
    rep.optimal_shifted = argmax_set(j1, tol);
    rep.identical = rep.optimal_original == rep.optimal_shifted;
    return rep;
}

/// Every (state, step) pair of a TabularEnv with t < horizon, as transitions for each joint action.
[[nodiscard]] inline std::vector<Transition> enumerate_state_actions(const TabularEnv& env)
{
    const auto& mdp = env.mdp();
    std::vector<Transition> out;
    for(int t = 0; t < mdp.horizon; ++t) {
        for(std::size_t s = 0; s < mdp.n_states; ++s) {
            for(int a = 0; a < mdp.joint_actions(); ++a) {
                std::size_t next = 0;
                for(std::size_t s2 = 0; s2 < mdp.n_states; ++s2) {
                    if(mdp.p(s, a, s2) > 0.0) {
                        next = s2;
                        break;
                    }
                }
                out.push_back(env.make_transition(s, a, next, t));
            }
        }
    }
    return out;
}

/// max over (s, t) of |V_tot(s) - beta ln sum_a exp(Q_tot(s, a) / beta)|.
[[nodiscard]] inline double soft_value_oracle(const ImplicitRewardModel& model, const TabularEnv& env)
{
    const auto& mdp = env.mdp();
    double worst = 0.0;
    for(int t = 0; t < mdp.horizon; ++t) {
        for(std::size_t s = 0; s < mdp.n_states; ++s) {
            const auto obs = env.observation(s, t);
            std::vector<double> q;
            for(int a = 0; a < mdp.joint_actions(); ++a) {
                const auto [a1, a2] = mdp.split(a);
                q.push_back(model.q_tot(obs.local, {Action{a1}, Action{a2}}));
            }
            worst = std::max(worst, std::abs(model.v_tot(obs.local) - soft_maximum(q, model.beta())));
        }
    }
    return worst;
}

struct SoftValueReport {
    double deviation_before = 0.0;
    double deviation_after = 0.0;
    double final_loss = 0.0;
    std::size_t steps = 0;
    double offset = 0.0;
};

/**
 * Trains only the local v networks with the extreme-V loss over uniformly enumerated joint actions
 * of every (state, step) and reports the soft-value deviation. Local nets are tables (no hidden
 * layer) over the one-hot (state, step) code.
 */
[[nodiscard]] inline SoftValueReport run_soft_value_harness(const TabularMDP& mdp, std::uint64_t seed, std::size_t steps,
                                                            double beta, double offset, double lr = 0.05)
{
    TabularEnv env(mdp);
    Rng rng(derive_seed(seed, 0x50F7));
    ImplicitRewardModel model(env.spec(), {}, beta, mdp.gamma, rng);
    for(std::size_t i = 0; i < model.agents(); ++i) {
        for(auto& x : model.q_net(i).parameters().values) {
            x = 2.0 * uniform01(rng) - 1.0;
        }
    }
    model.set_mixer(LinearMixer::with_weights({0.6, 1.4}, 0.25));
    const auto trs = enumerate_state_actions(env);
    std::vector<const Transition*> ptrs;
    for(const auto& tr : trs) {
        ptrs.push_back(&tr);
    }
    SoftValueReport rep;
    rep.steps = steps;
    rep.offset = offset;
    rep.deviation_before = soft_value_oracle(model, env);
    RewardTrainConfig cfg;
    cfg.v_lr = lr;
    cfg.extreme_v_offset = offset;
    cfg.grad_clip = 0.0;
    RewardModelTrainer trainer(model, cfg);
    const auto losses = trainer.fit_values(ptrs, steps);
    rep.final_loss = losses.empty() ? 0.0 : losses.back();
    rep.deviation_after = soft_value_oracle(model, env);
    return rep;
}

struct Theorem1Config {
    std::size_t n_pairs = 10'000;
    std::size_t heldout_pairs = 4'000;
    std::size_t steps = 3'000;
    std::size_t pair_batch = 256;
    std::size_t transition_batch = 256;
    double lr = 3e-3;
    std::vector<double> lr_phases{1.0};  // equal-length phases, multipliers on lr
    double lambda_reg = 1e-4;
    double beta = 1.0;
    std::vector<std::size_t> hidden{32};
    std::uint64_t seed = 0;
};

struct Theorem1Report {
    std::size_t n_pairs = 0;
    bool insufficient_data = false;
    bool failed = false;
    std::string failure;
    std::vector<double> learned;     // S(sigma) per enumerated trajectory
    std::vector<double> truth;       // R*(sigma)
    double offset = 0.0;             // c = mean(S - R*)
    double max_deviation = 0.0;      // max |S - R* - c|
    double return_range = 0.0;
    double deviation_ratio = 0.0;
    double heldout_accuracy = 0.0;
    double bayes_rate = 0.0;
};

/**
 * Trains an implicit reward model on BT-labelled pairs of enumerated trajectories (uniform joint
 * policy) and measures how far the learned returns S(sigma) are from R*(sigma) up to a constant.
 */
[[nodiscard]] inline Theorem1Report run_theorem1_harness(const TabularMDP& mdp, const Theorem1Config& cfg)
{
    Theorem1Report rep;
    rep.n_pairs = cfg.n_pairs;
    TabularEnv env(mdp);
    const auto enumerated = enumerate_trajectories(mdp, JointPolicyTable::uniform(mdp));
    std::vector<TrajectoryRef> trajs;
    for(const auto& e : enumerated) {
        trajs.push_back(std::make_shared<const Trajectory>(env.make_trajectory(e)));
        rep.truth.push_back(e.ret);
    }
    const auto [lo, hi] = std::minmax_element(rep.truth.begin(), rep.truth.end());
    rep.return_range = *hi - *lo;
    if(cfg.n_pairs == 0) {
        rep.insufficient_data = true;
        return rep;
    }
    Rng rng(derive_seed(cfg.seed, 0x7E01));
    auto draw_pairs = [&](std::size_t count, std::uint64_t label_seed) {
        std::vector<std::pair<TrajectoryRef, TrajectoryRef>> raw;
        std::uniform_int_distribution<std::size_t> pick(0, trajs.size() - 1);
        while(raw.size() < count) {
            const auto a = pick(rng);
            const auto b = pick(rng);
            if(a != b) {
                raw.emplace_back(trajs[a], trajs[b]);
            }
        }
        return std::make_pair(raw, simulate_bt_labels(raw, label_seed));
    };
    const auto train = draw_pairs(cfg.n_pairs, derive_seed(cfg.seed, 1)).second;
    const auto [held_raw, held] = draw_pairs(cfg.heldout_pairs, derive_seed(cfg.seed, 2));

    ImplicitRewardModel model(env.spec(), cfg.hidden, cfg.beta, mdp.gamma, rng);
    std::vector<const Transition*> transitions;
    for(const auto& t : trajs) {
        for(const auto& tr : t->transitions) {
            transitions.push_back(&tr);
        }
    }
    RewardTrainConfig tc;
    tc.lr = cfg.lr;
    tc.v_lr = cfg.lr;
    tc.pair_batch = cfg.pair_batch;
    tc.transition_batch = cfg.transition_batch;
    tc.regularizer.lambda = cfg.lambda_reg;
    RewardModelTrainer trainer(model, tc);
    try {
        const std::size_t phases = std::max<std::size_t>(cfg.lr_phases.size(), 1);
        for(std::size_t p = 0; p < phases; ++p) {
            const double scale = cfg.lr_phases.empty() ? 1.0 : cfg.lr_phases[p];
            trainer.set_learning_rates(cfg.lr * scale, cfg.lr * scale);
            const std::size_t begin = cfg.steps * p / phases;
            const std::size_t end = cfg.steps * (p + 1) / phases;
            (void)trainer.train(train, transitions, end - begin, rng);
        }
    } catch(const Error& ex) {
        rep.failed = true;
        rep.failure = ex.what();
        return rep;
    }
    auto score = [&](const Trajectory& t) {
        const auto r = model.implicit_rewards(t);
        double s = 0.0;
        for(std::size_t k = 0; k < t.length(); ++k) {
            s += std::pow(mdp.gamma, t.transitions[k].t) * r.global(static_cast<Eigen::Index>(k));
        }
        return s;
    };
    for(const auto& t : trajs) {
        rep.learned.push_back(score(*t));
    }
    double c = 0.0;
    for(std::size_t k = 0; k < trajs.size(); ++k) {
        c += rep.learned[k] - rep.truth[k];
    }
    rep.offset = c / static_cast<double>(trajs.size());
    for(std::size_t k = 0; k < trajs.size(); ++k) {
        rep.max_deviation = std::max(rep.max_deviation, std::abs(rep.learned[k] - rep.truth[k] - rep.offset));
    }
    rep.deviation_ratio = rep.return_range > 0 ? rep.max_deviation / rep.return_range : 0.0;

    std::size_t correct = 0;
    double bayes = 0.0;
    for(std::size_t k = 0; k < held.size(); ++k) {
        if(score(*held[k].winner) > score(*held[k].loser)) {
            ++correct;
        }
        const double p = logistic(held_raw[k].first->return_value() - held_raw[k].second->return_value());
        bayes += std::max(p, 1.0 - p);
    }
    rep.heldout_accuracy = static_cast<double>(correct) / static_cast<double>(held.size());
    rep.bayes_rate = bayes / static_cast<double>(held.size());
    return rep;
}

struct Prop3HarnessReport {
    double exact_residual = 0.0;
    double exact_score_norm = 0.0;
    std::size_t samples = 0;
    double empirical_residual = 0.0;         // finite-sample residual, cross terms included
    double max_score_z = 0.0;                // max over coordinates of |mean| / standard error
    std::size_t coordinates_outside_3sigma = 0;
};

/**
 * Single-step episodes on a random tabular MDP with a random implicit reward model, critic and
 * factorized softmax policy: the advantages come from the real GAE streams, so local advantages
 * depend only on (s, a_i). Compares the exact expectation (enumeration weights d(s) pi(a|s)) and a
 * Monte-Carlo estimate of the score-function term.
 */
[[nodiscard]] inline Prop3HarnessReport run_prop3_harness(std::uint64_t seed, std::size_t samples)
{
    TabularMDP mdp = TabularMDP::random(seed, 4, 3, 1, 0.9, 2);
    mdp.initial.assign(mdp.n_states, 1.0 / static_cast<double>(mdp.n_states));
    TabularEnv env(mdp);
    Rng rng(derive_seed(seed, 0x9A3));
    ImplicitRewardModel model(env.spec(), {8}, 1.0, mdp.gamma, rng);
    model.set_mixer(LinearMixer::with_weights({0.7, 1.3}, 0.4));
    std::vector<std::size_t> critic_sizes{env.spec().joint_obs_dim, 8, 1};
    const Mlp critic = Mlp::random(critic_sizes, rng);
    TabularSoftmaxPolicy pol{mdp.n_states, {mdp.actions[0], mdp.actions[1]}, {}};
    for(int m : pol.actions) {
        std::vector<double> z(mdp.n_states * static_cast<std::size_t>(m));
        for(auto& x : z) {
            x = 2.0 * uniform01(rng) - 1.0;
        }
        pol.logits.push_back(std::move(z));
    }
    const auto weights = model.mixer().weights();
    const double constant = (1.0 - mdp.gamma) * model.mixer().bias();

    auto make_sample = [&](std::size_t s, int a, double w) {
        Trajectory traj;
        traj.transitions.push_back(env.make_transition(s, a, 0, 0));
        traj.episodic_return = 0.0;
        const auto r = model.implicit_rewards(traj);
        const auto cv = critic_values(critic, traj);
        const auto g = gae_global(cv, r.global, mdp.gamma, 0.95);
        const Matrix loc = gae_local(r.local, weights, cv, mdp.gamma, 0.95);
        const auto [a1, a2] = mdp.split(a);
        return Prop3Sample{s, {a1, a2}, w, g.advantages(0), {loc(0, 0), loc(1, 0)}, constant};
    };

    Prop3HarnessReport rep;
    std::vector<Prop3Sample> exact;
    for(std::size_t s = 0; s < mdp.n_states; ++s) {
        for(int a = 0; a < mdp.joint_actions(); ++a) {
            const auto [a1, a2] = mdp.split(a);
            const double w = mdp.initial[s] * pol.prob(0, s, a1) * pol.prob(1, s, a2);
            exact.push_back(make_sample(s, a, w));
        }
    }
    const auto ex = check_prop3(pol, exact, weights);
    rep.exact_residual = ex.residual;
    rep.exact_score_norm = ex.score_term.norm();

    rep.samples = samples;
    if(samples == 0) {
        return rep;
    }
    Rng mc(derive_seed(seed, 0x3C));
    std::vector<Prop3Sample> drawn;
    drawn.reserve(samples);
    const auto P = static_cast<Eigen::Index>(pol.parameter_count());
    Vector sum = Vector::Zero(P), sum_sq = Vector::Zero(P);
    // memoize per (s, a): every sample with the same (s, a) carries identical advantages
    std::vector<std::optional<Prop3Sample>> cache(mdp.n_states * static_cast<std::size_t>(mdp.joint_actions()));
    for(std::size_t k = 0; k < samples; ++k) {
        const std::size_t s = sample_categorical(mdp.initial, mc);
        std::vector<double> p1(static_cast<std::size_t>(pol.actions[0])), p2(static_cast<std::size_t>(pol.actions[1]));
        for(int a = 0; a < pol.actions[0]; ++a) {
            p1[static_cast<std::size_t>(a)] = pol.prob(0, s, a);
        }
        for(int a = 0; a < pol.actions[1]; ++a) {
            p2[static_cast<std::size_t>(a)] = pol.prob(1, s, a);
        }
        const int a1 = static_cast<int>(sample_categorical(p1, mc));
        const int a2 = static_cast<int>(sample_categorical(p2, mc));
        const int a = mdp.joint_index(a1, a2);
        auto& slot = cache[s * static_cast<std::size_t>(mdp.joint_actions()) + static_cast<std::size_t>(a)];
        if(!slot) {
            slot = make_sample(s, a, 1.0);
        }
        Prop3Sample smp = *slot;
        smp.weight = 1.0 / static_cast<double>(samples);
        const Vector term = constant * pol.score(s, smp.actions);
        sum += term;
        sum_sq += term.cwiseProduct(term);
        drawn.push_back(std::move(smp));
    }
    rep.empirical_residual = check_prop3(pol, drawn, weights).residual;
    const double n = static_cast<double>(samples);
    for(Eigen::Index j = 0; j < P; ++j) {
        const double mean = sum(j) / n;
        const double var = std::max(0.0, sum_sq(j) / n - mean * mean);
        const double se = std::sqrt(var / n);
        const double z = se > 0 ? std::abs(mean) / se : (std::abs(mean) > 0 ? INFINITY : 0.0);
        rep.max_score_z = std::max(rep.max_score_z, z);
        if(z > 3.0) {
            ++rep.coordinates_outside_3sigma;
        }
    }
    return rep;
}

struct GradientCheckResult {
    double max_relative_error = 0.0;
    std::size_t coordinates = 0;
};

/**
 * Central differences of `objective` over every coordinate of `params` versus `analytic`.
 * Relative error = |a - n| / max(|a|, |n|, floor).
 */
[[nodiscard]] inline GradientCheckResult gradient_check(const std::function<double()>& objective, ParameterBlock& params,
                                                        const ParameterBlock& analytic, double h = 1e-5,
                                                        double floor = 1e-6)
{
    if(!params.same_layout(analytic)) {
        throw DimensionError("gradient_check: gradient layout mismatch");
    }
    GradientCheckResult out;
    for(std::size_t k = 0; k < params.size(); ++k) {
        const double keep = params.values[k];
        params.values[k] = keep + h;
        const double up = objective();
        params.values[k] = keep - h;
        const double down = objective();
        params.values[k] = keep;
        const double numeric = (up - down) / (2.0 * h);
        const double a = analytic.values[k];
        const double denom = std::max({std::abs(a), std::abs(numeric), floor});
        out.max_relative_error = std::max(out.max_relative_error, std::abs(a - numeric) / denom);
        ++out.coordinates;
    }
    return out;
}

}  // namespace imap

#endif  // IMAP_ORACLE_HPP

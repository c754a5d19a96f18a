#ifndef IMAP_VERIFY_HPP
#define IMAP_VERIFY_HPP

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "imap/baselines.hpp"
#include "imap/envs/coop_matrix_game.hpp"
#include "imap/envs/grid_gather.hpp"
#include "imap/oracle.hpp"
#include "imap/policy.hpp"
#include "imap/rollout.hpp"

namespace imap {

/// Small random problem shared by the gradient and advantage-identity checks.
struct LossFixture {
    std::unique_ptr<Env> env;
    PolicyBundle bundle;
    ImplicitRewardModel model;
    RolloutBatch batch;
    std::vector<PreferencePair> pairs;
    PpoConfig ppo;

    [[nodiscard]] std::vector<const Transition*> transitions() const
    {
        std::vector<const Transition*> out;
        for(std::size_t k = 0; k < batch.transition_count(); ++k) {
            out.push_back(&batch.transition(k));
        }
        return out;
    }
};

inline void randomize(ParameterBlock& block, Rng& rng, double scale)
{
    std::normal_distribution<double> dist(0.0, scale);
    for(auto& x : block.values) {
        x = dist(rng);
    }
}

/**
 * Random fixture: even seeds use a 3-action matrix game with a seeded payoff table, odd seeds a
 * small grid. Actor, critic, reward nets and mixer are all randomized.
 */
[[nodiscard]] inline LossFixture make_loss_fixture(std::uint64_t seed, std::size_t episodes = 6)
{
    LossFixture fx;
    if(seed % 2 == 0) {
        fx.env = std::make_unique<CoopMatrixGame>(
            CoopMatrixGame::Config{3, 4, 0.95, CoopMatrixGame::payoff_from_seed(seed)});
    } else {
        fx.env = std::make_unique<GridGather>(GridGather::Config{4, 2, 2, 6, 0.01});
    }
    Rng rng(derive_seed(seed, 0x6F1));
    const EnvSpec& spec = fx.env->spec();
    fx.ppo.gamma = 0.9;
    fx.ppo.gae_lambda = 0.8;
    fx.ppo.entropy_coef = 0.05;
    fx.bundle = PolicyBundle(spec, {5}, rng);
    for(auto& a : fx.bundle.actors) {
        randomize(a.net().parameters(), rng, 0.6);
    }
    randomize(fx.bundle.critic.parameters(), rng, 0.6);
    fx.model = ImplicitRewardModel(spec, {5}, 0.7, fx.ppo.gamma, rng);
    for(std::size_t i = 0; i < fx.model.agents(); ++i) {
        randomize(fx.model.q_net(i).parameters(), rng, 0.5);
        randomize(fx.model.v_net(i).parameters(), rng, 0.5);
    }
    std::uniform_real_distribution<double> wd(0.3, 1.6), bd(-1.0, 1.0);
    std::vector<double> w(spec.n_agents);
    for(auto& x : w) {
        x = wd(rng);
    }
    fx.model.set_mixer(LinearMixer::with_weights(w, bd(rng)));
    CollectOptions opt;
    opt.episodes = episodes;
    opt.seed = derive_seed(seed, 0xB47);
    fx.batch = collect(*fx.env, fx.bundle.actors, opt);
    // continuous-valued returns are rarely tied; fall back to an arbitrary order if they are
    for(std::size_t k = 0; k + 1 < fx.batch.size(); ++k) {
        const auto& a = fx.batch.trajectories()[k];
        const auto& b = fx.batch.trajectories()[k + 1];
        if(auto p = rule_label(a, b)) {
            fx.pairs.push_back(*p);
        } else {
            fx.pairs.push_back({a, b, LabelSource::rule, std::nullopt});
        }
    }
    return fx;
}

/// Offsets kept away from the clip boundaries so the piecewise losses are differentiable.
inline double away_from_kink(Rng& rng, double eps)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const double pick = u(rng);
    const double inner = 0.5 * eps * (2.0 * u(rng) - 1.0);
    if(pick < 0.5) {
        return inner;
    }
    const double outer = 1.5 * eps + eps * u(rng);
    return pick < 0.75 ? outer : -outer;
}

struct GradientSuiteReport {
    std::map<std::string, double> max_relative_error;  // worst over seeds and coordinates
    std::size_t seeds = 0;
    double tolerance = 1e-4;

    [[nodiscard]] bool passed() const
    {
        return !max_relative_error.empty()
               && std::all_of(max_relative_error.begin(), max_relative_error.end(),
                              [&](const auto& kv) { return kv.second < tolerance; });
    }
};

/// Central-difference checks of every differentiable loss over `seeds` random fixtures.
[[nodiscard]] inline GradientSuiteReport run_gradient_suite(std::size_t seeds, std::uint64_t base_seed = 0)
{
    GradientSuiteReport rep;
    rep.seeds = seeds;
    auto record = [&](const std::string& name, double err) {
        auto& slot = rep.max_relative_error[name];
        slot = std::max(slot, err);
    };
    for(std::size_t s = 0; s < seeds; ++s) {
        const std::uint64_t seed = derive_seed(base_seed, s);
        LossFixture fx = make_loss_fixture(seed);
        Rng rng(derive_seed(seed, 0x7A));
        const auto trs = fx.transitions();
        const PhiRegularizer reg{0.3};
        auto& model = fx.model;

        auto check_model = [&](const std::string& name, const std::function<double(RewardModelGradient*)>& loss,
                               bool q_and_mixer) {
            auto g = model.make_gradient();
            loss(&g);
            auto obj = [&] { return loss(nullptr); };
            double worst = 0.0;
            for(std::size_t i = 0; i < model.agents(); ++i) {
                worst = std::max(worst, gradient_check(obj, model.v_net(i).parameters(), g.v[i]).max_relative_error);
                if(q_and_mixer) {
                    worst = std::max(worst, gradient_check(obj, model.q_net(i).parameters(), g.q[i]).max_relative_error);
                }
            }
            if(q_and_mixer) {
                worst = std::max(worst, gradient_check(obj, model.mixer().parameters(), g.mixer).max_relative_error);
            }
            record(name, worst);
        };
        check_model("preference_loss", [&](RewardModelGradient* g) { return model.preference_loss(fx.pairs, reg, g).loss; },
                    true);
        check_model("extreme_v_loss", [&](RewardModelGradient* g) { return model.extreme_v_loss(trs, g, 0.3).loss; },
                    false);

        // actor losses on the whole batch with perturbed behaviour log-probabilities
        const std::size_t n = fx.bundle.actors.size();
        const auto N = static_cast<Eigen::Index>(trs.size());
        std::vector<AgentBatch> agents(n);
        for(std::size_t i = 0; i < n; ++i) {
            const Actor& actor = fx.bundle.actors[i];
            agents[i].obs.resize(static_cast<Eigen::Index>(actor.obs_dim()), N);
            for(Eigen::Index c = 0; c < N; ++c) {
                const auto& o = trs[static_cast<std::size_t>(c)]->local_obs[i];
                agents[i].obs.col(c) = Eigen::Map<const Vector>(o.data(), agents[i].obs.rows());
                agents[i].actions.push_back(trs[static_cast<std::size_t>(c)]->actions[i]);
            }
            const Vector logp = actor.evaluate(agents[i].obs, agents[i].actions).log_prob;
            agents[i].old_log_prob.resize(N);
            for(Eigen::Index c = 0; c < N; ++c) {
                agents[i].old_log_prob(c) = logp(c) - std::log1p(away_from_kink(rng, fx.ppo.clip));
            }
        }
        std::normal_distribution<double> nd(0.0, 1.0);
        std::vector<Vector> local(n, Vector(N));
        Vector global(N);
        for(Eigen::Index c = 0; c < N; ++c) {
            global(c) = nd(rng);
            for(auto& l : local) {
                l(c) = nd(rng);
            }
        }
        auto check_actors = [&](const std::string& name, const std::function<double(std::vector<ActorGradient>*)>& loss) {
            std::vector<ActorGradient> grads;
            for(const auto& a : fx.bundle.actors) {
                grads.push_back(a.make_gradient());
            }
            loss(&grads);
            auto obj = [&] { return loss(nullptr); };
            double worst = 0.0;
            for(std::size_t i = 0; i < n; ++i) {
                worst = std::max(
                    worst, gradient_check(obj, fx.bundle.actors[i].net().parameters(), grads[i].net).max_relative_error);
            }
            record(name, worst);
        };
        check_actors("actor_loss_dual", [&](std::vector<ActorGradient>* g) {
            return actor_loss_dual(fx.bundle, agents, local, fx.ppo, g).loss;
        });
        check_actors("actor_loss_global", [&](std::vector<ActorGradient>* g) {
            return actor_loss_global(fx.bundle, agents, global, fx.ppo, g).loss;
        });

        {
            Matrix joint(static_cast<Eigen::Index>(fx.bundle.critic.input_size()), N);
            for(Eigen::Index c = 0; c < N; ++c) {
                const auto& o = trs[static_cast<std::size_t>(c)]->joint_obs;
                joint.col(c) = Eigen::Map<const Vector>(o.data(), joint.rows());
            }
            const Vector v = fx.bundle.critic.forward_batch(joint).row(0).transpose();
            Vector old_values(N), targets(N);
            for(Eigen::Index c = 0; c < N; ++c) {
                old_values(c) = v(c) - away_from_kink(rng, fx.ppo.value_clip);
                targets(c) = v(c) + nd(rng);
            }
            ParameterBlock g = ParameterBlock::zeros_like(fx.bundle.critic.parameters());
            (void)critic_loss(fx.bundle.critic, joint, targets, old_values, fx.ppo.value_clip, &g);
            auto obj = [&] { return critic_loss(fx.bundle.critic, joint, targets, old_values, fx.ppo.value_clip, nullptr); };
            record("critic_loss", gradient_check(obj, fx.bundle.critic.parameters(), g).max_relative_error);
        }
        {
            SupervisedRewardNet net(fx.env->spec(), {5}, rng);
            randomize(net.net().parameters(), rng, 0.5);
            ParameterBlock g = ParameterBlock::zeros_like(net.net().parameters());
            (void)sl_reward_loss(net, fx.pairs, fx.ppo.gamma, &g);
            auto obj = [&] { return sl_reward_loss(net, fx.pairs, fx.ppo.gamma, nullptr); };
            record("sl_reward_loss", gradient_check(obj, net.net().parameters(), g).max_relative_error);
        }
        {
            Vector w(N);
            std::uniform_real_distribution<double> u(0.1, 3.0);
            for(Eigen::Index c = 0; c < N; ++c) {
                w(c) = u(rng);
            }
            const Actor& actor = fx.bundle.actors[0];
            auto g = actor.make_gradient();
            (void)bc_loss(actor, agents[0].obs, agents[0].actions, w, &g);
            auto obj = [&] { return bc_loss(actor, agents[0].obs, agents[0].actions, w, nullptr); };
            record("bc_loss", gradient_check(obj, fx.bundle.actors[0].net().parameters(), g.net).max_relative_error);
        }
    }
    return rep;
}

struct Prop2SuiteReport {
    std::size_t instances = 0;
    double max_corrected = 0.0;
    double min_literal = 0.0;
    double median_literal = 0.0;
};

/**
 * Identity check between the global advantage and the weighted local advantages on random
 * fixtures (corrected and literal local TD residuals). `mixer_weights` replaces the fixture's
 * mixer, which is how invalid weights reach the precondition check.
 */
[[nodiscard]] inline Prop2SuiteReport run_prop2_suite(std::size_t instances, std::uint64_t base_seed = 0,
                                                      const std::optional<std::vector<double>>& mixer_weights = {})
{
    Prop2SuiteReport rep;
    rep.instances = instances;
    std::vector<double> literal;
    for(std::size_t s = 0; s < instances; ++s) {
        const std::uint64_t seed = derive_seed(base_seed + 1000, s);
        LossFixture fx = make_loss_fixture(seed, 3);
        if(mixer_weights) {
            fx.model.set_mixer(LinearMixer::with_weights(*mixer_weights, fx.model.mixer().bias()));
        }
        Rng rng(derive_seed(seed, 0x11));
        const double lambda = uniform01(rng);
        double corrected = 0.0, lit = 0.0;
        for(const auto& traj : fx.batch.trajectories()) {
            corrected = std::max(corrected, check_prop2(fx.model, fx.bundle.critic, *traj, lambda, false));
            lit = std::max(lit, check_prop2(fx.model, fx.bundle.critic, *traj, lambda, true));
        }
        rep.max_corrected = std::max(rep.max_corrected, corrected);
        literal.push_back(lit);
    }
    if(!literal.empty()) {
        rep.min_literal = *std::min_element(literal.begin(), literal.end());
        std::nth_element(literal.begin(), literal.begin() + static_cast<long>(literal.size() / 2), literal.end());
        rep.median_literal = literal[literal.size() / 2];
    }
    return rep;
}

struct CheckOutcome {
    std::string name;
    bool passed = false;
    nlohmann::json report;
};

struct VerifyOptions {
    std::size_t gradient_seeds = 10;
    std::size_t prop2_instances = 100;
    std::optional<std::vector<double>> mixer_weights;  // prop2 fixture override
    std::size_t theorem1_seeds = 5;
    bool theorem1_scaling = true;  // also run N = 1e2 and 1e3 for the monotonicity check
};

[[nodiscard]] inline const std::vector<std::string>& verify_check_names()
{
    static const std::vector<std::string> names{"prop1", "prop2", "prop3", "soft_value", "theorem1", "gradients"};
    return names;
}

[[nodiscard]] inline CheckOutcome verify_prop1()
{
    CheckOutcome out{"prop1", true, nlohmann::json::array()};
    const std::vector<TabularMDP> fixtures{TabularMDP::separable_fixture(0, 4, 2, 3, 0.9),
                                           TabularMDP::random(3, 4, 2, 3, 0.9, 2), TabularMDP::random(11, 3, 2, 2, 0.8, 3)};
    for(std::size_t f = 0; f < fixtures.size(); ++f) {
        for(double c : {-10.0, 0.0, 1.0, 1000.0}) {
            const auto r = check_prop1(fixtures[f], c);
            out.passed = out.passed && r.identical;
            out.report.push_back({{"fixture", f},
                                  {"shift", c},
                                  {"policies", r.policies},
                                  {"optimal_set_size", r.optimal_original.size()},
                                  {"identical", r.identical},
                                  {"max_value_shift_error", r.max_value_shift_error}});
        }
    }
    return out;
}

[[nodiscard]] inline CheckOutcome verify_prop2(const VerifyOptions& opt)
{
    CheckOutcome out{"prop2", false, nlohmann::json::object()};
    try {
        const auto r = run_prop2_suite(opt.prop2_instances, 0, opt.mixer_weights);
        out.passed = r.max_corrected < 1e-8 && r.min_literal > 0.1;
        out.report = {{"instances", r.instances},
                      {"max_residual_corrected", r.max_corrected},
                      {"min_residual_literal", r.min_literal},
                      {"median_residual_literal", r.median_literal}};
    } catch(const PreconditionError& ex) {
        out.report = {{"precondition_violation", ex.what()}};
    }
    return out;
}

[[nodiscard]] inline CheckOutcome verify_prop3()
{
    CheckOutcome out{"prop3", true, nlohmann::json::array()};
    for(std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto r = run_prop3_harness(seed, 20'000);
        const bool ok = r.exact_residual < 1e-10 && r.max_score_z <= 3.0;
        out.passed = out.passed && ok;
        out.report.push_back({{"seed", seed},
                              {"exact_residual", r.exact_residual},
                              {"exact_score_term_norm", r.exact_score_norm},
                              {"samples", r.samples},
                              {"empirical_residual", r.empirical_residual},
                              {"max_score_z", r.max_score_z},
                              {"passed", ok}});
    }
    return out;
}

[[nodiscard]] inline CheckOutcome verify_soft_value()
{
    const TabularMDP mdp = TabularMDP::separable_fixture(0, 4, 3, 3, 0.9);
    const int joint = mdp.joint_actions();
    const auto r = run_soft_value_harness(mdp, 0, 2000, 1.0, std::log(static_cast<double>(joint)));
    const auto literal = run_soft_value_harness(mdp, 0, 2000, 1.0, 0.0);
    CheckOutcome out{"soft_value", r.deviation_after < 1e-3, {}};
    out.report = {{"steps", r.steps},
                  {"offset", r.offset},
                  {"deviation_before", r.deviation_before},
                  {"deviation_after", r.deviation_after},
                  {"final_loss", r.final_loss},
                  {"literal_loss_deviation_after", literal.deviation_after}};
    return out;
}

struct Theorem1Summary {
    std::map<std::size_t, std::vector<Theorem1Report>> runs;  // keyed by pair count

    [[nodiscard]] double median_ratio(std::size_t n_pairs) const
    {
        std::vector<double> v;
        for(const auto& r : runs.at(n_pairs)) {
            v.push_back(r.deviation_ratio);
        }
        std::sort(v.begin(), v.end());
        return v.empty() ? 0.0 : v[v.size() / 2];
    }
};

[[nodiscard]] inline Theorem1Summary run_theorem1_suite(std::size_t seeds, const std::vector<std::size_t>& pair_counts)
{
    Theorem1Summary out;
    const TabularMDP mdp = TabularMDP::separable_fixture(0, 4, 3, 3, 0.9, 3.0);
    for(std::size_t n : pair_counts) {
        for(std::size_t s = 0; s < seeds; ++s) {
            Theorem1Config cfg;
            cfg.n_pairs = n;
            cfg.seed = s;
            out.runs[n].push_back(run_theorem1_harness(mdp, cfg));
        }
    }
    return out;
}

[[nodiscard]] inline CheckOutcome verify_theorem1(const VerifyOptions& opt)
{
    std::vector<std::size_t> counts{10'000};
    if(opt.theorem1_scaling) {
        counts = {100, 1'000, 10'000};
    }
    const auto suite = run_theorem1_suite(opt.theorem1_seeds, counts);
    CheckOutcome out{"theorem1", true, nlohmann::json::object()};
    nlohmann::json runs = nlohmann::json::array();
    for(const auto& [n, reports] : suite.runs) {
        for(const auto& r : reports) {
            runs.push_back({{"n_pairs", n},
                            {"failed", r.failed},
                            {"deviation_ratio", r.deviation_ratio},
                            {"max_deviation", r.max_deviation},
                            {"heldout_accuracy", r.heldout_accuracy},
                            {"bayes_rate", r.bayes_rate}});
            if(n == 10'000 && (r.failed || r.deviation_ratio > 0.10 || r.heldout_accuracy < r.bayes_rate - 0.05)) {
                out.passed = false;
            }
        }
    }
    nlohmann::json medians = nlohmann::json::object();
    double previous = INFINITY;
    for(std::size_t n : counts) {
        const double m = suite.median_ratio(n);
        medians[std::to_string(n)] = m;
        if(m > previous) {
            out.passed = false;
        }
        previous = m;
    }
    out.report = {{"runs", runs}, {"median_deviation_ratio", medians}};
    return out;
}

[[nodiscard]] inline CheckOutcome verify_gradients(const VerifyOptions& opt)
{
    const auto r = run_gradient_suite(opt.gradient_seeds);
    CheckOutcome out{"gradients", r.passed(), {}};
    out.report = {{"seeds", r.seeds}, {"tolerance", r.tolerance}, {"max_relative_error", r.max_relative_error}};
    return out;
}

[[nodiscard]] inline CheckOutcome run_verify_check(const std::string& name, const VerifyOptions& opt)
{
    if(name == "prop1") {
        return verify_prop1();
    }
    if(name == "prop2") {
        return verify_prop2(opt);
    }
    if(name == "prop3") {
        return verify_prop3();
    }
    if(name == "soft_value") {
        return verify_soft_value();
    }
    if(name == "theorem1") {
        return verify_theorem1(opt);
    }
    if(name == "gradients") {
        return verify_gradients(opt);
    }
    throw ConfigError("unknown check '" + name + "'");
}

}  // namespace imap

#endif  // IMAP_VERIFY_HPP

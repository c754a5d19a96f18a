#include <cmath>
#include <numeric>
#include <stdexcept>

#include <gtest/gtest.h>

#include "imap/envs/tabular_mdp.hpp"
#include "imap/oracle.hpp"

using namespace imap;

namespace {

// Independent backward recursion over (t, s); policies are stationary.
double backward_value(const TabularMDP& mdp, const JointPolicyTable& pol)
{
    const int J = mdp.joint_actions();
    std::vector<double> v(mdp.n_states, 0.0);
    for(int t = mdp.horizon - 1; t >= 0; --t) {
        std::vector<double> nv(mdp.n_states, 0.0);
        for(std::size_t s = 0; s < mdp.n_states; ++s) {
            for(int a = 0; a < J; ++a) {
                double cont = 0.0;
                for(std::size_t s2 = 0; s2 < mdp.n_states; ++s2) {
                    cont += mdp.p(s, a, s2) * v[s2];
                }
                nv[s] += pol(s, a) * (mdp.r(s, a) + mdp.gamma * cont);
            }
        }
        v = nv;
    }
    double j = 0.0;
    for(std::size_t s = 0; s < mdp.n_states; ++s) {
        j += mdp.initial[s] * v[s];
    }
    return j;
}

JointPolicyTable random_policy(const TabularMDP& mdp, std::uint64_t seed)
{
    Rng rng(seed);
    auto pol = JointPolicyTable::uniform(mdp);
    const auto J = static_cast<std::size_t>(pol.joint_actions);
    for(std::size_t s = 0; s < mdp.n_states; ++s) {
        double z = 0.0;
        for(std::size_t a = 0; a < J; ++a) {
            pol.probs[s * J + a] = 0.05 + uniform01(rng);
            z += pol.probs[s * J + a];
        }
        for(std::size_t a = 0; a < J; ++a) {
            pol.probs[s * J + a] /= z;
        }
    }
    return pol;
}

void set_local(Mlp& net, std::vector<double> out)
{
    auto& p = net.parameters();
    std::fill(p.values.begin(), p.values.end(), 0.0);
    auto bias = p.segment(p.shapes.size() - 1);
    for(std::size_t k = 0; k < out.size(); ++k) {
        bias(static_cast<Eigen::Index>(k), 0) = out[k];
    }
}

// Linear local Q net: the action one-hot sits after the observation in the input.
void set_action_values(Mlp& net, std::size_t obs_size, std::vector<double> values)
{
    auto& p = net.parameters();
    std::fill(p.values.begin(), p.values.end(), 0.0);
    auto w = p.segment(0);
    for(std::size_t k = 0; k < values.size(); ++k) {
        w(0, static_cast<Eigen::Index>(obs_size + k)) = values[k];
    }
}

}  // namespace

TEST(PolicyValue, ZeroRewardIsZero)
{
    auto mdp = TabularMDP::random(3);
    std::fill(mdp.reward.begin(), mdp.reward.end(), 0.0);
    EXPECT_EQ(policy_value_exact(mdp, JointPolicyTable::uniform(mdp)), 0.0);
}

TEST(PolicyValue, DeterministicChainFirstStepReward)
{
    auto mdp = TabularMDP::random(5, 3, 2, 4, 0.9);
    std::fill(mdp.transition.begin(), mdp.transition.end(), 0.0);
    const auto J = static_cast<std::size_t>(mdp.joint_actions());
    for(std::size_t s = 0; s < mdp.n_states; ++s) {
        for(std::size_t a = 0; a < J; ++a) {
            mdp.transition[(s * J + a) * mdp.n_states + (s + 1) % mdp.n_states] = 1.0;
        }
    }
    std::fill(mdp.initial.begin(), mdp.initial.end(), 0.0);
    mdp.initial[0] = 1.0;
    const auto pol = JointPolicyTable::deterministic(mdp, std::vector<int>(mdp.n_states, 1));
    EXPECT_DOUBLE_EQ(policy_value_exact(mdp, pol, [](std::size_t, int, int t) { return t == 0 ? 1.0 : 0.0; }), 1.0);
}

TEST(PolicyValue, MatchesBackwardRecursion)
{
    for(std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto mdp = TabularMDP::random(seed, 2 + seed % 5, 1 + static_cast<int>(seed % 3), 1 + static_cast<int>(seed % 4));
        const auto pol = random_policy(mdp, seed + 100);
        EXPECT_NEAR(policy_value_exact(mdp, pol), backward_value(mdp, pol), 1e-10) << "seed " << seed;
    }
}

TEST(PolicyValue, MonteCarloWithinThreeSigma)
{
    const auto mdp = TabularMDP::random(7, 4, 2, 3, 0.9);
    const auto pol = random_policy(mdp, 8);
    TabularEnv env(mdp);
    Rng rng(9);
    const std::size_t n = 20000;
    double sum = 0.0, sq = 0.0;
    for(std::size_t e = 0; e < n; ++e) {
        // The state is recovered from the one-hot (state, step) code.
        auto state_of = [&](const std::vector<double>& local, int t) {
            for(std::size_t k = 0; k < mdp.n_states; ++k) {
                if(local[k * static_cast<std::size_t>(mdp.horizon + 1) + static_cast<std::size_t>(t)] == 1.0) {
                    return k;
                }
            }
            throw std::logic_error("no state bit set");
        };
        std::size_t s = state_of(env.reset(e).local[0], 0);
        std::optional<double> ret;
        for(int t = 0; !ret; ++t) {
            std::vector<double> row(static_cast<std::size_t>(mdp.joint_actions()));
            for(int a = 0; a < mdp.joint_actions(); ++a) {
                row[static_cast<std::size_t>(a)] = pol(s, a);
            }
            const auto [a1, a2] = mdp.split(static_cast<int>(sample_categorical(row, rng)));
            auto res = env.step({Action{a1}, Action{a2}});
            ret = res.episodic_return;
            if(!ret) {
                s = state_of(res.transition.next_local_obs[0], t + 1);
            }
        }
        sum += *ret;
        sq += *ret * *ret;
    }
    const double mean = sum / n;
    const double se = std::sqrt((sq / n - mean * mean) / n);
    EXPECT_LT(std::abs(mean - policy_value_exact(mdp, pol)), 3.0 * se);
}

TEST(Prop1, ShiftPreservesOptimalSet)
{
    for(double c : {-10.0, 0.0, 1.0, 1000.0}) {
        for(std::uint64_t seed = 0; seed < 3; ++seed) {
            const auto mdp = TabularMDP::random(seed, 3, 2, 3, 0.9);
            const auto rep = check_prop1(mdp, c);
            EXPECT_TRUE(rep.identical) << "c " << c << " seed " << seed;
            EXPECT_FALSE(rep.optimal_original.empty());
            EXPECT_EQ(rep.policies, 64u);
            EXPECT_LT(rep.max_value_shift_error, 1e-9 * std::max(1.0, std::abs(c)));
        }
    }
}

TEST(Prop1, DeterministicPolicyCount)
{
    const auto mdp = TabularMDP::random(1, 2, 3, 2, 0.9);
    EXPECT_EQ(deterministic_policies(mdp).size(), 81u);
    EXPECT_THROW((void)deterministic_policies(TabularMDP::random(1, 8, 3, 2, 0.9), 1000), PreconditionError);
}

TEST(Theorem1, ZeroPairsFlagsInsufficientData)
{
    Theorem1Config cfg;
    cfg.n_pairs = 0;
    const auto rep = run_theorem1_harness(TabularMDP::separable_fixture(0), cfg);
    EXPECT_TRUE(rep.insufficient_data);
    EXPECT_FALSE(rep.failed);
    EXPECT_GT(rep.return_range, 0.0);
}

TEST(Theorem1, SmallRunBeatsChance)
{
    Theorem1Config cfg;
    cfg.n_pairs = 2000;
    cfg.heldout_pairs = 1000;
    cfg.steps = 600;
    const auto rep = run_theorem1_harness(TabularMDP::separable_fixture(0, 4, 3, 3, 0.9, 3.0), cfg);
    ASSERT_FALSE(rep.failed) << rep.failure;
    EXPECT_GT(rep.heldout_accuracy, 0.6);
    EXPECT_LE(rep.heldout_accuracy, rep.bayes_rate + 0.05);
    EXPECT_EQ(rep.learned.size(), rep.truth.size());
}

TEST(SoftValue, ZeroQOverFourJointActionsGivesLog4)
{
    const auto mdp = TabularMDP::random(2, 3, 2, 2, 0.9);
    TabularEnv env(mdp);
    Rng rng(0);
    ImplicitRewardModel m(env.spec(), {}, 1.0, mdp.gamma, rng);
    for(std::size_t i = 0; i < 2; ++i) {
        set_action_values(m.q_net(i), env.observation_size(), {0.0, 0.0});
        set_local(m.v_net(i), {0.0});
    }
    m.set_mixer(LinearMixer::with_weights({1.0, 1.0}, 0.0));
    EXPECT_NEAR(soft_value_oracle(m, env), std::log(4.0), 1e-12);
    set_local(m.v_net(0), {std::log(4.0)});
    EXPECT_LT(soft_value_oracle(m, env), 1e-12);
}

TEST(SoftValue, SmallBetaApproachesMax)
{
    const auto mdp = TabularMDP::random(2, 3, 2, 2, 0.9);
    TabularEnv env(mdp);
    Rng rng(0);
    ImplicitRewardModel m(env.spec(), {}, 0.01, mdp.gamma, rng);
    set_action_values(m.q_net(0), env.observation_size(), {0.0, 1.0});
    set_action_values(m.q_net(1), env.observation_size(), {0.0, 0.5});
    set_local(m.v_net(0), {1.5});
    set_local(m.v_net(1), {0.0});
    m.set_mixer(LinearMixer::with_weights({1.0, 1.0}, 0.0));
    EXPECT_LT(soft_value_oracle(m, env), 1e-3);
    const std::vector<double> q{0.3, 1.0, -2.0, 0.95};
    EXPECT_NEAR(soft_maximum(q, 0.01), 1.0, 1e-3);
}

TEST(SoftValue, EnumerationCoversEveryStateStepAction)
{
    const auto mdp = TabularMDP::random(4, 3, 2, 3, 0.9);
    TabularEnv env(mdp);
    EXPECT_EQ(enumerate_state_actions(env).size(), 3u * 3u * 4u);
}

TEST(SoftValue, HarnessConverges)
{
    const auto rep = run_soft_value_harness(TabularMDP::random(0, 4, 2, 3, 0.9), 0, 2000, 1.0, std::log(4.0));
    EXPECT_GT(rep.deviation_before, 1e-2);
    EXPECT_LT(rep.deviation_after, 1e-3);
}

TEST(Prop3, ExactResidualVanishes)
{
    for(std::uint64_t seed = 0; seed < 3; ++seed) {
        const auto rep = run_prop3_harness(seed, 2000);
        EXPECT_LT(rep.exact_residual, 1e-10) << "seed " << seed;
        EXPECT_GT(rep.exact_score_norm, 0.0);
    }
}

TEST(GradientCheck, QuadraticIsExactAndWrongGradientIsCaught)
{
    ParameterBlock p({{3, 2}, {2, 1}});
    for(std::size_t k = 0; k < p.size(); ++k) {
        p.values[k] = 0.3 * static_cast<double>(k) - 1.0;
    }
    auto g = ParameterBlock::zeros_like(p);
    for(std::size_t k = 0; k < p.size(); ++k) {
        g.values[k] = 2.0 * p.values[k];
    }
    auto f = [&] { return std::inner_product(p.values.begin(), p.values.end(), p.values.begin(), 0.0); };
    const auto ok = gradient_check(f, p, g);
    EXPECT_EQ(ok.coordinates, 8u);
    EXPECT_LT(ok.max_relative_error, 1e-8);
    g.values[3] += 0.1;
    EXPECT_GT(gradient_check(f, p, g).max_relative_error, 1e-2);
    EXPECT_THROW((void)gradient_check(f, p, ParameterBlock({{8, 1}})), DimensionError);
}

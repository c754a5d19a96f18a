#include <cmath>
#include <numeric>

#include <gtest/gtest.h>

#include "imap/envs/coop_matrix_game.hpp"
#include "imap/envs/tabular_mdp.hpp"
#include "imap/oracle.hpp"
#include "imap/reward_model.hpp"
#include "imap/rollout.hpp"

using namespace imap;

namespace {

void set_constant(Mlp& net, double c)
{
    auto& p = net.parameters();
    std::fill(p.values.begin(), p.values.end(), 0.0);
    p.segment(p.shapes.size() - 1)(0, 0) = c;
}

ImplicitRewardModel constant_model(const EnvSpec& spec, std::vector<double> q, std::vector<double> v,
                                   std::vector<double> w, double bias, double gamma)
{
    Rng rng(0);
    ImplicitRewardModel m(spec, {}, 1.0, gamma, rng);
    for(std::size_t i = 0; i < q.size(); ++i) {
        set_constant(m.q_net(i), q[i]);
        set_constant(m.v_net(i), v[i]);
    }
    m.set_mixer(LinearMixer::with_weights(w, bias));
    return m;
}

ImplicitRewardModel random_model(const EnvSpec& spec, std::uint64_t seed, double gamma)
{
    Rng rng(seed);
    ImplicitRewardModel m(spec, {8}, 1.0, gamma, rng);
    std::uniform_real_distribution<double> w(0.2, 2.0), b(-1.0, 1.0);
    m.set_mixer(LinearMixer::with_weights({w(rng), w(rng)}, b(rng)));
    return m;
}

RolloutBatch coop_batch(const CoopMatrixGame& env, std::size_t episodes, std::uint64_t seed)
{
    Rng rng(seed);
    std::vector<Actor> actors;
    for(std::size_t i = 0; i < 2; ++i) {
        actors.emplace_back(env.spec().obs_dims[i], env.spec().action_spaces[i], std::vector<std::size_t>{8}, rng);
    }
    return collect(env, actors, CollectOptions{episodes, seed});
}

/// One-step trajectory where agent 0 plays a0 and agent 1 plays 0.
TrajectoryRef one_step(const CoopMatrixGame& env, int a0)
{
    auto e = env.clone();
    const auto obs = e->reset(0);
    (void)obs;
    Trajectory t;
    auto r = e->step({Action{a0}, Action{0}});
    t.transitions.push_back(r.transition);
    t.episodic_return = 0.0;
    return std::make_shared<const Trajectory>(std::move(t));
}

PreferencePair pair_of(TrajectoryRef w, TrajectoryRef l)
{
    return {std::move(w), std::move(l), LabelSource::rule, std::nullopt};
}

}  // namespace

TEST(Mixer, QTotWorkedExample)
{
    CoopMatrixGame env;
    const auto m = constant_model(env.spec(), {2.0, 4.0}, {0.0, 0.0}, {0.5, 0.5}, 1.0, 0.99);
    const auto obs = CoopMatrixGame(env).reset(0);
    EXPECT_NEAR(m.q_tot(obs.local, {Action{0}, Action{1}}), 4.0, 1e-12);
}

TEST(Mixer, ZeroLocalsGiveBias)
{
    CoopMatrixGame env;
    const auto m = constant_model(env.spec(), {0.0, 0.0}, {0.0, 0.0}, {0.7, 1.3}, -2.5, 0.99);
    const auto obs = CoopMatrixGame(env).reset(0);
    EXPECT_NEAR(m.q_tot(obs.local, {Action{2}, Action{1}}), -2.5, 1e-15);
    const auto z = constant_model(env.spec(), {0.0, 0.0}, {0.0, 0.0}, {0.7, 1.3}, 0.0, 0.99);
    EXPECT_EQ(z.v_tot(obs.local), 0.0);
}

TEST(Mixer, VTotWorkedExample)
{
    CoopMatrixGame env;
    const auto m = constant_model(env.spec(), {0.0, 0.0}, {1.0, 1.0}, {1.0, 1.0}, -1.0, 0.99);
    EXPECT_NEAR(m.v_tot(CoopMatrixGame(env).reset(1).local), 1.0, 1e-12);
}

TEST(Mixer, PositivityEnforced)
{
    EXPECT_THROW((void)LinearMixer::with_weights({0.0, 1.0}, 0.0), PreconditionError);
    EXPECT_THROW((void)LinearMixer::with_weights({1.0, -3.0}, 0.0), PreconditionError);
    LinearMixer m(3);
    m.parameters().values[0] = -800.0;
    EXPECT_GE(m.weight(0), min_mixer_weight);
    EXPECT_NEAR(m.weight(1), 1.0, 1e-12);
}

TEST(ImplicitReward, RandomModelMatchesScalarRecomputation)
{
    CoopMatrixGame env;
    const auto batch = coop_batch(env, 3, 4);
    for(std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto m = random_model(env.spec(), seed, 0.9);
        for(std::size_t k = 0; k < batch.transition_count(); ++k) {
            const auto& tr = batch.transition(k);
            double q = m.mixer().bias(), v = m.mixer().bias();
            for(std::size_t i = 0; i < 2; ++i) {
                q += m.mixer().weight(i) * m.q_net(i).forward(m.q_input(i, tr.local_obs[i], tr.actions[i]))(0);
                v += m.mixer().weight(i) * m.v_net(i).forward(tr.local_obs[i])(0);
            }
            EXPECT_NEAR(m.q_tot(tr.local_obs, tr.actions), q, 1e-12);
            EXPECT_NEAR(m.v_tot(tr.local_obs), v, 1e-12);
            const double local0 = m.local_q(0, tr.local_obs[0], tr.actions[0])
                                  - (tr.done ? 0.0 : 0.9 * m.local_v(0, tr.next_local_obs[0]));
            EXPECT_NEAR(m.implicit_reward_local(0, tr), local0, 1e-12);
        }
    }
}

TEST(ImplicitReward, ZeroDiscountIsQTot)
{
    CoopMatrixGame env;
    const auto batch = coop_batch(env, 2, 5);
    const auto m = random_model(env.spec(), 3, 0.0);
    for(std::size_t k = 0; k < batch.transition_count(); ++k) {
        const auto& tr = batch.transition(k);
        EXPECT_NEAR(m.implicit_reward_global(tr), m.q_tot(tr.local_obs, tr.actions), 1e-12);
        EXPECT_NEAR(m.implicit_reward_local(1, tr), m.local_q(1, tr.local_obs[1], tr.actions[1]), 1e-12);
    }
}

TEST(ImplicitReward, WorkedExample)
{
    CoopMatrixGame env;
    const auto m = constant_model(env.spec(), {0.5, 0.5}, {0.25, 0.25}, {1.0, 1.0}, 0.0, 0.99);
    const auto batch = coop_batch(env, 1, 1);
    const auto& tr = batch.transition(0);
    ASSERT_FALSE(tr.done);
    EXPECT_NEAR(m.implicit_reward_global(tr), 0.505, 1e-12);
}

TEST(ImplicitReward, LocalMixIdentityOnEveryTransition)
{
    CoopMatrixGame env(CoopMatrixGame::Config{3, 4, 0.9, CoopMatrixGame::payoff_from_seed(2)});
    const auto batch = coop_batch(env, 6, 7);
    for(std::uint64_t seed = 0; seed < 10; ++seed) {
        const auto m = random_model(env.spec(), seed, 0.9);
        for(const auto& traj : batch.trajectories()) {
            const auto r = m.implicit_rewards(*traj);
            for(std::size_t t = 0; t < traj->length(); ++t) {
                const auto& tr = traj->transitions[t];
                double mixed = (1.0 - 0.9) * m.mixer().bias();
                for(std::size_t i = 0; i < 2; ++i) {
                    mixed += m.mixer().weight(i) * m.implicit_reward_local(i, tr);
                }
                EXPECT_NEAR(m.implicit_reward_global(tr), mixed, 1e-10);
                EXPECT_NEAR(r.global(static_cast<Eigen::Index>(t)), mixed, 1e-10);
            }
        }
    }
}

TEST(ImplicitReward, SampledNextStatesAverageToExpectation)
{
    const auto mdp = TabularMDP::random(5, 4, 2, 3, 0.9, 2);
    TabularEnv env(mdp);
    Rng rng(8);
    ImplicitRewardModel m(env.spec(), {8}, 1.0, mdp.gamma, rng);
    m.set_mixer(LinearMixer::with_weights({0.8, 1.4}, 0.3));
    const std::size_t s = 1;
    const int a = 3, t = 0;
    double exact = 0.0;
    for(std::size_t s2 = 0; s2 < mdp.n_states; ++s2) {
        exact += mdp.p(s, a, s2) * m.implicit_reward_global(env.make_transition(s, a, s2, t));
    }
    std::vector<double> row(mdp.n_states);
    for(std::size_t s2 = 0; s2 < mdp.n_states; ++s2) {
        row[s2] = mdp.p(s, a, s2);
    }
    const std::size_t n = 100'000;
    double sum = 0.0, sum_sq = 0.0;
    for(std::size_t k = 0; k < n; ++k) {
        const double r = m.implicit_reward_global(env.make_transition(s, a, sample_categorical(row, rng), t));
        sum += r;
        sum_sq += r * r;
    }
    const double mean = sum / n;
    const double sd = std::sqrt(std::max(0.0, sum_sq / n - mean * mean));
    EXPECT_NEAR(mean, exact, 3 * sd / std::sqrt(static_cast<double>(n)) + 1e-12);
}

TEST(PreferenceLoss, EqualScoresGiveLnTwo)
{
    CoopMatrixGame env(CoopMatrixGame::Config{3, 1, 0.9, CoopMatrixGame::climbing_payoff()});
    auto m = random_model(env.spec(), 1, 0.9);
    const auto a = one_step(env, 0);
    const auto b = one_step(env, 0);
    const auto loss = m.preference_loss({pair_of(a, b), pair_of(b, a)}, PhiRegularizer{0.0}, nullptr);
    EXPECT_NEAR(loss.loss, std::log(2.0), 1e-12);
}

TEST(PreferenceLoss, LogThreeGap)
{
    CoopMatrixGame env(CoopMatrixGame::Config{3, 1, 0.9, CoopMatrixGame::climbing_payoff()});
    auto m = constant_model(env.spec(), {0.0, 0.0}, {0.0, 0.0}, {1.0, 1.0}, 0.0, 0.0);
    // agent 0's q depends on its own action only: q_0(o, a) = ln 3 * [a == 1]
    auto& p = m.q_net(0).parameters();
    const auto obs_dim = env.spec().obs_dims[0];
    p.segment(0)(0, static_cast<Eigen::Index>(obs_dim + 1)) = std::log(3.0);
    const auto w = one_step(env, 1);
    const auto l = one_step(env, 0);
    const auto loss = m.preference_loss({pair_of(w, l)}, PhiRegularizer{0.0}, nullptr);
    EXPECT_NEAR(loss.loss, -std::log(0.75), 1e-12);
    EXPECT_NEAR(loss.loss, 0.2877, 5e-5);
}

TEST(PreferenceLoss, EmptyPairsGiveZero)
{
    CoopMatrixGame env;
    auto m = random_model(env.spec(), 2, 0.9);
    auto grad = m.make_gradient();
    EXPECT_EQ(m.preference_loss({}, PhiRegularizer{}, &grad).loss, 0.0);
    EXPECT_EQ(grad.q[0].squared_norm() + grad.mixer.squared_norm(), 0.0);
}

TEST(PreferenceLoss, SwapNegatesScoreDifference)
{
    CoopMatrixGame env;
    const auto batch = coop_batch(env, 2, 3);
    const auto a = batch.trajectories()[0];
    const auto b = batch.trajectories()[1];
    for(std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto m = random_model(env.spec(), seed, 0.95);
        const auto score = [&](const Trajectory& t) {
            const auto r = m.implicit_rewards(t);
            double s = 0.0;
            for(std::size_t k = 0; k < t.length(); ++k) {
                s += std::pow(0.95, t.transitions[k].t) * r.global(static_cast<Eigen::Index>(k));
            }
            return s;
        };
        const double delta = score(*a) - score(*b);
        const double ab = m.preference_loss({pair_of(a, b)}, PhiRegularizer{0.0}, nullptr).loss;
        const double ba = m.preference_loss({pair_of(b, a)}, PhiRegularizer{0.0}, nullptr).loss;
        EXPECT_NEAR(ab, std::log1p(std::exp(-delta)), 1e-10);
        EXPECT_NEAR(ba - ab, delta, 1e-10);
        const double ab_reg = m.preference_loss({pair_of(a, b)}, PhiRegularizer{0.5}, nullptr).loss;
        const double ba_reg = m.preference_loss({pair_of(b, a)}, PhiRegularizer{0.5}, nullptr).loss;
        EXPECT_NEAR(ba_reg - ab_reg, delta, 1e-10);
    }
}

TEST(PreferenceLoss, GradientMatchesFiniteDifferences)
{
    CoopMatrixGame env;
    const auto batch = coop_batch(env, 6, 11);
    std::vector<PreferencePair> pairs;
    for(std::size_t k = 0; k < 5; ++k) {
        pairs.push_back(pair_of(batch.trajectories()[k], batch.trajectories()[k + 1]));
    }
    for(std::uint64_t seed = 0; seed < 3; ++seed) {
        auto m = random_model(env.spec(), seed, 0.9);
        auto grad = m.make_gradient();
        (void)m.preference_loss(pairs, PhiRegularizer{0.5}, &grad);
        const auto f = [&] { return m.preference_loss(pairs, PhiRegularizer{0.5}, nullptr).loss; };
        EXPECT_LT(gradient_check(f, m.q_net(0).parameters(), grad.q[0]).max_relative_error, 1e-4);
        EXPECT_LT(gradient_check(f, m.v_net(1).parameters(), grad.v[1]).max_relative_error, 1e-4);
        EXPECT_LT(gradient_check(f, m.mixer().parameters(), grad.mixer).max_relative_error, 1e-4);
    }
}

TEST(ExtremeVLoss, MatchingMixturesGiveZero)
{
    CoopMatrixGame env;
    const auto batch = coop_batch(env, 2, 1);
    const auto m = constant_model(env.spec(), {0.3, -1.2}, {0.3, -1.2}, {0.6, 1.7}, 0.4, 0.99);
    std::vector<const Transition*> trs;
    for(std::size_t k = 0; k < batch.transition_count(); ++k) {
        trs.push_back(&batch.transition(k));
    }
    EXPECT_NEAR(m.extreme_v_loss(trs, nullptr).loss, 0.0, 1e-15);
}

TEST(ExtremeVLoss, ConstantGapClosedForm)
{
    CoopMatrixGame env;
    const auto batch = coop_batch(env, 1, 1);
    std::vector<const Transition*> trs{&batch.transition(0), &batch.transition(1)};
    for(double c : {-2.0, -0.1, 0.0, 0.4, 3.0}) {
        const auto m = constant_model(env.spec(), {c, 0.0}, {0.0, 0.0}, {1.0, 1.0}, 0.0, 0.99);
        const double loss = m.extreme_v_loss(trs, nullptr).loss;
        EXPECT_NEAR(loss, std::exp(c) - c - 1.0, 1e-12);
        EXPECT_GE(loss, 0.0);
        EXPECT_EQ(loss == 0.0, c == 0.0);
    }
    const auto big = constant_model(env.spec(), {60.0, 0.0}, {0.0, 0.0}, {1.0, 1.0}, 0.0, 0.99);
    const auto sat = big.extreme_v_loss(trs, nullptr);
    EXPECT_EQ(sat.saturated, 2u);
    EXPECT_TRUE(std::isfinite(sat.loss));
    EXPECT_THROW((void)big.extreme_v_loss(std::vector<const Transition*>{}, nullptr), PreconditionError);
}

TEST(ExtremeVLoss, GradientReachesOnlyValueNets)
{
    CoopMatrixGame env;
    const auto batch = coop_batch(env, 3, 2);
    std::vector<const Transition*> trs;
    for(std::size_t k = 0; k < batch.transition_count(); ++k) {
        trs.push_back(&batch.transition(k));
    }
    auto m = random_model(env.spec(), 6, 0.9);
    auto grad = m.make_gradient();
    (void)m.extreme_v_loss(trs, &grad);
    EXPECT_EQ(grad.q[0].squared_norm() + grad.q[1].squared_norm() + grad.mixer.squared_norm(), 0.0);
    EXPECT_GT(grad.v[0].squared_norm(), 0.0);
    const auto f = [&] { return m.extreme_v_loss(trs, nullptr).loss; };
    EXPECT_LT(gradient_check(f, m.v_net(0).parameters(), grad.v[0]).max_relative_error, 1e-4);
}

TEST(Trainer, ZeroStepsLeaveModelUnchanged)
{
    CoopMatrixGame env;
    auto m = random_model(env.spec(), 1, 0.9);
    const auto before = encode_checkpoint(m.named_blocks());
    RewardModelTrainer trainer(m, RewardTrainConfig{});
    Rng rng(0);
    const auto trace = trainer.train({}, {}, 0, rng);
    EXPECT_TRUE(trace.preference_loss.empty());
    EXPECT_EQ(encode_checkpoint(m.named_blocks()), before);
}

TEST(Trainer, EmptyBuffersRejected)
{
    CoopMatrixGame env;
    auto m = random_model(env.spec(), 1, 0.9);
    RewardModelTrainer trainer(m, RewardTrainConfig{});
    Rng rng(0);
    EXPECT_THROW((void)trainer.train({}, {}, 5, rng), PreconditionError);
}

TEST(Trainer, SeparablePreferencesDecreaseLoss)
{
    CoopMatrixGame env(CoopMatrixGame::Config{3, 4, 0.9, CoopMatrixGame::payoff_from_seed(5)});
    const auto batch = coop_batch(env, 40, 9);
    Rng rng(1);
    const auto pairs = make_pairs_rule(batch.trajectories(), 400, rng);
    ASSERT_GT(pairs.size(), 100u);
    std::vector<const Transition*> trs;
    for(std::size_t k = 0; k < batch.transition_count(); ++k) {
        trs.push_back(&batch.transition(k));
    }
    Rng init(2);
    ImplicitRewardModel m(env.spec(), {32}, 1.0, 0.9, init);
    RewardTrainConfig cfg;
    cfg.lr = 1e-3;
    cfg.v_lr = 1e-3;
    cfg.regularizer.lambda = 0.01;
    RewardModelTrainer trainer(m, cfg);
    const auto trace = trainer.train(pairs, trs, 300, rng);
    std::vector<double> window;
    for(std::size_t start = 0; start + 100 <= trace.preference_loss.size(); start += 100) {
        window.push_back(std::accumulate(trace.preference_loss.begin() + static_cast<std::ptrdiff_t>(start),
                                         trace.preference_loss.begin() + static_cast<std::ptrdiff_t>(start + 100), 0.0)
                         / 100.0);
    }
    ASSERT_EQ(window.size(), 3u);
    EXPECT_LE(window[1], window[0]);
    EXPECT_LE(window[2], window[1]);
    for(double w : m.mixer().weights()) {
        EXPECT_GE(w, min_mixer_weight);
    }
}

TEST(Trainer, DivergenceAborts)
{
    CoopMatrixGame env;
    const auto batch = coop_batch(env, 4, 3);
    Rng rng(1);
    const auto pairs = make_pairs_rule(batch.trajectories(), 10, rng);
    ASSERT_FALSE(pairs.empty());
    std::vector<const Transition*> trs{&batch.transition(0)};
    auto m = random_model(env.spec(), 4, 0.9);
    RewardTrainConfig cfg;
    cfg.divergence_threshold = 1e-9;
    RewardModelTrainer trainer(m, cfg);
    EXPECT_THROW((void)trainer.train(pairs, trs, 3, rng), DivergenceError);
}

TEST(Checkpoint, RewardModelRoundTrip)
{
    CoopMatrixGame env;
    const auto a = random_model(env.spec(), 1, 0.9);
    auto b = random_model(env.spec(), 2, 0.9);
    b.load_blocks(decode_checkpoint(encode_checkpoint(a.named_blocks())));
    const auto batch = coop_batch(env, 1, 1);
    EXPECT_EQ(a.implicit_reward_global(batch.transition(0)), b.implicit_reward_global(batch.transition(0)));
    Rng rng(0);
    ImplicitRewardModel wide(env.spec(), {16}, 1.0, 0.9, rng);
    EXPECT_THROW(wide.load_blocks(a.named_blocks()), CheckpointError);
}

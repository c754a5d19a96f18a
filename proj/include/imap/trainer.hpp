#ifndef IMAP_TRAINER_HPP
#define IMAP_TRAINER_HPP

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include <json.hpp>

#include "imap/baselines.hpp"
#include "imap/checkpoint.hpp"
#include "imap/config.hpp"
#include "imap/llm.hpp"
#include "imap/policy.hpp"
#include "imap/preference.hpp"
#include "imap/reward_model.hpp"
#include "imap/rollout.hpp"

namespace imap {

/// One metrics.csv row. Optional fields are written as empty cells when not computed.
struct MetricsRow {
    std::size_t iter = 0;
    std::size_t env_steps = 0;
    double mean_return = 0.0;
    double pref_loss = 0.0;
    double extreme_v_loss = 0.0;
    double actor_loss = 0.0;
    double critic_loss = 0.0;
    double entropy = 0.0;
    std::optional<double> prop2_residual;
    std::optional<double> mean_w;
    std::optional<double> bias_w;
};

inline constexpr const char* metrics_header =
    "iter,env_steps,mean_return,pref_loss,extreme_v_loss,actor_loss,critic_loss,entropy,prop2_residual,mean_w,bias_w";

[[nodiscard]] inline std::string format_double(double v)
{
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

[[nodiscard]] inline std::string format_metrics_row(const MetricsRow& r)
{
    auto opt = [](const std::optional<double>& v) { return v ? format_double(*v) : std::string(); };
    return std::to_string(r.iter) + "," + std::to_string(r.env_steps) + "," + format_double(r.mean_return) + ","
           + format_double(r.pref_loss) + "," + format_double(r.extreme_v_loss) + "," + format_double(r.actor_loss) + ","
           + format_double(r.critic_loss) + "," + format_double(r.entropy) + "," + opt(r.prop2_residual) + ","
           + opt(r.mean_w) + "," + opt(r.bias_w);
}

/// Mean episodic return of `episodes` fresh episodes under the given actors.
[[nodiscard]] inline double evaluate_policy(const Env& env, const std::vector<Actor>& actors, std::size_t episodes,
                                            std::uint64_t seed, bool greedy = false, std::size_t workers = 1)
{
    CollectOptions opt;
    opt.episodes = episodes;
    opt.seed = seed;
    opt.workers = workers;
    opt.greedy = greedy;
    return collect(env, actors, opt).mean_return();
}

struct RunSummary {
    std::string algo;
    std::size_t iterations = 0;
    std::size_t env_steps = 0;
    double final_batch_return = 0.0;
    double eval_return = 0.0;
    double greedy_return = 0.0;
    std::optional<double> optimal_return;
    std::size_t preference_pairs = 0;
    std::optional<LlmLabelStats> llm;

    [[nodiscard]] nlohmann::json to_json() const
    {
        nlohmann::json j = {
            {"algo", algo},
            {"iterations", iterations},
            {"env_steps", env_steps},
            {"final_batch_return", final_batch_return},
            {"eval_return", eval_return},
            {"greedy_return", greedy_return},
            {"preference_pairs", preference_pairs},
        };
        if(optimal_return) {
            j["optimal_return"] = *optimal_return;
            if(std::abs(*optimal_return) > 0.0) {
                j["eval_fraction_of_optimal"] = eval_return / *optimal_return;
            }
        }
        if(llm) {
            j["llm"] = {{"queried", llm->queried},
                        {"llm_labels", llm->llm_labels},
                        {"skipped", llm->skipped},
                        {"fallbacks", llm->fallbacks}};
        }
        return j;
    }
};

/**
 * Runs the collect -> label -> reward update -> policy update loop for any of the supported
 * algorithms. With an empty output_dir nothing is written to disk.
 */
class Runner {
  public:
    explicit Runner(RunConfig cfg, std::shared_ptr<ChatTransport> transport = nullptr)
        : cfg_(std::move(cfg)), env_(make_env(cfg_.env)), buffer_(cfg_.preference.capacity)
    {
        cfg_.validate();
        const EnvSpec& spec = env_->spec();
        Rng init(derive_seed(cfg_.seed, 0x1417));
        bundle_ = PolicyBundle(spec, cfg_.hidden, init);
        learner_.emplace(bundle_, cfg_.ppo);
        if(uses_reward_model()) {
            model_ = ImplicitRewardModel(spec, cfg_.reward.hidden, cfg_.reward.beta, cfg_.ppo.gamma, init);
            RewardTrainConfig rc;
            rc.lr = cfg_.reward.lr;
            rc.v_lr = cfg_.reward.lr;
            rc.pair_batch = cfg_.reward.pair_batch;
            rc.transition_batch = cfg_.reward.transition_batch;
            rc.regularizer.lambda = cfg_.reward.lambda_reg;
            rc.grad_clip = cfg_.ppo.grad_clip;
            rc.extreme_v_offset = cfg_.reward.extreme_v_offset;
            reward_trainer_.emplace(model_, rc);
        }
        if(cfg_.algo == "sl_mappo") {
            sl_net_ = SupervisedRewardNet(spec, cfg_.reward.hidden, init);
            sl_trainer_.emplace(sl_net_, cfg_.ppo.gamma, cfg_.baselines.sl_lr, cfg_.reward.pair_batch, cfg_.ppo.grad_clip);
        }
        if(cfg_.preference.source == "llm" && needs_preferences()) {
            if(!transport) {
                transport = std::make_shared<HttpChatTransport>(
                    LlmEndpoint::from_env(cfg_.preference.llm_model, cfg_.preference.llm_timeout));
            }
            std::optional<std::filesystem::path> audit;
            if(!cfg_.output_dir.empty()) {
                audit = std::filesystem::path(cfg_.output_dir) / "llm_audit.jsonl";
            }
            labeler_.emplace(std::move(transport), scenario_for_env(env_->name()), cfg_.preference.llm_concurrency,
                             audit);
        }
        pair_rng_.seed(derive_seed(cfg_.seed, 0x9A1));
        reward_rng_.seed(derive_seed(cfg_.seed, 0x4E3));
    }

    Runner(const Runner&) = delete;
    Runner& operator=(const Runner&) = delete;

    [[nodiscard]] const RunConfig& config() const noexcept { return cfg_; }
    [[nodiscard]] const Env& env() const noexcept { return *env_; }
    [[nodiscard]] const PolicyBundle& bundle() const noexcept { return bundle_; }
    [[nodiscard]] const ImplicitRewardModel& reward_model() const noexcept { return model_; }
    [[nodiscard]] const PreferenceBuffer& preferences() const noexcept { return buffer_; }
    [[nodiscard]] std::size_t iterations_done() const noexcept { return iter_; }

    [[nodiscard]] bool uses_reward_model() const
    {
        return cfg_.algo == "imap_la" || cfg_.algo == "imap_ga" || cfg_.algo == "online_ipl";
    }

    [[nodiscard]] bool needs_preferences() const { return cfg_.algo != "sparse_mappo"; }

    /// Executes one full iteration and returns its metrics row.
    MetricsRow step()
    {
        MetricsRow row;
        row.iter = iter_;
        CollectOptions copt;
        copt.episodes = cfg_.episodes_per_iter;
        copt.seed = derive_seed(derive_seed(cfg_.seed, 0xC011), iter_);
        copt.policy_version = iter_;
        copt.workers = cfg_.workers;
        const RolloutBatch batch = collect(*env_, bundle_.actors, copt);
        env_steps_ += batch.transition_count();
        row.env_steps = env_steps_;
        row.mean_return = batch.mean_return();
        last_batch_return_ = row.mean_return;

        if(needs_preferences()) {
            buffer_.push(label_batch(batch));
        }
        const std::uint64_t shuffle_seed = derive_seed(derive_seed(cfg_.seed, 0x990), iter_);

        if(cfg_.algo == "imap_la" || cfg_.algo == "imap_ga") {
            update_reward_model(batch, row);
            const auto mode = cfg_.algo == "imap_la" ? ActorAdvantage::local : ActorAdvantage::global;
            if(cfg_.prop2_every > 0 && iter_ % cfg_.prop2_every == 0) {
                double worst = 0.0;
                for(const auto& traj : batch.trajectories()) {
                    worst = std::max(worst, check_prop2(model_, bundle_.critic, *traj, cfg_.ppo.gae_lambda,
                                                        cfg_.ppo.uncorrected_delta));
                }
                row.prop2_residual = worst;
            }
            record_ppo(train_iteration(*learner_, bundle_, model_, batch, mode, shuffle_seed), row);
        } else if(cfg_.algo == "sparse_mappo") {
            std::vector<Vector> rewards;
            for(const auto& traj : batch.trajectories()) {
                rewards.push_back(sparse_mappo_rewards(*traj));
            }
            record_ppo(ppo_global(batch, rewards, shuffle_seed), row);
        } else if(cfg_.algo == "sl_mappo") {
            if(!buffer_.empty() && cfg_.reward.steps_per_iter > 0) {
                const auto losses = sl_trainer_->train(buffer_.snapshot(), cfg_.reward.steps_per_iter, reward_rng_);
                row.pref_loss = losses.back();
            }
            std::vector<Vector> rewards;
            for(const auto& traj : batch.trajectories()) {
                rewards.push_back(sl_net_.rewards(*traj));
            }
            record_ppo(ppo_global(batch, rewards, shuffle_seed), row);
        } else {
            online_ipl_step(batch, row);
        }
        if(uses_reward_model()) {
            const auto w = model_.mixer().weights();
            double mean = 0.0;
            for(double x : w) {
                mean += x / static_cast<double>(w.size());
            }
            row.mean_w = mean;
            row.bias_w = model_.mixer().bias();
        }
        ++iter_;
        return row;
    }

    /// Runs the configured iteration budget, writing outputs under output_dir when set.
    RunSummary run()
    {
        namespace fs = std::filesystem;
        const bool write = !cfg_.output_dir.empty();
        const fs::path dir(cfg_.output_dir);
        std::ofstream metrics;
        std::ofstream timings;
        if(write) {
            fs::create_directories(dir / "checkpoints");
            std::ofstream(dir / "config.json") << config_to_json(cfg_).dump(2) << '\n';
            metrics.open(dir / "metrics.csv", std::ios::trunc);
            timings.open(dir / "timings.csv", std::ios::trunc);
            if(!metrics || !timings) {
                throw Error("cannot write metrics under " + dir.string());
            }
            metrics << metrics_header << '\n' << std::flush;
            timings << "iter,seconds\n" << std::flush;
        }
        for(std::size_t k = 0; k < cfg_.iterations; ++k) {
            const auto start = std::chrono::steady_clock::now();
            const MetricsRow row = step();
            const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
            if(write) {
                metrics << format_metrics_row(row) << '\n' << std::flush;
                timings << row.iter << ',' << format_double(secs) << '\n' << std::flush;
                if(cfg_.checkpoint_every > 0 && iter_ % cfg_.checkpoint_every == 0) {
                    save_checkpoint(dir / "checkpoints" / ("iter_" + std::to_string(iter_) + ".ckpt"), checkpoint_blocks());
                }
            }
        }
        RunSummary s = summarize();
        if(write) {
            save_checkpoint(dir / "checkpoints" / "final.ckpt", checkpoint_blocks());
            std::ofstream(dir / "summary.json") << s.to_json().dump(2) << '\n';
        }
        return s;
    }

    [[nodiscard]] RunSummary summarize() const
    {
        RunSummary s;
        s.algo = cfg_.algo;
        s.iterations = iter_;
        s.env_steps = env_steps_;
        s.final_batch_return = last_batch_return_;
        const std::uint64_t eval_seed = derive_seed(cfg_.seed, 0xE7A1);
        if(cfg_.eval_episodes > 0) {
            s.eval_return = evaluate_policy(*env_, bundle_.actors, cfg_.eval_episodes, eval_seed, false, cfg_.workers);
            s.greedy_return = evaluate_policy(*env_, bundle_.actors, 1, eval_seed, true);
        }
        if(const auto* game = dynamic_cast<const CoopMatrixGame*>(env_.get())) {
            s.optimal_return = game->optimal_return();
        }
        s.preference_pairs = buffer_.insertions();
        if(labeler_) {
            s.llm = labeler_->stats();
        }
        return s;
    }

    [[nodiscard]] std::vector<NamedBlock> checkpoint_blocks() const
    {
        auto blocks = bundle_.named_blocks();
        if(uses_reward_model()) {
            auto r = model_.named_blocks();
            blocks.insert(blocks.end(), r.begin(), r.end());
        }
        if(cfg_.algo == "sl_mappo") {
            blocks.push_back({"sl_reward", sl_net_.net().parameters()});
        }
        return blocks;
    }

  private:
    std::vector<PreferencePair> label_batch(const RolloutBatch& batch)
    {
        const auto& trajs = batch.trajectories();
        if(!labeler_) {
            return make_pairs_rule(trajs, cfg_.preference.max_pairs, pair_rng_);
        }
        std::vector<std::pair<TrajectoryRef, TrajectoryRef>> candidates;
        for(const auto& [i, j] : sample_index_pairs(trajs.size(), cfg_.preference.max_pairs, pair_rng_)) {
            candidates.emplace_back(trajs[i], trajs[j]);
        }
        return labeler_->label(candidates);
    }

    /// Distinct transitions of the current batch and of every trajectory held by the preference buffer.
    [[nodiscard]] std::vector<const Transition*> reward_transitions(const RolloutBatch& batch) const
    {
        std::vector<const Transition*> out;
        std::unordered_set<const Trajectory*> seen;
        auto add = [&](const Trajectory* traj) {
            if(seen.insert(traj).second) {
                for(const auto& tr : traj->transitions) {
                    out.push_back(&tr);
                }
            }
        };
        for(const auto& traj : batch.trajectories()) {
            add(traj.get());
        }
        for(std::size_t k = 0; k < buffer_.size(); ++k) {
            add(buffer_.at(k).winner.get());
            add(buffer_.at(k).loser.get());
        }
        return out;
    }

    void update_reward_model(const RolloutBatch& batch, MetricsRow& row)
    {
        if(buffer_.empty() || cfg_.reward.steps_per_iter == 0) {
            return;
        }
        const auto trs = reward_transitions(batch);
        const auto trace = reward_trainer_->train(buffer_.snapshot(), trs, cfg_.reward.steps_per_iter, reward_rng_);
        row.pref_loss = trace.last_preference_loss();
        row.extreme_v_loss = trace.last_extreme_v_loss();
        reward_steps_ += cfg_.reward.steps_per_iter;
    }

    IterationStats ppo_global(const RolloutBatch& batch, const std::vector<Vector>& rewards, std::uint64_t shuffle_seed)
    {
        auto table = build_advantages(bundle_.critic, batch, rewards, nullptr, {}, learner_->config());
        return learner_->update(batch, std::move(table), ActorAdvantage::global, shuffle_seed);
    }

    void record_ppo(const IterationStats& stats, MetricsRow& row) const
    {
        if(!std::isfinite(stats.actor_loss) || !std::isfinite(stats.critic_loss) || !std::isfinite(stats.entropy)) {
            throw DivergenceError("policy update diverged at iteration " + std::to_string(iter_) + " (actor loss "
                                  + format_double(stats.actor_loss) + ", critic loss "
                                  + format_double(stats.critic_loss) + ")");
        }
        row.actor_loss = stats.actor_loss;
        row.critic_loss = stats.critic_loss;
        row.entropy = stats.entropy;
    }

    void online_ipl_step(const RolloutBatch& batch, MetricsRow& row)
    {
        const std::size_t before = reward_steps_;
        update_reward_model(batch, row);
        const std::size_t every = cfg_.baselines.ipl_extract_every;
        std::vector<const Transition*> trs;
        for(std::size_t k = 0; k < batch.transition_count(); ++k) {
            trs.push_back(&batch.transition(k));
        }
        if(reward_steps_ / every > before / every) {
            row.actor_loss = online_ipl_extract(bundle_.actors, model_, trs, cfg_.baselines.ipl_beta,
                                                cfg_.baselines.ipl_bc_steps, cfg_.baselines.ipl_bc_lr);
            if(!std::isfinite(row.actor_loss)) {
                throw DivergenceError("behaviour cloning diverged at iteration " + std::to_string(iter_));
            }
        }
        double entropy = 0.0;
        for(std::size_t i = 0; i < bundle_.actors.size(); ++i) {
            const Actor& actor = bundle_.actors[i];
            Matrix obs(static_cast<Eigen::Index>(actor.obs_dim()), static_cast<Eigen::Index>(trs.size()));
            std::vector<Action> acts;
            for(std::size_t k = 0; k < trs.size(); ++k) {
                obs.col(static_cast<Eigen::Index>(k)) =
                    Eigen::Map<const Vector>(trs[k]->local_obs[i].data(), obs.rows());
                acts.push_back(trs[k]->actions[i]);
            }
            entropy += actor.evaluate(obs, acts).entropy.mean() / static_cast<double>(bundle_.actors.size());
        }
        row.entropy = entropy;
    }

    RunConfig cfg_;
    std::unique_ptr<Env> env_;
    PolicyBundle bundle_;
    std::optional<PpoLearner> learner_;
    ImplicitRewardModel model_;
    std::optional<RewardModelTrainer> reward_trainer_;
    SupervisedRewardNet sl_net_;
    std::optional<SlRewardTrainer> sl_trainer_;
    std::optional<LlmLabeler> labeler_;
    PreferenceBuffer buffer_;
    Rng pair_rng_;
    Rng reward_rng_;
    std::size_t iter_ = 0;
    std::size_t env_steps_ = 0;
    std::size_t reward_steps_ = 0;
    double last_batch_return_ = 0.0;
};

/// Re-emits a run's metrics.csv in long (iter, metric, value) form.
[[nodiscard]] inline std::string tidy_metrics(const std::filesystem::path& run_dir)
{
    std::ifstream in(run_dir / "metrics.csv");
    if(!in) {
        throw Error("no metrics.csv under " + run_dir.string());
    }
    std::string line;
    std::getline(in, line);
    std::vector<std::string> header;
    {
        std::stringstream ss(line);
        std::string cell;
        while(std::getline(ss, cell, ',')) {
            header.push_back(cell);
        }
    }
    std::string out = "iter,metric,value\n";
    while(std::getline(in, line)) {
        if(line.empty()) {
            continue;
        }
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while(std::getline(ss, cell, ',')) {
            cells.push_back(cell);
        }
        cells.resize(header.size());
        for(std::size_t c = 1; c < header.size(); ++c) {
            if(!cells[c].empty()) {
                out += cells[0] + "," + header[c] + "," + cells[c] + "\n";
            }
        }
    }
    return out;
}

}  // namespace imap

#endif  // IMAP_TRAINER_HPP

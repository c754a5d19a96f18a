#ifndef IMAP_CONFIG_HPP
#define IMAP_CONFIG_HPP

#include <algorithm>
#include <filesystem>
#include <memory>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>
#include <toml.hpp>

#include "imap/baselines.hpp"
#include "imap/common.hpp"
#include "imap/envs/coop_matrix_game.hpp"
#include "imap/envs/grid_gather.hpp"
#include "imap/envs/tabular_mdp.hpp"
#include "imap/policy.hpp"
#include "imap/reward_model.hpp"

namespace imap {

using json = nlohmann::json;

inline const std::vector<std::string>& known_algorithms()
{
    static const std::vector<std::string> names{"imap_la", "imap_ga", "sparse_mappo", "sl_mappo", "online_ipl"};
    return names;
}

struct EnvConfig {
    std::string name = "coop_matrix";
    // coop_matrix
    int actions = 3;
    int horizon = 0;  // 0 selects the environment default
    double gamma = 0.99;
    std::vector<double> payoff = CoopMatrixGame::climbing_payoff();
    // grid_gather
    int size = 5;
    int agents = 2;
    int items = 4;
    double step_penalty = 0.01;
    // tabular
    std::uint64_t mdp_seed = 0;
    std::size_t states = 4;
};

struct PreferenceConfig {
    std::string source = "rule";
    std::size_t max_pairs = 64;
    std::size_t capacity = 10'000;
    std::string llm_model = "gpt-4o-mini";
    std::size_t llm_concurrency = 4;
    int llm_timeout = 30;
};

struct RewardConfig {
    std::vector<std::size_t> hidden{64, 64};
    double beta = 1.0;
    double lambda_reg = 0.5;
    double lr = 5e-4;
    std::size_t steps_per_iter = 50;
    std::size_t pair_batch = 64;
    std::size_t transition_batch = 256;
    double extreme_v_offset = 0.0;
};

struct BaselineConfig {
    double ipl_beta = 1.0;
    std::size_t ipl_extract_every = 20;
    std::size_t ipl_bc_steps = 50;
    double ipl_bc_lr = 1e-3;
    double sl_lr = 5e-4;
};

struct RunConfig {
    std::string algo = "imap_la";
    std::uint64_t seed = 0;
    std::size_t iterations = 300;
    std::string output_dir = "runs/default";
    std::size_t episodes_per_iter = 32;
    std::size_t workers = 1;
    std::size_t checkpoint_every = 10;
    std::size_t prop2_every = 10;
    std::size_t eval_episodes = 256;
    std::vector<std::size_t> hidden{256, 256};
    EnvConfig env;
    PreferenceConfig preference;
    RewardConfig reward;
    PpoConfig ppo;
    BaselineConfig baselines;

    void validate() const
    {
        if(std::find(known_algorithms().begin(), known_algorithms().end(), algo) == known_algorithms().end()) {
            throw ConfigError("unknown algo '" + algo + "'");
        }
        if(env.name != "coop_matrix" && env.name != "grid_gather" && env.name != "tabular") {
            throw ConfigError("unknown env '" + env.name + "'");
        }
        if(preference.source != "rule" && preference.source != "llm") {
            throw ConfigError("preference.source must be 'rule' or 'llm'");
        }
        if(preference.capacity == 0 || preference.llm_concurrency == 0) {
            throw ConfigError("preference capacity and llm_concurrency must be positive");
        }
        if(!(reward.beta > 0.0) || !(reward.lambda_reg >= 0.0) || !(reward.lr >= 0.0)) {
            throw ConfigError("reward: beta > 0, lambda_reg >= 0 and lr >= 0 required");
        }
        if(reward.pair_batch == 0 || reward.transition_batch == 0) {
            throw ConfigError("reward batch sizes must be positive");
        }
        if(!(baselines.ipl_beta > 0.0) || baselines.ipl_extract_every == 0) {
            throw ConfigError("baselines: ipl_beta > 0 and ipl_extract_every > 0 required");
        }
        if(workers == 0) {
            throw ConfigError("workers must be positive");
        }
        ppo.validate();
    }
};

namespace detail {

/// Reads keys from one JSON object and rejects any key that was not consumed.
class ObjectReader {
  public:
    ObjectReader(const json& obj, std::string path) : obj_(obj), path_(std::move(path))
    {
        if(!obj_.is_object()) {
            throw ConfigError("config: '" + path_ + "' must be a table");
        }
    }

    template <typename T>
    void read(const char* key, T& out)
    {
        seen_.insert(key);
        if(!obj_.contains(key)) {
            return;
        }
        try {
            out = obj_.at(key).get<T>();
        } catch(const json::exception& ex) {
            throw ConfigError("config: bad value for '" + qualified(key) + "': " + ex.what());
        }
    }

    [[nodiscard]] const json* child(const char* key)
    {
        seen_.insert(key);
        return obj_.contains(key) ? &obj_.at(key) : nullptr;
    }

    [[nodiscard]] std::string qualified(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    void finish() const
    {
        for(const auto& [key, value] : obj_.items()) {
            if(!seen_.contains(key)) {
                throw ConfigError("config: unknown key '" + qualified(key) + "'");
            }
        }
    }

  private:
    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

inline json toml_to_json(const toml::node& node)
{
    if(const auto* t = node.as_table()) {
        json obj = json::object();
        for(const auto& [k, v] : *t) {
            obj[std::string(k.str())] = toml_to_json(v);
        }
        return obj;
    }
    if(const auto* a = node.as_array()) {
        json arr = json::array();
        for(const auto& v : *a) {
            arr.push_back(toml_to_json(v));
        }
        return arr;
    }
    if(const auto* v = node.as_string()) {
        return v->get();
    }
    if(const auto* v = node.as_integer()) {
        return v->get();
    }
    if(const auto* v = node.as_floating_point()) {
        return v->get();
    }
    if(const auto* v = node.as_boolean()) {
        return v->get();
    }
    throw ConfigError("config: unsupported TOML value type (dates and times are not accepted)");
}

}  // namespace detail

/// Builds a RunConfig from a JSON object (defaults for absent keys, unknown keys rejected).
[[nodiscard]] inline RunConfig config_from_json(const json& root)
{
    RunConfig cfg;
    detail::ObjectReader top(root, "");
    if(const json* run = top.child("run")) {
        detail::ObjectReader r(*run, "run");
        r.read("algo", cfg.algo);
        r.read("seed", cfg.seed);
        r.read("iterations", cfg.iterations);
        r.read("output_dir", cfg.output_dir);
        r.read("episodes_per_iter", cfg.episodes_per_iter);
        r.read("workers", cfg.workers);
        r.read("checkpoint_every", cfg.checkpoint_every);
        r.read("prop2_every", cfg.prop2_every);
        r.read("eval_episodes", cfg.eval_episodes);
        r.read("hidden", cfg.hidden);
        r.finish();
    }
    if(const json* env = top.child("env")) {
        detail::ObjectReader r(*env, "env");
        r.read("name", cfg.env.name);
        r.read("actions", cfg.env.actions);
        r.read("horizon", cfg.env.horizon);
        r.read("gamma", cfg.env.gamma);
        r.read("payoff", cfg.env.payoff);
        std::uint64_t payoff_seed = 0;
        bool has_payoff_seed = env->contains("payoff_seed");
        r.read("payoff_seed", payoff_seed);
        if(has_payoff_seed) {
            if(env->contains("payoff")) {
                throw ConfigError("config: give either env.payoff or env.payoff_seed, not both");
            }
            cfg.env.payoff = CoopMatrixGame::payoff_from_seed(payoff_seed, cfg.env.actions);
        }
        r.read("size", cfg.env.size);
        r.read("agents", cfg.env.agents);
        r.read("items", cfg.env.items);
        r.read("step_penalty", cfg.env.step_penalty);
        r.read("mdp_seed", cfg.env.mdp_seed);
        r.read("states", cfg.env.states);
        r.finish();
    }
    if(const json* pref = top.child("preference")) {
        detail::ObjectReader r(*pref, "preference");
        r.read("source", cfg.preference.source);
        r.read("max_pairs", cfg.preference.max_pairs);
        r.read("capacity", cfg.preference.capacity);
        r.read("llm_model", cfg.preference.llm_model);
        r.read("llm_concurrency", cfg.preference.llm_concurrency);
        r.read("llm_timeout", cfg.preference.llm_timeout);
        r.finish();
    }
    if(const json* rew = top.child("reward")) {
        detail::ObjectReader r(*rew, "reward");
        r.read("hidden", cfg.reward.hidden);
        r.read("beta", cfg.reward.beta);
        r.read("lambda_reg", cfg.reward.lambda_reg);
        r.read("lr", cfg.reward.lr);
        r.read("steps_per_iter", cfg.reward.steps_per_iter);
        r.read("pair_batch", cfg.reward.pair_batch);
        r.read("transition_batch", cfg.reward.transition_batch);
        r.read("extreme_v_offset", cfg.reward.extreme_v_offset);
        r.finish();
    }
    if(const json* ppo = top.child("ppo")) {
        detail::ObjectReader r(*ppo, "ppo");
        r.read("gamma", cfg.ppo.gamma);
        r.read("gae_lambda", cfg.ppo.gae_lambda);
        r.read("clip", cfg.ppo.clip);
        r.read("value_clip", cfg.ppo.value_clip);
        r.read("entropy_coef", cfg.ppo.entropy_coef);
        r.read("epochs", cfg.ppo.epochs);
        r.read("minibatch", cfg.ppo.minibatch);
        r.read("actor_lr", cfg.ppo.actor_lr);
        r.read("critic_lr", cfg.ppo.critic_lr);
        r.read("grad_clip", cfg.ppo.grad_clip);
        r.read("standardize", cfg.ppo.standardize);
        r.read("uncorrected_delta", cfg.ppo.uncorrected_delta);
        r.finish();
    }
    if(const json* b = top.child("baselines")) {
        detail::ObjectReader r(*b, "baselines");
        r.read("ipl_beta", cfg.baselines.ipl_beta);
        r.read("ipl_extract_every", cfg.baselines.ipl_extract_every);
        r.read("ipl_bc_steps", cfg.baselines.ipl_bc_steps);
        r.read("ipl_bc_lr", cfg.baselines.ipl_bc_lr);
        r.read("sl_lr", cfg.baselines.sl_lr);
        r.finish();
    }
    top.finish();
    cfg.validate();
    return cfg;
}

/// Effective configuration (defaults merged) in the same layout config_from_json reads.
[[nodiscard]] inline json config_to_json(const RunConfig& c)
{
    return {
        {"run",
         {{"algo", c.algo},
          {"seed", c.seed},
          {"iterations", c.iterations},
          {"output_dir", c.output_dir},
          {"episodes_per_iter", c.episodes_per_iter},
          {"workers", c.workers},
          {"checkpoint_every", c.checkpoint_every},
          {"prop2_every", c.prop2_every},
          {"eval_episodes", c.eval_episodes},
          {"hidden", c.hidden}}},
        {"env",
         {{"name", c.env.name},
          {"actions", c.env.actions},
          {"horizon", c.env.horizon},
          {"gamma", c.env.gamma},
          {"payoff", c.env.payoff},
          {"size", c.env.size},
          {"agents", c.env.agents},
          {"items", c.env.items},
          {"step_penalty", c.env.step_penalty},
          {"mdp_seed", c.env.mdp_seed},
          {"states", c.env.states}}},
        {"preference",
         {{"source", c.preference.source},
          {"max_pairs", c.preference.max_pairs},
          {"capacity", c.preference.capacity},
          {"llm_model", c.preference.llm_model},
          {"llm_concurrency", c.preference.llm_concurrency},
          {"llm_timeout", c.preference.llm_timeout}}},
        {"reward",
         {{"hidden", c.reward.hidden},
          {"beta", c.reward.beta},
          {"lambda_reg", c.reward.lambda_reg},
          {"lr", c.reward.lr},
          {"steps_per_iter", c.reward.steps_per_iter},
          {"pair_batch", c.reward.pair_batch},
          {"transition_batch", c.reward.transition_batch},
          {"extreme_v_offset", c.reward.extreme_v_offset}}},
        {"ppo",
         {{"gamma", c.ppo.gamma},
          {"gae_lambda", c.ppo.gae_lambda},
          {"clip", c.ppo.clip},
          {"value_clip", c.ppo.value_clip},
          {"entropy_coef", c.ppo.entropy_coef},
          {"epochs", c.ppo.epochs},
          {"minibatch", c.ppo.minibatch},
          {"actor_lr", c.ppo.actor_lr},
          {"critic_lr", c.ppo.critic_lr},
          {"grad_clip", c.ppo.grad_clip},
          {"standardize", c.ppo.standardize},
          {"uncorrected_delta", c.ppo.uncorrected_delta}}},
        {"baselines",
         {{"ipl_beta", c.baselines.ipl_beta},
          {"ipl_extract_every", c.baselines.ipl_extract_every},
          {"ipl_bc_steps", c.baselines.ipl_bc_steps},
          {"ipl_bc_lr", c.baselines.ipl_bc_lr},
          {"sl_lr", c.baselines.sl_lr}}},
    };
}

[[nodiscard]] inline RunConfig parse_config_text(const std::string& text, bool is_json)
{
    if(is_json) {
        json j;
        try {
            j = json::parse(text);
        } catch(const json::exception& ex) {
            throw ConfigError(std::string("config: invalid JSON: ") + ex.what());
        }
        return config_from_json(j);
    }
    try {
        const toml::table table = toml::parse(text);
        return config_from_json(detail::toml_to_json(table));
    } catch(const toml::parse_error& ex) {
        std::ostringstream msg;
        msg << "config: invalid TOML at line " << ex.source().begin.line << ": " << ex.description();
        throw ConfigError(msg.str());
    }
}

/// Loads a .toml or .json config file.
[[nodiscard]] inline RunConfig load_config(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if(!in) {
        throw ConfigError("config: cannot open " + path.string());
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_config_text(buf.str(), path.extension() == ".json");
}

[[nodiscard]] inline std::unique_ptr<Env> make_env(const EnvConfig& e)
{
    if(e.name == "coop_matrix") {
        return std::make_unique<CoopMatrixGame>(
            CoopMatrixGame::Config{e.actions, e.horizon > 0 ? e.horizon : 5, e.gamma, e.payoff});
    }
    if(e.name == "grid_gather") {
        return std::make_unique<GridGather>(
            GridGather::Config{e.size, e.agents, e.items, e.horizon > 0 ? e.horizon : 25, e.step_penalty});
    }
    if(e.name == "tabular") {
        return std::make_unique<TabularEnv>(TabularMDP::separable_fixture(e.mdp_seed, e.states, e.actions, e.horizon > 0 ? e.horizon : 3, e.gamma));
    }
    throw ConfigError("unknown env '" + e.name + "'");
}

}  // namespace imap

#endif  // IMAP_CONFIG_HPP

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>

#include <gtest/gtest.h>

#include "imap/checkpoint.hpp"
#include "imap/config.hpp"
#include "imap/trainer.hpp"

using namespace imap;
namespace fs = std::filesystem;

namespace {

std::string read_file(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

fs::path fresh_dir(const std::string& name)
{
    const auto dir = fs::temp_directory_path() / ("imap_test_app_" + name);
    fs::remove_all(dir);
    return dir;
}

RunConfig tiny_config(const std::string& algo)
{
    RunConfig c;
    c.algo = algo;
    c.iterations = 2;
    c.output_dir.clear();
    c.episodes_per_iter = 6;
    c.eval_episodes = 8;
    c.checkpoint_every = 1;
    c.prop2_every = 1;
    c.hidden = {8};
    c.reward.hidden = {8};
    c.reward.steps_per_iter = 3;
    c.baselines.ipl_extract_every = 1;
    c.baselines.ipl_bc_steps = 3;
    c.ppo.epochs = 2;
    c.ppo.minibatch = 16;
    return c;
}

std::string cli()
{
    const char* p = std::getenv("IMAP_CLI");
    return p ? p : "";
}

int run_cli(const std::string& args, const fs::path& out)
{
    const int status = std::system((cli() + " " + args + " > " + out.string() + " 2>&1").c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

class FixedTransport final : public ChatTransport {
  public:
    explicit FixedTransport(std::string reply) : reply_(std::move(reply)) {}

    std::string complete(const std::string&) override
    {
        std::lock_guard lock(mu_);
        ++calls;
        if(reply_ == "<fail>") {
            throw Error("endpoint down");
        }
        return reply_;
    }

    std::size_t calls = 0;

  private:
    std::string reply_;
    std::mutex mu_;
};

}  // namespace

TEST(Config, UnknownKeysAreRejected)
{
    EXPECT_THROW((void)parse_config_text("[run]\nalgo = \"imap_la\"\nbogus = 1\n", false), ConfigError);
    EXPECT_THROW((void)parse_config_text("[nonsense]\nx = 1\n", false), ConfigError);
    EXPECT_THROW((void)parse_config_text("{\"ppo\": {\"clipp\": 0.1}}", true), ConfigError);
}

TEST(Config, InvalidValuesAreRejected)
{
    EXPECT_THROW((void)parse_config_text("[run]\nalgo = \"dqn\"\n", false), ConfigError);
    EXPECT_THROW((void)parse_config_text("[reward]\nbeta = 0.0\n", false), ConfigError);
    EXPECT_THROW((void)parse_config_text("[preference]\nsource = \"oracle\"\n", false), ConfigError);
    EXPECT_THROW((void)parse_config_text("[run]\nseed = \"zero\"\n", false), ConfigError);
    EXPECT_THROW((void)parse_config_text("[run\n", false), ConfigError);
    EXPECT_THROW((void)parse_config_text("[env]\npayoff_seed = 3\npayoff = [1.0]\n", false), ConfigError);
    EXPECT_THROW((void)load_config("/nonexistent/imap.toml"), ConfigError);
}

TEST(Config, RoundTripsThroughJson)
{
    const auto cfg = parse_config_text("[run]\nalgo = \"sl_mappo\"\nseed = 7\n[ppo]\nclip = 0.3\n[env]\nname = \"grid_gather\"\n", false);
    EXPECT_EQ(cfg.algo, "sl_mappo");
    EXPECT_EQ(cfg.seed, 7u);
    EXPECT_DOUBLE_EQ(cfg.ppo.clip, 0.3);
    const auto j = config_to_json(cfg);
    EXPECT_EQ(config_to_json(config_from_json(j)), j);
}

TEST(Config, ShippedConfigsParse)
{
    const fs::path dir = fs::path(IMAP_FIXTURE_DIR).parent_path().parent_path() / "configs";
    std::size_t count = 0;
    for(const auto& entry : fs::directory_iterator(dir)) {
        if(entry.path().extension() == ".toml") {
            EXPECT_NO_THROW((void)load_config(entry.path())) << entry.path();
            ++count;
        }
    }
    EXPECT_GE(count, 2u);
}

TEST(Runner, WritesAllOutputs)
{
    auto cfg = tiny_config("imap_la");
    const auto dir = fresh_dir("outputs");
    cfg.output_dir = dir.string();
    Runner runner(cfg);
    const auto summary = runner.run();
    for(const char* f : {"config.json", "metrics.csv", "timings.csv", "summary.json", "checkpoints/final.ckpt",
                         "checkpoints/iter_1.ckpt", "checkpoints/iter_2.ckpt"}) {
        EXPECT_TRUE(fs::exists(dir / f)) << f;
    }
    std::istringstream metrics(read_file(dir / "metrics.csv"));
    std::string line;
    std::getline(metrics, line);
    EXPECT_EQ(line, metrics_header);
    std::size_t rows = 0;
    while(std::getline(metrics, line)) {
        ++rows;
        EXPECT_EQ(std::count(line.begin(), line.end(), ','), 10);
    }
    EXPECT_EQ(rows, 2u);
    const auto written = nlohmann::json::parse(read_file(dir / "summary.json"));
    EXPECT_EQ(written.at("algo"), "imap_la");
    EXPECT_EQ(written.at("iterations"), 2);
    EXPECT_TRUE(summary.optimal_return.has_value());
    EXPECT_EQ(load_config(dir / "config.json").seed, cfg.seed);
}

TEST(Runner, SeededRunsAreByteIdentical)
{
    std::string first;
    for(int k = 0; k < 2; ++k) {
        auto cfg = tiny_config("imap_la");
        cfg.iterations = 3;
        const auto dir = fresh_dir("det" + std::to_string(k));
        cfg.output_dir = dir.string();
        Runner(cfg).run();
        const auto text = read_file(dir / "metrics.csv");
        if(k == 0) {
            first = text;
        } else {
            EXPECT_EQ(text, first);
        }
    }
    auto other = tiny_config("imap_la");
    other.iterations = 3;
    other.seed = 1;
    const auto dir = fresh_dir("det_other");
    other.output_dir = dir.string();
    Runner(other).run();
    EXPECT_NE(read_file(dir / "metrics.csv"), first);
}

TEST(Runner, WorkerCountDoesNotChangeResults)
{
    auto a = tiny_config("imap_ga");
    auto b = a;
    b.workers = 3;
    Runner ra(a), rb(b);
    for(int k = 0; k < 2; ++k) {
        EXPECT_EQ(format_metrics_row(ra.step()), format_metrics_row(rb.step()));
    }
}

TEST(Runner, EveryAlgorithmRunsOnEveryEnvironment)
{
    for(const auto& algo : known_algorithms()) {
        for(const std::string env : {"coop_matrix", "grid_gather", "tabular"}) {
            auto cfg = tiny_config(algo);
            cfg.env.name = env;
            if(env == "tabular") {
                cfg.env.gamma = 0.9;
                cfg.ppo.gamma = 0.9;
            }
            Runner runner(cfg);
            const auto s = runner.run();
            EXPECT_EQ(s.iterations, 2u) << algo << " " << env;
            EXPECT_TRUE(std::isfinite(s.eval_return)) << algo << " " << env;
            EXPECT_EQ(runner.preferences().insertions() > 0, algo != "sparse_mappo") << algo << " " << env;
        }
    }
}

TEST(Runner, MetricsFieldsMatchAlgorithm)
{
    Runner la(tiny_config("imap_la"));
    const auto r = la.step();
    ASSERT_TRUE(r.prop2_residual.has_value());
    EXPECT_LT(*r.prop2_residual, 1e-8);
    ASSERT_TRUE(r.mean_w.has_value());
    EXPECT_GT(*r.mean_w, 0.0);
    Runner sparse(tiny_config("sparse_mappo"));
    const auto s = sparse.step();
    EXPECT_FALSE(s.prop2_residual.has_value());
    EXPECT_FALSE(s.mean_w.has_value());
    EXPECT_EQ(s.pref_loss, 0.0);
}

TEST(Runner, CheckpointRoundTrip)
{
    auto cfg = tiny_config("sl_mappo");
    const auto dir = fresh_dir("ckpt");
    cfg.output_dir = dir.string();
    Runner runner(cfg);
    runner.run();
    const auto loaded = load_checkpoint(dir / "checkpoints" / "final.ckpt");
    const auto live = runner.checkpoint_blocks();
    ASSERT_EQ(loaded.size(), live.size());
    for(std::size_t k = 0; k < live.size(); ++k) {
        EXPECT_EQ(loaded[k].name, live[k].name);
        EXPECT_EQ(loaded[k].block.values, live[k].block.values);
        EXPECT_TRUE(loaded[k].block.same_layout(live[k].block));
    }
    const auto bytes = read_file(dir / "checkpoints" / "final.ckpt");
    EXPECT_THROW((void)decode_checkpoint(bytes.substr(0, bytes.size() - 1)), CheckpointError);
    EXPECT_THROW((void)decode_checkpoint(bytes + "x"), CheckpointError);
    EXPECT_THROW((void)decode_checkpoint("NOTACKPT" + bytes.substr(8)), CheckpointError);
}

TEST(Runner, LlmPreferencesThroughTransport)
{
    auto cfg = tiny_config("imap_la");
    cfg.preference.source = "llm";
    cfg.preference.max_pairs = 4;
    const auto dir = fresh_dir("llm");
    cfg.output_dir = dir.string();
    auto ok = std::make_shared<FixedTransport>("#1");
    const auto s = Runner(cfg, ok).run();
    ASSERT_TRUE(s.llm.has_value());
    EXPECT_GT(s.llm->llm_labels, 0u);
    EXPECT_EQ(s.llm->fallbacks, 0u);
    EXPECT_EQ(ok->calls, s.llm->queried);
    EXPECT_TRUE(fs::exists(dir / "llm_audit.jsonl"));

    cfg.output_dir.clear();
    auto down = std::make_shared<FixedTransport>("<fail>");
    const auto f = Runner(cfg, down).run();
    ASSERT_TRUE(f.llm.has_value());
    EXPECT_EQ(f.llm->llm_labels, 0u);
    EXPECT_GT(f.llm->fallbacks, 0u);
    EXPECT_GT(f.preference_pairs, 0u);
}

TEST(PlotData, LongFormSkipsEmptyCells)
{
    const auto dir = fresh_dir("tidy");
    fs::create_directories(dir);
    std::ofstream(dir / "metrics.csv") << metrics_header << "\n"
                                       << "0,10,1.5,0.7,0.1,0.2,0.3,1.1,,,\n";
    const auto out = tidy_metrics(dir);
    EXPECT_EQ(out.rfind("iter,metric,value\n", 0), 0u);
    EXPECT_NE(out.find("0,mean_return,1.5\n"), std::string::npos);
    EXPECT_EQ(out.find("prop2_residual"), std::string::npos);
    EXPECT_EQ(std::count(out.begin(), out.end(), '\n'), 8);
    EXPECT_THROW((void)tidy_metrics(dir / "missing"), Error);
}

TEST(Cli, ExitCodes)
{
    ASSERT_FALSE(cli().empty()) << "IMAP_CLI not set";
    const auto dir = fresh_dir("cli");
    fs::create_directories(dir);
    const auto log = dir / "out.txt";

    EXPECT_EQ(run_cli("--help", log), 0);
    EXPECT_NE(read_file(log).find("verify"), std::string::npos);

    std::ofstream(dir / "bad.toml") << "[run]\nalgo = \"imap_la\"\ntypo_key = 3\n";
    EXPECT_EQ(run_cli("run --config " + (dir / "bad.toml").string(), log), 2);
    EXPECT_NE(read_file(log).find("typo_key"), std::string::npos);

    EXPECT_EQ(run_cli("verify --only prop2 --quick", log), 0);
    EXPECT_NE(read_file(log).find("PASS prop2"), std::string::npos);

    EXPECT_NE(run_cli("verify --only prop2 --mixer-weights 0,1", log), 0);
    EXPECT_NE(read_file(log).find("precondition_violation"), std::string::npos);

    EXPECT_EQ(run_cli("verify --only nonsense", log), 2);
}

TEST(Cli, RunThenPlotData)
{
    ASSERT_FALSE(cli().empty()) << "IMAP_CLI not set";
    const auto dir = fresh_dir("cli_run");
    fs::create_directories(dir);
    std::ofstream(dir / "cfg.toml") << "[run]\nalgo = \"sparse_mappo\"\niterations = 2\nepisodes_per_iter = 4\n"
                                       "eval_episodes = 4\nhidden = [8]\n[ppo]\nepochs = 1\nminibatch = 8\n";
    const auto log = dir / "out.txt";
    EXPECT_EQ(run_cli("run --config " + (dir / "cfg.toml").string() + " --output-dir " + (dir / "run").string(), log), 0);
    EXPECT_TRUE(fs::exists(dir / "run" / "summary.json"));
    EXPECT_EQ(run_cli("plot-data --run-dir " + (dir / "run").string(), log), 0);
    EXPECT_NE(read_file(log).find("1,mean_return,"), std::string::npos);
}

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "imap/config.hpp"
#include "imap/trainer.hpp"
#include "imap/verify.hpp"

namespace {

constexpr int exit_verify_failed = 1;
constexpr int exit_bad_config = 2;
constexpr int exit_diverged = 3;

std::vector<double> parse_weights(const std::string& text)
{
    std::vector<double> out;
    std::stringstream ss(text);
    std::string cell;
    while(std::getline(ss, cell, ',')) {
        try {
            out.push_back(std::stod(cell));
        } catch(const std::exception&) {
            throw imap::ConfigError("--mixer-weights expects comma-separated numbers, got '" + text + "'");
        }
    }
    return out;
}

int cmd_run(const std::string& config_path, const std::optional<std::string>& algo, const std::optional<std::uint64_t>& seed,
            const std::optional<std::size_t>& iterations, const std::optional<std::string>& output_dir)
{
    imap::RunConfig cfg;
    try {
        cfg = imap::load_config(config_path);
        if(algo) {
            cfg.algo = *algo;
        }
        if(seed) {
            cfg.seed = *seed;
        }
        if(iterations) {
            cfg.iterations = *iterations;
        }
        if(output_dir) {
            cfg.output_dir = *output_dir;
        }
        cfg.validate();
    } catch(const imap::ConfigError& ex) {
        std::cerr << "invalid config: " << ex.what() << '\n';
        return exit_bad_config;
    }
    try {
        imap::Runner runner(cfg);
        const auto summary = runner.run();
        std::cout << summary.to_json().dump(2) << '\n';
    } catch(const imap::ConfigError& ex) {
        std::cerr << "invalid config: " << ex.what() << '\n';
        return exit_bad_config;
    } catch(const imap::DivergenceError& ex) {
        std::cerr << "run diverged: " << ex.what() << '\n';
        return exit_diverged;
    }
    return 0;
}

int cmd_verify(const std::vector<std::string>& only, const std::string& report_dir, const std::string& mixer_weights,
               bool quick)
{
    imap::VerifyOptions opt;
    if(!mixer_weights.empty()) {
        try {
            opt.mixer_weights = parse_weights(mixer_weights);
        } catch(const imap::ConfigError& ex) {
            std::cerr << ex.what() << '\n';
            return exit_bad_config;
        }
    }
    if(quick) {
        opt.gradient_seeds = 3;
        opt.prop2_instances = 20;
        opt.theorem1_seeds = 1;
        opt.theorem1_scaling = false;
    }
    std::vector<std::string> checks = only.empty() ? imap::verify_check_names() : only;
    for(const auto& c : checks) {
        const auto& known = imap::verify_check_names();
        if(std::find(known.begin(), known.end(), c) == known.end()) {
            std::cerr << "unknown check '" << c << "'\n";
            return exit_bad_config;
        }
    }
    if(!report_dir.empty()) {
        std::filesystem::create_directories(report_dir);
    }
    bool all = true;
    for(const auto& name : checks) {
        const auto outcome = imap::run_verify_check(name, opt);
        all = all && outcome.passed;
        std::cout << (outcome.passed ? "PASS " : "FAIL ") << name << '\n';
        if(!outcome.passed) {
            std::cout << outcome.report.dump(2) << '\n';
        }
        if(!report_dir.empty()) {
            nlohmann::json doc = {{"check", name}, {"passed", outcome.passed}, {"report", outcome.report}};
            std::ofstream(std::filesystem::path(report_dir) / (name + ".json")) << doc.dump(2) << '\n';
        }
    }
    return all ? 0 : exit_verify_failed;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Implicit multi-agent preference learning: training runs, oracle checks and metric export"};
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Train with the configured algorithm");
    std::string config_path;
    std::optional<std::string> algo;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> iterations;
    std::optional<std::string> output_dir;
    run->add_option("--config", config_path, "TOML or JSON config file")->required();
    run->add_option("--algo", algo, "imap_la | imap_ga | sparse_mappo | sl_mappo | online_ipl");
    run->add_option("--seed", seed, "Override run.seed");
    run->add_option("--iterations", iterations, "Override run.iterations");
    run->add_option("--output-dir", output_dir, "Override run.output_dir");

    auto* verify = app.add_subcommand("verify", "Run the oracle checks");
    std::vector<std::string> only;
    std::string report_dir;
    std::string mixer_weights;
    bool quick = false;
    verify->add_option("--only", only, "Subset of: prop1 prop2 prop3 soft_value theorem1 gradients");
    verify->add_option("--report-dir", report_dir, "Write one JSON report per check here");
    verify->add_option("--mixer-weights", mixer_weights, "Comma-separated mixer weights for the prop2 fixture");
    verify->add_flag("--quick", quick, "Fewer seeds and instances");

    auto* plot = app.add_subcommand("plot-data", "Emit metrics in long (iter, metric, value) CSV form");
    std::string run_dir;
    plot->add_option("--run-dir", run_dir, "Directory holding metrics.csv")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if(run->parsed()) {
            return cmd_run(config_path, algo, seed, iterations, output_dir);
        }
        if(verify->parsed()) {
            return cmd_verify(only, report_dir, mixer_weights, quick);
        }
        if(plot->parsed()) {
            std::cout << imap::tidy_metrics(run_dir);
            return 0;
        }
    } catch(const std::exception& ex) {
        std::cerr << "error: " << ex.what() << '\n';
        return 1;
    }
    return 0;
}

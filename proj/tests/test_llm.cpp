#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <thread>

#include <gtest/gtest.h>

#include "imap/llm.hpp"

using namespace imap;

namespace {

TrajectoryRef coop_traj(double ret)
{
    Trajectory t;
    Transition tr;
    tr.done = true;
    t.transitions.push_back(tr);
    t.episodic_return = ret;
    t.metadata = {{"Payoff Per Step", {ret}, false}, {"Team Score", {ret}, false}};
    return std::make_shared<const Trajectory>(std::move(t));
}

class ScriptedTransport final : public ChatTransport {
  public:
    explicit ScriptedTransport(std::vector<std::string> replies) : replies_(std::move(replies)) {}

    std::string complete(const std::string& prompt) override
    {
        std::lock_guard lock(mu_);
        prompts.push_back(prompt);
        const auto& r = replies_[calls_++ % replies_.size()];
        if(r == "<fail>") {
            throw Error("scripted transport failure");
        }
        return r;
    }

    std::vector<std::string> prompts;

  private:
    std::mutex mu_;
    std::vector<std::string> replies_;
    std::size_t calls_ = 0;
};

class CountingTransport final : public ChatTransport {
  public:
    std::string complete(const std::string&) override
    {
        const int now = ++in_flight;
        int seen = peak.load();
        while(now > seen && !peak.compare_exchange_weak(seen, now)) {
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
        --in_flight;
        return "#1";
    }

    std::atomic<int> in_flight{0};
    std::atomic<int> peak{0};
};

std::vector<std::pair<TrajectoryRef, TrajectoryRef>> candidates(std::size_t n)
{
    std::vector<std::pair<TrajectoryRef, TrajectoryRef>> out;
    for(std::size_t k = 0; k < n; ++k) {
        out.emplace_back(coop_traj(static_cast<double>(k)), coop_traj(static_cast<double>(k) + 1.0));
    }
    return out;
}

}  // namespace

TEST(LlmLabeler, ParsesJudgeAnswers)
{
    auto transport = std::make_shared<ScriptedTransport>(std::vector<std::string>{"#1", "#2", "Answer: #0"});
    LlmLabeler labeler(transport, coop_matrix_scenario(), 1);
    const auto cands = candidates(3);
    const auto pairs = labeler.label(cands);
    ASSERT_EQ(pairs.size(), 2u);
    EXPECT_EQ(pairs[0].winner, cands[0].first);
    EXPECT_EQ(pairs[0].source, LabelSource::llm);
    EXPECT_EQ(pairs[1].winner, cands[1].second);
    EXPECT_EQ(labeler.stats().llm_labels, 2u);
    EXPECT_EQ(labeler.stats().skipped, 1u);
    EXPECT_EQ(labeler.stats().fallbacks, 0u);
    ASSERT_EQ(transport->prompts.size(), 3u);
    EXPECT_EQ(transport->prompts[0],
              build_prompt(TrajectorySummary::from(*cands[0].first), TrajectorySummary::from(*cands[0].second),
                           coop_matrix_scenario()));
}

TEST(LlmLabeler, FailuresFallBackToRule)
{
    auto transport = std::make_shared<ScriptedTransport>(std::vector<std::string>{"<fail>", "garbage ~~", "#1"});
    LlmLabeler labeler(transport, coop_matrix_scenario(), 2);
    const auto cands = candidates(3);
    const auto pairs = labeler.label(cands);
    ASSERT_EQ(pairs.size(), 3u);
    EXPECT_EQ(pairs[0].source, LabelSource::rule);
    EXPECT_EQ(pairs[0].winner, cands[0].second);
    EXPECT_EQ(pairs[1].source, LabelSource::rule);
    EXPECT_EQ(pairs[2].source, LabelSource::llm);
    EXPECT_EQ(labeler.stats().fallbacks, 2u);
}

TEST(LlmLabeler, ConcurrencyCapIsRespected)
{
    auto transport = std::make_shared<CountingTransport>();
    LlmLabeler labeler(transport, coop_matrix_scenario(), 3);
    (void)labeler.label(candidates(12));
    EXPECT_LE(transport->peak.load(), 3);
    EXPECT_EQ(labeler.stats().queried, 12u);
}

TEST(LlmLabeler, AuditLogHasOneLinePerRequest)
{
    const auto path = std::filesystem::temp_directory_path() / "imap_llm_audit_test.jsonl";
    std::filesystem::remove(path);
    auto transport = std::make_shared<ScriptedTransport>(std::vector<std::string>{"#2", "<fail>"});
    LlmLabeler labeler(transport, coop_matrix_scenario(), 1, path);
    (void)labeler.label(candidates(2));
    std::ifstream in(path);
    std::string line;
    std::vector<nlohmann::json> rows;
    while(std::getline(in, line)) {
        rows.push_back(nlohmann::json::parse(line));
    }
    ASSERT_EQ(rows.size(), 2u);
    EXPECT_EQ(rows[0]["response"], "#2");
    EXPECT_EQ(rows[0]["label"], 2);
    EXPECT_EQ(rows[1]["outcome"], "fallback");
    EXPECT_TRUE(rows[1]["label"].is_null());
    EXPECT_TRUE(rows[1].contains("error"));
    std::filesystem::remove(path);
}

TEST(LlmLabeler, NullTransportRejected)
{
    EXPECT_THROW(LlmLabeler(nullptr, coop_matrix_scenario()), PreconditionError);
}

TEST(HttpChatTransport, SpeaksChatCompletions)
{
    httplib::Server server;
    nlohmann::json seen_body;
    std::string seen_auth;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        seen_body = nlohmann::json::parse(req.body);
        seen_auth = req.get_header_value("Authorization");
        const nlohmann::json reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", "#2"}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    LlmEndpoint ep{"http://127.0.0.1:" + std::to_string(port) + "/v1", "judge-model", "secret-token", 5};
    HttpChatTransport transport(ep);
    EXPECT_EQ(transport.complete("hello"), "#2");
    server.stop();
    th.join();

    EXPECT_EQ(seen_body["model"], "judge-model");
    EXPECT_EQ(seen_body["temperature"], 0);
    ASSERT_EQ(seen_body["messages"].size(), 1u);
    EXPECT_EQ(seen_body["messages"][0]["role"], "user");
    EXPECT_EQ(seen_body["messages"][0]["content"], "hello");
    EXPECT_EQ(seen_auth, "Bearer secret-token");
}

TEST(HttpChatTransport, ServerErrorThrows)
{
    httplib::Server server;
    server.Post("/chat/completions", [](const httplib::Request&, httplib::Response& res) { res.status = 500; });
    const int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    HttpChatTransport transport(LlmEndpoint{"http://127.0.0.1:" + std::to_string(port), "m", "", 5});
    EXPECT_THROW((void)transport.complete("x"), Error);
    server.stop();
    th.join();
}

TEST(LlmEndpoint, RequiresBaseUrlFromEnvironment)
{
    ::unsetenv("IMAP_LLM_BASE_URL");
    EXPECT_THROW((void)LlmEndpoint::from_env("m"), ConfigError);
    ::setenv("IMAP_LLM_BASE_URL", "http://localhost:9/v1", 1);
    ::setenv("IMAP_LLM_API_KEY", "k", 1);
    const auto ep = LlmEndpoint::from_env("m", 7);
    EXPECT_EQ(ep.api_key, "k");
    EXPECT_EQ(ep.timeout_seconds, 7);
    ::unsetenv("IMAP_LLM_BASE_URL");
    ::unsetenv("IMAP_LLM_API_KEY");
    EXPECT_THROW(HttpChatTransport(LlmEndpoint{"localhost:80", "m", "", 1}), ConfigError);
}

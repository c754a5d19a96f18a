#ifndef IMAP_LLM_HPP
#define IMAP_LLM_HPP

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "imap/preference.hpp"

#ifdef IMAP_WITH_OPENSSL
#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#endif
#include <httplib.h>
#include <json.hpp>

namespace imap {

/// Chat-completions endpoint; the API key is only ever read from the environment.
struct LlmEndpoint {
    std::string base_url;  // e.g. "https://host/v1"; requests go to <base_url>/chat/completions
    std::string model;
    std::string api_key;
    int timeout_seconds = 30;

    [[nodiscard]] static LlmEndpoint from_env(std::string model, int timeout_seconds = 30)
    {
        LlmEndpoint ep;
        if(const char* url = std::getenv("IMAP_LLM_BASE_URL")) {
            ep.base_url = url;
        }
        if(const char* key = std::getenv("IMAP_LLM_API_KEY")) {
            ep.api_key = key;
        }
        ep.model = std::move(model);
        ep.timeout_seconds = timeout_seconds;
        if(ep.base_url.empty()) {
            throw ConfigError("LLM preferences need IMAP_LLM_BASE_URL to be set");
        }
        return ep;
    }
};

/// Sends one prompt and returns the completion text; throws on transport or protocol failure.
class ChatTransport {
  public:
    virtual ~ChatTransport() = default;
    virtual std::string complete(const std::string& prompt) = 0;
};

class HttpChatTransport final : public ChatTransport {
  public:
    explicit HttpChatTransport(LlmEndpoint endpoint) : ep_(std::move(endpoint))
    {
        const auto scheme_end = ep_.base_url.find("://");
        if(scheme_end == std::string::npos) {
            throw ConfigError("LLM base URL must start with http:// or https://");
        }
        const auto path_start = ep_.base_url.find('/', scheme_end + 3);
        origin_ = ep_.base_url.substr(0, path_start);
        path_ = path_start == std::string::npos ? std::string() : ep_.base_url.substr(path_start);
        while(!path_.empty() && path_.back() == '/') {
            path_.pop_back();
        }
        path_ += "/chat/completions";
    }

    std::string complete(const std::string& prompt) override
    {
        httplib::Client client(origin_);
        client.set_connection_timeout(ep_.timeout_seconds, 0);
        client.set_read_timeout(ep_.timeout_seconds, 0);
        client.set_write_timeout(ep_.timeout_seconds, 0);
        httplib::Headers headers;
        if(!ep_.api_key.empty()) {
            headers.emplace("Authorization", "Bearer " + ep_.api_key);
        }
        const nlohmann::json body = {
            {"model", ep_.model},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
            {"temperature", 0},
        };
        auto res = client.Post(path_, headers, body.dump(), "application/json");
        if(!res) {
            throw Error("LLM request failed: " + httplib::to_string(res.error()));
        }
        if(res->status != 200) {
            throw Error("LLM endpoint returned HTTP " + std::to_string(res->status));
        }
        const auto reply = nlohmann::json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    }

  private:
    LlmEndpoint ep_;
    std::string origin_;
    std::string path_;
};

struct LlmLabelStats {
    std::size_t queried = 0;
    std::size_t llm_labels = 0;
    std::size_t skipped = 0;    // judge answered #0
    std::size_t fallbacks = 0;  // transport failure or unparseable answer
};

/**
 * Labels candidate pairs with an LLM judge. At most `concurrency` requests are in flight; results
 * are assembled in candidate order. Failures fall back to the return-based rule label.
 */
class LlmLabeler {
  public:
    LlmLabeler(std::shared_ptr<ChatTransport> transport, Scenario scenario, std::size_t concurrency = 4,
               std::optional<std::filesystem::path> audit_path = std::nullopt)
        : transport_(std::move(transport)), scenario_(std::move(scenario)),
          concurrency_(std::max<std::size_t>(1, concurrency)), audit_path_(std::move(audit_path))
    {
        if(!transport_) {
            throw PreconditionError("LlmLabeler needs a transport");
        }
    }

    [[nodiscard]] std::vector<PreferencePair> label(const std::vector<std::pair<TrajectoryRef, TrajectoryRef>>& candidates)
    {
        struct Outcome {
            std::optional<int> label;
            std::string response;
            std::string error;
        };
        std::vector<std::string> prompts(candidates.size());
        for(std::size_t k = 0; k < candidates.size(); ++k) {
            prompts[k] = build_prompt(TrajectorySummary::from(*candidates[k].first),
                                      TrajectorySummary::from(*candidates[k].second), scenario_);
        }
        std::vector<Outcome> outcomes(candidates.size());
        std::atomic<std::size_t> next{0};
        auto worker = [&] {
            for(std::size_t k = next++; k < candidates.size(); k = next++) {
                try {
                    outcomes[k].response = transport_->complete(prompts[k]);
                    outcomes[k].label = parse_label(outcomes[k].response);
                    if(!outcomes[k].label) {
                        outcomes[k].error = "unparseable response";
                    }
                } catch(const std::exception& ex) {
                    outcomes[k].error = ex.what();
                }
            }
        };
        {
            std::vector<std::jthread> pool;
            const std::size_t n_workers = std::min(concurrency_, candidates.size());
            for(std::size_t w = 0; w < n_workers; ++w) {
                pool.emplace_back(worker);
            }
        }
        std::vector<PreferencePair> out;
        for(std::size_t k = 0; k < candidates.size(); ++k) {
            const auto& [a, b] = candidates[k];
            const auto& o = outcomes[k];
            ++stats_.queried;
            std::string outcome;
            if(o.label == 1) {
                out.push_back({a, b, LabelSource::llm, std::nullopt});
                ++stats_.llm_labels;
                outcome = "llm";
            } else if(o.label == 2) {
                out.push_back({b, a, LabelSource::llm, std::nullopt});
                ++stats_.llm_labels;
                outcome = "llm";
            } else if(o.label == 0) {
                ++stats_.skipped;
                outcome = "skipped";
            } else {
                ++stats_.fallbacks;
                outcome = "fallback";
                if(auto p = rule_label(a, b)) {
                    out.push_back(std::move(*p));
                }
            }
            audit(prompts[k], o.response, o.label, outcome, o.error);
        }
        return out;
    }

    [[nodiscard]] const LlmLabelStats& stats() const noexcept { return stats_; }

  private:
    void audit(const std::string& prompt, const std::string& response, std::optional<int> label,
               const std::string& outcome, const std::string& error)
    {
        if(!audit_path_) {
            return;
        }
        nlohmann::json row = {{"prompt", prompt}, {"response", response}, {"outcome", outcome}};
        row["label"] = label ? nlohmann::json(*label) : nlohmann::json(nullptr);
        if(!error.empty()) {
            row["error"] = error;
        }
        std::ofstream out(*audit_path_, std::ios::app);
        out << row.dump() << '\n';
    }

    std::shared_ptr<ChatTransport> transport_;
    Scenario scenario_;
    std::size_t concurrency_;
    std::optional<std::filesystem::path> audit_path_;
    LlmLabelStats stats_;
};

}  // namespace imap

#endif  // IMAP_LLM_HPP

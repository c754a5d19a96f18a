#ifndef IMAP_PREFERENCE_HPP
#define IMAP_PREFERENCE_HPP

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_set>
#include <utility>
#include <vector>

#include "imap/env.hpp"

namespace imap {

enum class LabelSource { rule, llm, bt, tie_skipped };

[[nodiscard]] inline std::string_view to_string(LabelSource s) noexcept
{
    switch(s) {
        case LabelSource::rule: return "rule";
        case LabelSource::llm: return "llm";
        case LabelSource::bt: return "bt";
        case LabelSource::tie_skipped: return "tie-skipped";
    }
    return "unknown";
}

/// Ordered pair: `winner` is preferred over `loser`.
struct PreferencePair {
    TrajectoryRef winner;
    TrajectoryRef loser;
    LabelSource source = LabelSource::rule;
    std::optional<double> confidence;
};

/// Fixed-capacity FIFO of preference pairs.
class PreferenceBuffer {
  public:
    explicit PreferenceBuffer(std::size_t capacity = 10'000) : capacity_(capacity)
    {
        if(capacity_ == 0) {
            throw ConfigError("PreferenceBuffer capacity must be positive");
        }
        items_.reserve(std::min<std::size_t>(capacity_, 4096));
    }

    void push(PreferencePair pair)
    {
        if(!pair.winner || !pair.loser || pair.winner == pair.loser) {
            throw PreconditionError("PreferenceBuffer: pair needs two distinct trajectories");
        }
        if(items_.size() < capacity_) {
            items_.push_back(std::move(pair));
        } else {
            items_[head_] = std::move(pair);
            head_ = (head_ + 1) % capacity_;
        }
        ++insertions_;
    }

    void push(std::vector<PreferencePair> pairs)
    {
        for(auto& p : pairs) {
            push(std::move(p));
        }
    }

    [[nodiscard]] std::size_t size() const noexcept { return items_.size(); }
    [[nodiscard]] bool empty() const noexcept { return items_.empty(); }
    [[nodiscard]] std::size_t capacity() const noexcept { return capacity_; }
    [[nodiscard]] std::uint64_t insertions() const noexcept { return insertions_; }

    /// k-th oldest pair.
    [[nodiscard]] const PreferencePair& at(std::size_t k) const
    {
        if(k >= items_.size()) {
            throw PreconditionError("PreferenceBuffer index out of range");
        }
        return items_[(head_ + k) % items_.size()];
    }

    [[nodiscard]] std::vector<PreferencePair> snapshot() const
    {
        std::vector<PreferencePair> out;
        out.reserve(items_.size());
        for(std::size_t k = 0; k < items_.size(); ++k) {
            out.push_back(at(k));
        }
        return out;
    }

  private:
    std::size_t capacity_;
    std::vector<PreferencePair> items_;
    std::size_t head_ = 0;  // oldest element once the buffer is full
    std::uint64_t insertions_ = 0;
};

/// Orders two trajectories by return; nullopt on a tie.
[[nodiscard]] inline std::optional<PreferencePair> rule_label(const TrajectoryRef& a, const TrajectoryRef& b)
{
    const double ra = a->return_value();
    const double rb = b->return_value();
    if(ra > rb) {
        return PreferencePair{a, b, LabelSource::rule, std::nullopt};
    }
    if(rb > ra) {
        return PreferencePair{b, a, LabelSource::rule, std::nullopt};
    }
    return std::nullopt;
}

/// Up to `max_pairs` distinct unordered index pairs drawn uniformly without replacement.
[[nodiscard]] inline std::vector<std::pair<std::size_t, std::size_t>> sample_index_pairs(
    std::size_t count, std::size_t max_pairs, Rng& rng)
{
    std::vector<std::pair<std::size_t, std::size_t>> out;
    if(count < 2 || max_pairs == 0) {
        return out;
    }
    const std::size_t total = count * (count - 1) / 2;
    if(total <= 4 * max_pairs || total <= 65'536) {
        std::vector<std::pair<std::size_t, std::size_t>> all;
        all.reserve(total);
        for(std::size_t i = 0; i < count; ++i) {
            for(std::size_t j = i + 1; j < count; ++j) {
                all.emplace_back(i, j);
            }
        }
        const std::size_t take = std::min(max_pairs, total);
        for(std::size_t k = 0; k < take; ++k) {
            std::uniform_int_distribution<std::size_t> pick(k, total - 1);
            std::swap(all[k], all[pick(rng)]);
        }
        all.resize(take);
        return all;
    }
    std::unordered_set<std::size_t> seen;
    std::uniform_int_distribution<std::size_t> pick(0, count - 1);
    while(out.size() < max_pairs) {
        std::size_t i = pick(rng);
        std::size_t j = pick(rng);
        if(i == j) {
            continue;
        }
        if(i > j) {
            std::swap(i, j);
        }
        if(seen.insert(i * count + j).second) {
            out.emplace_back(i, j);
        }
    }
    return out;
}

/// Return-ordered pairs from a batch; tied pairs are dropped.
[[nodiscard]] inline std::vector<PreferencePair> make_pairs_rule(
    const std::vector<TrajectoryRef>& trajectories, std::size_t max_pairs, Rng& rng)
{
    std::vector<PreferencePair> out;
    for(const auto& [i, j] : sample_index_pairs(trajectories.size(), max_pairs, rng)) {
        if(auto p = rule_label(trajectories[i], trajectories[j])) {
            out.push_back(std::move(*p));
        }
    }
    return out;
}

/**
 * Bradley-Terry labels via noisy utilities: U_k = R(sigma_k) + Gumbel noise, the larger wins.
 * The trajectories' episodic returns play the role of the ground-truth return.
 */
[[nodiscard]] inline std::vector<PreferencePair> simulate_bt_labels(
    const std::vector<std::pair<TrajectoryRef, TrajectoryRef>>& pairs, std::uint64_t seed)
{
    Rng rng(derive_seed(seed, 0xB7));
    std::vector<PreferencePair> out;
    out.reserve(pairs.size());
    for(const auto& [a, b] : pairs) {
        const double ua = a->return_value() + sample_gumbel(rng);
        const double ub = b->return_value() + sample_gumbel(rng);
        if(ua >= ub) {
            out.push_back({a, b, LabelSource::bt, std::nullopt});
        } else {
            out.push_back({b, a, LabelSource::bt, std::nullopt});
        }
    }
    return out;
}

/// Final-state statistics of one trajectory, as rendered into the labeling prompt.
struct TrajectorySummary {
    std::vector<Statistic> statistics;
    std::size_t total_steps = 0;

    [[nodiscard]] static TrajectorySummary from(const Trajectory& traj)
    {
        return {traj.metadata, traj.length()};
    }

    [[nodiscard]] const Statistic* find(std::string_view name) const
    {
        for(const auto& s : statistics) {
            if(s.name == name) {
                return &s;
            }
        }
        return nullptr;
    }
};

/// Environment-specific context for the labeling prompt.
struct Scenario {
    std::string game;            // "in the <game>" framing
    std::string goal;            // "... contributed to achieving <goal>."
    std::string name;            // "- Scenario : <name>"
    std::vector<std::pair<std::string, std::string>> details;  // further "- Label : text" lines
    std::string notice;          // "* Important Notice : ..."
    std::string judgement_hint;  // "* Important : ..."
    std::vector<std::string> required_statistics;
};

[[nodiscard]] inline Scenario coop_matrix_scenario()
{
    return {
        "repeated cooperative matrix game",
        "the highest team score",
        "coop_matrix",
        {{"Team Configuration", "two agents that act simultaneously at every step"},
         {"Situation Description", "At each step both agents pick an action and the team receives the payoff of the joint action."},
         {"Objective", "Maximize the discounted sum of payoffs over the episode."}},
        "You should prefer the trajectory whose joint actions earn higher payoffs, especially early in the episode.",
        "Generally, it is considered better when the team score is higher.",
        {"Payoff Per Step", "Team Score"},
    };
}

[[nodiscard]] inline Scenario grid_gather_scenario()
{
    return {
        "cooperative item-gathering gridworld",
        "collecting every item",
        "grid_gather",
        {{"Team Configuration", "agents on a 5x5 grid, each seeing only the 3x3 cells around it"},
         {"Situation Description", "Agents move around the grid and collect items by stepping onto them."},
         {"Objective", "Collect all items as a team in as few steps as possible."}},
        "You should prefer the trajectory where more items are collected. In similar situations, you should prefer shorter trajectory lengths.",
        "Generally, it is considered better when fewer items remain and less time is spent.",
        {"Items Collected Per Agent", "Items Remaining", "Team Score"},
    };
}

[[nodiscard]] inline Scenario tabular_scenario()
{
    return {
        "small tabular cooperative task",
        "the highest team score",
        "tabular",
        {{"Objective", "Maximize the discounted team score."}},
        "You should prefer the trajectory with the higher team score.",
        "Generally, it is considered better when the team score is higher.",
        {"Team Score"},
    };
}

[[nodiscard]] inline Scenario scenario_for_env(std::string_view env_name)
{
    if(env_name == "coop_matrix") {
        return coop_matrix_scenario();
    }
    if(env_name == "grid_gather") {
        return grid_gather_scenario();
    }
    if(env_name == "tabular") {
        return tabular_scenario();
    }
    throw ConfigError("no prompt scenario for env '" + std::string(env_name) + "'");
}

namespace detail {

inline std::string format_value(double v, bool integral)
{
    char buf[64];
    if(integral) {
        std::snprintf(buf, sizeof buf, "%.0f", v);
    } else {
        std::snprintf(buf, sizeof buf, "%.3f", v);
    }
    return buf;
}

inline void render_trajectory(std::string& out, int index, const TrajectorySummary& s)
{
    out += "[Trajectory " + std::to_string(index) + "]\n";
    out += "1. Final State Information\n";
    int k = 1;
    for(const auto& stat : s.statistics) {
        out += "    " + std::to_string(k++) + ") " + stat.name + " : ";
        for(std::size_t j = 0; j < stat.values.size(); ++j) {
            if(j > 0) {
                out += ", ";
            }
            out += format_value(stat.values[j], stat.integral);
        }
        out += "\n";
    }
    out += "2. Total Number of Steps : " + std::to_string(s.total_steps) + "\n";
}

}  // namespace detail

/// Renders the pairwise judging prompt; throws PreconditionError naming any missing statistic.
[[nodiscard]] inline std::string build_prompt(
    const TrajectorySummary& s1, const TrajectorySummary& s2, const Scenario& scenario)
{
    std::vector<std::string> missing;
    for(const auto& name : scenario.required_statistics) {
        if(s1.find(name) == nullptr) {
            missing.push_back("Trajectory 1: " + name);
        }
        if(s2.find(name) == nullptr) {
            missing.push_back("Trajectory 2: " + name);
        }
    }
    if(!missing.empty()) {
        std::string msg = "build_prompt: missing statistics (";
        for(std::size_t k = 0; k < missing.size(); ++k) {
            msg += (k ? "; " : "") + missing[k];
        }
        throw PreconditionError(msg + ")");
    }
    std::string out;
    out += "You are a helpful and honest judge of good game playing and progress in the " + scenario.game
           + ". Always answer as helpfully as possible, while being truthful.\n";
    out += "If you don't know the answer to a question, please don't share false information.\n";
    out += "I'm looking to have you evaluate a scenario in the " + scenario.game
           + ". Your role will be to assess how much the actions taken by multiple agents in a given situation have "
             "contributed to achieving "
           + scenario.goal + ".\n\n";
    out += "The basic information for the evaluation is as follows.\n\n";
    out += "- Scenario : " + scenario.name + "\n";
    for(const auto& [label, text] : scenario.details) {
        out += "- " + label + " : " + text + "\n";
    }
    out += "* Important Notice : " + scenario.notice + "\n\n";
    out += "I will provide you with two trajectories, and you should select the better trajectory based on the outcomes "
           "of these trajectories. Regarding the trajectory, it will inform you about the final states, and you should "
           "select the better case based on these two trajectories.\n\n";
    detail::render_trajectory(out, 1, s1);
    out += "\n";
    detail::render_trajectory(out, 2, s2);
    out += "\n";
    out += "Your task is to inform which one is better between [Trajectory1] and [Trajectory2] based on the information "
           "mentioned above. For example, if [Trajectory 1] seems better, output #1, and if [Trajectory 2] seems better, "
           "output #2. If it's difficult to judge or they seem similar, please output #0.\n";
    out += "* Important : " + scenario.judgement_hint + "\n\n";
    out += "Omit detailed explanations and just provide the answer.\n";
    return out;
}

/**
 * Extracts a label in {0, 1, 2} from a judge response: the first "#1"/"#2"/"#0" if any, otherwise
 * the first bare 0/1/2 standing alone as a token. nullopt when nothing matches.
 */
[[nodiscard]] inline std::optional<int> parse_label(std::string_view response)
{
    auto is_label = [](char c) { return c == '0' || c == '1' || c == '2'; };
    auto word_char = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_'; };
    const std::size_t n = response.size();
    for(std::size_t p = 0; p + 1 < n; ++p) {
        if(response[p] == '#' && is_label(response[p + 1])
           && (p + 2 >= n || !std::isdigit(static_cast<unsigned char>(response[p + 2])))) {
            return response[p + 1] - '0';
        }
    }
    for(std::size_t p = 0; p < n; ++p) {
        if(!is_label(response[p])) {
            continue;
        }
        const bool left_ok = p == 0 || (!word_char(response[p - 1]) && response[p - 1] != '.' && response[p - 1] != '-');
        const bool right_ok = p + 1 >= n || (!word_char(response[p + 1])
                                             && !(response[p + 1] == '.' && p + 2 < n
                                                  && std::isdigit(static_cast<unsigned char>(response[p + 2]))));
        if(left_ok && right_ok) {
            return response[p] - '0';
        }
    }
    return std::nullopt;
}

}  // namespace imap

#endif  // IMAP_PREFERENCE_HPP

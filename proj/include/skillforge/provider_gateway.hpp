#pragma once

#include "skillforge/types.hpp"
#include "skillforge/util.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <condition_variable>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

namespace skillforge {

enum class StageKind {
    tree_check,
    resource_search,
    skill_build,
    skill_test,
    refresh,
    design_skill,
    layer1_fix,
    layer2_benchmark,
    layer2_optimize,
    novelty_check,
    parallel_leaf_stage,
};
inline constexpr EnumNames<StageKind, 11> kStageKindNames{{{
    {StageKind::tree_check, "tree_check"},
    {StageKind::resource_search, "resource_search"},
    {StageKind::skill_build, "skill_build"},
    {StageKind::skill_test, "skill_test"},
    {StageKind::refresh, "refresh"},
    {StageKind::design_skill, "design_skill"},
    {StageKind::layer1_fix, "layer1_fix"},
    {StageKind::layer2_benchmark, "layer2_benchmark"},
    {StageKind::layer2_optimize, "layer2_optimize"},
    {StageKind::novelty_check, "novelty_check"},
    {StageKind::parallel_leaf_stage, "parallel_leaf_stage"}}}};

/// The five cycle stages in execution order.
inline constexpr StageKind kCycleStages[] = {StageKind::tree_check, StageKind::resource_search, StageKind::skill_build,
                                             StageKind::skill_test, StageKind::refresh};

enum class Effort { low, medium, high };
inline constexpr EnumNames<Effort, 3> kEffortNames{{{{Effort::low, "low"}, {Effort::medium, "medium"}, {Effort::high, "high"}}}};

struct EffortSetting {
    std::string model = "default";
    Effort effort = Effort::medium;

    bool operator==(const EffortSetting&) const = default;
};

struct EffortProfile {
    std::map<StageKind, EffortSetting> settings;

    /// Every stage at medium effort except resource_search, which runs high.
    static EffortProfile defaults(const std::string& model = "default");
    const EffortSetting& at(StageKind stage) const;
    bool is_total() const;
    bool operator==(const EffortProfile&) const = default;
};

struct PromptBundle {
    StageKind stage = StageKind::tree_check;
    std::string system_text;
    std::map<std::string, std::string> input_fields;

    /// "STAGE=..., MODE=..." header followed by the input fields in key order.
    std::string user_text() const;
    bool operator==(const PromptBundle&) const = default;
};

/// Context keys each stage must receive.
const std::vector<std::string>& required_context(StageKind stage);

PromptBundle render_prompt(StageKind stage, const std::map<std::string, std::string>& context);

struct ProviderRequest {
    PromptBundle bundle;
    EffortSetting effort;
    std::string response_key;  // leaf slug, skill id, task slug or cycle label
};

class Provider {
public:
    virtual ~Provider() = default;
    virtual std::string invoke(const ProviderRequest& request) = 0;
    /// Opaque resumable state (mock occurrence counters); empty for stateless providers.
    virtual nlohmann::json state() const { return nlohmann::json::object(); }
    virtual void restore_state(const nlohmann::json&) {}
};

/// Replays response files named `<stage>__<key>__<n>.json`, n counting from 1
/// per (stage, key). When the numbered file is absent, `<stage>__<key>.json`
/// and then `<stage>.json` serve as standing responses.
class MockProvider final : public Provider {
public:
    explicit MockProvider(fs::path script_dir);
    std::string invoke(const ProviderRequest& request) override;
    nlohmann::json state() const override;
    void restore_state(const nlohmann::json& state) override;

    static std::string file_name(StageKind stage, const std::string& key, int occurrence);
    const fs::path& script_dir() const { return dir_; }
    /// Number of prompts received, for assertions in tests.
    size_t calls() const;
    std::vector<PromptBundle> prompts() const;

private:
    fs::path dir_;
    mutable std::mutex mutex_;
    std::map<std::string, int> counters_;
    std::vector<PromptBundle> prompts_;
};

struct HttpResult {
    int status = 0;           // 0 when the request never completed
    std::string body;
    std::string error;        // transport-level failure description
};

class Transport {
public:
    virtual ~Transport() = default;
    virtual HttpResult post(const std::string& body) = 0;
};

/// HTTP(S) transport for a chat-completion endpoint.
std::unique_ptr<Transport> make_http_transport(const std::string& url, const std::string& credential,
                                               std::chrono::seconds timeout = std::chrono::seconds(120));

using Sleeper = std::function<void(std::chrono::milliseconds)>;

struct RetryPolicy {
    int attempts = 3;
    std::vector<std::chrono::milliseconds> backoff{std::chrono::milliseconds(1000), std::chrono::milliseconds(2000),
                                                   std::chrono::milliseconds(4000)};
};

/// Wraps a transport with bounded retries and a concurrency budget. Retries
/// cover transport errors, 408, 429 and 5xx; other statuses fail at once.
class LiveProvider final : public Provider {
public:
    LiveProvider(std::unique_ptr<Transport> transport, RetryPolicy policy = {}, Sleeper sleeper = {},
                 int max_in_flight = 4);
    std::string invoke(const ProviderRequest& request) override;

    /// Builds the wire body: model, reasoning effort and two chat messages.
    static std::string request_body(const ProviderRequest& request);
    /// Pulls choices[0].message.content out of a chat-completion reply, or
    /// returns the body unchanged when it has another shape.
    static std::string extract_content(const std::string& body);

private:
    std::unique_ptr<Transport> transport_;
    RetryPolicy policy_;
    Sleeper sleeper_;
    int max_in_flight_;
    int in_flight_ = 0;
    std::mutex mutex_;
    std::condition_variable cv_;
};

/// Reads SF_PROVIDER_URL and SF_PROVIDER_KEY. Throws invalid_argument when unset.
std::unique_ptr<Provider> make_live_provider_from_env();

struct StageResponse {
    StageKind stage = StageKind::tree_check;
    nlohmann::json fields;
    std::string raw_text;
    std::vector<std::string> unknown_fields;

    bool operator==(const StageResponse&) const = default;
};

/// Strictly one JSON object (surrounding whitespace allowed), checked against
/// the stage schema. Unknown top-level fields are kept and listed.
StageResponse validate_response(StageKind stage, const std::string& raw_text);

/// Canonical text for a response's fields.
std::string serialize_response(const StageResponse& response);

/// Stage invocation with validation: render, invoke, validate.
class Gateway {
public:
    Gateway(Provider& provider, EffortProfile profile = EffortProfile::defaults())
        : provider_(&provider), profile_(std::move(profile)) {}

    StageResponse call(StageKind stage, const std::map<std::string, std::string>& context,
                       const std::string& response_key);
    Provider& provider() { return *provider_; }
    const EffortProfile& profile() const { return profile_; }

private:
    Provider* provider_;
    EffortProfile profile_;
};

}  // namespace skillforge

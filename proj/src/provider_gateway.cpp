#include "skillforge/provider_gateway.hpp"

#include "skillforge/registry.hpp"
#include "skillforge/skill_package.hpp"

#include <cstdlib>
#include <sstream>
#include <thread>

namespace skillforge {

using nlohmann::json;

// ---- effort profile -------------------------------------------------------------

EffortProfile EffortProfile::defaults(const std::string& model) {
    EffortProfile p;
    for (const auto& [stage, name] : kStageKindNames.entries)
        p.settings[stage] = {model, stage == StageKind::resource_search ? Effort::high : Effort::medium};
    return p;
}

const EffortSetting& EffortProfile::at(StageKind stage) const {
    auto it = settings.find(stage);
    if (it == settings.end())
        throw Error(Errc::invalid_argument, "effort profile has no entry for " + std::string(kStageKindNames.name(stage)));
    return it->second;
}

bool EffortProfile::is_total() const {
    for (const auto& [stage, name] : kStageKindNames.entries)
        if (!settings.count(stage)) return false;
    return true;
}

// ---- prompt templates -------------------------------------------------------------

namespace {

const char* kCycleSystem =
    "You are operating inside the skill repository. Follow the workflow contract and reuse existing repository "
    "scripts instead of creating parallel registries.\n"
    "Key constraints: work directly in the current checkout when appropriate; reuse repository scripts and "
    "registries; keep verification labels honest.\n"
    "Response contract: Return only a JSON object matching the stage schema.";

const char* kWorkerSystem =
    "You are operating inside an isolated workspace copy of the skill repository. This is a parallel worker stage "
    "for a single taxonomy leaf.\n"
    "Key constraints: stay scoped to the assigned leaf; prefer edits under skill-local files and leaf-specific "
    "tests; do not modify shared global files such as registries, site files, README.md, or planning documents.\n"
    "Response contract: Return only a JSON object, and record any shared-file follow-up in structured fields such "
    "as repo_changes, blockers, or next_steps.";

const char* kDesignSystem =
    "You are operating inside the skill repository. This mode is for a user-specified task: search resources first "
    "when the request needs additional materials, then implement and test the resulting skill.\n"
    "Key constraints: search for canonical papers, repositories, notebooks, package references, or workflows when "
    "needed; build or refine one concrete skill path; add or update repository-level tests and, when relevant, a "
    "scheduler execution path.\n"
    "Response contract: Return only a JSON object matching the design-skill schema.";

const char* kEvaluationSystem =
    "Hierarchical evaluation operates in multiple modes: failure repair, task-specific benchmarking, "
    "benchmark-driven optimization, and novelty checking.\n"
    "Key constraints: diagnose failures before editing; apply targeted fixes rather than broad refactors; "
    "benchmark with-skill versus no-skill baselines conservatively; optimize only when benchmark deficits are "
    "clear; and assess overlap against both local skills and external ecosystems.\n"
    "Response contract: Return only a JSON object matching the evaluation sub-stage schema.";

const char* system_text_for(StageKind stage) {
    switch (stage) {
        case StageKind::parallel_leaf_stage: return kWorkerSystem;
        case StageKind::design_skill: return kDesignSystem;
        case StageKind::layer1_fix:
        case StageKind::layer2_benchmark:
        case StageKind::layer2_optimize:
        case StageKind::novelty_check: return kEvaluationSystem;
        default: return kCycleSystem;
    }
}

const char* mode_for(StageKind stage) {
    switch (stage) {
        case StageKind::parallel_leaf_stage: return "parallel_leaf_stage";
        case StageKind::design_skill: return "design_skill";
        case StageKind::layer1_fix: return "repair";
        case StageKind::layer2_benchmark: return "benchmark";
        case StageKind::layer2_optimize: return "optimize";
        case StageKind::novelty_check: return "novelty";
        default: return "cycle";
    }
}

}  // namespace

const std::vector<std::string>& required_context(StageKind stage) {
    static const std::map<StageKind, std::vector<std::string>> table = {
        {StageKind::tree_check, {"repository_summary"}},
        {StageKind::resource_search, {"focus_leaves"}},
        {StageKind::skill_build, {"focus_leaves"}},
        {StageKind::skill_test, {"skill_id"}},
        {StageKind::refresh, {"repository_summary"}},
        {StageKind::design_skill, {"task_prompt"}},
        {StageKind::layer1_fix, {"skill_id", "failure_log"}},
        {StageKind::layer2_benchmark, {"skill_id"}},
        {StageKind::layer2_optimize, {"skill_id", "benchmark_results"}},
        {StageKind::novelty_check, {"skill_id", "similarity_candidates"}},
        {StageKind::parallel_leaf_stage, {"target_leaf", "artifact_directory"}},
    };
    return table.at(stage);
}

std::string PromptBundle::user_text() const {
    std::ostringstream out;
    out << "STAGE=" << kStageKindNames.name(stage) << ", MODE=" << mode_for(stage) << "\n";
    for (const auto& [key, value] : input_fields) out << "\n[" << key << "]\n" << value << "\n";
    return out.str();
}

PromptBundle render_prompt(StageKind stage, const std::map<std::string, std::string>& context) {
    for (const auto& key : required_context(stage)) {
        auto it = context.find(key);
        if (it == context.end() || trim(it->second).empty())
            throw Error(Errc::missing_context_field, "stage " + std::string(kStageKindNames.name(stage)) +
                                                          " requires context field '" + key + "'");
    }
    return {stage, system_text_for(stage), context};
}

// ---- mock provider -------------------------------------------------------------------

MockProvider::MockProvider(fs::path script_dir) : dir_(std::move(script_dir)) {}

std::string MockProvider::file_name(StageKind stage, const std::string& key, int occurrence) {
    return std::string(kStageKindNames.name(stage)) + "__" + key + "__" + std::to_string(occurrence) + ".json";
}

std::string MockProvider::invoke(const ProviderRequest& request) {
    const std::string counter_key =
        std::string(kStageKindNames.name(request.bundle.stage)) + "__" + request.response_key;
    int occurrence;
    {
        std::lock_guard lock(mutex_);
        occurrence = ++counters_[counter_key];
        prompts_.push_back(request.bundle);
    }
    const std::string stage(kStageKindNames.name(request.bundle.stage));
    const fs::path numbered = dir_ / file_name(request.bundle.stage, request.response_key, occurrence);
    for (const fs::path& file : {numbered, dir_ / (counter_key + ".json"), dir_ / (stage + ".json")}) {
        std::error_code ec;
        if (fs::is_regular_file(file, ec)) return read_file(file);
    }
    throw Error(Errc::mock_miss, "no scripted response " + numbered.filename().string() + " in " + dir_.string());
}

json MockProvider::state() const {
    std::lock_guard lock(mutex_);
    return json(counters_);
}

void MockProvider::restore_state(const json& state) {
    std::lock_guard lock(mutex_);
    counters_ = state.is_object() ? state.get<std::map<std::string, int>>() : std::map<std::string, int>{};
}

size_t MockProvider::calls() const {
    std::lock_guard lock(mutex_);
    return prompts_.size();
}

std::vector<PromptBundle> MockProvider::prompts() const {
    std::lock_guard lock(mutex_);
    return prompts_;
}

// ---- live provider -------------------------------------------------------------------

LiveProvider::LiveProvider(std::unique_ptr<Transport> transport, RetryPolicy policy, Sleeper sleeper, int max_in_flight)
    : transport_(std::move(transport)),
      policy_(std::move(policy)),
      sleeper_(sleeper ? std::move(sleeper) : Sleeper([](std::chrono::milliseconds d) { std::this_thread::sleep_for(d); })),
      max_in_flight_(std::max(1, max_in_flight)) {}

std::string LiveProvider::request_body(const ProviderRequest& request) {
    json body = {
        {"model", request.effort.model},
        {"reasoning_effort", kEffortNames.name(request.effort.effort)},
        {"messages",
         {{{"role", "system"}, {"content", request.bundle.system_text}},
          {{"role", "user"}, {"content", request.bundle.user_text()}}}},
    };
    return body.dump();
}

std::string LiveProvider::extract_content(const std::string& body) {
    json parsed = json::parse(body, nullptr, false);
    if (parsed.is_discarded() || !parsed.is_object()) return body;
    try {
        return parsed.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception&) {
        return body;
    }
}

std::string LiveProvider::invoke(const ProviderRequest& request) {
    {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return in_flight_ < max_in_flight_; });
        ++in_flight_;
    }
    struct Release {
        LiveProvider* self;
        ~Release() {
            std::lock_guard lock(self->mutex_);
            --self->in_flight_;
            self->cv_.notify_one();
        }
    } release{this};

    const std::string body = request_body(request);
    std::string last;
    int attempt = 0;
    for (attempt = 1; attempt <= policy_.attempts; ++attempt) {
        HttpResult r = transport_->post(body);
        if (r.status >= 200 && r.status < 300) return extract_content(r.body);
        const bool transient = r.status == 0 || r.status == 408 || r.status == 429 || r.status >= 500;
        last = r.status == 0 ? r.error : "HTTP " + std::to_string(r.status);
        if (!transient) break;
        if (attempt < policy_.attempts) {
            size_t idx = std::min<size_t>(attempt - 1, policy_.backoff.empty() ? 0 : policy_.backoff.size() - 1);
            sleeper_(policy_.backoff.empty() ? std::chrono::milliseconds(0) : policy_.backoff[idx]);
        }
    }
    const int made = std::min(attempt, policy_.attempts);
    throw Error(Errc::transport_failure, "provider call for " + std::string(kStageKindNames.name(request.bundle.stage)) +
                                             " failed after " + std::to_string(made) + " attempt" +
                                             (made == 1 ? "" : "s") + ": " + last);
}

std::unique_ptr<Provider> make_live_provider_from_env() {
    const char* url = std::getenv("SF_PROVIDER_URL");
    const char* key = std::getenv("SF_PROVIDER_KEY");
    if (!url || !*url) throw Error(Errc::invalid_argument, "SF_PROVIDER_URL is not set");
    if (!key || !*key) throw Error(Errc::invalid_argument, "SF_PROVIDER_KEY is not set");
    return std::make_unique<LiveProvider>(make_http_transport(url, key));
}

// ---- response validation ------------------------------------------------------------

namespace {

enum class JType { string, array, object, number, boolean, string_array, any };

struct FieldRule {
    std::string name;
    JType type;
    bool required;
    std::function<void(const json&, const std::string&)> check;
};

[[noreturn]] void violation(const std::string& field, const std::string& why) {
    throw Error(Errc::schema_violation, "field '" + field + "' " + why);
}

bool type_ok(const json& v, JType t) {
    switch (t) {
        case JType::string: return v.is_string();
        case JType::array: return v.is_array();
        case JType::object: return v.is_object();
        case JType::number: return v.is_number();
        case JType::boolean: return v.is_boolean();
        case JType::string_array:
            if (!v.is_array()) return false;
            for (const auto& e : v)
                if (!e.is_string()) return false;
            return true;
        case JType::any: return true;
    }
    return false;
}

const char* type_name(JType t) {
    switch (t) {
        case JType::string: return "a string";
        case JType::array: return "a list";
        case JType::object: return "an object";
        case JType::number: return "a number";
        case JType::boolean: return "a boolean";
        case JType::string_array: return "a list of strings";
        case JType::any: return "any value";
    }
    return "?";
}

void check_rules(const json& obj, const std::vector<FieldRule>& rules, const std::string& prefix) {
    for (const auto& rule : rules) {
        const std::string path = prefix + rule.name;
        if (!obj.contains(rule.name) || obj.at(rule.name).is_null()) {
            if (rule.required) violation(path, "is missing");
            continue;
        }
        const json& v = obj.at(rule.name);
        if (!type_ok(v, rule.type)) violation(path, std::string("must be ") + type_name(rule.type));
        if (rule.check) rule.check(v, path);
    }
}

void check_one_of(const json& v, const std::string& path, std::initializer_list<const char*> allowed) {
    for (const char* a : allowed)
        if (v.get<std::string>() == a) return;
    violation(path, "has unexpected value '" + v.get<std::string>() + "'");
}

void check_unit_interval(const json& v, const std::string& path) {
    const double d = v.get<double>();
    if (!(d >= 0.0 && d <= 1.0)) violation(path, "must lie in [0, 1]");
}

void check_edits(const json& v, const std::string& path) {
    for (size_t i = 0; i < v.size(); ++i) {
        const std::string item = path + "[" + std::to_string(i) + "]";
        if (!v[i].is_object()) violation(item, "must be an object");
        check_rules(v[i], {{"path", JType::string, true, {}}, {"content", JType::string, true, {}}}, item + ".");
    }
}

void check_artifacts(const json& v, const std::string& path) {
    for (auto it = v.begin(); it != v.end(); ++it)
        if (!it.value().is_string()) violation(path + "." + it.key(), "must be a string");
}

std::vector<FieldRule> contract_rules(bool with_build_extras);

void check_contract(const json& v, const std::string& path, bool with_build_extras) {
    check_rules(v, contract_rules(with_build_extras), path.empty() ? "" : path + ".");
    try {
        parse_contract(v);
    } catch (const Error& e) {
        violation(path.empty() ? "contract" : path, std::string("is not a valid contract: ") + e.what());
    }
}

std::vector<FieldRule> contract_rules(bool with_build_extras) {
    std::vector<FieldRule> rules = {
        {"task_scope", JType::string, true, {}},
        {"inputs", JType::array, true, {}},
        {"execution_steps", JType::string_array, true, {}},
        {"provenance_links", JType::string_array, true, {}},
        {"outputs", JType::array, false, {}},
        {"environment_assumptions", JType::string_array, false, {}},
        {"follow_up_guidance", JType::string, false, {}},
        {"example_invocations", JType::string_array, false, {}},
        {"test_commands", JType::string_array, false, {}},
        {"volatile_outputs", JType::string_array, false, {}},
    };
    if (with_build_extras) {
        rules.push_back({"name", JType::string, false, {}});
        rules.push_back({"artifacts", JType::object, false, check_artifacts});
        rules.push_back({"new_leaf", JType::string, false, {}});
    }
    return rules;
}

std::vector<FieldRule> schema_for(StageKind stage) {
    switch (stage) {
        case StageKind::tree_check:
            return {{"focus_leaves", JType::string_array, true, {}},
                    {"rationale", JType::string, true, {}},
                    {"split_suggestions", JType::array, false, {}}};
        case StageKind::resource_search:
            return {{"resources", JType::array, true, [](const json& v, const std::string& path) {
                         for (size_t i = 0; i < v.size(); ++i) {
                             const std::string item = path + "[" + std::to_string(i) + "]";
                             if (!v[i].is_object()) violation(item, "must be an object");
                             check_rules(v[i],
                                         {{"kind", JType::string, true,
                                           [](const json& k, const std::string& p) {
                                               if (!kResourceKindNames.contains(k.get<std::string>()))
                                                   violation(p, "has unknown kind '" + k.get<std::string>() + "'");
                                           }},
                                          {"locator", JType::string, true,
                                           [](const json& l, const std::string& p) {
                                               if (l.get<std::string>().empty()) violation(p, "is empty");
                                           }},
                                          {"leaf_path", JType::string, true, {}},
                                          {"authority_rank", JType::number, true, {}},
                                          {"summary", JType::string, false, {}}},
                                         item + ".");
                         }
                     }}};
        case StageKind::skill_build: {
            auto rules = contract_rules(true);
            rules.push_back({"candidates", JType::array, false, [](const json& v, const std::string& path) {
                                 for (size_t i = 0; i < v.size(); ++i) {
                                     const std::string item = path + "[" + std::to_string(i) + "]";
                                     if (!v[i].is_object()) violation(item, "must be an object");
                                     check_contract(v[i], item, true);
                                 }
                             }});
            return rules;
        }
        case StageKind::skill_test:
            return {{"verdict", JType::string, true,
                     [](const json& v, const std::string& p) { check_one_of(v, p, {"pass", "fail", "error"}); }},
                    {"log_summary", JType::string, true, {}}};
        case StageKind::refresh:
            return {{"registry_updates", JType::array, true, {}}, {"tree_updates", JType::array, true, {}}};
        case StageKind::design_skill:
            return {{"contract", JType::object, true,
                     [](const json& v, const std::string& p) { check_contract(v, p, false); }},
                    {"resources_used", JType::string_array, true, {}},
                    {"test_plan", JType::any, true, {}},
                    {"needs_resources", JType::boolean, false, {}},
                    {"name", JType::string, false, {}},
                    {"leaf_path", JType::string, false, {}},
                    {"artifacts", JType::object, false, check_artifacts}};
        case StageKind::layer1_fix:
            return {{"diagnosis", JType::string, true, {}},
                    {"edits", JType::array, true, check_edits},
                    {"retest", JType::boolean, true, {}}};
        case StageKind::layer2_benchmark:
            return {{"with_skill_score", JType::number, true, check_unit_interval},
                    {"baseline_score", JType::number, true, check_unit_interval},
                    {"notes", JType::string, true, {}}};
        case StageKind::layer2_optimize:
            return {{"actions", JType::array, true, check_edits}, {"rebenchmark", JType::boolean, true, {}}};
        case StageKind::novelty_check:
            return {{"matches", JType::array, true, {}},
                    {"decision", JType::string, true,
                     [](const json& v, const std::string& p) {
                         check_one_of(v, p, {"novel", "redundant", "merge", "review", "deprioritize"});
                     }},
                    {"rationale", JType::string, true, {}}};
        case StageKind::parallel_leaf_stage:
            return {{"repo_changes", JType::string_array, true, {}},
                    {"blockers", JType::string_array, true, {}},
                    {"next_steps", JType::string_array, true, {}},
                    {"stage", JType::string, false, {}},
                    {"payload", JType::object, false, {}}};
    }
    return {};
}

}  // namespace

StageResponse validate_response(StageKind stage, const std::string& raw_text) {
    const std::string text = trim(raw_text);
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::exception& e) {
        throw Error(Errc::not_a_single_document,
                    std::string(kStageKindNames.name(stage)) + " response is not a single JSON document: " + e.what());
    }
    if (!doc.is_object())
        throw Error(Errc::not_a_single_document,
                    std::string(kStageKindNames.name(stage)) + " response must be a JSON object");
    const auto rules = schema_for(stage);
    try {
        check_rules(doc, rules, "");
    } catch (const Error& e) {
        throw Error(Errc::schema_violation, std::string(kStageKindNames.name(stage)) + ": " + e.what());
    }
    StageResponse r{stage, doc, raw_text, {}};
    for (auto it = doc.begin(); it != doc.end(); ++it) {
        bool known = std::any_of(rules.begin(), rules.end(), [&](const FieldRule& f) { return f.name == it.key(); });
        if (!known) r.unknown_fields.push_back(it.key());
    }
    return r;
}

std::string serialize_response(const StageResponse& response) { return response.fields.dump(2) + "\n"; }

StageResponse Gateway::call(StageKind stage, const std::map<std::string, std::string>& context,
                            const std::string& response_key) {
    ProviderRequest request{render_prompt(stage, context), profile_.at(stage), response_key};
    return validate_response(stage, provider_->invoke(request));
}

}  // namespace skillforge

#include "skillforge/provider_gateway.hpp"

#include "test_support.hpp"

#include <doctest.h>
#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>

#include <atomic>
#include <thread>

using namespace skillforge;
using nlohmann::json;
using skillforge::testing::TempDir;
using skillforge::testing::write_text;

namespace {

json sample_for(StageKind stage) {
    const json contract = {
        {"task_scope", "Align reads."},
        {"inputs", {{{"name", "reads"}, {"description", "FASTQ"}, {"required", true}, {"kind", "file"}}}},
        {"execution_steps", {"Align reads with bwa."}},
        {"provenance_links", {"https://github.com/lh3/bwa"}},
    };
    switch (stage) {
        case StageKind::tree_check: return {{"focus_leaves", {"bio/genomics/alignment"}}, {"rationale", "uncovered"}};
        case StageKind::resource_search:
            return {{"resources",
                     {{{"kind", "repository"}, {"locator", "https://github.com/lh3/bwa"}, {"leaf_path", "bio/genomics/alignment"},
                       {"authority_rank", 3}}}}};
        case StageKind::skill_build: {
            json j = contract;
            j["name"] = "bwa mem";
            j["artifacts"] = {{"scripts/run.sh", "#!/bin/sh\n"}};
            return j;
        }
        case StageKind::skill_test: return {{"verdict", "pass"}, {"log_summary", "ok"}};
        case StageKind::refresh: return {{"registry_updates", json::array()}, {"tree_updates", json::array()}};
        case StageKind::design_skill:
            return {{"contract", contract}, {"resources_used", {"res-1"}}, {"test_plan", "run smoke"}};
        case StageKind::layer1_fix:
            return {{"diagnosis", "typo"}, {"edits", {{{"path", "scripts/run.sh"}, {"content", "x"}}}}, {"retest", true}};
        case StageKind::layer2_benchmark: return {{"with_skill_score", 0.9}, {"baseline_score", 0.5}, {"notes", ""}};
        case StageKind::layer2_optimize: return {{"actions", json::array()}, {"rebenchmark", true}};
        case StageKind::novelty_check: return {{"matches", json::array()}, {"decision", "novel"}, {"rationale", "none"}};
        case StageKind::parallel_leaf_stage:
            return {{"repo_changes", json::array()}, {"blockers", json::array()}, {"next_steps", {"update registry"}}};
    }
    return {};
}

class ScriptedTransport final : public Transport {
public:
    explicit ScriptedTransport(std::vector<HttpResult> results) : results_(std::move(results)) {}
    HttpResult post(const std::string& body) override {
        bodies.push_back(body);
        HttpResult r = results_.at(std::min(calls, results_.size() - 1));
        ++calls;
        return r;
    }
    size_t calls = 0;
    std::vector<std::string> bodies;

private:
    std::vector<HttpResult> results_;
};

ProviderRequest request_for(StageKind stage, std::map<std::string, std::string> ctx, std::string key) {
    return {render_prompt(stage, ctx), EffortProfile::defaults().at(stage), std::move(key)};
}

}  // namespace

TEST_CASE("render_prompt: tree_check carries the cycle-controller constraints") {
    auto bundle = render_prompt(StageKind::tree_check, {{"repository_summary", "6 leaves, 0 skills"}});
    CHECK(bundle.system_text.find("reuse existing repository scripts") != std::string::npos);
    CHECK(bundle.system_text.find("Return only a JSON object") != std::string::npos);
    CHECK(bundle.user_text().rfind("STAGE=tree_check, MODE=cycle", 0) == 0);
    CHECK(bundle.user_text().find("6 leaves, 0 skills") != std::string::npos);
}

TEST_CASE("render_prompt: missing context field names field and stage") {
    try {
        render_prompt(StageKind::design_skill, {{"repository_summary", "x"}});
        FAIL("expected missing-context-field");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::missing_context_field);
        CHECK(std::string(e.what()).find("task_prompt") != std::string::npos);
        CHECK(std::string(e.what()).find("design_skill") != std::string::npos);
    }
    CHECK_THROWS_AS(render_prompt(StageKind::parallel_leaf_stage, {{"target_leaf", "a/b"}}), Error);
}

TEST_CASE("render_prompt: pure") {
    std::map<std::string, std::string> ctx = {{"target_leaf", "bio/a"}, {"artifact_directory", "skills/bio/a"}};
    CHECK(render_prompt(StageKind::parallel_leaf_stage, ctx) == render_prompt(StageKind::parallel_leaf_stage, ctx));
    CHECK(render_prompt(StageKind::parallel_leaf_stage, ctx).system_text.find("isolated workspace copy") !=
          std::string::npos);
}

TEST_CASE("effort profile defaults: total, high only for resource_search") {
    auto p = EffortProfile::defaults("m1");
    CHECK(p.is_total());
    for (const auto& [stage, name] : kStageKindNames.entries) {
        CAPTURE(name);
        CHECK(p.at(stage).effort == (stage == StageKind::resource_search ? Effort::high : Effort::medium));
        CHECK(p.at(stage).model == "m1");
    }
}

TEST_CASE("mock provider: verbatim replay, occurrence counting, miss") {
    TempDir dir;
    const std::string script1 = "{\"verdict\": \"fail\", \"log_summary\": \"first\"}\n";
    const std::string script2 = "{\"verdict\": \"pass\", \"log_summary\": \"second\"}\n";
    write_text(dir.path(), "skill_test__leaf-a__1.json", script1);
    write_text(dir.path(), "skill_test__leaf-a__2.json", script2);
    MockProvider mock(dir.path());
    auto req = request_for(StageKind::skill_test, {{"skill_id", "s"}}, "leaf-a");
    CHECK(mock.invoke(req) == script1);
    CHECK(mock.invoke(req) == script2);
    try {
        mock.invoke(req);
        FAIL("expected mock-miss");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::mock_miss);
        CHECK(std::string(e.what()).find("skill_test__leaf-a__3.json") != std::string::npos);
    }
    try {
        mock.invoke(request_for(StageKind::skill_test, {{"skill_id", "s"}}, "other"));
        FAIL("expected mock-miss");
    } catch (const Error& e) { CHECK(e.code() == Errc::mock_miss); }

    MockProvider resumed(dir.path());
    json state = {{"skill_test__leaf-a", 1}};
    resumed.restore_state(state);
    CHECK(resumed.invoke(req) == script2);
    CHECK(resumed.state() == json{{"skill_test__leaf-a", 2}});
}

TEST_CASE("mock provider: standing responses back up missing numbered files") {
    TempDir dir;
    write_text(dir.path(), "skill_test__leaf-a__1.json", "first");
    write_text(dir.path(), "skill_test__leaf-a.json", "keyed");
    write_text(dir.path(), "skill_test.json", "stage");
    MockProvider mock(dir.path());
    auto req = request_for(StageKind::skill_test, {{"skill_id", "s"}}, "leaf-a");
    CHECK(mock.invoke(req) == "first");
    CHECK(mock.invoke(req) == "keyed");
    CHECK(mock.invoke(req) == "keyed");
    CHECK(mock.invoke(request_for(StageKind::skill_test, {{"skill_id", "s"}}, "leaf-b")) == "stage");
    CHECK(mock.state() == json{{"skill_test__leaf-a", 3}, {"skill_test__leaf-b", 1}});
}

TEST_CASE("mock provider: concurrent callers get distinct occurrences") {
    TempDir dir;
    constexpr int kCalls = 40;
    for (int i = 1; i <= kCalls; ++i) write_text(dir.path(), MockProvider::file_name(StageKind::skill_test, "k", i), std::to_string(i));
    MockProvider mock(dir.path());
    auto req = request_for(StageKind::skill_test, {{"skill_id", "s"}}, "k");
    std::vector<std::string> got(kCalls);
    std::atomic<int> next{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 4; ++t)
        threads.emplace_back([&] {
            for (int i; (i = next++) < kCalls;) got[i] = mock.invoke(req);
        });
    for (auto& t : threads) t.join();
    std::set<std::string> unique(got.begin(), got.end());
    CHECK(unique.size() == kCalls);
    CHECK(mock.calls() == kCalls);
}

TEST_CASE("live provider: three transient failures surface with the attempt count") {
    auto transport = std::make_unique<ScriptedTransport>(std::vector<HttpResult>{{503, "", ""}});
    auto* raw = transport.get();
    std::vector<std::chrono::milliseconds> sleeps;
    LiveProvider live(std::move(transport), {}, [&](std::chrono::milliseconds d) { sleeps.push_back(d); });
    try {
        live.invoke(request_for(StageKind::tree_check, {{"repository_summary", "x"}}, "c1"));
        FAIL("expected transport failure");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::transport_failure);
        CHECK(std::string(e.what()).find("after 3 attempts") != std::string::npos);
    }
    CHECK(raw->calls == 3);
    CHECK(sleeps == std::vector<std::chrono::milliseconds>{std::chrono::milliseconds(1000), std::chrono::milliseconds(2000)});
}

TEST_CASE("live provider: non-retryable status fails at once; transient then success recovers") {
    {
        auto transport = std::make_unique<ScriptedTransport>(std::vector<HttpResult>{{401, "denied", ""}});
        auto* raw = transport.get();
        LiveProvider live(std::move(transport), {}, [](auto) {});
        CHECK_THROWS_AS(live.invoke(request_for(StageKind::tree_check, {{"repository_summary", "x"}}, "c")), Error);
        CHECK(raw->calls == 1);
    }
    {
        json reply = {{"choices", {{{"message", {{"content", "{\"a\":1}"}}}}}}};
        auto transport = std::make_unique<ScriptedTransport>(
            std::vector<HttpResult>{{0, "", "connection refused"}, {200, reply.dump(), ""}});
        auto* raw = transport.get();
        LiveProvider live(std::move(transport), {}, [](auto) {});
        CHECK(live.invoke(request_for(StageKind::resource_search, {{"focus_leaves", "a/b"}}, "c")) == "{\"a\":1}");
        CHECK(raw->calls == 2);
        auto body = json::parse(raw->bodies.front());
        CHECK(body["reasoning_effort"] == "high");
        CHECK(body["messages"].size() == 2);
    }
}

TEST_CASE("http transport against a local server") {
    httplib::Server server;
    std::atomic<int> hits{0};
    std::string auth;
    server.Post("/v1/chat", [&](const httplib::Request& req, httplib::Response& res) {
        auth = req.get_header_value("Authorization");
        if (hits++ < 1) {
            res.status = 500;
            return;
        }
        json reply = {{"choices", {{{"message", {{"content", "{\"ok\":true}"}}}}}}};
        res.set_content(reply.dump(), "application/json");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread thread([&] { server.listen_after_bind(); });
    server.wait_until_ready();
    LiveProvider live(make_http_transport("http://127.0.0.1:" + std::to_string(port) + "/v1/chat", "secret"), {},
                      [](auto) {});
    CHECK(live.invoke(request_for(StageKind::tree_check, {{"repository_summary", "x"}}, "c")) == "{\"ok\":true}");
    CHECK(hits == 2);
    CHECK(auth == "Bearer secret");
    server.stop();
    thread.join();
}

TEST_CASE("validate_response: every stage accepts its sample and round-trips") {
    for (const auto& [stage, name] : kStageKindNames.entries) {
        CAPTURE(name);
        auto r = validate_response(stage, sample_for(stage).dump());
        CHECK(r.unknown_fields.empty());
        auto again = validate_response(stage, serialize_response(r));
        CHECK(again.fields == r.fields);
        CHECK(again.stage == r.stage);
    }
}

TEST_CASE("validate_response: leading prose is not a single document") {
    try {
        validate_response(StageKind::skill_build, "Here is the result:\n" + sample_for(StageKind::skill_build).dump());
        FAIL("expected not-a-single-document");
    } catch (const Error& e) { CHECK(e.code() == Errc::not_a_single_document); }
    CHECK_THROWS_AS(validate_response(StageKind::skill_test, "{\"verdict\":\"pass\",\"log_summary\":\"\"} {}"), Error);
    CHECK_THROWS_AS(validate_response(StageKind::skill_test, "[1,2]"), Error);
    CHECK_NOTHROW(validate_response(StageKind::skill_test, "  \n{\"verdict\":\"pass\",\"log_summary\":\"\"}\n "));
}

TEST_CASE("validate_response: schema violation names the first offending field") {
    SUBCASE("parallel_leaf_stage missing blockers") {
        json j = sample_for(StageKind::parallel_leaf_stage);
        j.erase("blockers");
        try {
            validate_response(StageKind::parallel_leaf_stage, j.dump());
            FAIL("expected schema violation");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::schema_violation);
            CHECK(std::string(e.what()).find("'blockers'") != std::string::npos);
        }
    }
    SUBCASE("nested resource field") {
        json j = sample_for(StageKind::resource_search);
        j["resources"][0]["kind"] = "blog";
        try {
            validate_response(StageKind::resource_search, j.dump());
            FAIL("expected schema violation");
        } catch (const Error& e) { CHECK(std::string(e.what()).find("resources[0].kind") != std::string::npos); }
    }
    SUBCASE("wrong type") {
        json j = sample_for(StageKind::layer1_fix);
        j["retest"] = "yes";
        try {
            validate_response(StageKind::layer1_fix, j.dump());
            FAIL("expected schema violation");
        } catch (const Error& e) { CHECK(std::string(e.what()).find("'retest'") != std::string::npos); }
    }
    SUBCASE("score outside [0,1]") {
        json j = sample_for(StageKind::layer2_benchmark);
        j["baseline_score"] = 1.5;
        CHECK_THROWS_AS(validate_response(StageKind::layer2_benchmark, j.dump()), Error);
    }
    SUBCASE("skill_build missing task_scope") {
        json j = sample_for(StageKind::skill_build);
        j.erase("task_scope");
        try {
            validate_response(StageKind::skill_build, j.dump());
            FAIL("expected schema violation");
        } catch (const Error& e) { CHECK(std::string(e.what()).find("'task_scope'") != std::string::npos); }
    }
}

TEST_CASE("validate_response: unknown fields are preserved and flagged") {
    json j = sample_for(StageKind::skill_test);
    j["confidence"] = 0.4;
    auto r = validate_response(StageKind::skill_test, j.dump());
    CHECK(r.unknown_fields == std::vector<std::string>{"confidence"});
    CHECK(r.fields["confidence"] == 0.4);
}

TEST_CASE("Gateway::call renders, invokes and validates") {
    TempDir dir;
    write_text(dir.path(), "novelty_check__skill-x__1.json", sample_for(StageKind::novelty_check).dump());
    MockProvider mock(dir.path());
    Gateway gw(mock);
    auto r = gw.call(StageKind::novelty_check, {{"skill_id", "skill-x"}, {"similarity_candidates", "none"}}, "skill-x");
    CHECK(r.fields["decision"] == "novel");
    REQUIRE(mock.prompts().size() == 1);
    CHECK(mock.prompts()[0].stage == StageKind::novelty_check);
}

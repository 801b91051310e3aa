#include "skillforge/skill_package.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <random>

using namespace skillforge;
using nlohmann::json;
using skillforge::testing::TempDir;
using skillforge::testing::compile_fixture;
using skillforge::testing::package_source;
using skillforge::testing::write_text;

namespace {

json minimal_document() {
    return {
        {"task_scope", "Align reads to a reference genome."},
        {"inputs", {{{"name", "reads"}, {"description", "FASTQ reads"}, {"required", true}, {"kind", "file"}}}},
        {"execution_steps", {"Run the aligner on reads."}},
        {"provenance_links", {"res-bwa"}},
    };
}

SkillContract random_contract(std::mt19937& rng) {
    auto word = [&] {
        static const char* words[] = {"align", "reads", "genome", "cells", "count", "matrix", "plot", "filter"};
        return std::string(words[rng() % 8]);
    };
    SkillContract c;
    c.task_scope = word() + " " + word() + "  with   " + word();
    int n_in = rng() % 4;
    for (int i = 0; i < n_in; ++i) {
        ContractInput in{"in" + std::to_string(i), word(), rng() % 2 == 0,
                         rng() % 2 ? InputKind::file : InputKind::argument,
                         rng() % 2 ? ValueType::text : ValueType::number};
        c.inputs.push_back(in);
        c.execution_steps.push_back("use in" + std::to_string(i));
    }
    for (int i = 0; i < static_cast<int>(rng() % 3); ++i)
        c.outputs.push_back({"out" + std::to_string(i), word(), rng() % 2 ? OutputKind::file : OutputKind::stream});
    if (c.execution_steps.empty()) c.execution_steps.push_back(word());
    c.provenance_links = {"res-" + word()};
    if (rng() % 2) c.environment_assumptions = {word(), word()};
    if (rng() % 2) c.follow_up_guidance = word();
    if (rng() % 2) c.example_invocations = {"sh scripts/run.sh '" + word() + " x'"};
    if (rng() % 2) c.test_commands = {"sh tests/t.sh", "sh tests/u.sh \"a b\""};
    if (rng() % 3 == 0) c.volatile_outputs = {"*.log"};
    return c;
}

}  // namespace

TEST_CASE("parse_contract: minimal document defaults optional fields") {
    auto c = parse_contract(minimal_document());
    CHECK(c.task_scope == "Align reads to a reference genome.");
    REQUIRE(c.inputs.size() == 1);
    CHECK(c.inputs[0].kind == InputKind::file);
    CHECK(c.inputs[0].value_type == ValueType::text);
    CHECK(c.outputs.empty());
    CHECK(c.environment_assumptions.empty());
    CHECK(c.follow_up_guidance.empty());
    CHECK(c.example_invocations.empty());
    CHECK(c.test_commands.empty());
    CHECK(contract_findings(c).empty());
}

TEST_CASE("parse_contract: missing task_scope names the field") {
    auto doc = minimal_document();
    doc.erase("task_scope");
    try {
        parse_contract(doc);
        FAIL("expected missing-required-field");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::missing_required_field);
        CHECK(std::string(e.what()).find("task_scope") != std::string::npos);
    }
}

TEST_CASE("parse_contract: malformed invocation") {
    auto doc = minimal_document();
    doc["example_invocations"] = {"sh scripts/run.sh 'unterminated"};
    try {
        parse_contract(doc);
        FAIL("expected malformed-invocation");
    } catch (const Error& e) { CHECK(e.code() == Errc::malformed_invocation); }
}

TEST_CASE("parse_contract: unused required input is reported by the cross-reference scan") {
    auto doc = minimal_document();
    doc["inputs"].push_back({{"name", "reference"}, {"description", "FASTA"}, {"required", true}});
    auto c = parse_contract(doc);
    auto findings = contract_findings(c);
    // Oracle: a required input is used iff its name occurs as a word or placeholder somewhere.
    std::vector<std::string> unused;
    for (const auto& in : c.inputs) {
        bool used = false;
        for (const auto& s : c.execution_steps) used |= s.find(in.name) != std::string::npos;
        if (in.required && !used) unused.push_back(in.name);
    }
    REQUIRE(unused == std::vector<std::string>{"reference"});
    REQUIRE(findings.size() == 1);
    CHECK(findings[0].find("'reference'") != std::string::npos);

    doc["example_invocations"] = {"bwa mem {reference} {reads}"};
    CHECK(contract_findings(parse_contract(doc)).empty());
}

TEST_CASE("round-trip: parse_contract(render_contract(c)) == c for generated contracts") {
    std::mt19937 rng(7);
    for (int i = 0; i < 200; ++i) {
        auto c = random_contract(rng);
        CHECK(parse_contract(render_contract(c)) == c);
        CHECK(parse_contract(json::parse(render_contract(c).dump())) == c);
    }
}

TEST_CASE("compile_package: layout, permissions and smoke target") {
    TempDir dir;
    auto pkg = compile_fixture("passing", dir / "pkg");
    for (const char* f : {"SKILL.md", "skill.json", "PROVENANCE.md", "scripts/count.sh", "tests/smoke.sh"})
        CHECK(fs::is_regular_file(dir / "pkg" / f));
    CHECK(is_executable(dir / "pkg/scripts/count.sh"));
    CHECK(is_executable(dir / "pkg/tests/smoke.sh"));
    CHECK_FALSE(is_executable(dir / "pkg/skill.json"));
    CHECK(pkg.scripts == std::vector<std::string>{"scripts/count.sh"});
    CHECK(pkg.tests == std::vector<std::string>{"tests/extra.sh", "tests/smoke.sh"});
    CHECK(pkg.identity.id == "fixture-passing");
    CHECK(lint_package(dir / "pkg").empty());

    auto smoke = resolve_smoke_target(pkg);
    REQUIRE(smoke);
    CHECK(smoke->command == "sh tests/smoke.sh");
    CHECK(smoke->timeout_seconds == 5.0);
    CHECK(smoke->expected_exit == 0);

    auto spec = parse_spec(pkg.spec_document);
    CHECK(spec_metadata_divergence(spec, pkg.contract).empty());
    for (const char* section : {"## Scope", "## Inputs", "## Outputs", "## Environment", "## Steps", "## Provenance",
                                "## Follow-up", "## Examples", "## Tests"})
        CHECK(pkg.spec_document.find(section) != std::string::npos);
}

TEST_CASE("compile_package: recompiling yields an identical directory digest") {
    TempDir dir;
    compile_fixture("passing", dir / "a");
    const std::string first = digest_directory(dir / "a");
    compile_fixture("passing", dir / "a");
    CHECK(digest_directory(dir / "a") == first);
    compile_fixture("passing", dir / "b");
    CHECK(digest_directory(dir / "b") == first);
    // Stale files from an earlier compile do not survive a recompile.
    write_text(dir / "a", "scripts/stale.sh", "#!/bin/sh\n", true);
    compile_fixture("passing", dir / "a");
    CHECK(digest_directory(dir / "a") == first);
}

TEST_CASE("compile_package: path escape is rejected and nothing is written") {
    TempDir dir;
    auto src = package_source("passing");
    src.artifacts["../../etc/x"] = "boom";
    try {
        compile_package({"x", "x"}, src.contract, src.artifacts, dir / "pkg");
        FAIL("expected path-escape");
    } catch (const Error& e) { CHECK(e.code() == Errc::path_escape); }
    CHECK_FALSE(fs::exists(dir / "pkg"));
    src.artifacts.erase("../../etc/x");
    src.artifacts["/etc/passwd"] = "boom";
    CHECK_THROWS_AS(compile_package({"x", "x"}, src.contract, src.artifacts, dir / "pkg"), Error);
}

TEST_CASE("resolve_smoke_target: absent without tests, with a missing-tests note") {
    TempDir dir;
    auto src = package_source("passing");
    src.contract.test_commands.clear();
    auto pkg = compile_package({"no-tests", "No tests"}, src.contract, src.artifacts, dir / "pkg");
    CHECK_FALSE(resolve_smoke_target(pkg).has_value());
    auto findings = lint_package(dir / "pkg");
    REQUIRE(findings.size() == 1);
    CHECK(findings[0].code == "missing-tests");
    CHECK_FALSE(findings[0].blocking);
    CHECK(lint_clean(findings));
}

TEST_CASE("lint_package: scope divergence, missing file, non-executable script") {
    TempDir dir;
    compile_fixture("passing", dir / "pkg");
    SUBCASE("metadata/spec scope mismatch gives one divergence finding") {
        auto meta = json::parse(read_file(dir / "pkg/skill.json"));
        meta["task_scope"] = "Something else entirely.";
        write_text(dir / "pkg", "skill.json", meta.dump(2));
        auto findings = lint_package(dir / "pkg");
        REQUIRE(findings.size() == 1);
        CHECK(findings[0].code == "divergence");
        CHECK(findings[0].message.find("task_scope") != std::string::npos);
    }
    SUBCASE("whitespace differences are not divergence") {
        auto meta = json::parse(read_file(dir / "pkg/skill.json"));
        meta["task_scope"] = "  Count the lines of a tabular\ntext file and write the count   with a label.  ";
        write_text(dir / "pkg", "skill.json", meta.dump(2));
        CHECK(lint_package(dir / "pkg").empty());
    }
    SUBCASE("script listed but absent gives one missing-file finding") {
        fs::remove(dir / "pkg/scripts/count.sh");
        auto findings = lint_package(dir / "pkg");
        REQUIRE(findings.size() == 1);
        CHECK(findings[0].code == "missing-file");
        CHECK(findings[0].path == "scripts/count.sh");
    }
    SUBCASE("explicitly listed script that does not exist") {
        auto findings = lint_package(dir / "pkg", {"scripts/extra.py"});
        REQUIRE(findings.size() == 1);
        CHECK(findings[0].path == "scripts/extra.py");
    }
    SUBCASE("script without the executable bit") {
        set_executable(dir / "pkg/scripts/count.sh", false);
        auto findings = lint_package(dir / "pkg");
        REQUIRE(findings.size() == 1);
        CHECK(findings[0].code == "not-executable");
    }
    SUBCASE("unparseable metadata") {
        write_text(dir / "pkg", "skill.json", "{");
        auto findings = lint_package(dir / "pkg");
        REQUIRE(findings.size() == 1);
        CHECK(findings[0].code == "bad-metadata");
    }
}

TEST_CASE("placeholder_names") {
    CHECK(placeholder_names("sh run.sh {a} --x {b=3} {c=}") == std::vector<std::string>{"a", "b", "c"});
    CHECK(placeholder_names("no placeholders").empty());
}

TEST_CASE("every fixture package lints clean") {
    TempDir dir;
    for (const char* name : {"passing", "failing", "timestamp", "deterministic", "ignored_input", "scheduler"}) {
        CAPTURE(name);
        compile_fixture(name, dir / name);
        CHECK(lint_package(dir / name).empty());
    }
}

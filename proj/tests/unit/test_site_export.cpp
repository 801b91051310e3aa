#include "skillforge/error.hpp"
#include "skillforge/site_export.hpp"

#include "repo_fixture.hpp"
#include "test_support.hpp"

#include <doctest.h>

using namespace skillforge;
using skillforge::testing::build_doc;
using skillforge::testing::fixtures_dir;
using skillforge::testing::RepoFixture;
using skillforge::testing::TempDir;
using json = nlohmann::json;

namespace {

const char* kTaxonomy =
    "bio\n"
    "  genomics\n"
    "    variant-calling *\n"
    "    alignment *\n"
    "  imaging\n"
    "    segmentation *\n";

NodePath P(const std::string& s) { return NodePath::parse(s); }

/// Three verified skills on three leaves, each citing one resource.
struct ThreeSkills {
    TempDir dir;
    Registry reg = Registry::open(dir / "registry", {.sync = false});
    DomainTree tree = load_tree(kTaxonomy);

    ThreeSkills() {
        const std::vector<std::string> leaves = {"bio/genomics/alignment", "bio/genomics/variant-calling",
                                                 "bio/imaging/segmentation"};
        for (const auto& leaf : leaves) {
            ResourceEntry r;
            r.locator = "https://example.org/" + P(leaf).leaf_label();
            r.leaf_paths = {P(leaf)};
            const std::string rid = reg.record_resource(r).id;
            SkillEntry e;
            e.id = reg.allocate_skill_id(P(leaf), "tool");
            e.name = "tool";
            e.leaf_path = P(leaf);
            e.package_path = "skills/" + P(leaf).fs_form() + "/" + e.id;
            e.smoke_target = "tests/smoke.sh";
            e.provenance = {rid};
            reg.upsert_skill(e);
            reg.set_verification(e.id, {e.id, Layer::execution, Outcome::pass, 1, "sandbox/" + e.id, 1});
            tree = link_skill(tree, P(leaf), e.id, true);
            tree = link_resource(tree, P(leaf), rid);
        }
    }
};

json read_json(const fs::path& p) { return json::parse(read_file(p)); }

StageOutcome timed(StageKind stage, double seconds) {
    StageOutcome o;
    o.stage = stage;
    o.duration_seconds = seconds;
    return o;
}

CycleReport cycle_with(std::vector<double> durations, bool aborted = false) {
    CycleReport r;
    for (size_t i = 0; i < durations.size(); ++i) r.stages.push_back(timed(kCycleStages[i], durations[i]));
    r.aborted = aborted;
    return r;
}

}  // namespace

TEST_CASE("export_site: three-skill library gives three cards and matching stats") {
    ThreeSkills lib;
    const fs::path dest = lib.dir / "site";
    const SiteBundle bundle = export_site(lib.dir.path(), lib.reg, lib.tree, dest);
    CHECK(bundle.stats == snapshot_stats(lib.reg, lib.tree));
    CHECK(bundle.stats.skill_count == 3);
    REQUIRE(bundle.skills_index.size() == 3);
    for (const auto& card : bundle.skills_index) {
        CHECK(lib.tree.contains(card.leaf));
        REQUIRE(card.provenance_locators.size() == 1);
        CHECK(card.provenance_locators[0] == "https://example.org/" + card.leaf.leaf_label());
        CHECK(card.compute_profile == "package unavailable");
    }
    for (const char* name : kSiteFiles) CHECK(fs::exists(dest / name));
    CHECK(read_json(dest / "stats.json").at("skill_count") == 3);
    CHECK(read_json(dest / "skills.json").size() == 3);
    CHECK(read_json(dest / "resources.json").size() == 3);

    const json taxonomy = read_json(dest / "taxonomy.json");
    bool found = false;
    for (const auto& n : taxonomy.at("nodes"))
        if (n.at("path") == "bio/imaging/segmentation") {
            found = true;
            CHECK(n.at("coverage") == "covered");
            CHECK(n.at("verified_skills") == 1);
        }
    CHECK(found);

    const std::string html = read_file(dest / "index.html");
    CHECK(html.find("href=") == std::string::npos);
    CHECK(html.find("src=") == std::string::npos);
    CHECK(html.find("https://example.org/alignment") != std::string::npos);
}

TEST_CASE("export_site: byte-deterministic for identical inputs") {
    ThreeSkills lib;
    const SiteBundle a = export_site(lib.dir.path(), lib.reg, lib.tree, lib.dir / "a");
    const SiteBundle b = export_site(lib.dir.path(), lib.reg, lib.tree, lib.dir / "b");
    const SiteBundle again = export_site(lib.dir.path(), lib.reg, lib.tree, lib.dir / "a");
    CHECK(a.digest() == b.digest());
    CHECK(again.digest() == a.digest());
    CHECK(digest_directory(lib.dir / "a") == digest_directory(lib.dir / "b"));
}

TEST_CASE("export_site: integrity violations and foreign destinations abort the export") {
    ThreeSkills lib;
    const DomainTree broken = link_skill(lib.tree, P("bio/genomics/alignment"), "ghost", true);
    try {
        export_site(lib.dir.path(), lib.reg, broken, lib.dir / "site");
        FAIL("expected integrity failure");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::integrity_failure);
    }
    CHECK_FALSE(fs::exists(lib.dir / "site"));

    fs::create_directories(lib.dir / "busy");
    write_file_atomic(lib.dir / "busy" / "notes.txt", "keep\n", false);
    CHECK_THROWS_AS(export_site(lib.dir.path(), lib.reg, lib.tree, lib.dir / "busy"), Error);
    CHECK(read_file(lib.dir / "busy" / "notes.txt") == "keep\n");
}

TEST_CASE("export_site: skill cards carry the compute profile from the package") {
    RepoFixture repo;
    repo.mock("tree_check", {{"focus_leaves", {"bio/single-cell/annotation"}}, {"rationale", "x"}});
    repo.mock("resource_search", {{"resources", json::array()}});
    repo.mock("skill_build", build_doc("passing", "line counter"));
    repo.mock("novelty_check", {{"matches", json::array()}, {"decision", "novel"}, {"rationale", "fine"}});
    repo.p().run_cycle();
    const SiteBundle bundle = export_site(repo.root, repo.reg(), repo.p().tree(), repo.root / kSiteDir);
    REQUIRE(bundle.skills_index.size() == 1);
    CHECK(bundle.skills_index[0].compute_profile == "POSIX sh; coreutils wc");
    CHECK(bundle.skills_index[0].status == SkillStatus::verified);
}

TEST_CASE("export_site: library-scale fixture renders the snapshot panel") {
    TempDir dir;
    auto reg = Registry::open(dir / "registry", {.sync = false});
    auto tree = load_tree(read_file(fixtures_dir() / "library_scale/taxonomy.txt"));
    const auto leaves = tree.live_leaves();
    REQUIRE(leaves.size() == 286);
    for (int i = 0; i < 394; ++i) {
        ResourceEntry r;
        r.locator = "https://resources.example/" + std::to_string(i);
        r.leaf_paths = {leaves[i % leaves.size()]};
        reg.record_resource(r);
    }
    const std::string res0 = resource_id_for("https://resources.example/0");
    for (int i = 0; i < 402; ++i) {
        const NodePath& leaf = leaves[i % leaves.size()];
        SkillEntry e;
        e.id = reg.allocate_skill_id(leaf, "tool");
        e.name = "tool";
        e.leaf_path = leaf;
        e.package_path = "skills/" + leaf.fs_form() + "/" + e.id;
        e.smoke_target = "tests/run.sh";
        e.provenance = {res0};
        reg.upsert_skill(e);
        reg.set_verification(e.id, {e.id, Layer::execution, Outcome::pass, 1, "sandbox/" + e.id, 1});
        const bool novel = i < 286;
        reg.record_adjudication({e.id, novel ? "novel" : "redundant", "", std::nullopt, {}, 1});
        if (novel) tree = link_skill(tree, leaf, e.id, true);
        else reg.transition(e.id, SkillStatus::removed, 1);
    }

    const SiteBundle bundle = export_site(dir.path(), reg, tree, dir / "site");
    CHECK(bundle.stats == snapshot_stats(reg, tree));
    const json stats = read_json(dir / "site" / "stats.json");
    const json panel = stats.at("panel");
    REQUIRE(panel.size() == 4);
    CHECK(panel[0] == json{{"label", "Skills"}, {"value", 286}});
    CHECK(panel[1] == json{{"label", "Domains"}, {"value", 27}});
    CHECK(panel[2] == json{{"label", "Subdomains"}, {"value", 254}});
    CHECK(panel[3] == json{{"label", "Resources"}, {"value", 394}});
    CHECK(stats.at("novel_percent") == "71.1%");
    const std::string html = read_file(dir / "site" / "index.html");
    CHECK(html.find("286 skills spanning 27 domains") != std::string::npos);
    CHECK(export_site(dir.path(), reg, tree, dir / "again").digest() == bundle.digest());
}

TEST_CASE("stage_timing_report: means equal the arithmetic average per stage") {
    const auto two = stage_timing_report({cycle_with({1, 2, 3, 4, 5}), cycle_with({2, 4, 8, 6, 0.5})});
    CHECK(two.cycles == 2);
    REQUIRE(two.stages.size() == 5);
    const std::vector<double> expected = {(1.0 + 2.0) / 2, (2.0 + 4.0) / 2, (3.0 + 8.0) / 2, (4.0 + 6.0) / 2,
                                          (5.0 + 0.5) / 2};
    for (size_t i = 0; i < 5; ++i) {
        CHECK(two.stages[i].stage == kCycleStages[i]);
        CHECK(two.stages[i].samples == 2);
        REQUIRE(two.stages[i].mean_seconds);
        CHECK(*two.stages[i].mean_seconds == expected[i]);
    }

    const auto one = stage_timing_report({cycle_with({0.25, 1, 2, 3, 7})});
    CHECK(*one.stages[0].mean_seconds == 0.25);
    CHECK(*one.stages[4].mean_seconds == 7);
    CHECK(one.table().find("skill_build") != std::string::npos);
}

TEST_CASE("stage_timing_report: stages an aborted cycle never reached have no samples") {
    const auto report = stage_timing_report({cycle_with({1, 3}, true)});
    CHECK(report.stages[1].samples == 1);
    CHECK(report.stages[2].samples == 0);
    CHECK_FALSE(report.stages[2].mean_seconds);
    CHECK(report.to_json().at("stages")[2].at("mean_seconds").is_null());
    CHECK(report.table().find("-") != std::string::npos);
    CHECK_THROWS_AS(stage_timing_report({}), Error);
}

TEST_CASE("load_cycle_reports: reads the reports a pipeline wrote") {
    testing::ScriptedClock clock({0, 1, 1, 3, 3, 6, 6, 10, 10, 15});
    RepoFixture repo(testing::kTwoLeafTaxonomy, {}, &clock);
    repo.mock("tree_check", {{"focus_leaves", {"bio/single-cell/annotation"}}, {"rationale", "x"}});
    repo.mock("resource_search", {{"resources", json::array()}});
    repo.mock("skill_build", build_doc("passing", "line counter"));
    repo.mock("novelty_check", {{"matches", json::array()}, {"decision", "novel"}, {"rationale", "fine"}});
    repo.p().run_cycle();
    const auto reports = load_cycle_reports(repo.root);
    REQUIRE(reports.size() == 1);
    const auto timing = stage_timing_report(reports);
    CHECK(*timing.stages[3].mean_seconds == 4);
}

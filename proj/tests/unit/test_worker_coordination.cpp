#include "skillforge/error.hpp"
#include "skillforge/ownership.hpp"
#include "skillforge/worker_coordination.hpp"

#include "repo_fixture.hpp"
#include "test_support.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace skillforge;
using skillforge::testing::build_doc;
using skillforge::testing::RepoFixture;
using json = nlohmann::json;

namespace {

const char* kFourLeafTaxonomy =
    "bio\n"
    "  single-cell\n"
    "    annotation *\n"
    "    clustering *\n"
    "  genomics\n"
    "    alignment *\n"
    "    variants *\n";

const std::vector<std::string> kFourLeaves = {"bio/genomics/alignment", "bio/genomics/variants",
                                              "bio/single-cell/annotation", "bio/single-cell/clustering"};

NodePath P(const std::string& s) { return NodePath::parse(s); }

json worker_report(std::vector<std::string> changes = {}, std::vector<std::string> blockers = {},
                   std::vector<std::string> next = {}) {
    return {{"repo_changes", changes}, {"blockers", blockers}, {"next_steps", next}};
}

/// Standing responses: every leaf finds one resource, builds the passing
/// package and reports nothing for shared files.
void script_workers(RepoFixture& repo) {
    repo.mock("resource_search",
              {{"resources", {{{"kind", "repository"}, {"locator", "https://example.org/wc"},
                              {"leaf_path", "bio/single-cell/annotation"}, {"authority_rank", 2}}}}});
    json build = build_doc("passing", "line counter");
    build["provenance_links"] = {"https://example.org/wc"};
    repo.mock("skill_build", build);
    repo.mock("parallel_leaf_stage", worker_report());
}

Workspace spawn_and_run(RepoFixture& repo, const std::string& leaf, int64_t cycle = 1) {
    Workspace ws = spawn_workspace(repo.root, repo.p().tree(), P(leaf));
    worker_search(ws, repo.p().gateway(), repo.p().config(), cycle);
    worker_build(ws, repo.p().gateway(), repo.p().config(), cycle);
    return ws;
}

void put(const fs::path& path, const std::string& text) {
    fs::create_directories(path.parent_path());
    fs::permissions(path.parent_path(), fs::perms::owner_all, fs::perm_options::add);
    std::error_code ec;
    fs::permissions(path, fs::perms::owner_write, fs::perm_options::add, ec);
    write_file_atomic(path, text, false);
}

bool contains(const std::string& text, const std::string& part) { return text.find(part) != std::string::npos; }

}  // namespace

TEST_CASE("spawn_workspace: copies the leaf subtrees and shared files, one open workspace per leaf") {
    RepoFixture repo;
    fs::create_directories(repo.root / "skills/bio/single-cell/clustering/other");
    put(repo.root / "skills/bio/single-cell/clustering/other/SKILL.md", "x\n");

    Workspace ws = spawn_workspace(repo.root, repo.p().tree(), P("bio/single-cell/annotation"));
    CHECK(ws.status == WorkspaceStatus::open);
    CHECK(ws.root == repo.root / "workspaces" / "bio--single-cell--annotation");
    CHECK(fs::is_directory(ws.repo() / "skills/bio/single-cell/annotation"));
    CHECK(fs::is_directory(ws.repo() / "tests/bio/single-cell/annotation"));
    CHECK_FALSE(fs::exists(ws.repo() / "skills/bio/single-cell/clustering"));
    CHECK(fs::exists(ws.repo() / "registry" / kTreeSnapshotFile));
    CHECK_FALSE(fs::exists(ws.repo() / "registry" / kLockFile));
    CHECK(fs::exists(ws.repo() / kPipelineStateFile));
    CHECK(ws.base_digest == digest_directory(ws.repo()));

    auto found = find_workspace(repo.root, P("bio/single-cell/annotation"));
    REQUIRE(found);
    CHECK(found->base_files == ws.base_files);

    try {
        spawn_workspace(repo.root, repo.p().tree(), P("bio/single-cell/annotation"));
        FAIL("expected duplicate-workspace");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::duplicate_workspace);
    }
    CHECK_THROWS_AS(spawn_workspace(repo.root, repo.p().tree(), P("bio/single-cell")), Error);
    CHECK_THROWS_AS(spawn_workspace(repo.root, repo.p().tree(), P("bio/none")), Error);

    ws.status = WorkspaceStatus::discarded;
    ws.save();
    CHECK_NOTHROW(spawn_workspace(repo.root, repo.p().tree(), P("bio/single-cell/annotation")));
}

TEST_CASE("collect_leaf_artifacts: a worker that changed nothing yields an empty set") {
    RepoFixture repo;
    Workspace ws = spawn_workspace(repo.root, repo.p().tree(), P("bio/single-cell/annotation"));
    put(ws.root / "response.json", worker_report().dump());
    put(ws.root / "worker.json", json{{"cycle", 1},
                                      {"resources", json::array()},
                                      {"skills", json::array()},
                                      {"notes", json::array()},
                                      {"response_digests", json::array()}}
                                     .dump());
    const ArtifactSet set = collect_leaf_artifacts(ws);
    CHECK(set.files.empty());
    CHECK(set.deleted.empty());
    CHECK(set.followups.empty());
    CHECK(ws.status == WorkspaceStatus::collected);
    CHECK(find_workspace(repo.root, ws.leaf)->status == WorkspaceStatus::collected);
}

TEST_CASE("worker_build: a finished worker collects to its package files and registry entry") {
    RepoFixture repo;
    script_workers(repo);
    const std::string before = shared_state_digest(repo.root, repo.reg());
    Workspace ws = spawn_and_run(repo, "bio/single-cell/annotation");
    CHECK(shared_state_digest(repo.root, repo.reg()) == before);
    CHECK(repo.reg().skills().empty());

    const ArtifactSet set = collect_leaf_artifacts(ws);
    REQUIRE(set.skills.size() == 1);
    CHECK(set.skills[0].id == "annotation-line-counter");
    CHECK(set.skills[0].leaf_path == P("bio/single-cell/annotation"));
    CHECK(set.files.size() >= 2);
    for (const auto& [path, digest] : set.files) CHECK(is_leaf_owned(path, ws.leaf));
    CHECK(set.files.count("skills/bio/single-cell/annotation/annotation-line-counter/SKILL.md"));
    CHECK(set.resources.size() == 1);
    CHECK(set.response_digests.size() == 3);
}

TEST_CASE("collect_leaf_artifacts: shared-file writes discard the workspace and name the paths") {
    RepoFixture repo;
    script_workers(repo);
    Workspace ws = spawn_and_run(repo, "bio/single-cell/annotation");
    put(ws.repo() / "registry" / kSkillsFile, "{}\n");
    put(ws.repo() / "skills/bio/single-cell/clustering/stray.txt", "no\n");
    try {
        collect_leaf_artifacts(ws);
        FAIL("expected shared-file-conflict");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::shared_file_conflict);
        CHECK(contains(e.what(), "registry/skills.ndjson"));
        CHECK(contains(e.what(), "skills/bio/single-cell/clustering/stray.txt"));
    }
    CHECK(ws.status == WorkspaceStatus::discarded);
    CHECK(find_workspace(repo.root, ws.leaf)->status == WorkspaceStatus::discarded);
}

TEST_CASE("collect_leaf_artifacts: missing or invalid worker report is unparseable") {
    RepoFixture repo;
    Workspace ws = spawn_workspace(repo.root, repo.p().tree(), P("bio/single-cell/annotation"));
    try {
        collect_leaf_artifacts(ws);
        FAIL("expected unparseable-response");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::unparseable_response);
    }

    Workspace again = spawn_workspace(repo.root, repo.p().tree(), P("bio/single-cell/annotation"));
    put(again.root / "response.json", R"({"repo_changes": "one"})");
    try {
        collect_leaf_artifacts(again);
        FAIL("expected unparseable-response");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::unparseable_response);
    }
    CHECK(again.status == WorkspaceStatus::discarded);
}

TEST_CASE("merge_worker_outputs: shared-file requests become follow-ups, never file edits") {
    RepoFixture repo;
    script_workers(repo);
    repo.mock("parallel_leaf_stage",
              worker_report({"add alignment tools to the shared README"}, {"needs GPU quota"}, {"mine variant callers"}));
    Workspace ws = spawn_and_run(repo, "bio/single-cell/annotation");
    ArtifactSet set = collect_leaf_artifacts(ws);
    REQUIRE(set.followups.size() == 3);

    const MergeReport merged = merge_worker_outputs(repo.root, repo.reg(), {set}, 1);
    CHECK(merged.merged == std::vector<NodePath>{P("bio/single-cell/annotation")});
    CHECK(merged.skill_ids == std::vector<std::string>{"annotation-line-counter"});
    const auto& followups = repo.reg().followups();
    REQUIRE(followups.size() == 3);
    CHECK(followups[0] == FollowupRecord{P("bio/single-cell/annotation"), "repo_changes",
                                         "add alignment tools to the shared README", 1});
    CHECK(followups[1].field == "blockers");
    CHECK(followups[2].field == "next_steps");
    CHECK(repo.reg().skill("annotation-line-counter").status == SkillStatus::untested);
    CHECK(fs::exists(repo.root / "skills/bio/single-cell/annotation/annotation-line-counter/SKILL.md"));
}

TEST_CASE("merge_worker_outputs: disjoint sets merge to one state in any order; conflicts are excluded") {
    RepoFixture source(kFourLeafTaxonomy);
    script_workers(source);
    std::vector<Workspace> workspaces;
    for (const auto& leaf : kFourLeaves) workspaces.push_back(spawn_and_run(source, leaf));
    put(workspaces[1].repo() / "registry" / kResourcesFile, "tampered\n");
    CollectionResult collected = collect_workspaces(workspaces);
    REQUIRE(collected.sets.size() == 3);
    REQUIRE(collected.rejected.size() == 1);
    CHECK(collected.rejected[0].first == P("bio/genomics/variants"));

    std::mt19937 rng(7);
    std::set<std::string> digests;
    for (int round = 0; round < 20; ++round) {
        RepoFixture target(kFourLeafTaxonomy);
        auto order = collected.sets;
        std::shuffle(order.begin(), order.end(), rng);
        const MergeReport merged = merge_worker_outputs(target.root, target.reg(), order, 1);
        CHECK(merged.merged.size() == 3);
        CHECK(std::is_sorted(merged.merged.begin(), merged.merged.end()));
        CHECK_FALSE(target.reg().find_skill("variants-line-counter"));
        digests.insert(shared_state_digest(target.root, target.reg()));
    }
    CHECK(digests.size() == 1);
}

TEST_CASE("merge_worker_outputs: empty input leaves the repository unchanged") {
    RepoFixture repo;
    const std::string before = shared_state_digest(repo.root, repo.reg());
    const MergeReport merged = merge_worker_outputs(repo.root, repo.reg(), {}, 1);
    CHECK(merged.merged.empty());
    CHECK(merged.files == 0);
    CHECK(shared_state_digest(repo.root, repo.reg()) == before);
}

TEST_CASE("merge_worker_outputs: colliding skill ids are re-allocated") {
    RepoFixture repo;
    script_workers(repo);
    Workspace ws = spawn_and_run(repo, "bio/single-cell/annotation");
    ArtifactSet set = collect_leaf_artifacts(ws);
    SkillEntry squatter = set.skills[0];
    squatter.package_path = "skills/bio/single-cell/annotation/elsewhere";
    repo.reg().upsert_skill(squatter);

    const MergeReport merged = merge_worker_outputs(repo.root, repo.reg(), {set}, 1);
    REQUIRE(merged.renamed.size() == 1);
    CHECK(merged.renamed.at("annotation-line-counter") == "annotation-line-counter-2");
    const SkillEntry& moved = repo.reg().skill("annotation-line-counter-2");
    CHECK(moved.package_path == "skills/bio/single-cell/annotation/annotation-line-counter-2");
    CHECK(contains(read_file(repo.root / moved.package_path / "SKILL.md"), "annotation-line-counter-2"));
}

TEST_CASE("ParallelLeafMiner: a cycle with parallel workers verifies skills on both leaves") {
    RepoFixture repo;
    script_workers(repo);
    repo.mock("tree_check", {{"focus_leaves", {"bio/single-cell/annotation", "bio/single-cell/clustering"}},
                             {"rationale", "both"}});
    ParallelLeafMiner miner(2);
    repo.p().set_miner(&miner);
    const CycleReport report = repo.p().run_cycle();
    CHECK(report.created == std::vector<std::string>{"annotation-line-counter", "clustering-line-counter"});
    CHECK(report.verified.size() + report.removed.size() == 2);
    CHECK_FALSE(fs::exists(repo.root / "workspaces/bio--single-cell--annotation"));
    CHECK(repo.reg().resources().size() == 1);
    CHECK(repo.reg().resources().begin()->second.leaf_paths.size() == 2);
}

TEST_CASE("ParallelLeafMiner: a crashing worker is reported and the rest merge") {
    RepoFixture repo;
    script_workers(repo);
    repo.mock("tree_check", {{"focus_leaves", {"bio/single-cell/annotation", "bio/single-cell/clustering"}},
                             {"rationale", "both"}});
    repo.mock("parallel_leaf_stage__bio--single-cell--clustering__1", json{{"repo_changes", 3}});
    ParallelLeafMiner miner(2);
    repo.p().set_miner(&miner);
    const CycleReport report = repo.p().run_cycle();
    CHECK(report.created == std::vector<std::string>{"annotation-line-counter"});
    bool noted = false;
    for (const auto& s : report.stages)
        for (const auto& n : s.notes) noted = noted || contains(n, "bio/single-cell/clustering");
    CHECK(noted);
    CHECK(find_workspace(repo.root, P("bio/single-cell/clustering"))->status == WorkspaceStatus::discarded);
}

// ---- campaigns ---------------------------------------------------------------------

namespace {

void script_campaign(RepoFixture& repo) {
    script_workers(repo);
    repo.mock("tree_check__cycle-1", {{"focus_leaves", {"bio/single-cell/annotation"}}, {"rationale", "a"}});
    repo.mock("tree_check__cycle-2", {{"focus_leaves", {"bio/single-cell/clustering"}}, {"rationale", "c"}});
    repo.mock("tree_check__cycle-3", {{"focus_leaves", {"bio/genomics/alignment"}}, {"rationale", "g"}});
    repo.mock("tree_check__cycle-4", {{"focus_leaves", {"bio/genomics/variants"}}, {"rationale", "v"}});
    repo.mock("novelty_check", {{"matches", json::array()}, {"decision", "novel"}, {"rationale", "fine"}});
    repo.mock("layer2_benchmark", {{"with_skill_score", 0.9}, {"baseline_score", 0.4}, {"notes", "helps"}});
}

CampaignConfig two_branch(bool parallel = true) {
    CampaignConfig c;
    c.id = "demo";
    c.branches = {P("bio/single-cell"), P("bio/genomics")};
    c.cycles_per_branch = 2;
    c.parallel_workers = parallel;
    return c;
}

}  // namespace

TEST_CASE("campaign_schedule: mining phases per branch followed by one evaluation") {
    const auto phases = campaign_schedule(two_branch());
    REQUIRE(phases.size() == 6);
    CHECK(phases[0].kind == PhaseKind::mining);
    CHECK(phases[1].kind == PhaseKind::mining);
    CHECK(phases[2].kind == PhaseKind::evaluation);
    CHECK(phases[3].branch == P("bio/genomics"));
    CHECK(phases[5].kind == PhaseKind::evaluation);
    CHECK(CampaignConfig::from_json(two_branch().to_json()).to_json() == two_branch().to_json());
    CHECK_THROWS_AS(CampaignConfig::from_json({{"id", "Bad Id"}, {"branches", {"bio"}}}), Error);
}

TEST_CASE("run_campaign: two branches give four mining and two evaluation phases") {
    RepoFixture repo(kFourLeafTaxonomy);
    script_campaign(repo);
    const CampaignReport report = run_campaign(repo.p(), two_branch());
    CHECK(report.status == CampaignStatus::completed);
    CHECK(report.count(PhaseKind::mining) == 4);
    CHECK(report.count(PhaseKind::evaluation) == 2);
    CHECK(report.cycle_reports().size() == 4);
    for (const auto& phase : report.phases) CHECK_FALSE(phase.failed);
    CHECK(report.phases[2].evaluation);
    CHECK_FALSE(report.phases[2].noop);
    CHECK(repo.p().state().pending_skills.empty());
    CHECK(fs::exists(checkpoint_path(repo.root, "demo")));
    CHECK(load_checkpoint(repo.root, "demo").status == CampaignStatus::completed);
    CHECK(fs::exists(repo.root / "campaigns/demo/report.json"));
}

TEST_CASE("run_campaign: an evaluation phase with nothing pending is a no-op") {
    RepoFixture repo(kFourLeafTaxonomy);
    script_campaign(repo);
    repo.mock("skill_build", build_doc("failing", "upper"));
    repo.mock("layer1_fix", {{"diagnosis", "unknown"}, {"edits", json::array()}, {"retest", true}});
    CampaignConfig c = two_branch(false);
    c.branches = {P("bio/single-cell")};
    c.cycles_per_branch = 1;
    const CampaignReport report = run_campaign(repo.p(), c);
    REQUIRE(report.phases.size() == 2);
    CHECK_FALSE(report.phases[0].failed);
    CHECK(report.phases[0].cycle->removed.size() == 1);
    CHECK(report.phases[1].noop);
    CHECK_FALSE(report.phases[1].failed);
    CHECK(report.status == CampaignStatus::completed);
}

TEST_CASE("run_campaign: consecutive failures halt at the limit") {
    RepoFixture repo(kFourLeafTaxonomy);
    script_campaign(repo);
    repo.mock("resource_search", {{"resources", "broken"}});
    CampaignConfig c = two_branch(false);
    c.failure_limit = 2;
    const CampaignReport report = run_campaign(repo.p(), c);
    CHECK(report.status == CampaignStatus::halted);
    REQUIRE(report.phases.size() == 2);
    CHECK(report.phases[0].failed);
    CHECK(report.phases[1].failed);
    CHECK(report.phases[1].cycle->aborted);
    CHECK(load_checkpoint(repo.root, "demo").status == CampaignStatus::halted);
}

TEST_CASE("resume_campaign: an interrupted campaign finishes in the same state as an uninterrupted one") {
    RepoFixture straight(kFourLeafTaxonomy);
    script_campaign(straight);
    const CampaignReport full = run_campaign(straight.p(), two_branch());

    RepoFixture split(kFourLeafTaxonomy);
    script_campaign(split);
    const CampaignReport first = run_campaign(split.p(), two_branch(), {3});
    CHECK(first.status == CampaignStatus::interrupted);
    CHECK(first.phases.size() == 3);
    CHECK(load_checkpoint(split.root, "demo").next_phase == 3);

    split.reopen();
    const CampaignReport rest = resume_campaign(split.p(), "demo");
    CHECK(rest.status == CampaignStatus::completed);
    CHECK(rest.phases.size() == full.phases.size());
    CHECK(split.reg().digest() == straight.reg().digest());
    CHECK(split.p().state_digest() == straight.p().state_digest());
    CHECK(load_checkpoint(split.root, "demo").completed_cycles == load_checkpoint(straight.root, "demo").completed_cycles);
}

TEST_CASE("resume_campaign: state modified after the checkpoint is refused") {
    RepoFixture repo(kFourLeafTaxonomy);
    script_campaign(repo);
    run_campaign(repo.p(), two_branch(), {1});
    const auto& any = repo.reg().skills().begin()->second;
    put(repo.root / any.package_path / "extra.txt", "edited\n");
    repo.reopen();
    try {
        resume_campaign(repo.p(), "demo");
        FAIL("expected digest-mismatch");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::digest_mismatch);
        CHECK(contains(e.what(), "skill packages"));
    }
}

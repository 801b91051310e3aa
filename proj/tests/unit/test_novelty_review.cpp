#include "skillforge/error.hpp"
#include "skillforge/novelty_review.hpp"

#include "test_support.hpp"

#include <doctest.h>

#include <random>

using namespace skillforge;
using skillforge::testing::TempDir;
using skillforge::testing::write_text;

namespace {

NodePath P(const char* s) { return NodePath::parse(s); }

std::vector<std::string> terms(std::initializer_list<const char*> list) { return {list.begin(), list.end()}; }

SkillContract contract_for(const std::string& scope, std::vector<std::string> steps = {"Run the annotation model."}) {
    SkillContract c;
    c.task_scope = scope;
    c.inputs = {{"data", "Input data.", true, InputKind::file, ValueType::text}};
    c.execution_steps = std::move(steps);
    c.provenance_links = {"res-a"};
    c.example_invocations = {"sh scripts/run.sh {data}"};
    return c;
}

CatalogEntry entry(const std::string& ref, const std::string& task, const std::string& scope = {}) {
    return {ref, task, scope, std::nullopt, {}};
}

CatalogMatch match(Overlap o, const std::string& ref = "e") { return {"hub", ref, "t", "s", o, 0.5}; }

const char* kTaxonomy =
    "bio\n"
    "  genomics\n"
    "    alignment *\n"
    "  single-cell\n"
    "    annotation *\n";

/// Registry with two verified skills: `base` linked under annotation and
/// `cand` registered under a leaf that may not exist yet.
struct Library {
    TempDir dir;
    Registry reg = Registry::open(dir / "registry");
    DomainTree tree = load_tree(kTaxonomy);

    SkillEntry add_verified(const std::string& id, const char* leaf, std::vector<std::string> provenance) {
        SkillEntry e;
        e.id = id;
        e.name = id;
        e.leaf_path = P(leaf);
        e.package_path = "skills/" + e.leaf_path.fs_form() + "/" + id;
        e.smoke_target = "sh tests/smoke.sh";
        e.provenance = std::move(provenance);
        reg.upsert_skill(e);
        return reg.set_verification(id, {id, Layer::execution, Outcome::pass, 1, "sandbox/" + id, 1});
    }

    Library() {
        for (const char* id : {"res-a", "res-b", "res-c"}) {
            ResourceEntry r;
            r.id = id;
            r.locator = std::string("https://example.org/") + id;
            r.leaf_paths = {P("bio/single-cell/annotation")};
            reg.record_resource(r);
        }
        add_verified("base", "bio/single-cell/annotation", {"res-a"});
        tree = link_skill(tree, P("bio/single-cell/annotation"), "base", true);
    }
};

}  // namespace

TEST_CASE("derive_keywords: documented tokenizer") {
    const auto k = derive_keywords("Annotate cell types in spatial data");
    CHECK(k.terms == terms({"annotate", "cell", "types", "spatial", "data", "annotate cell", "cell types",
                            "types spatial", "spatial data"}));
    CHECK(derive_keywords("Annotate cell types in spatial data") == k);
    CHECK(derive_keywords("Call, call; CALL variants!").terms ==
          terms({"call", "variants", "call call", "call variants"}));
    try {
        derive_keywords("of the and in to");
        FAIL("expected empty-after-filtering");
    } catch (const Error& e) {
        CHECK(e.code() == Errc::empty_after_filtering);
    }
    CHECK(stop_words().size() == 50);
}

TEST_CASE("search_catalogs: ladder classification and ranking") {
    const auto query = make_query(contract_for("Annotate cell types in spatial data"), P("bio/single-cell/annotation"));
    Catalog hub{"hub",
                {entry("other", "Align short reads to a reference genome"),
                 entry("near", "Annotate spatial transcriptomics spots", "Cluster spots."),
                 entry("same-diff", "annotate cell types in  spatial data", "Train a graph neural network on tiles."),
                 entry("exact", "Annotate cell types in spatial data", "Run the annotation model.")}};

    const auto matches = search_catalogs({hub}, query, 10);
    REQUIRE(matches.size() == 3);
    CHECK(matches[0].entry_ref == "exact");
    CHECK(matches[0].overlap == Overlap::same_task_same_scope);
    CHECK(matches[1].entry_ref == "same-diff");
    CHECK(matches[1].overlap == Overlap::same_task_diff_scope);
    CHECK(matches[2].entry_ref == "near");
    CHECK(matches[2].overlap == Overlap::related);
    CHECK(search_catalogs({hub}, query, 1).size() == 1);
    CHECK(search_catalogs({}, query, 10).empty());
    CHECK(search_catalogs({{"empty", {}}}, query, 10).empty());
}

TEST_CASE("classify: scope falls back to topic and provenance when no summary is given") {
    const auto query = make_query(contract_for("Annotate cell types in spatial data"), P("bio/single-cell/annotation"));
    CatalogEntry same_topic = entry("t", "Annotate cell types in spatial data");
    same_topic.topic_path = P("bio/single-cell/annotation");
    CHECK(classify(query, "local", same_topic).overlap == Overlap::same_task_same_scope);

    CatalogEntry elsewhere = entry("u", "Annotate cell types in spatial data");
    elsewhere.topic_path = P("bio/genomics/alignment");
    CHECK(classify(query, "local", elsewhere).overlap == Overlap::same_task_diff_scope);
    elsewhere.provenance = {"res-a"};
    CHECK(classify(query, "local", elsewhere).overlap == Overlap::same_task_same_scope);
}

TEST_CASE("load_catalog: snapshot format and unreadable snapshots") {
    TempDir dir;
    write_text(dir.path(), "hub.ndjson",
               R"({"entry_ref": "h1", "task_description": "Annotate cells", "scope_summary": "x", "topic_path": "bio/single-cell/annotation", "provenance": ["p"]})"
               "\n\n"
               R"({"entry_ref": "h2", "task_description": "Align reads"})"
               "\n");
    const auto catalog = load_catalog(dir / "hub.ndjson");
    CHECK(catalog.catalog_id == "hub");
    REQUIRE(catalog.entries.size() == 2);
    CHECK(catalog.entries[0].topic_path == P("bio/single-cell/annotation"));
    CHECK(catalog.entries[1].scope_summary.empty());

    write_text(dir.path(), "bad.ndjson", "{\"entry_ref\": \"h1\"}\n");
    for (const char* name : {"bad.ndjson", "missing.ndjson"}) {
        try {
            load_catalog(dir / name);
            FAIL("expected unreadable-catalog");
        } catch (const Error& e) {
            CHECK(e.code() == Errc::unreadable_catalog);
        }
    }
}

TEST_CASE("adjudicate: ladder examples and provider downgrade") {
    CHECK(adjudicate("s", {}).decision == Decision::novel);
    const auto red = adjudicate("s", {match(Overlap::related), match(Overlap::same_task_same_scope, "dup")});
    CHECK(red.decision == Decision::redundant);
    REQUIRE(red.supporting.size() == 1);
    CHECK(red.supporting[0].entry_ref == "dup");

    const auto merge = adjudicate("s", {match(Overlap::same_task_diff_scope, "m")});
    CHECK(merge.decision == Decision::merge);
    CHECK(merge.merge_target == std::optional<std::string>("hub:m"));

    StageResponse unsure;
    unsure.stage = StageKind::novelty_check;
    unsure.fields = {{"matches", nlohmann::json::array()}, {"decision", "review"}, {"rationale", "unclear scope"}};
    const auto reviewed = adjudicate("s", {match(Overlap::same_task_diff_scope)}, unsure);
    CHECK(reviewed.decision == Decision::review);
    CHECK_FALSE(reviewed.merge_target);

    StageResponse eager = unsure;
    eager.fields["decision"] = "novel";
    CHECK(adjudicate("s", {match(Overlap::same_task_same_scope)}, eager).decision == Decision::redundant);
    CHECK(adjudicate("s", {match(Overlap::same_task_diff_scope)}, eager).decision == Decision::merge);
    eager.fields["decision"] = "redundant";
    CHECK(adjudicate("s", {}, eager).decision == Decision::novel);
}

TEST_CASE("adjudicate agrees with a brute-force ladder oracle on all small match sets") {
    const Overlap all[] = {Overlap::same_task_same_scope, Overlap::same_task_diff_scope, Overlap::related, Overlap::none};
    for (int n = 0; n <= 3; ++n) {
        int combos = 1;
        for (int i = 0; i < n; ++i) combos *= 4;
        for (int code = 0; code < combos; ++code) {
            std::vector<CatalogMatch> ms;
            int c = code;
            for (int i = 0; i < n; ++i, c /= 4) ms.push_back(match(all[c % 4], std::to_string(i)));
            int same_same = 0, same_diff = 0;
            for (const auto& m : ms) {
                same_same += m.overlap == Overlap::same_task_same_scope;
                same_diff += m.overlap == Overlap::same_task_diff_scope;
            }
            const Decision expected =
                same_same > 0 ? Decision::redundant : same_diff > 0 ? Decision::merge : Decision::novel;
            const auto v = adjudicate("s", ms);
            CHECK(v.decision == expected);
            if (v.decision == Decision::redundant) CHECK(same_same >= 1);
            if (v.decision == Decision::merge) CHECK((same_diff >= 1 && same_same == 0));
            if (v.decision == Decision::novel) CHECK(same_same + same_diff == 0);
        }
    }
}

TEST_CASE("apply_verdict: novel skill under a new subtopic adds one leaf") {
    Library lib;
    lib.add_verified("cand", "bio/single-cell/spatial", {"res-b"});
    REQUIRE(integrity_check(lib.reg, lib.tree).empty());
    const size_t leaves = lib.tree.count(NodeKind::leaf);
    const size_t skills = lib.reg.skills().size();

    const auto next = apply_verdict(lib.tree, lib.reg, adjudicate("cand", {}), 2);
    CHECK(next.count(NodeKind::leaf) == leaves + 1);
    CHECK(next.at(P("bio/single-cell/spatial")).verified_skills.count("cand") == 1);
    CHECK(lib.reg.skills().size() == skills);
    CHECK(lib.reg.skill("cand").status == SkillStatus::verified);
    CHECK(lib.reg.adjudications().back().decision == "novel");
    CHECK(integrity_check(lib.reg, next).empty());
}

TEST_CASE("apply_verdict: redundant skill is removed and the tree is untouched") {
    Library lib;
    lib.add_verified("cand", "bio/single-cell/annotation", {"res-b"});
    const auto next = apply_verdict(lib.tree, lib.reg, adjudicate("cand", {match(Overlap::same_task_same_scope)}), 2);
    CHECK(lib.reg.skill("cand").status == SkillStatus::removed);
    CHECK(next == lib.tree);
    CHECK(integrity_check(lib.reg, next).empty());
}

TEST_CASE("apply_verdict: local merge unions provenance into the survivor") {
    Library lib;
    lib.add_verified("cand", "bio/single-cell/annotation", {"res-b", "res-a", "res-c"});
    std::vector<CatalogMatch> ms = {{"local", "base", "t", "s", Overlap::same_task_diff_scope, 0.7}};
    const auto verdict = adjudicate("cand", ms);
    REQUIRE(verdict.merge_target == std::optional<std::string>("local:base"));
    const auto next = apply_verdict(lib.tree, lib.reg, verdict, 2);
    CHECK(lib.reg.skill("base").provenance == terms({"res-a", "res-b", "res-c"}));
    CHECK(lib.reg.skill("cand").status == SkillStatus::removed);
    CHECK(lib.reg.adjudications().back().merge_target == std::optional<std::string>("local:base"));
    CHECK(integrity_check(lib.reg, next).empty());
}

TEST_CASE("apply_verdict: review zeroes the leaf priority, deprioritize marks it stale") {
    Library lib;
    lib.add_verified("cand", "bio/genomics/alignment", {"res-b"});
    StageResponse unsure;
    unsure.fields = {{"decision", "review"}, {"rationale", "unclear"}};
    const auto reviewed = apply_verdict(lib.tree, lib.reg, adjudicate("cand", {}, unsure), 2);
    CHECK(lib.reg.skill("cand").status == SkillStatus::review);
    CHECK(reviewed.at(P("bio/genomics/alignment")).status == NodeStatus::review);
    CHECK(score_leaf(reviewed.at(P("bio/genomics/alignment")), {}).score == 0.0);
    CHECK(integrity_check(lib.reg, reviewed).empty());

    Library other;
    other.add_verified("cand", "bio/genomics/alignment", {"res-b"});
    unsure.fields["decision"] = "deprioritize";
    const auto stale = apply_verdict(other.tree, other.reg, adjudicate("cand", {}, unsure), 2);
    CHECK(stale.at(P("bio/genomics/alignment")).deprioritized);
    CHECK(other.reg.skill("cand").status == SkillStatus::verified);
    CHECK(integrity_check(other.reg, stale).empty());
}

TEST_CASE("apply_verdict: unknown skill and illegal transitions propagate") {
    Library lib;
    CHECK_THROWS_AS(apply_verdict(lib.tree, lib.reg, adjudicate("ghost", {}), 2), Error);
    SkillEntry e;
    e.id = "raw";
    e.name = "raw";
    e.leaf_path = P("bio/genomics/alignment");
    e.provenance = {"res-a"};
    lib.reg.upsert_skill(e);
    StageResponse unsure;
    unsure.fields = {{"decision", "review"}, {"rationale", ""}};
    try {
        apply_verdict(lib.tree, lib.reg, adjudicate("raw", {}, unsure), 2);
        FAIL("expected illegal-transition");
    } catch (const Error& err) {
        CHECK(err.code() == Errc::illegal_transition);
    }
}

TEST_CASE("local_catalog reads retained skills from their packages") {
    Library lib;
    compile_package({"base", "base"}, contract_for("Annotate cell types in spatial data"), {},
                    lib.dir / "repo/skills/bio/single-cell/annotation/base");
    const auto catalog = local_catalog(lib.reg, lib.dir / "repo");
    REQUIRE(catalog.entries.size() == 1);
    CHECK(catalog.entries[0].task_description == "Annotate cell types in spatial data");
    CHECK(catalog.entries[0].scope_summary == "Run the annotation model.");
    CHECK(local_catalog(lib.reg, lib.dir / "repo", {"base"}).entries.empty());
}

TEST_CASE("apply_verdict keeps integrity clean across random verdict sequences") {
    std::mt19937 rng(7);
    for (int round = 0; round < 20; ++round) {
        Library lib;
        const char* leaves[] = {"bio/genomics/alignment", "bio/single-cell/annotation", "bio/genomics/new-topic"};
        DomainTree tree = lib.tree;
        for (int i = 0; i < 4; ++i) {
            const std::string id = "c" + std::to_string(i);
            lib.add_verified(id, leaves[rng() % 3], {"res-b"});
            std::vector<CatalogMatch> ms;
            switch (rng() % 4) {
                case 0: break;
                case 1: ms.push_back(match(Overlap::same_task_same_scope)); break;
                case 2: ms.push_back({"local", "base", "t", "s", Overlap::same_task_diff_scope, 0.7}); break;
                case 3: ms.push_back(match(Overlap::same_task_diff_scope)); break;
            }
            tree = apply_verdict(tree, lib.reg, adjudicate(id, ms), 2);
            REQUIRE(integrity_check(lib.reg, tree).empty());
        }
    }
}

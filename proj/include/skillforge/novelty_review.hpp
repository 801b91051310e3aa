#pragma once

#include "skillforge/domain_tree.hpp"
#include "skillforge/provider_gateway.hpp"
#include "skillforge/registry.hpp"
#include "skillforge/skill_package.hpp"

#include <optional>
#include <set>
#include <string>
#include <vector>

namespace skillforge {

inline constexpr double kSameTaskJaccard = 0.6;
inline constexpr double kSameScopeJaccard = 0.6;
inline constexpr const char* kLocalCatalogId = "local";

/// Fixed English function-word list (50 entries).
const std::vector<std::string>& stop_words();

struct KeywordSet {
    std::vector<std::string> terms;  // unigrams in first-occurrence order, then bigrams

    bool operator==(const KeywordSet&) const = default;
};

/// Tokenizes on non-alphanumerics, lowercases and drops stop-words. Throws
/// empty_after_filtering when nothing survives.
KeywordSet derive_keywords(std::string_view text);
KeywordSet derive_keywords(const SkillContract& contract);

/// Set Jaccard over terms; 0 when both sets are empty.
double jaccard(const KeywordSet& a, const KeywordSet& b);

enum class Overlap { same_task_same_scope, same_task_diff_scope, related, none };
inline constexpr EnumNames<Overlap, 4> kOverlapNames{{{
    {Overlap::same_task_same_scope, "same_task_same_scope"},
    {Overlap::same_task_diff_scope, "same_task_diff_scope"},
    {Overlap::related, "related"},
    {Overlap::none, "none"}}}};

struct CatalogEntry {
    std::string entry_ref;
    std::string task_description;
    std::string scope_summary;
    std::optional<NodePath> topic_path;
    std::vector<std::string> provenance;
};

struct Catalog {
    std::string catalog_id;
    std::vector<CatalogEntry> entries;
};

/// Reads an offline snapshot: one JSON record per line with entry_ref,
/// task_description and optionally scope_summary, topic_path, provenance.
/// Throws unreadable_catalog with file and line on any problem.
Catalog load_catalog(const fs::path& path, std::string catalog_id = {});

/// Retained local skills exposed as catalog entries, read from their
/// package metadata under `repo_root`. Ids in `exclude` are left out (the
/// candidate itself, and peers not yet adjudicated).
Catalog local_catalog(const Registry& registry, const fs::path& repo_root, const std::set<std::string>& exclude = {});

/// Scope text compared by the ladder: execution steps and environment
/// assumptions.
std::string scope_summary(const SkillContract& contract);

struct NoveltyQuery {
    std::string task_text;
    std::string scope_text;
    KeywordSet task;
    KeywordSet scope;
    std::optional<NodePath> topic;
    std::vector<std::string> provenance;
};

NoveltyQuery make_query(const SkillContract& contract, const std::optional<NodePath>& topic = std::nullopt);

struct CatalogMatch {
    std::string catalog_id;
    std::string entry_ref;
    std::string entry_task_description;
    std::string entry_scope_summary;
    Overlap overlap = Overlap::none;
    double task_similarity = 0.0;

    bool operator==(const CatalogMatch&) const = default;
    std::string tag() const;  // "<catalog>:<entry_ref>:<overlap>"
};

/// Classification ladder for one entry. Same task: normalized task texts are
/// equal or task keyword Jaccard >= 0.6. Same scope: normalized scope texts
/// are equal or scope Jaccard >= 0.6; an entry without a scope summary is in
/// scope when it sits on the same topic path or shares a provenance link.
/// Related: any shared task keyword.
CatalogMatch classify(const NoveltyQuery& query, const std::string& catalog_id, const CatalogEntry& entry);

/// Entries with a non-`none` classification, best first (overlap class, then
/// similarity, then catalog id and entry ref), truncated to `limit`.
std::vector<CatalogMatch> search_catalogs(const std::vector<Catalog>& catalogs, const NoveltyQuery& query, size_t limit);

enum class Decision { novel, redundant, merge, review, deprioritize };
inline constexpr EnumNames<Decision, 5> kDecisionNames{{{
    {Decision::novel, "novel"},
    {Decision::redundant, "redundant"},
    {Decision::merge, "merge"},
    {Decision::review, "review"},
    {Decision::deprioritize, "deprioritize"}}}};

struct NoveltyVerdict {
    std::string skill_id;
    Decision decision = Decision::novel;
    std::string rationale;
    std::vector<CatalogMatch> supporting;
    std::optional<std::string> merge_target;  // "<catalog>:<entry_ref>" of the merge partner

    AdjudicationRecord to_record(int64_t cycle) const;
};

/// Ladder decision only.
Decision ladder_decision(const std::vector<CatalogMatch>& matches);

/// Ladder decision, optionally downgraded by a novelty_check response. The
/// provider may turn novel or merge into review or deprioritize; any other
/// provider opinion is recorded in the rationale and ignored.
NoveltyVerdict adjudicate(const std::string& skill_id, const std::vector<CatalogMatch>& matches,
                          const std::optional<StageResponse>& provider_response = std::nullopt);

/// Writes the verdict back to the registry and the tree and records the
/// adjudication. The skill must exist. Registry transition errors propagate.
DomainTree apply_verdict(const DomainTree& tree, Registry& registry, const NoveltyVerdict& verdict, int64_t cycle);

}  // namespace skillforge

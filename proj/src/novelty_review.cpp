#include "skillforge/novelty_review.hpp"

#include "skillforge/error.hpp"

#include <algorithm>
#include <cctype>
#include <set>
#include <sstream>

namespace skillforge {

using json = nlohmann::json;

const std::vector<std::string>& stop_words() {
    static const std::vector<std::string> words = {
        "a",    "an",   "the",   "and",   "or",    "but",  "if",    "of",   "in",    "on",
        "at",   "to",   "for",   "from",  "by",    "with", "as",    "into", "onto",  "about",
        "is",   "are",  "was",   "were",  "be",    "been", "being", "it",   "its",   "this",
        "that", "these", "those", "which", "who",  "what", "when",  "where", "how",  "not",
        "no",   "so",   "than",  "then",  "there", "their", "they", "can",  "using", "via",
    };
    return words;
}

namespace {

std::vector<std::string> tokens_of(std::string_view text) {
    static const std::set<std::string> stops(stop_words().begin(), stop_words().end());
    std::vector<std::string> out;
    std::string current;
    auto flush = [&] {
        if (!current.empty() && !stops.count(current)) out.push_back(current);
        current.clear();
    };
    for (unsigned char c : text) {
        if (std::isalnum(c))
            current += static_cast<char>(std::tolower(c));
        else
            flush();
    }
    flush();
    return out;
}

KeywordSet keywords_or_empty(std::string_view text) {
    const auto tokens = tokens_of(text);
    KeywordSet set;
    std::set<std::string> seen;
    for (const auto& t : tokens)
        if (seen.insert(t).second) set.terms.push_back(t);
    for (size_t i = 0; i + 1 < tokens.size(); ++i) {
        std::string bigram = tokens[i] + " " + tokens[i + 1];
        if (seen.insert(bigram).second) set.terms.push_back(std::move(bigram));
    }
    return set;
}

std::string normalized(std::string_view s) { return collapse_whitespace(to_lower(s)); }

bool shares_any(const std::vector<std::string>& a, const std::vector<std::string>& b) {
    for (const auto& x : a)
        if (std::find(b.begin(), b.end(), x) != b.end()) return true;
    return false;
}

int overlap_rank(Overlap o) { return static_cast<int>(o); }

}  // namespace

KeywordSet derive_keywords(std::string_view text) {
    KeywordSet set = keywords_or_empty(text);
    if (set.terms.empty())
        throw Error(Errc::empty_after_filtering, "no keywords left in '" + std::string(text) + "' after stop-word removal");
    return set;
}

KeywordSet derive_keywords(const SkillContract& contract) { return derive_keywords(contract.task_scope); }

double jaccard(const KeywordSet& a, const KeywordSet& b) {
    const std::set<std::string> sa(a.terms.begin(), a.terms.end()), sb(b.terms.begin(), b.terms.end());
    if (sa.empty() && sb.empty()) return 0.0;
    size_t inter = 0;
    for (const auto& t : sa) inter += sb.count(t);
    return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

// ---- catalogs -----------------------------------------------------------

Catalog load_catalog(const fs::path& path, std::string catalog_id) {
    Catalog catalog;
    catalog.catalog_id = catalog_id.empty() ? path.stem().string() : std::move(catalog_id);
    std::string text;
    try {
        text = read_file(path);
    } catch (const std::exception& e) {
        throw Error(Errc::unreadable_catalog, path.string() + ": " + e.what());
    }
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    std::set<std::string> refs;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const std::string where = path.filename().string() + ":" + std::to_string(line_no);
        try {
            const json j = json::parse(line);
            CatalogEntry e;
            e.entry_ref = j.at("entry_ref").get<std::string>();
            e.task_description = j.at("task_description").get<std::string>();
            e.scope_summary = j.value("scope_summary", std::string());
            if (j.contains("topic_path") && !j["topic_path"].is_null() && !j["topic_path"].get<std::string>().empty())
                e.topic_path = NodePath::parse(j["topic_path"].get<std::string>());
            e.provenance = j.value("provenance", std::vector<std::string>{});
            if (e.entry_ref.empty()) throw Error(Errc::unreadable_catalog, where + ": empty entry_ref");
            if (!refs.insert(e.entry_ref).second)
                throw Error(Errc::unreadable_catalog, where + ": duplicate entry_ref '" + e.entry_ref + "'");
            catalog.entries.push_back(std::move(e));
        } catch (const json::exception& e) {
            throw Error(Errc::unreadable_catalog, where + ": " + e.what());
        } catch (const Error& e) {
            if (e.code() == Errc::unreadable_catalog) throw;
            throw Error(Errc::unreadable_catalog, where + ": " + e.what());
        }
    }
    return catalog;
}

std::string scope_summary(const SkillContract& contract) {
    std::vector<std::string> parts = contract.execution_steps;
    parts.insert(parts.end(), contract.environment_assumptions.begin(), contract.environment_assumptions.end());
    return join(parts, " ");
}

Catalog local_catalog(const Registry& registry, const fs::path& repo_root, const std::set<std::string>& exclude) {
    Catalog catalog{kLocalCatalogId, {}};
    for (const auto& [id, e] : registry.skills()) {
        if (exclude.count(id) || !is_retained(e.status)) continue;
        CatalogEntry entry;
        entry.entry_ref = id;
        entry.topic_path = e.leaf_path;
        entry.provenance = e.provenance;
        const fs::path metadata = repo_root / e.package_path / kMetadataFile;
        std::error_code ec;
        if (!e.package_path.empty() && fs::exists(metadata, ec)) {
            try {
                const SkillContract c = parse_contract(json::parse(read_file(metadata)));
                entry.task_description = c.task_scope;
                entry.scope_summary = scope_summary(c);
            } catch (const std::exception& ex) {
                throw Error(Errc::unreadable_catalog, "local skill '" + id + "': " + ex.what());
            }
        } else {
            entry.task_description = e.name;
        }
        catalog.entries.push_back(std::move(entry));
    }
    return catalog;
}

// ---- search ---------------------------------------------------------------

NoveltyQuery make_query(const SkillContract& contract, const std::optional<NodePath>& topic) {
    NoveltyQuery q;
    q.task_text = contract.task_scope;
    q.scope_text = scope_summary(contract);
    q.task = derive_keywords(contract);
    q.scope = keywords_or_empty(q.scope_text);
    q.topic = topic;
    q.provenance = contract.provenance_links;
    return q;
}

std::string CatalogMatch::tag() const { return catalog_id + ":" + entry_ref + ":" + std::string(kOverlapNames.name(overlap)); }

CatalogMatch classify(const NoveltyQuery& query, const std::string& catalog_id, const CatalogEntry& entry) {
    CatalogMatch m{catalog_id, entry.entry_ref, entry.task_description, entry.scope_summary, Overlap::none, 0.0};
    const KeywordSet task = keywords_or_empty(entry.task_description);
    m.task_similarity = jaccard(query.task, task);
    const bool same_task =
        normalized(query.task_text) == normalized(entry.task_description) || m.task_similarity >= kSameTaskJaccard;
    if (same_task) {
        bool same_scope;
        if (trim(entry.scope_summary).empty()) {
            same_scope = (query.topic && entry.topic_path && *query.topic == *entry.topic_path) ||
                         shares_any(query.provenance, entry.provenance);
        } else {
            same_scope = normalized(query.scope_text) == normalized(entry.scope_summary) ||
                         jaccard(query.scope, keywords_or_empty(entry.scope_summary)) >= kSameScopeJaccard;
        }
        m.overlap = same_scope ? Overlap::same_task_same_scope : Overlap::same_task_diff_scope;
    } else if (m.task_similarity > 0.0) {
        m.overlap = Overlap::related;
    }
    return m;
}

std::vector<CatalogMatch> search_catalogs(const std::vector<Catalog>& catalogs, const NoveltyQuery& query, size_t limit) {
    std::vector<CatalogMatch> matches;
    for (const auto& catalog : catalogs) {
        for (const auto& entry : catalog.entries) {
            CatalogMatch m = classify(query, catalog.catalog_id, entry);
            if (m.overlap != Overlap::none) matches.push_back(std::move(m));
        }
    }
    std::sort(matches.begin(), matches.end(), [](const CatalogMatch& a, const CatalogMatch& b) {
        if (a.overlap != b.overlap) return overlap_rank(a.overlap) < overlap_rank(b.overlap);
        if (a.task_similarity != b.task_similarity) return a.task_similarity > b.task_similarity;
        if (a.catalog_id != b.catalog_id) return a.catalog_id < b.catalog_id;
        return a.entry_ref < b.entry_ref;
    });
    if (matches.size() > limit) matches.resize(limit);
    return matches;
}

// ---- adjudication -----------------------------------------------------------

AdjudicationRecord NoveltyVerdict::to_record(int64_t cycle) const {
    AdjudicationRecord r;
    r.skill_id = skill_id;
    r.decision = std::string(kDecisionNames.name(decision));
    r.rationale = rationale;
    r.merge_target = merge_target;
    for (const auto& m : supporting) r.matches.push_back(m.tag());
    r.cycle = cycle;
    return r;
}

Decision ladder_decision(const std::vector<CatalogMatch>& matches) {
    auto any = [&](Overlap o) {
        return std::any_of(matches.begin(), matches.end(), [o](const CatalogMatch& m) { return m.overlap == o; });
    };
    if (any(Overlap::same_task_same_scope)) return Decision::redundant;
    if (any(Overlap::same_task_diff_scope)) return Decision::merge;
    return Decision::novel;
}

NoveltyVerdict adjudicate(const std::string& skill_id, const std::vector<CatalogMatch>& matches,
                          const std::optional<StageResponse>& provider_response) {
    NoveltyVerdict v;
    v.skill_id = skill_id;
    v.decision = ladder_decision(matches);
    switch (v.decision) {
        case Decision::redundant:
            for (const auto& m : matches)
                if (m.overlap == Overlap::same_task_same_scope) v.supporting.push_back(m);
            v.rationale = "same task and scope as " + v.supporting.front().catalog_id + ":" + v.supporting.front().entry_ref;
            break;
        case Decision::merge:
            for (const auto& m : matches)
                if (m.overlap == Overlap::same_task_diff_scope) v.supporting.push_back(m);
            v.merge_target = v.supporting.front().catalog_id + ":" + v.supporting.front().entry_ref;
            v.rationale = "same task as " + *v.merge_target + " with a different scope";
            break;
        default:
            for (const auto& m : matches)
                if (m.overlap == Overlap::related) v.supporting.push_back(m);
            v.rationale = "no catalog entry completes the same task";
            break;
    }

    if (provider_response) {
        const std::string said = provider_response->fields.value("decision", std::string());
        const std::string why = provider_response->fields.value("rationale", std::string());
        const std::optional<Decision> parsed =
            kDecisionNames.contains(said) ? std::optional<Decision>(kDecisionNames.parse(said, "decision")) : std::nullopt;
        const bool downgrade = parsed && (v.decision == Decision::novel || v.decision == Decision::merge) &&
                               (*parsed == Decision::review || *parsed == Decision::deprioritize);
        if (downgrade) {
            v.decision = *parsed;
            v.merge_target.reset();
            v.rationale += "; provider downgraded to " + said + (why.empty() ? "" : ": " + why);
        } else if (parsed && *parsed != v.decision) {
            v.rationale += "; provider suggested " + said + " (not a permitted downgrade)";
        }
    }
    return v;
}

namespace {

DomainTree ensure_leaf(const DomainTree& tree, const NodePath& leaf, int64_t cycle) {
    const TreeNode* node = tree.find(leaf);
    if (node && node->status != NodeStatus::pruned) return tree;
    return insert_leaf(tree, leaf.parent(), {leaf.leaf_label()}, cycle);
}

DomainTree link_current(const DomainTree& tree, const SkillEntry& e, int64_t cycle) {
    DomainTree next = ensure_leaf(tree, e.leaf_path, cycle);
    next = link_skill(next, e.leaf_path, e.id, e.status == SkillStatus::verified);
    return touch_node(next, e.leaf_path, cycle);
}

DomainTree unlink_if_linked(const DomainTree& tree, const SkillEntry& e) {
    const TreeNode* node = tree.find(e.leaf_path);
    if (!node || !node->linked_skills.count(e.id)) return tree;
    return unlink_skill(tree, e.leaf_path, e.id);
}

}  // namespace

DomainTree apply_verdict(const DomainTree& tree, Registry& registry, const NoveltyVerdict& verdict, int64_t cycle) {
    const SkillEntry* found = registry.find_skill(verdict.skill_id);
    if (!found) throw Error(Errc::unknown_skill, "no skill '" + verdict.skill_id + "' to adjudicate");
    const SkillEntry candidate = *found;
    DomainTree next = tree;

    switch (verdict.decision) {
        case Decision::novel:
            next = link_current(next, candidate, cycle);
            break;
        case Decision::redundant:
            registry.transition(candidate.id, SkillStatus::removed, cycle);
            next = unlink_if_linked(next, candidate);
            break;
        case Decision::merge: {
            const std::string local_prefix = std::string(kLocalCatalogId) + ":";
            const bool local = verdict.merge_target && verdict.merge_target->rfind(local_prefix, 0) == 0;
            if (local) {
                const std::string survivor_id = verdict.merge_target->substr(local_prefix.size());
                const SkillEntry& survivor = registry.skill(survivor_id);
                std::vector<std::string> provenance = survivor.provenance;
                for (const auto& p : candidate.provenance)
                    if (std::find(provenance.begin(), provenance.end(), p) == provenance.end()) provenance.push_back(p);
                registry.set_provenance(survivor_id, provenance, cycle);
                registry.transition(candidate.id, SkillStatus::removed, cycle);
                next = unlink_if_linked(next, candidate);
            } else {
                if (candidate.status != SkillStatus::review) registry.transition(candidate.id, SkillStatus::review, cycle);
                next = link_current(next, registry.skill(candidate.id), cycle);
            }
            break;
        }
        case Decision::review:
            if (candidate.status != SkillStatus::review) registry.transition(candidate.id, SkillStatus::review, cycle);
            next = link_current(next, registry.skill(candidate.id), cycle);
            next = set_node_review(next, candidate.leaf_path, true, "novelty review: " + verdict.rationale);
            break;
        case Decision::deprioritize:
            next = link_current(next, candidate, cycle);
            next = set_deprioritized(next, candidate.leaf_path, true);
            break;
    }
    registry.record_adjudication(verdict.to_record(cycle));
    return next;
}

}  // namespace skillforge

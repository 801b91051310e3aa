#include "skillforge/pipeline.hpp"

#include "skillforge/error.hpp"
#include "skillforge/skill_package.hpp"

#include <algorithm>
#include <cstdio>
#include <sstream>

namespace skillforge {

using json = nlohmann::json;

// ---- configuration ------------------------------------------------------------

json PipelineConfig::to_json() const {
    json catalog_list = json::array();
    for (const auto& c : catalogs) catalog_list.push_back(c.string());
    json stages = json::object();
    for (const auto& [stage, setting] : effort.settings)
        stages[std::string(kStageKindNames.name(stage))] = {{"model", setting.model},
                                                            {"effort", kEffortNames.name(setting.effort)}};
    return {{"focus_k", focus_k},
            {"search_budget", search_budget},
            {"candidate_cap", candidate_cap},
            {"repair_budget", repair_budget},
            {"optimize_budget", optimize_budget},
            {"smoke_timeout_seconds", smoke_timeout_seconds},
            {"novelty_limit", novelty_limit},
            {"catalogs", catalog_list},
            {"weights",
             {{"resources_no_skills", weights.resources_no_skills},
              {"per_failure", weights.per_failure},
              {"failure_cap", weights.failure_cap},
              {"failure_window", weights.failure_window},
              {"starter_only", weights.starter_only},
              {"stale", weights.stale},
              {"stale_after", weights.stale_after},
              {"deprioritized_factor", weights.deprioritized_factor}}},
            {"scheduler",
             {{"partition", scheduler.partition},
              {"ntasks", scheduler.ntasks},
              {"time_limit_minutes", scheduler.time_limit_minutes},
              {"max_ntasks", scheduler.max_ntasks}}},
            {"effort", stages}};
}

namespace {

template <typename T>
void read_opt(const json& obj, const char* key, T& out, const std::string& where) {
    if (!obj.contains(key)) return;
    try {
        out = obj.at(key).get<T>();
    } catch (const json::exception&) {
        throw Error(Errc::invalid_argument, "configuration key '" + where + key + "' has the wrong type");
    }
}

void reject_unknown(const json& obj, std::initializer_list<const char*> known, const std::string& where) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = std::any_of(known.begin(), known.end(), [&](const char* k) { return it.key() == k; });
        if (!ok) throw Error(Errc::invalid_argument, "unknown configuration key '" + where + it.key() + "'");
    }
}

}  // namespace

PipelineConfig PipelineConfig::from_json(const json& doc, const fs::path& base_dir) {
    if (!doc.is_object()) throw Error(Errc::invalid_argument, "configuration must be a JSON object");
    reject_unknown(doc,
                   {"focus_k", "search_budget", "candidate_cap", "repair_budget", "optimize_budget",
                    "smoke_timeout_seconds", "novelty_limit", "catalogs", "weights", "scheduler", "effort", "model"},
                   "");
    PipelineConfig c;
    read_opt(doc, "focus_k", c.focus_k, "");
    read_opt(doc, "search_budget", c.search_budget, "");
    read_opt(doc, "candidate_cap", c.candidate_cap, "");
    read_opt(doc, "repair_budget", c.repair_budget, "");
    read_opt(doc, "optimize_budget", c.optimize_budget, "");
    read_opt(doc, "smoke_timeout_seconds", c.smoke_timeout_seconds, "");
    read_opt(doc, "novelty_limit", c.novelty_limit, "");
    if (c.focus_k == 0) throw Error(Errc::invalid_argument, "focus_k must be at least 1");
    if (c.repair_budget < 1) throw Error(Errc::invalid_argument, "repair_budget must be at least 1");
    if (c.optimize_budget < 0) throw Error(Errc::invalid_argument, "optimize_budget must not be negative");
    if (c.smoke_timeout_seconds <= 0) throw Error(Errc::invalid_argument, "smoke_timeout_seconds must be positive");

    if (doc.contains("catalogs")) {
        std::vector<std::string> list;
        read_opt(doc, "catalogs", list, "");
        for (const auto& p : list) {
            fs::path path(p);
            c.catalogs.push_back(path.is_relative() && !base_dir.empty() ? base_dir / path : path);
        }
    }
    if (doc.contains("weights")) {
        const json& w = doc.at("weights");
        reject_unknown(w,
                       {"resources_no_skills", "per_failure", "failure_cap", "failure_window", "starter_only", "stale",
                        "stale_after", "deprioritized_factor"},
                       "weights.");
        read_opt(w, "resources_no_skills", c.weights.resources_no_skills, "weights.");
        read_opt(w, "per_failure", c.weights.per_failure, "weights.");
        read_opt(w, "failure_cap", c.weights.failure_cap, "weights.");
        read_opt(w, "failure_window", c.weights.failure_window, "weights.");
        read_opt(w, "starter_only", c.weights.starter_only, "weights.");
        read_opt(w, "stale", c.weights.stale, "weights.");
        read_opt(w, "stale_after", c.weights.stale_after, "weights.");
        read_opt(w, "deprioritized_factor", c.weights.deprioritized_factor, "weights.");
    }
    if (doc.contains("scheduler")) {
        const json& s = doc.at("scheduler");
        reject_unknown(s, {"partition", "ntasks", "time_limit_minutes", "max_ntasks"}, "scheduler.");
        read_opt(s, "partition", c.scheduler.partition, "scheduler.");
        read_opt(s, "ntasks", c.scheduler.ntasks, "scheduler.");
        read_opt(s, "time_limit_minutes", c.scheduler.time_limit_minutes, "scheduler.");
        read_opt(s, "max_ntasks", c.scheduler.max_ntasks, "scheduler.");
    }
    std::string model = "default";
    read_opt(doc, "model", model, "");
    c.effort = EffortProfile::defaults(model);
    if (doc.contains("effort")) {
        const json& e = doc.at("effort");
        if (!e.is_object()) throw Error(Errc::invalid_argument, "configuration key 'effort' must be an object");
        for (auto it = e.begin(); it != e.end(); ++it) {
            const StageKind stage = kStageKindNames.parse(it.key(), "stage in effort profile");
            EffortSetting& setting = c.effort.settings[stage];
            if (it.value().is_string()) {
                setting.effort = kEffortNames.parse(it.value().get<std::string>(), "effort level");
            } else if (it.value().is_object()) {
                std::string level(kEffortNames.name(setting.effort));
                read_opt(it.value(), "model", setting.model, "effort." + it.key() + ".");
                read_opt(it.value(), "effort", level, "effort." + it.key() + ".");
                setting.effort = kEffortNames.parse(level, "effort level");
            } else {
                throw Error(Errc::invalid_argument, "effort entry for '" + it.key() + "' must be a string or object");
            }
        }
    }
    return c;
}

PipelineConfig load_config(const fs::path& path) {
    json doc;
    try {
        doc = json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_argument, "configuration '" + path.string() + "' is not valid JSON: " + e.what());
    }
    return PipelineConfig::from_json(doc, path.parent_path());
}

// ---- reports and state ----------------------------------------------------------

json StageOutcome::to_json() const {
    return {{"stage", kStageKindNames.name(stage)},
            {"response_digests", response_digests},
            {"duration_seconds", duration_seconds},
            {"notes", notes}};
}

StageOutcome StageOutcome::from_json(const json& doc) {
    StageOutcome o;
    o.stage = kStageKindNames.parse(doc.at("stage").get<std::string>(), "stage");
    o.response_digests = doc.value("response_digests", std::vector<std::string>{});
    o.duration_seconds = doc.value("duration_seconds", 0.0);
    o.notes = doc.value("notes", std::vector<std::string>{});
    return o;
}

std::vector<StageKind> CycleReport::stage_order() const {
    std::vector<StageKind> order;
    for (const auto& s : stages) order.push_back(s.stage);
    return order;
}

json CycleReport::to_json() const {
    json stage_list = json::array();
    for (const auto& s : stages) stage_list.push_back(s.to_json());
    json doc = {{"cycle_index", cycle_index},
                {"stages", stage_list},
                {"created", created},
                {"verified", verified},
                {"removed", removed},
                {"tree_edits", tree_edits},
                {"aborted", aborted}};
    if (aborted) doc["error"] = error;
    return doc;
}

CycleReport CycleReport::from_json(const json& doc) {
    CycleReport r;
    r.cycle_index = doc.at("cycle_index").get<int64_t>();
    for (const auto& s : doc.at("stages")) r.stages.push_back(StageOutcome::from_json(s));
    r.created = doc.value("created", std::vector<std::string>{});
    r.verified = doc.value("verified", std::vector<std::string>{});
    r.removed = doc.value("removed", std::vector<std::string>{});
    r.tree_edits = doc.value("tree_edits", std::vector<std::string>{});
    r.aborted = doc.value("aborted", false);
    r.error = doc.value("error", std::string{});
    return r;
}

json verdict_to_json(const NoveltyVerdict& v) {
    json supporting = json::array();
    for (const auto& m : v.supporting)
        supporting.push_back({{"catalog_id", m.catalog_id},
                              {"entry_ref", m.entry_ref},
                              {"entry_task_description", m.entry_task_description},
                              {"entry_scope_summary", m.entry_scope_summary},
                              {"overlap", kOverlapNames.name(m.overlap)},
                              {"task_similarity", m.task_similarity}});
    json doc = {{"skill_id", v.skill_id},
                {"decision", kDecisionNames.name(v.decision)},
                {"rationale", v.rationale},
                {"supporting", supporting}};
    if (v.merge_target) doc["merge_target"] = *v.merge_target;
    return doc;
}

NoveltyVerdict verdict_from_json(const json& doc) {
    NoveltyVerdict v;
    v.skill_id = doc.at("skill_id").get<std::string>();
    v.decision = kDecisionNames.parse(doc.at("decision").get<std::string>(), "decision");
    v.rationale = doc.value("rationale", std::string{});
    for (const auto& m : doc.value("supporting", json::array())) {
        CatalogMatch match;
        match.catalog_id = m.at("catalog_id").get<std::string>();
        match.entry_ref = m.at("entry_ref").get<std::string>();
        match.entry_task_description = m.value("entry_task_description", std::string{});
        match.entry_scope_summary = m.value("entry_scope_summary", std::string{});
        match.overlap = kOverlapNames.parse(m.at("overlap").get<std::string>(), "overlap");
        match.task_similarity = m.value("task_similarity", 0.0);
        v.supporting.push_back(std::move(match));
    }
    if (doc.contains("merge_target")) v.merge_target = doc.at("merge_target").get<std::string>();
    return v;
}

json PipelineState::to_json() const {
    json focus = json::array();
    for (const auto& p : focus_leaves) focus.push_back(p.str());
    json verdict_map = json::object();
    for (const auto& [id, v] : verdicts) verdict_map[id] = verdict_to_json(v);
    json doc = {{"cycle_index", cycle_index},
                {"stage_cursor", stage_cursor ? json(kStageKindNames.name(*stage_cursor)) : json("idle")},
                {"focus_leaves", focus},
                {"pending_skills", pending_skills},
                {"built_skills", built_skills},
                {"verdicts", verdict_map},
                {"split_suggestions", split_suggestions},
                {"site_stale", site_stale}};
    doc["branch"] = branch ? json(branch->str()) : json(nullptr);
    return doc;
}

PipelineState PipelineState::from_json(const json& doc) {
    PipelineState s;
    s.cycle_index = doc.at("cycle_index").get<int64_t>();
    const std::string cursor = doc.value("stage_cursor", std::string("idle"));
    if (cursor != "idle") s.stage_cursor = kStageKindNames.parse(cursor, "stage cursor");
    for (const auto& p : doc.value("focus_leaves", std::vector<std::string>{})) s.focus_leaves.push_back(NodePath::parse(p));
    s.pending_skills = doc.value("pending_skills", std::vector<std::string>{});
    s.built_skills = doc.value("built_skills", std::vector<std::string>{});
    const json verdicts = doc.value("verdicts", json::object());
    for (auto it = verdicts.begin(); it != verdicts.end(); ++it) s.verdicts[it.key()] = verdict_from_json(it.value());
    s.split_suggestions = doc.value("split_suggestions", json::array());
    s.site_stale = doc.value("site_stale", false);
    if (doc.contains("branch") && doc.at("branch").is_string()) s.branch = NodePath::parse(doc.at("branch").get<std::string>());
    return s;
}

StageKind next_stage(const PipelineState& state) {
    if (!state.stage_cursor) return StageKind::tree_check;
    for (size_t i = 0; i + 1 < std::size(kCycleStages); ++i)
        if (kCycleStages[i] == *state.stage_cursor) return kCycleStages[i + 1];
    return StageKind::tree_check;
}

std::string shared_state_digest(const fs::path& repo_root, const Registry& registry) {
    return sha256_hex("registry " + registry.digest() + "\nskills " + digest_directory(repo_root / kSkillsDir) +
                      "\ntests " + digest_directory(repo_root / kTestsDir) + "\n");
}

void init_repository(const fs::path& root, std::string_view taxonomy) {
    const DomainTree tree = load_tree(taxonomy);
    std::error_code ec;
    if (fs::exists(root / kRegistryDir / kTreeSnapshotFile, ec))
        throw Error(Errc::invalid_argument, "'" + root.string() + "' already holds an initialized registry");
    for (const char* dir : {kSkillsDir, kTestsDir, kReportsDir}) fs::create_directories(root / dir);
    Registry registry = Registry::open(root / kRegistryDir);
    registry.write_tree_snapshot(tree);
    registry.compact();
    write_file_atomic(root / kPipelineStateFile, PipelineState{}.to_json().dump(2) + "\n");
}

// ---- mining helpers --------------------------------------------------------------

std::vector<ResourceEntry> ranked_resources(const StageResponse& response, const NodePath& leaf, size_t budget,
                                            int64_t cycle, std::vector<std::string>* notes) {
    std::vector<ResourceEntry> all;
    std::set<std::string> seen;
    for (const auto& r : response.fields.at("resources")) {
        ResourceEntry e;
        e.kind = kResourceKindNames.parse(r.at("kind").get<std::string>(), "resource kind");
        e.locator = r.at("locator").get<std::string>();
        e.authority_rank = static_cast<int>(r.at("authority_rank").get<double>());
        e.leaf_paths = {leaf};
        e.retrieved_cycle = cycle;
        if (seen.insert(e.locator).second) all.push_back(std::move(e));
    }
    std::stable_sort(all.begin(), all.end(), [](const ResourceEntry& a, const ResourceEntry& b) {
        if (a.authority_rank != b.authority_rank) return a.authority_rank > b.authority_rank;
        return a.locator < b.locator;
    });
    if (all.size() > budget) {
        if (notes)
            notes->push_back("search budget reached for " + leaf.str() + ": kept " + std::to_string(budget) + " of " +
                             std::to_string(all.size()) + " resources");
        all.resize(budget);
    }
    return all;
}

std::vector<BuildCandidate> build_candidates(const StageResponse& response, const NodePath& focus, size_t cap,
                                             std::vector<std::string>* notes) {
    std::vector<json> docs{response.fields};
    for (const auto& c : response.fields.value("candidates", json::array())) docs.push_back(c);
    if (docs.size() > cap) {
        if (notes)
            notes->push_back("candidate cap reached for " + focus.str() + ": kept " + std::to_string(cap) + " of " +
                             std::to_string(docs.size()));
        docs.resize(cap);
    }
    std::vector<BuildCandidate> out;
    for (size_t i = 0; i < docs.size(); ++i) {
        const json& doc = docs[i];
        try {
            BuildCandidate c;
            c.contract = parse_contract(doc);
            c.name = doc.value("name", std::string{});
            if (trim(c.name).empty()) {
                auto words = split(collapse_whitespace(c.contract.task_scope), ' ');
                if (words.size() > 5) words.resize(5);
                c.name = join(words, " ");
            }
            c.leaf = focus;
            if (doc.contains("new_leaf")) c.leaf = focus.parent().child(trim(doc.at("new_leaf").get<std::string>()));
            const json artifacts = doc.value("artifacts", json::object());
            for (auto it = artifacts.begin(); it != artifacts.end(); ++it) c.artifacts[it.key()] = it.value().get<std::string>();
            out.push_back(std::move(c));
        } catch (const Error& e) {
            if (notes) notes->push_back("candidate " + std::to_string(i + 1) + " for " + focus.str() + " skipped: " + e.what());
        }
    }
    return out;
}

SkillEntry materialize_candidate(const BuildCandidate& candidate, const std::string& id, const fs::path& repo_root,
                                 const Registry& registry, int64_t cycle, std::vector<ResourceEntry>* new_resources) {
    std::vector<std::string> provenance;
    std::map<std::string, std::string> locators;
    for (const auto& link : candidate.contract.provenance_links) {
        std::string rid;
        if (auto it = registry.resources().find(link); it != registry.resources().end()) {
            rid = link;
            locators[rid] = it->second.locator;
        } else if (const ResourceEntry* r = registry.find_resource_by_locator(link)) {
            rid = r->id;
            locators[rid] = r->locator;
        } else {
            ResourceEntry fresh;
            fresh.kind = ResourceKind::documentation;
            fresh.locator = link;
            fresh.id = resource_id_for(link);
            fresh.leaf_paths = {candidate.leaf};
            fresh.retrieved_cycle = cycle;
            rid = fresh.id;
            locators[rid] = link;
            if (new_resources) new_resources->push_back(std::move(fresh));
        }
        if (std::find(provenance.begin(), provenance.end(), rid) == provenance.end()) provenance.push_back(rid);
    }

    const std::string rel = std::string(kSkillsDir) + "/" + candidate.leaf.fs_form() + "/" + id;
    const fs::path dest = repo_root / rel;
    try {
        compile_package({id, candidate.name}, candidate.contract, candidate.artifacts, dest, locators);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(dest, ec);
        throw;
    }

    SkillEntry e;
    e.id = id;
    e.name = candidate.name;
    e.leaf_path = candidate.leaf;
    e.package_path = rel;
    if (!candidate.contract.test_commands.empty()) e.smoke_target = candidate.contract.test_commands.front();
    e.provenance = std::move(provenance);
    e.created_cycle = cycle;
    e.updated_cycle = cycle;
    return e;
}

json DesignReport::to_json() const {
    return {{"task_prompt", task_prompt},
            {"response_key", response_key},
            {"skill_ids", skill_ids},
            {"status", status},
            {"resource_search_skipped", resource_search_skipped},
            {"notes", notes},
            {"archive", archive}};
}

json EvaluationReport::to_json() const {
    json list = json::array();
    for (const auto& e : entries)
        list.push_back({{"skill_id", e.skill_id},
                        {"margin", e.margin},
                        {"optimized", e.optimized},
                        {"status", e.status},
                        {"note", e.note}});
    return {{"entries", list}};
}

// ---- pipeline ---------------------------------------------------------------------

namespace {

std::string response_digest(const StageResponse& r) { return sha256_hex(serialize_response(r)); }

std::string status_name(SkillStatus s) { return std::string(kSkillStatusNames.name(s)); }

bool is_live_leaf(const DomainTree& tree, const NodePath& path) {
    const TreeNode* n = tree.find(path);
    return n && n->kind == NodeKind::leaf && is_live(n->status);
}

/// A leaf the pipeline may build into: live already, or a new child of a
/// live non-leaf parent (inserted when the skill is judged novel).
bool buildable_leaf(const DomainTree& tree, const NodePath& path) {
    if (path.labels().size() < 2) return false;
    if (const TreeNode* n = tree.find(path)) return n->kind == NodeKind::leaf && is_live(n->status);
    const TreeNode* parent = tree.find(path.parent());
    return parent && parent->kind != NodeKind::leaf && is_live(parent->status);
}

}  // namespace

Pipeline::Pipeline(fs::path repo_root, Registry& registry, Gateway& gateway, PipelineConfig config, Clock* clock)
    : root_(std::move(repo_root)), registry_(&registry), gateway_(&gateway), config_(std::move(config)), clock_(clock) {
    if (!clock_) clock_ = &steady_;
    auto snapshot = registry.read_tree_snapshot();
    if (!snapshot)
        throw Error(Errc::invalid_argument, "registry at '" + registry.root().string() + "' has no tree snapshot; run init first");
    tree_ = std::move(*snapshot);
    std::error_code ec;
    if (fs::exists(root_ / kPipelineStateFile, ec)) {
        try {
            state_ = PipelineState::from_json(json::parse(read_file(root_ / kPipelineStateFile)));
        } catch (const json::exception& e) {
            throw Error(Errc::corrupt_record, "pipeline state is unreadable: " + std::string(e.what()));
        }
    }
}

SandboxConfig Pipeline::sandbox() const { return {root_ / kSandboxDir, config_.smoke_timeout_seconds, true}; }

void Pipeline::set_branch(std::optional<NodePath> branch) {
    if (branch && !tree_.contains(*branch)) throw Error(Errc::unknown_node, "no branch '" + branch->str() + "'");
    state_.branch = std::move(branch);
}

void Pipeline::save_state() const {
    write_file_atomic(root_ / kPipelineStateFile, state_.to_json().dump(2) + "\n", registry_->writable());
}

void Pipeline::restore_state(const PipelineState& state) {
    state_ = state;
    tree_ = *registry_->read_tree_snapshot();
    save_state();
}

std::string Pipeline::state_digest() const {
    return sha256_hex(shared_state_digest(root_, *registry_) + "\npipeline " + state_.to_json().dump() + "\n");
}

StageOutcome Pipeline::run_stage(StageKind stage) {
    const StageKind expected = next_stage(state_);
    if (stage != expected)
        throw Error(Errc::out_of_order_stage, "stage " + std::string(kStageKindNames.name(stage)) +
                                                  " cannot run now; next stage is " +
                                                  std::string(kStageKindNames.name(expected)));
    const int64_t cycle = state_.cycle_index + 1;
    if (stage == StageKind::tree_check) report_ = CycleReport{cycle, {}, {}, {}, {}, {}, false, {}};

    const double start = clock_->now_seconds();
    StageOutcome outcome;
    switch (stage) {
        case StageKind::tree_check: outcome = stage_tree_check(cycle); break;
        case StageKind::resource_search: outcome = stage_resource_search(cycle); break;
        case StageKind::skill_build: outcome = stage_skill_build(cycle); break;
        case StageKind::skill_test: outcome = stage_skill_test(cycle); break;
        case StageKind::refresh: outcome = stage_refresh(cycle); break;
        default: throw Error(Errc::invalid_argument, "not a cycle stage");
    }
    outcome.stage = stage;
    outcome.duration_seconds = clock_->now_seconds() - start;
    report_.stages.push_back(outcome);
    state_.stage_cursor = stage;

    if (stage == StageKind::refresh) {
        state_.cycle_index = cycle;
        state_.stage_cursor.reset();
        state_.focus_leaves.clear();
        write_report(report_);
        save_state();
    }
    return outcome;
}

CycleReport Pipeline::run_cycle() {
    if (!state_.idle())
        throw Error(Errc::out_of_order_stage, "a cycle is already open at stage " +
                                                  std::string(kStageKindNames.name(*state_.stage_cursor)));
    try {
        for (StageKind stage : kCycleStages) run_stage(stage);
    } catch (const std::exception& e) {
        report_.aborted = true;
        report_.error = e.what();
        for (const auto& id : state_.built_skills) state_.verdicts.erase(id);
        state_.stage_cursor.reset();
        state_.focus_leaves.clear();
        state_.built_skills.clear();
        state_.split_suggestions = json::array();
        write_report(report_);
        save_state();
        throw;
    }
    return report_;
}

void Pipeline::write_report(const CycleReport& report) const {
    char name[64];
    std::snprintf(name, sizeof(name), "cycle-%06lld%s.json", static_cast<long long>(report.cycle_index),
                  report.aborted ? "-aborted" : "");
    fs::create_directories(root_ / kReportsDir);
    write_file_atomic(root_ / kReportsDir / name, report.to_json().dump(2) + "\n", registry_->writable());
}

StageOutcome Pipeline::stage_tree_check(int64_t cycle) {
    StageOutcome out;
    const auto priorities =
        prioritize_branches(tree_, registry_->view(cycle), config_.focus_k, state_.branch, config_.weights);

    std::ostringstream summary;
    summary << "cycle " << cycle << "\n";
    summary << "live leaves " << tree_.live_leaves().size() << ", skills " << registry_->skills().size()
            << ", resources " << registry_->resources().size() << "\n";
    if (state_.branch) summary << "branch " << state_.branch->str() << "\n";
    summary << "priority:\n";
    for (const auto& p : priorities) {
        summary << "- " << p.path.str() << " score " << p.score;
        for (auto r : p.reasons) summary << " " << kPriorityReasonNames.name(r);
        summary << "\n";
    }
    const StageResponse response =
        gateway_->call(StageKind::tree_check, {{"repository_summary", summary.str()}}, "cycle-" + std::to_string(cycle));
    out.response_digests.push_back(response_digest(response));

    std::set<NodePath> suggested;
    for (const auto& text : response.fields.at("focus_leaves")) {
        try {
            suggested.insert(NodePath::parse(text.get<std::string>()));
        } catch (const Error&) {
            out.notes.push_back("ignored malformed focus leaf '" + text.get<std::string>() + "'");
        }
    }
    state_.focus_leaves.clear();
    for (const auto& p : priorities)
        if (suggested.count(p.path)) state_.focus_leaves.push_back(p.path);
    if (state_.focus_leaves.empty() && !priorities.empty()) {
        state_.focus_leaves.push_back(priorities.front().path);
        out.notes.push_back("provider suggestions do not meet the priority ranking; focusing on top leaf " +
                            priorities.front().path.str());
    }
    if (priorities.empty()) out.notes.push_back("no live leaves to focus on");
    for (const auto& f : state_.focus_leaves) out.notes.push_back("focus " + f.str());

    state_.split_suggestions = response.fields.value("split_suggestions", json::array());
    state_.built_skills.clear();
    return out;
}

void Pipeline::record_resources(const std::vector<ResourceEntry>& resources) {
    for (const auto& r : resources) registry_->record_resource(r);
}

StageOutcome Pipeline::stage_resource_search(int64_t cycle) {
    if (miner_) return miner_->search(*this, state_.focus_leaves, cycle);
    StageOutcome out;
    for (const auto& leaf : state_.focus_leaves) {
        const StageResponse response = gateway_->call(
            StageKind::resource_search,
            {{"focus_leaves", leaf.str()}, {"search_budget", std::to_string(config_.search_budget)}}, leaf.slug());
        out.response_digests.push_back(response_digest(response));
        const auto resources = ranked_resources(response, leaf, config_.search_budget, cycle, &out.notes);
        record_resources(resources);
        out.notes.push_back(std::to_string(resources.size()) + " resources recorded for " + leaf.str());
    }
    return out;
}

std::string Pipeline::build_one(const BuildCandidate& candidate, int64_t cycle, std::vector<std::string>& notes) {
    if (!buildable_leaf(tree_, candidate.leaf)) {
        notes.push_back("candidate '" + candidate.name + "' skipped: leaf " + candidate.leaf.str() + " cannot hold skills");
        return {};
    }
    const std::string id = registry_->allocate_skill_id(candidate.leaf, candidate.name);
    std::vector<ResourceEntry> new_resources;
    SkillEntry entry;
    try {
        entry = materialize_candidate(candidate, id, root_, *registry_, cycle, &new_resources);
    } catch (const Error& e) {
        notes.push_back("candidate '" + candidate.name + "' did not compile: " + e.what());
        return {};
    }
    record_resources(new_resources);
    registry_->upsert_skill(entry);
    notes.push_back("built " + id + " under " + candidate.leaf.str());
    return id;
}

StageOutcome Pipeline::stage_skill_build(int64_t cycle) {
    std::vector<std::string> built;
    StageOutcome out;
    if (miner_) {
        out = miner_->build(*this, state_.focus_leaves, cycle, built);
    } else {
        for (const auto& leaf : state_.focus_leaves) {
            std::vector<std::string> locators;
            for (const auto& [rid, r] : registry_->resources())
                if (r.leaf_paths.count(leaf)) locators.push_back(r.locator);
            const StageResponse response = gateway_->call(
                StageKind::skill_build, {{"focus_leaves", leaf.str()}, {"resources", join(locators, "\n")}}, leaf.slug());
            out.response_digests.push_back(response_digest(response));
            for (const auto& candidate : build_candidates(response, leaf, config_.candidate_cap, &out.notes)) {
                std::string id = build_one(candidate, cycle, out.notes);
                if (!id.empty()) built.push_back(std::move(id));
            }
        }
    }
    std::sort(built.begin(), built.end());
    state_.built_skills = built;
    report_.created = built;
    return out;
}

SkillStatus Pipeline::validate_skill(const std::string& skill_id, int64_t cycle, std::vector<std::string>& notes) {
    const SkillEntry& entry = registry_->skill(skill_id);
    if (!is_retained(entry.status)) return entry.status;
    const fs::path package_root = root_ / entry.package_path;
    const SandboxConfig sb = sandbox();
    auto status = [&] { return registry_->skill(skill_id).status; };
    auto record = [&](Layer layer, Outcome outcome, int attempt, const std::string& locator,
                      std::optional<SkillStatus> target) {
        registry_->set_verification(skill_id, {skill_id, layer, outcome, attempt, locator, cycle}, target);
    };
    auto remove = [&](const std::string& why) {
        registry_->transition(skill_id, SkillStatus::removed, cycle);
        notes.push_back(skill_id + " removed: " + why);
        return SkillStatus::removed;
    };

    const auto findings = lint_package(package_root);
    if (!lint_clean(findings)) {
        std::vector<std::string> blocking;
        for (const auto& f : findings)
            if (f.blocking) blocking.push_back(f.code + " " + f.path);
        record(Layer::execution, Outcome::error, registry_->next_attempt(skill_id, Layer::execution), "lint", std::nullopt);
        return remove("lint: " + join(blocking, ", "));
    }

    SkillPackage package = load_package(package_root);
    const bool has_smoke = !package.contract.test_commands.empty();
    if (has_smoke) {
        const int attempt = registry_->next_attempt(skill_id, Layer::execution);
        const TestReport first = execution_test(package, sb, attempt);
        record(Layer::execution, first.verdict, attempt, std::string(kSandboxDir) + "/" + first.sandbox_dir, std::nullopt);
        if (first.verdict != Outcome::pass) {
            if (config_.repair_budget <= 1) return remove("execution failed (" + first.reason + "), no repair budget");
            const bool from_untested = status() == SkillStatus::untested;
            const RepairOutcome repair = repair_loop(
                package_root, first, config_.repair_budget, *gateway_, sb, [&](const TestReport& r) {
                    std::optional<SkillStatus> target;
                    if (r.verdict == Outcome::pass && from_untested) target = SkillStatus::repaired;
                    record(Layer::execution, r.verdict, r.attempt, std::string(kSandboxDir) + "/" + r.sandbox_dir, target);
                });
            if (!repair.repaired)
                return remove("execution failed after " + std::to_string(repair.attempts) + " attempts");
            notes.push_back(skill_id + " repaired after " + std::to_string(repair.attempts) + " attempts");
            package = load_package(package_root);
        }
    }

    if (!package.contract.example_invocations.empty()) {
        const int attempt = registry_->next_attempt(skill_id, Layer::synthetic);
        const SyntheticReport report = synthetic_test(package, {{}, true}, sb, attempt);
        const SkillStatus now = status();
        std::optional<SkillStatus> target;
        if (report.verdict == Outcome::pass) {
            if (now == SkillStatus::repaired) target = SkillStatus::verified;
        } else if (now == SkillStatus::verified) {
            target = SkillStatus::review;
        }
        const std::string locator =
            std::string(kSandboxDir) + "/" + skill_id + "/synthetic/" + std::to_string(attempt);
        record(Layer::synthetic, report.verdict, attempt, locator, target);
        if (report.verdict != Outcome::pass) {
            notes.push_back(skill_id + " synthetic " + std::string(kOutcomeNames.name(report.verdict)) + ": " + report.reason);
            if (!has_smoke) return remove("synthetic test did not pass and no smoke target is declared");
        }
    } else if (!has_smoke) {
        return remove("neither a smoke target nor an example invocation is declared");
    } else if (status() == SkillStatus::repaired) {
        registry_->transition(skill_id, SkillStatus::verified, cycle);
    }

    if (status() == SkillStatus::verified && needs_scheduler(package.contract)) {
        const int attempt = registry_->next_attempt(skill_id, Layer::system);
        const TestReport report = system_test(package, config_.scheduler, sb, attempt);
        record(Layer::system, report.verdict, attempt, std::string(kSandboxDir) + "/" + report.sandbox_dir,
               report.verdict == Outcome::pass ? std::nullopt : std::optional<SkillStatus>(SkillStatus::review));
        if (report.verdict != Outcome::pass) notes.push_back(skill_id + " system test failed: " + report.reason);
    }
    notes.push_back(skill_id + " " + status_name(status()));
    return status();
}

std::vector<Catalog> Pipeline::external_catalogs() {
    if (!catalogs_) {
        catalogs_.emplace();
        for (const auto& path : config_.catalogs) catalogs_->push_back(load_catalog(path));
    }
    return *catalogs_;
}

NoveltyVerdict Pipeline::judge_novelty(const std::string& skill_id, const std::set<std::string>& exclude,
                                       std::vector<std::string>& notes) {
    const SkillEntry& entry = registry_->skill(skill_id);
    const SkillPackage package = load_package(root_ / entry.package_path);
    std::set<std::string> skip = exclude;
    skip.insert(skill_id);
    std::vector<Catalog> catalogs = external_catalogs();
    catalogs.push_back(local_catalog(*registry_, root_, skip));

    NoveltyQuery query;
    try {
        query = make_query(package.contract, entry.leaf_path);
    } catch (const Error& e) {
        if (e.code() != Errc::empty_after_filtering) throw;
        NoveltyVerdict v;
        v.skill_id = skill_id;
        v.decision = Decision::review;
        v.rationale = "task scope has no keywords after filtering";
        notes.push_back(skill_id + " novelty review: " + v.rationale);
        return v;
    }
    const auto matches = search_catalogs(catalogs, query, config_.novelty_limit);
    const Decision ladder = ladder_decision(matches);
    std::optional<StageResponse> response;
    if (ladder == Decision::merge || (ladder == Decision::novel && !matches.empty())) {
        std::vector<std::string> lines;
        for (const auto& m : matches) lines.push_back(m.tag() + " | " + m.entry_task_description);
        response = gateway_->call(StageKind::novelty_check,
                                  {{"skill_id", skill_id},
                                   {"task_scope", package.contract.task_scope},
                                   {"similarity_candidates", join(lines, "\n")}},
                                  skill_id);
        side_digests_.push_back(response_digest(*response));
    }
    NoveltyVerdict verdict = adjudicate(skill_id, matches, response);
    notes.push_back(skill_id + " novelty " + std::string(kDecisionNames.name(verdict.decision)));
    return verdict;
}

void Pipeline::test_and_judge(const std::vector<std::string>& ids, int64_t cycle, std::vector<std::string>& notes) {
    std::vector<std::string> sorted = ids;
    std::sort(sorted.begin(), sorted.end());
    for (const auto& id : sorted) validate_skill(id, cycle, notes);

    std::set<std::string> unjudged(sorted.begin(), sorted.end());
    for (const auto& [id, v] : state_.verdicts)
        if (v.decision != Decision::novel && v.decision != Decision::deprioritize) unjudged.insert(id);
    for (const auto& id : sorted) {
        if (registry_->skill(id).status != SkillStatus::verified) continue;
        NoveltyVerdict verdict = judge_novelty(id, unjudged, notes);
        if (verdict.decision == Decision::novel || verdict.decision == Decision::deprioritize) unjudged.erase(id);
        state_.verdicts[id] = std::move(verdict);
    }
}

StageOutcome Pipeline::stage_skill_test(int64_t cycle) {
    StageOutcome out;
    side_digests_.clear();
    test_and_judge(state_.built_skills, cycle, out.notes);
    out.response_digests = std::move(side_digests_);
    side_digests_.clear();
    return out;
}

void Pipeline::commit(DomainTree next, const Registry::Mark& mark, int64_t cycle, std::vector<std::string>& notes) {
    try {
        for (const auto& [path, node] : next.nodes()) {
            for (const auto& id : node->linked_skills) {
                const SkillEntry* e = registry_->find_skill(id);
                if (!e || !is_retained(e->status) || e->leaf_path != path) next = unlink_skill(next, path, id);
            }
        }
        for (const auto& [id, e] : registry_->skills()) {
            if (!is_retained(e.status) || !is_live_leaf(next, e.leaf_path)) continue;
            const TreeNode& node = next.at(e.leaf_path);
            const bool verified = e.status == SkillStatus::verified;
            if (!node.linked_skills.count(id) || node.verified_skills.count(id) != (verified ? 1u : 0u))
                next = link_skill(next, e.leaf_path, id, verified);
        }
        for (const auto& [rid, r] : registry_->resources()) {
            for (const auto& leaf : r.leaf_paths) {
                const TreeNode* node = next.find(leaf);
                if (node && is_live(node->status) && !node->linked_resources.count(rid)) next = link_resource(next, leaf, rid);
            }
        }
        if (before_commit) before_commit(next, *registry_);
        const auto issues = integrity_check(*registry_, next);
        if (!issues.empty())
            throw Error(Errc::integrity_failure, "commit refused: " + join(issues, "; "));
        registry_->write_tree_snapshot(next);
        registry_->compact();
    } catch (...) {
        registry_->rollback(mark);
        notes.push_back("commit rolled back");
        throw;
    }
    tree_ = std::move(next);
    notes.push_back("committed shared state for cycle " + std::to_string(cycle));
}

StageOutcome Pipeline::stage_refresh(int64_t cycle) {
    StageOutcome out;
    const Registry::Mark mark = registry_->mark();
    DomainTree next = tree_;
    std::vector<std::string> edits;
    try {
        for (const auto& [id, verdict] : state_.verdicts) {
            const SkillEntry* e = registry_->find_skill(id);
            if (!e || !is_retained(e->status)) {
                out.notes.push_back("verdict for " + id + " dropped: skill no longer retained");
                continue;
            }
            const NodePath leaf = e->leaf_path;
            const bool existed = next.contains(leaf) && is_live(next.at(leaf).status);
            next = apply_verdict(next, *registry_, verdict, cycle);
            if (!existed && is_live_leaf(next, leaf)) edits.push_back("insert " + leaf.str());
            out.notes.push_back("applied " + std::string(kDecisionNames.name(verdict.decision)) + " to " + id);
        }

        for (const auto& suggestion : state_.split_suggestions) {
            try {
                const NodePath path = NodePath::parse(suggestion.at("path").get<std::string>());
                std::vector<SplitPartition> partitions;
                std::vector<std::string> labels;
                for (const auto& p : suggestion.at("partitions")) {
                    SplitPartition part;
                    part.leaf.label = p.at("label").get<std::string>();
                    for (const auto& s : p.value("skills", json::array())) part.skills.insert(s.get<std::string>());
                    labels.push_back(part.leaf.label);
                    partitions.push_back(std::move(part));
                }
                next = split_with_relocation(next, *registry_, path, partitions, cycle);
                edits.push_back("split " + path.str() + " into " + join(labels, ", ") + " (provider suggestion)");
            } catch (const Error& e) {
                out.notes.push_back("split suggestion rejected: " + std::string(e.what()));
            } catch (const json::exception& e) {
                out.notes.push_back("split suggestion malformed: " + std::string(e.what()));
            }
        }

        for (const auto& r : registry_->verifications()) {
            if (r.cycle != cycle || r.layer != Layer::execution) continue;
            const SkillEntry* e = registry_->find_skill(r.skill_id);
            if (e && is_live_leaf(next, e->leaf_path))
                next = record_node_verification(next, e->leaf_path, {r.skill_id, r.outcome, cycle});
        }
        for (const auto& leaf : state_.focus_leaves)
            if (const TreeNode* n = next.find(leaf); n && is_live(n->status)) next = touch_node(next, leaf, cycle);
    } catch (...) {
        registry_->rollback(mark);
        throw;
    }

    commit(std::move(next), mark, cycle, out.notes);

    for (const auto& [id, verdict] : state_.verdicts) {
        const SkillEntry* e = registry_->find_skill(id);
        if (!e || e->status != SkillStatus::verified) continue;
        if (verdict.decision != Decision::novel && verdict.decision != Decision::deprioritize) continue;
        if (std::find(state_.pending_skills.begin(), state_.pending_skills.end(), id) == state_.pending_skills.end())
            state_.pending_skills.push_back(id);
    }
    state_.pending_skills.erase(std::remove_if(state_.pending_skills.begin(), state_.pending_skills.end(),
                                               [&](const std::string& id) {
                                                   const SkillEntry* e = registry_->find_skill(id);
                                                   return !e || e->status != SkillStatus::verified;
                                               }),
                                state_.pending_skills.end());

    for (const auto& id : state_.built_skills) {
        const SkillStatus s = registry_->skill(id).status;
        if (s == SkillStatus::verified) report_.verified.push_back(id);
        if (s == SkillStatus::removed) report_.removed.push_back(id);
    }
    report_.tree_edits = edits;
    state_.verdicts.clear();
    state_.built_skills.clear();
    state_.split_suggestions = json::array();
    state_.site_stale = true;
    return out;
}

DesignReport Pipeline::design_skill(const std::string& task_prompt) {
    if (trim(task_prompt).empty()) throw Error(Errc::invalid_argument, "design_skill needs a non-empty task prompt");
    if (!state_.idle()) throw Error(Errc::out_of_order_stage, "design_skill cannot run while a cycle is open");
    const int64_t cycle = state_.cycle_index + 1;
    DesignReport report;
    report.task_prompt = task_prompt;
    std::string key = slugify(task_prompt);
    if (key.size() > 48) key = key.substr(0, 48);
    while (!key.empty() && key.back() == '-') key.pop_back();
    if (key.empty()) key = "task";
    report.response_key = key;

    const StageResponse design = gateway_->call(StageKind::design_skill, {{"task_prompt", task_prompt}}, key);
    report.archive = std::string(kReportsDir) + "/design/" + key + ".json";
    fs::create_directories(root_ / kReportsDir / "design");
    write_file_atomic(root_ / report.archive, serialize_response(design) + "\n", registry_->writable());

    NodePath leaf;
    if (design.fields.contains("leaf_path")) {
        leaf = NodePath::parse(design.fields.at("leaf_path").get<std::string>());
    } else {
        const auto top = prioritize_branches(tree_, registry_->view(cycle), 1, state_.branch, config_.weights);
        if (top.empty()) throw Error(Errc::invalid_argument, "design_skill found no live leaf to place the skill");
        leaf = top.front().path;
        report.notes.push_back("no leaf named; placed under top priority leaf " + leaf.str());
    }
    if (!buildable_leaf(tree_, leaf))
        throw Error(Errc::invalid_argument, "design_skill leaf '" + leaf.str() + "' cannot hold skills");

    std::vector<std::string> built;
    if (design.fields.value("needs_resources", false)) {
        const StageResponse search = gateway_->call(
            StageKind::resource_search,
            {{"focus_leaves", leaf.str()}, {"task_prompt", task_prompt}, {"search_budget", std::to_string(config_.search_budget)}},
            key);
        const auto resources = ranked_resources(search, leaf, config_.search_budget, cycle, &report.notes);
        record_resources(resources);
        std::vector<std::string> locators;
        for (const auto& r : resources) locators.push_back(r.locator);
        report.notes.push_back(std::to_string(resources.size()) + " resources recorded");
        const StageResponse build = gateway_->call(
            StageKind::skill_build,
            {{"focus_leaves", leaf.str()}, {"task_prompt", task_prompt}, {"resources", join(locators, "\n")}}, key);
        for (const auto& candidate : build_candidates(build, leaf, config_.candidate_cap, &report.notes)) {
            std::string id = build_one(candidate, cycle, report.notes);
            if (!id.empty()) built.push_back(std::move(id));
        }
    } else {
        report.resource_search_skipped = true;
        report.notes.push_back("resource search skipped: provider needs no extra resources");
        BuildCandidate candidate;
        candidate.contract = parse_contract(design.fields.at("contract"));
        candidate.name = design.fields.value("name", task_prompt);
        candidate.leaf = leaf;
        const json artifacts = design.fields.value("artifacts", json::object());
        for (auto it = artifacts.begin(); it != artifacts.end(); ++it)
            candidate.artifacts[it.key()] = it.value().get<std::string>();
        std::string id = build_one(candidate, cycle, report.notes);
        if (!id.empty()) built.push_back(std::move(id));
    }

    test_and_judge(built, cycle, report.notes);
    std::sort(built.begin(), built.end());
    report.skill_ids = built;
    report.status = "failed";
    for (const char* s : {"repaired", "review", "verified"}) {
        for (const auto& id : built)
            if (kSkillStatusNames.name(registry_->skill(id).status) == s) report.status = s;
    }
    save_state();
    return report;
}

EvaluationReport Pipeline::evaluate_pending(size_t batch) {
    const size_t take = std::min(batch, state_.pending_skills.size());
    return evaluate_skills({state_.pending_skills.begin(), state_.pending_skills.begin() + take});
}

SkillStatus Pipeline::retest_skill(const std::string& skill_id, std::vector<std::string>& notes) {
    if (!state_.idle()) throw Error(Errc::out_of_order_stage, "testing cannot run while a cycle is open");
    registry_->skill(skill_id);
    const Registry::Mark mark = registry_->mark();
    const SkillStatus status = validate_skill(skill_id, state_.cycle_index, notes);
    commit(tree_, mark, state_.cycle_index, notes);
    state_.site_stale = true;
    save_state();
    return status;
}

EvaluationReport Pipeline::evaluate_skills(const std::vector<std::string>& selected) {
    if (!state_.idle()) throw Error(Errc::out_of_order_stage, "evaluation cannot run while a cycle is open");
    EvaluationReport report;
    const int64_t cycle = state_.cycle_index;
    if (selected.empty()) return report;

    const SandboxConfig sb = sandbox();
    const Registry::Mark mark = registry_->mark();
    std::vector<std::string> notes;
    for (const auto& id : selected) {
        EvaluationEntry entry;
        entry.skill_id = id;
        const SkillEntry* e = registry_->find_skill(id);
        if (!e || e->status != SkillStatus::verified) {
            entry.status = e ? status_name(e->status) : "missing";
            entry.note = "not verified; dropped from evaluation";
            report.entries.push_back(entry);
            continue;
        }
        const fs::path package_root = root_ / e->package_path;
        const Benchmarker bench = [&](const SkillPackage& package, int attempt) {
            const auto cases = load_benchmark_cases(package);
            if (!cases.empty()) return benchmark_compare(package, cases, sb, attempt);
            return benchmark_from_response(
                id, gateway_->call(StageKind::layer2_benchmark,
                                   {{"skill_id", id}, {"task_scope", package.contract.task_scope}}, id));
        };
        const int attempt = registry_->next_attempt(id, Layer::benchmark);
        const BenchmarkReport first = bench(load_package(package_root), attempt);
        entry.margin = first.margin;
        bool useful = !first.weak;
        if (first.weak && config_.optimize_budget > 0) {
            const OptimizeOutcome opt = optimize_loop(package_root, first, config_.optimize_budget, *gateway_, bench, sb);
            entry.margin = opt.final_margin;
            entry.optimized = opt.optimized;
            useful = opt.optimized;
            entry.note = std::to_string(opt.attempts) + " optimization rounds";
        }
        registry_->set_verification(
            id,
            {id, Layer::benchmark, useful ? Outcome::pass : Outcome::fail, attempt,
             std::string(kSandboxDir) + "/" + id + "/benchmark/" + std::to_string(attempt), cycle},
            useful ? std::nullopt : std::optional<SkillStatus>(SkillStatus::review));
        entry.status = status_name(registry_->skill(id).status);
        report.entries.push_back(entry);
    }
    const std::set<std::string> done(selected.begin(), selected.end());
    std::erase_if(state_.pending_skills, [&](const std::string& id) { return done.count(id) > 0; });
    commit(tree_, mark, cycle, notes);
    state_.site_stale = true;
    save_state();
    return report;
}

}  // namespace skillforge

#include "skillforge/worker_coordination.hpp"

#include "skillforge/error.hpp"
#include "skillforge/ownership.hpp"
#include "skillforge/skill_package.hpp"

#include <algorithm>
#include <future>
#include <thread>

namespace skillforge {

using json = nlohmann::json;

namespace {

constexpr const char* kMetaFile = "meta.json";
constexpr const char* kResponseFile = "response.json";  // raw parallel_leaf_stage reply
constexpr const char* kWorkerFile = "worker.json";      // resources, skills and notes from the worker

fs::path workspace_root(const fs::path& repo_root, const NodePath& leaf) {
    return repo_root / kWorkspacesDir / leaf.slug();
}

void make_read_only(const fs::path& dir) {
    std::error_code ec;
    if (!fs::exists(dir, ec)) return;
    for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator(); ++it)
        if (it->is_regular_file())
            fs::permissions(it->path(), fs::perms::owner_write | fs::perms::group_write | fs::perms::others_write,
                            fs::perm_options::remove, ec);
}

json read_json(const fs::path& path) { return json::parse(read_file(path)); }

/// Registry-style id that is also unused within this worker.
std::string worker_id(const Registry& registry, const NodePath& leaf, const std::string& name,
                      const std::set<std::string>& taken) {
    const std::string base = registry.allocate_skill_id(leaf, name);
    if (!taken.count(base)) return base;
    for (int n = 2;; ++n) {
        std::string candidate = base + "-" + std::to_string(n);
        if (!taken.count(candidate) && !registry.find_skill(candidate)) return candidate;
    }
}

}  // namespace

// ---- workspaces ------------------------------------------------------------------

json Workspace::to_json() const {
    return {{"leaf", leaf.str()},
            {"status", kWorkspaceStatusNames.name(status)},
            {"base_digest", base_digest},
            {"base_files", base_files}};
}

Workspace Workspace::from_json(const json& doc, const fs::path& root) {
    Workspace ws;
    ws.leaf = NodePath::parse(doc.at("leaf").get<std::string>());
    ws.root = root;
    ws.status = kWorkspaceStatusNames.parse(doc.at("status").get<std::string>(), "workspace status");
    ws.base_digest = doc.at("base_digest").get<std::string>();
    ws.base_files = doc.at("base_files").get<std::map<std::string, std::string>>();
    return ws;
}

void Workspace::save() const { write_file_atomic(root / kMetaFile, to_json().dump(2) + "\n", false); }

std::optional<Workspace> find_workspace(const fs::path& repo_root, const NodePath& leaf) {
    const fs::path root = workspace_root(repo_root, leaf);
    std::error_code ec;
    if (!fs::exists(root / kMetaFile, ec)) return std::nullopt;
    try {
        return Workspace::from_json(read_json(root / kMetaFile), root);
    } catch (const std::exception& e) {
        throw Error(Errc::corrupt_record, "workspace metadata for '" + leaf.str() + "' is unreadable: " + e.what());
    }
}

Workspace spawn_workspace(const fs::path& repo_root, const DomainTree& tree, const NodePath& leaf) {
    const TreeNode* node = tree.find(leaf);
    if (!node) throw Error(Errc::unknown_node, "no node '" + leaf.str() + "'");
    if (node->kind != NodeKind::leaf) throw Error(Errc::not_a_leaf, "'" + leaf.str() + "' is not a leaf");
    if (!is_live(node->status)) throw Error(Errc::invalid_operand, "leaf '" + leaf.str() + "' is not active");
    if (auto existing = find_workspace(repo_root, leaf); existing && existing->status == WorkspaceStatus::open)
        throw Error(Errc::duplicate_workspace, "an open workspace already exists for '" + leaf.str() + "'");

    Workspace ws;
    ws.leaf = leaf;
    ws.root = workspace_root(repo_root, leaf);
    try {
        std::error_code ec;
        fs::remove_all(ws.root, ec);
        fs::create_directories(ws.repo());
        const std::string leaf_dir = leaf.fs_form();
        for (const char* area : {kSkillsDir, kTestsDir}) {
            const fs::path from = repo_root / area / leaf_dir;
            fs::create_directories(ws.repo() / area / leaf_dir);
            if (fs::exists(from, ec)) copy_tree(from, ws.repo() / area / leaf_dir);
        }
        copy_tree(repo_root / kRegistryDir, ws.repo() / kRegistryDir,
                  [](const fs::path& rel) { return rel == kLockFile; });
        if (fs::exists(repo_root / kPipelineStateFile, ec))
            fs::copy_file(repo_root / kPipelineStateFile, ws.repo() / kPipelineStateFile);
        make_read_only(ws.repo() / kRegistryDir);
        fs::permissions(ws.repo() / kPipelineStateFile,
                        fs::perms::owner_write | fs::perms::group_write | fs::perms::others_write,
                        fs::perm_options::remove, ec);
        ws.base_files = file_digests(ws.repo());
        ws.base_digest = digest_directory(ws.repo());
        ws.save();
    } catch (const Error& e) {
        throw Error(Errc::snapshot_failure, "workspace for '" + leaf.str() + "': " + e.what());
    } catch (const fs::filesystem_error& e) {
        throw Error(Errc::snapshot_failure, "workspace for '" + leaf.str() + "': " + e.what());
    }
    return ws;
}

void worker_search(const Workspace& ws, Gateway& gateway, const PipelineConfig& config, int64_t cycle) {
    const StageResponse response = gateway.call(
        StageKind::resource_search,
        {{"focus_leaves", ws.leaf.str()}, {"search_budget", std::to_string(config.search_budget)}}, ws.leaf.slug());
    std::vector<std::string> notes;
    json list = json::array();
    for (const auto& r : ranked_resources(response, ws.leaf, config.search_budget, cycle, &notes)) list.push_back(to_json(r));
    json doc = {{"leaf", ws.leaf.str()},
                {"cycle", cycle},
                {"resources", list},
                {"skills", json::array()},
                {"notes", notes},
                {"response_digests", {sha256_hex(serialize_response(response))}}};
    write_file_atomic(ws.root / kWorkerFile, doc.dump(2) + "\n", false);
}

void worker_build(const Workspace& ws, Gateway& gateway, const PipelineConfig& config, int64_t cycle) {
    json doc = read_json(ws.root / kWorkerFile);
    std::vector<std::string> notes = doc.at("notes").get<std::vector<std::string>>();
    std::vector<std::string> digests = doc.at("response_digests").get<std::vector<std::string>>();
    std::vector<std::string> locators;
    for (const auto& r : doc.at("resources")) locators.push_back(r.at("locator").get<std::string>());

    const Registry snapshot = Registry::open(ws.repo() / kRegistryDir, RegistryOptions{false});
    const StageResponse response = gateway.call(
        StageKind::skill_build, {{"focus_leaves", ws.leaf.str()}, {"resources", join(locators, "\n")}}, ws.leaf.slug());
    digests.push_back(sha256_hex(serialize_response(response)));

    json skills = json::array();
    json resources = doc.at("resources");
    std::set<std::string> taken;
    std::vector<std::string> built;
    for (auto candidate : build_candidates(response, ws.leaf, config.candidate_cap, &notes)) {
        if (candidate.leaf != ws.leaf) {
            notes.push_back("proposed leaf " + candidate.leaf.str() + " for '" + candidate.name +
                            "' is outside this worker; built under " + ws.leaf.str());
            candidate.leaf = ws.leaf;
        }
        const std::string id = worker_id(snapshot, ws.leaf, candidate.name, taken);
        std::vector<ResourceEntry> fresh;
        try {
            const SkillEntry entry = materialize_candidate(candidate, id, ws.repo(), snapshot, cycle, &fresh);
            taken.insert(id);
            built.push_back(id);
            skills.push_back(to_json(entry));
            for (const auto& r : fresh)
                if (std::find(locators.begin(), locators.end(), r.locator) == locators.end()) {
                    locators.push_back(r.locator);
                    resources.push_back(to_json(r));
                }
        } catch (const Error& e) {
            notes.push_back("candidate '" + candidate.name + "' did not compile: " + e.what());
        }
    }

    const std::string artifact_dir = std::string(kSkillsDir) + "/" + ws.leaf.fs_form();
    const StageResponse report = gateway.call(
        StageKind::parallel_leaf_stage,
        {{"target_leaf", ws.leaf.str()}, {"artifact_directory", artifact_dir}, {"built_skills", join(built, "\n")}},
        ws.leaf.slug());
    digests.push_back(sha256_hex(serialize_response(report)));
    write_file_atomic(ws.root / kResponseFile, report.raw_text, false);

    doc["resources"] = resources;
    doc["skills"] = skills;
    doc["notes"] = notes;
    doc["response_digests"] = digests;
    write_file_atomic(ws.root / kWorkerFile, doc.dump(2) + "\n", false);
}

// ---- collection -------------------------------------------------------------------

ArtifactSet collect_leaf_artifacts(Workspace& ws) {
    if (ws.status != WorkspaceStatus::open)
        throw Error(Errc::invalid_argument, "workspace for '" + ws.leaf.str() + "' is " +
                                                std::string(kWorkspaceStatusNames.name(ws.status)));
    auto discard = [&](Errc code, const std::string& message) -> Error {
        ws.status = WorkspaceStatus::discarded;
        ws.save();
        return Error(code, message);
    };

    ArtifactSet set;
    set.leaf = ws.leaf;
    set.source = ws.repo();
    const auto now = file_digests(ws.repo());
    std::vector<std::string> offending;
    for (const auto& [path, digest] : now) {
        auto base = ws.base_files.find(path);
        if (base != ws.base_files.end() && base->second == digest) continue;
        if (is_leaf_owned(path, ws.leaf)) set.files[path] = digest;
        else offending.push_back(path);
    }
    for (const auto& [path, digest] : ws.base_files) {
        if (now.count(path)) continue;
        if (is_leaf_owned(path, ws.leaf)) set.deleted.push_back(path);
        else offending.push_back(path);
    }
    std::sort(offending.begin(), offending.end());
    if (!offending.empty())
        throw discard(Errc::shared_file_conflict,
                      "worker for '" + ws.leaf.str() + "' wrote shared paths: " + join(offending, ", "));

    std::error_code ec;
    if (!fs::exists(ws.root / kResponseFile, ec))
        throw discard(Errc::unparseable_response, "worker for '" + ws.leaf.str() + "' left no stage response");
    try {
        set.response = validate_response(StageKind::parallel_leaf_stage, read_file(ws.root / kResponseFile));
    } catch (const Error& e) {
        throw discard(Errc::unparseable_response, "worker for '" + ws.leaf.str() + "': " + e.what());
    }

    int64_t cycle = 0;
    try {
        const json doc = read_json(ws.root / kWorkerFile);
        cycle = doc.at("cycle").get<int64_t>();
        for (const auto& r : doc.at("resources")) set.resources.push_back(resource_from_json(r));
        for (const auto& s : doc.at("skills")) set.skills.push_back(skill_from_json(s));
        set.notes = doc.at("notes").get<std::vector<std::string>>();
        set.response_digests = doc.at("response_digests").get<std::vector<std::string>>();
    } catch (const std::exception& e) {
        throw discard(Errc::unparseable_response, "worker record for '" + ws.leaf.str() + "' is unreadable: " + e.what());
    }
    for (const auto& s : set.skills) {
        if (s.leaf_path != ws.leaf || !is_leaf_owned(s.package_path + "/" + kMetadataFile, ws.leaf))
            throw discard(Errc::internal_invariant, "worker for '" + ws.leaf.str() + "' registered skill '" + s.id +
                                                        "' outside its leaf");
    }
    for (const char* field : {"repo_changes", "blockers", "next_steps"})
        for (const auto& item : set.response.fields.at(field))
            set.followups.push_back({ws.leaf, field, item.get<std::string>(), cycle});

    ws.status = WorkspaceStatus::collected;
    ws.save();
    return set;
}

CollectionResult collect_workspaces(std::vector<Workspace>& workspaces) {
    CollectionResult result;
    for (auto& ws : workspaces) {
        if (ws.status != WorkspaceStatus::open) continue;
        try {
            result.sets.push_back(collect_leaf_artifacts(ws));
        } catch (const Error& e) {
            result.rejected.emplace_back(ws.leaf, e.what());
        }
    }
    return result;
}

// ---- merge ------------------------------------------------------------------------

MergeReport merge_worker_outputs(const fs::path& repo_root, Registry& registry, std::vector<ArtifactSet> sets,
                                 int64_t cycle) {
    std::sort(sets.begin(), sets.end(), [](const ArtifactSet& a, const ArtifactSet& b) { return a.leaf < b.leaf; });
    std::map<std::string, NodePath> owner;
    for (const auto& set : sets) {
        auto claim = [&](const std::string& path) {
            auto [it, inserted] = owner.emplace(path, set.leaf);
            if (!inserted)
                throw Error(Errc::internal_invariant, "path '" + path + "' is written by both '" + it->second.str() +
                                                          "' and '" + set.leaf.str() + "'");
        };
        for (const auto& [path, digest] : set.files) claim(path);
        for (const auto& path : set.deleted) claim(path);
    }

    MergeReport report;
    for (const auto& set : sets) {
        for (const auto& path : set.deleted) fs::remove(repo_root / path);
        for (const auto& [path, digest] : set.files) {
            const fs::path dest = repo_root / path;
            fs::create_directories(dest.parent_path());
            write_file_atomic(dest, read_file(set.source / path), registry.writable());
            set_executable(dest, is_executable(set.source / path));
            ++report.files;
        }
        for (const auto& r : set.resources) registry.record_resource(r);
        for (const auto& f : set.followups) registry.record_followup(f);
        for (SkillEntry entry : set.skills) {
            if (registry.find_skill(entry.id)) {
                const std::string fresh = registry.allocate_skill_id(entry.leaf_path, entry.name);
                const std::string rel = std::string(kSkillsDir) + "/" + entry.leaf_path.fs_form() + "/" + fresh;
                fs::rename(repo_root / entry.package_path, repo_root / rel);
                SkillPackage package = load_package(repo_root / rel);
                write_file_atomic(repo_root / rel / kSpecFile, render_spec({fresh, entry.name}, package.contract),
                                  registry.writable());
                report.renamed[entry.id] = fresh;
                entry.id = fresh;
                entry.package_path = rel;
            }
            entry.status = SkillStatus::untested;
            entry.updated_cycle = cycle;
            registry.upsert_skill(entry);
            report.skill_ids.push_back(entry.id);
        }
        report.merged.push_back(set.leaf);
    }
    return report;
}

// ---- parallel miner -------------------------------------------------------------

namespace {

/// Runs `job` over the indexes in batches of at most `width` threads.
template <typename Job>
void run_bounded(size_t count, size_t width, const Job& job) {
    for (size_t start = 0; start < count; start += width) {
        std::vector<std::thread> threads;
        for (size_t i = start; i < std::min(count, start + width); ++i) threads.emplace_back([&job, i] { job(i); });
        for (auto& t : threads) t.join();
    }
}

}  // namespace

StageOutcome ParallelLeafMiner::search(Pipeline& pipeline, const std::vector<NodePath>& focus, int64_t cycle) {
    StageOutcome out;
    workspaces_.clear();
    for (const auto& leaf : focus) {
        try {
            workspaces_.push_back(spawn_workspace(pipeline.root(), pipeline.tree(), leaf));
        } catch (const Error& e) {
            out.notes.push_back("no worker for " + leaf.str() + ": " + e.what());
        }
    }
    std::vector<std::string> errors(workspaces_.size());
    run_bounded(workspaces_.size(), max_workers_, [&](size_t i) {
        try {
            worker_search(workspaces_[i], pipeline.gateway(), pipeline.config(), cycle);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    for (size_t i = 0; i < workspaces_.size(); ++i) {
        if (!errors[i].empty()) {
            workspaces_[i].status = WorkspaceStatus::discarded;
            workspaces_[i].save();
            out.notes.push_back("worker for " + workspaces_[i].leaf.str() + " crashed: " + errors[i]);
        } else {
            out.notes.push_back("worker for " + workspaces_[i].leaf.str() + " searched");
        }
    }
    return out;
}

StageOutcome ParallelLeafMiner::build(Pipeline& pipeline, const std::vector<NodePath>&, int64_t cycle,
                                      std::vector<std::string>& built) {
    StageOutcome out;
    std::vector<std::string> errors(workspaces_.size());
    run_bounded(workspaces_.size(), max_workers_, [&](size_t i) {
        if (workspaces_[i].status != WorkspaceStatus::open) return;
        try {
            worker_build(workspaces_[i], pipeline.gateway(), pipeline.config(), cycle);
        } catch (const std::exception& e) {
            errors[i] = e.what();
        }
    });
    for (size_t i = 0; i < workspaces_.size(); ++i) {
        if (errors[i].empty()) continue;
        workspaces_[i].status = WorkspaceStatus::discarded;
        workspaces_[i].save();
        out.notes.push_back("worker for " + workspaces_[i].leaf.str() + " crashed: " + errors[i]);
    }

    CollectionResult collected = collect_workspaces(workspaces_);
    for (const auto& [leaf, error] : collected.rejected) out.notes.push_back("rejected " + leaf.str() + ": " + error);
    for (const auto& set : collected.sets) {
        out.response_digests.insert(out.response_digests.end(), set.response_digests.begin(), set.response_digests.end());
        out.notes.insert(out.notes.end(), set.notes.begin(), set.notes.end());
    }
    const MergeReport merged = merge_worker_outputs(pipeline.root(), pipeline.registry(), collected.sets, cycle);
    built = merged.skill_ids;
    for (const auto& [from, to] : merged.renamed) out.notes.push_back("worker skill " + from + " registered as " + to);
    out.notes.push_back("merged " + std::to_string(merged.merged.size()) + " workers, " +
                        std::to_string(merged.files) + " files");

    std::error_code ec;
    for (const auto& ws : workspaces_)
        if (ws.status == WorkspaceStatus::collected) fs::remove_all(ws.root, ec);
    workspaces_.clear();
    return out;
}

// ---- campaigns ---------------------------------------------------------------------

json CampaignConfig::to_json() const {
    json branch_list = json::array();
    for (const auto& b : branches) branch_list.push_back(b.str());
    return {{"id", id},
            {"branches", branch_list},
            {"cycles_per_branch", cycles_per_branch},
            {"eval_batch", eval_batch},
            {"failure_limit", failure_limit},
            {"parallel_workers", parallel_workers},
            {"max_workers", max_workers}};
}

CampaignConfig CampaignConfig::from_json(const json& doc) {
    CampaignConfig c;
    try {
        c.id = doc.at("id").get<std::string>();
        for (const auto& b : doc.at("branches")) c.branches.push_back(NodePath::parse(b.get<std::string>()));
        c.cycles_per_branch = doc.value("cycles_per_branch", 1);
        c.eval_batch = doc.value("eval_batch", size_t{4});
        c.failure_limit = doc.value("failure_limit", 3);
        c.parallel_workers = doc.value("parallel_workers", true);
        c.max_workers = doc.value("max_workers", size_t{4});
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_argument, std::string("campaign configuration: ") + e.what());
    }
    if (slugify(c.id) != c.id || c.id.empty())
        throw Error(Errc::invalid_argument, "campaign id '" + c.id + "' must be a lowercase slug");
    if (c.branches.empty()) throw Error(Errc::invalid_argument, "campaign needs at least one branch");
    if (c.cycles_per_branch < 1) throw Error(Errc::invalid_argument, "cycles_per_branch must be at least 1");
    if (c.failure_limit < 1) throw Error(Errc::invalid_argument, "failure_limit must be at least 1");
    return c;
}

std::vector<ScheduledPhase> campaign_schedule(const CampaignConfig& config) {
    std::vector<ScheduledPhase> phases;
    for (const auto& branch : config.branches) {
        for (int i = 0; i < config.cycles_per_branch; ++i) phases.push_back({PhaseKind::mining, branch});
        phases.push_back({PhaseKind::evaluation, branch});
    }
    return phases;
}

json CampaignPhase::to_json() const {
    json doc = {{"index", index},
                {"kind", kPhaseKindNames.name(kind)},
                {"branch", branch.str()},
                {"failed", failed},
                {"noop", noop}};
    if (!error.empty()) doc["error"] = error;
    if (cycle) doc["cycle"] = cycle->to_json();
    if (evaluation) doc["evaluation"] = evaluation->to_json();
    return doc;
}

CampaignPhase CampaignPhase::from_json(const json& doc) {
    CampaignPhase p;
    p.index = doc.at("index").get<size_t>();
    p.kind = kPhaseKindNames.parse(doc.at("kind").get<std::string>(), "phase kind");
    p.branch = NodePath::parse(doc.at("branch").get<std::string>());
    p.failed = doc.value("failed", false);
    p.noop = doc.value("noop", false);
    p.error = doc.value("error", std::string{});
    if (doc.contains("cycle")) p.cycle = CycleReport::from_json(doc.at("cycle"));
    if (doc.contains("evaluation")) {
        EvaluationReport e;
        for (const auto& entry : doc.at("evaluation").at("entries"))
            e.entries.push_back({entry.at("skill_id").get<std::string>(), entry.value("margin", 0.0),
                                 entry.value("optimized", false), entry.value("status", std::string{}),
                                 entry.value("note", std::string{})});
        p.evaluation = e;
    }
    return p;
}

size_t CampaignReport::count(PhaseKind kind) const {
    return static_cast<size_t>(
        std::count_if(phases.begin(), phases.end(), [&](const CampaignPhase& p) { return p.kind == kind; }));
}

std::vector<CycleReport> CampaignReport::cycle_reports() const {
    std::vector<CycleReport> out;
    for (const auto& p : phases)
        if (p.cycle) out.push_back(*p.cycle);
    return out;
}

json CampaignReport::to_json() const {
    json list = json::array();
    for (const auto& p : phases) list.push_back(p.to_json());
    return {{"campaign_id", campaign_id}, {"status", kCampaignStatusNames.name(status)}, {"phases", list}};
}

json CampaignCheckpoint::to_json() const {
    return {{"campaign_id", campaign_id},
            {"next_phase", next_phase},
            {"completed_cycles", completed_cycles},
            {"pending_skills", pending_skills},
            {"consecutive_failures", consecutive_failures},
            {"status", kCampaignStatusNames.name(status)},
            {"registry_digest", registry_digest},
            {"tree_digest", tree_digest},
            {"packages_digest", packages_digest},
            {"pipeline_state", pipeline_state},
            {"provider_state", provider_state}};
}

CampaignCheckpoint CampaignCheckpoint::from_json(const json& doc) {
    CampaignCheckpoint c;
    try {
        c.campaign_id = doc.at("campaign_id").get<std::string>();
        c.next_phase = doc.at("next_phase").get<size_t>();
        c.completed_cycles = doc.at("completed_cycles").get<std::vector<int64_t>>();
        c.pending_skills = doc.at("pending_skills").get<std::vector<std::string>>();
        c.consecutive_failures = doc.at("consecutive_failures").get<int>();
        c.status = kCampaignStatusNames.parse(doc.at("status").get<std::string>(), "campaign status");
        c.registry_digest = doc.at("registry_digest").get<std::string>();
        c.tree_digest = doc.at("tree_digest").get<std::string>();
        c.packages_digest = doc.at("packages_digest").get<std::string>();
        c.pipeline_state = doc.at("pipeline_state");
        c.provider_state = doc.at("provider_state");
    } catch (const json::exception& e) {
        throw Error(Errc::corrupt_record, std::string("campaign checkpoint is unreadable: ") + e.what());
    }
    return c;
}

namespace {

std::string packages_digest(const fs::path& root) {
    return sha256_hex(digest_directory(root / kSkillsDir) + "\n" + digest_directory(root / kTestsDir));
}

fs::path campaign_dir(const fs::path& root, const std::string& id) { return root / kCampaignsDir / id; }

void write_checkpoint(const fs::path& root, const CampaignCheckpoint& cp) {
    const fs::path dir = campaign_dir(root, cp.campaign_id);
    fs::create_directories(dir);
    write_file_atomic(dir / "checkpoint.json", cp.to_json().dump(2) + "\n");
}

void write_campaign_report(const fs::path& root, const CampaignReport& report) {
    const fs::path dir = campaign_dir(root, report.campaign_id);
    fs::create_directories(dir);
    write_file_atomic(dir / "report.json", report.to_json().dump(2) + "\n", false);
}

struct Progress {
    size_t next_phase = 0;
    int consecutive_failures = 0;
    std::vector<int64_t> completed_cycles;
};

CampaignReport drive(Pipeline& pipeline, const CampaignConfig& config, CampaignReport report, Progress progress,
                     const CampaignRunOptions& options) {
    const auto schedule = campaign_schedule(config);
    ParallelLeafMiner miner(config.max_workers);
    pipeline.set_miner(config.parallel_workers ? &miner : nullptr);
    size_t ran = 0;
    report.status = CampaignStatus::running;

    auto checkpoint = [&] {
        CampaignCheckpoint cp = checkpoint_campaign(pipeline, config.id, progress.next_phase);
        cp.completed_cycles = progress.completed_cycles;
        cp.consecutive_failures = progress.consecutive_failures;
        cp.status = report.status;
        write_checkpoint(pipeline.root(), cp);
        write_campaign_report(pipeline.root(), report);
    };

    try {
        while (progress.next_phase < schedule.size()) {
            if (options.stop_after_phases && ran >= *options.stop_after_phases) {
                report.status = CampaignStatus::interrupted;
                break;
            }
            const ScheduledPhase& planned = schedule[progress.next_phase];
            CampaignPhase phase;
            phase.index = progress.next_phase;
            phase.kind = planned.kind;
            phase.branch = planned.branch;
            try {
                if (planned.kind == PhaseKind::mining) {
                    pipeline.set_branch(planned.branch);
                    phase.cycle = pipeline.run_cycle();
                    progress.completed_cycles.push_back(phase.cycle->cycle_index);
                } else {
                    phase.evaluation = pipeline.evaluate_pending(config.eval_batch);
                    phase.noop = phase.evaluation->noop();
                }
            } catch (const std::exception& e) {
                phase.failed = true;
                phase.error = e.what();
                if (planned.kind == PhaseKind::mining) phase.cycle = pipeline.current_report();
            }
            progress.consecutive_failures = phase.failed ? progress.consecutive_failures + 1 : 0;
            report.phases.push_back(std::move(phase));
            ++progress.next_phase;
            ++ran;
            if (progress.consecutive_failures >= config.failure_limit) {
                report.status = CampaignStatus::halted;
                checkpoint();
                pipeline.set_miner(nullptr);
                return report;
            }
            if (progress.next_phase == schedule.size()) report.status = CampaignStatus::completed;
            checkpoint();
        }
    } catch (...) {
        pipeline.set_miner(nullptr);
        throw;
    }
    if (progress.next_phase == schedule.size()) report.status = CampaignStatus::completed;
    checkpoint();
    pipeline.set_miner(nullptr);
    return report;
}

}  // namespace

CampaignCheckpoint checkpoint_campaign(Pipeline& pipeline, const std::string& campaign_id, size_t next_phase) {
    CampaignCheckpoint cp;
    cp.campaign_id = campaign_id;
    cp.next_phase = next_phase;
    cp.pending_skills = pipeline.state().pending_skills;
    cp.registry_digest = pipeline.registry().digest();
    cp.tree_digest = pipeline.tree().digest();
    cp.packages_digest = packages_digest(pipeline.root());
    cp.pipeline_state = pipeline.state().to_json();
    cp.provider_state = pipeline.gateway().provider().state();
    return cp;
}

fs::path checkpoint_path(const fs::path& repo_root, const std::string& campaign_id) {
    return campaign_dir(repo_root, campaign_id) / "checkpoint.json";
}

CampaignCheckpoint load_checkpoint(const fs::path& repo_root, const std::string& campaign_id) {
    const fs::path path = checkpoint_path(repo_root, campaign_id);
    std::error_code ec;
    if (!fs::exists(path, ec)) throw Error(Errc::invalid_argument, "no checkpoint for campaign '" + campaign_id + "'");
    try {
        return CampaignCheckpoint::from_json(read_json(path));
    } catch (const json::exception& e) {
        throw Error(Errc::corrupt_record, "campaign checkpoint is unreadable: " + std::string(e.what()));
    }
}

CampaignReport run_campaign(Pipeline& pipeline, const CampaignConfig& config, CampaignRunOptions options) {
    if (!pipeline.state().idle()) throw Error(Errc::out_of_order_stage, "campaign needs an idle pipeline");
    for (const auto& b : config.branches)
        if (!pipeline.tree().contains(b)) throw Error(Errc::unknown_node, "campaign branch '" + b.str() + "' is not in the tree");
    const fs::path dir = campaign_dir(pipeline.root(), config.id);
    fs::create_directories(dir);
    write_file_atomic(dir / "config.json", config.to_json().dump(2) + "\n");
    CampaignReport report;
    report.campaign_id = config.id;
    return drive(pipeline, config, std::move(report), {}, options);
}

CampaignReport resume_campaign(Pipeline& pipeline, const std::string& campaign_id, CampaignRunOptions options) {
    const CampaignCheckpoint cp = load_checkpoint(pipeline.root(), campaign_id);
    const CampaignConfig config = CampaignConfig::from_json(read_json(campaign_dir(pipeline.root(), campaign_id) / "config.json"));

    std::vector<std::string> drift;
    if (pipeline.registry().digest() != cp.registry_digest) drift.push_back("registry");
    const auto tree = pipeline.registry().read_tree_snapshot();
    if (!tree || tree->digest() != cp.tree_digest) drift.push_back("tree");
    if (packages_digest(pipeline.root()) != cp.packages_digest) drift.push_back("skill packages");
    if (!drift.empty())
        throw Error(Errc::digest_mismatch, "campaign '" + campaign_id + "' state drifted since its checkpoint: " +
                                               join(drift, ", "));

    pipeline.restore_state(PipelineState::from_json(cp.pipeline_state));
    pipeline.gateway().provider().restore_state(cp.provider_state);

    CampaignReport report;
    report.campaign_id = campaign_id;
    std::error_code ec;
    const fs::path report_file = campaign_dir(pipeline.root(), campaign_id) / "report.json";
    if (fs::exists(report_file, ec)) {
        const json saved = read_json(report_file);
        for (const auto& p : saved.at("phases")) report.phases.push_back(CampaignPhase::from_json(p));
        report.phases.resize(std::min(report.phases.size(), cp.next_phase));
    }
    if (cp.status == CampaignStatus::completed || cp.status == CampaignStatus::halted) {
        report.status = cp.status;
        return report;
    }
    return drive(pipeline, config, std::move(report), {cp.next_phase, cp.consecutive_failures, cp.completed_cycles},
                 options);
}

}  // namespace skillforge

#pragma once

#include "skillforge/pipeline.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace skillforge {

inline constexpr const char* kWorkspacesDir = "workspaces";
inline constexpr const char* kCampaignsDir = "campaigns";

enum class WorkspaceStatus { open, collected, discarded };
inline constexpr EnumNames<WorkspaceStatus, 3> kWorkspaceStatusNames{{{
    {WorkspaceStatus::open, "open"}, {WorkspaceStatus::collected, "collected"}, {WorkspaceStatus::discarded, "discarded"}}}};

/// Isolated per-leaf copy of the repository: the leaf's skill and test
/// subtrees plus read-only copies of the shared files. Lives under
/// `workspaces/<leaf-slug>/`; the copy itself is `repo/`.
struct Workspace {
    NodePath leaf;
    fs::path root;
    std::string base_digest;
    std::map<std::string, std::string> base_files;  // relative path -> content digest at spawn
    WorkspaceStatus status = WorkspaceStatus::open;

    fs::path repo() const { return root / "repo"; }
    nlohmann::json to_json() const;
    static Workspace from_json(const nlohmann::json& doc, const fs::path& root);
    void save() const;  // meta.json next to repo/
};

/// Throws duplicate_workspace when an open workspace exists for the leaf,
/// not_a_leaf / unknown_node for a bad target, snapshot_failure when the copy fails.
Workspace spawn_workspace(const fs::path& repo_root, const DomainTree& tree, const NodePath& leaf);
std::optional<Workspace> find_workspace(const fs::path& repo_root, const NodePath& leaf);

/// Worker side, run inside the workspace: resource_search for the leaf,
/// then skill_build into the workspace copy and the parallel_leaf_stage
/// report. Never touches the main repository.
void worker_search(const Workspace& ws, Gateway& gateway, const PipelineConfig& config, int64_t cycle);
void worker_build(const Workspace& ws, Gateway& gateway, const PipelineConfig& config, int64_t cycle);

struct ArtifactSet {
    NodePath leaf;
    fs::path source;                            // workspace repo/ the files are read from
    std::map<std::string, std::string> files;   // leaf-owned changed or added files -> digest
    std::vector<std::string> deleted;           // leaf-owned files removed by the worker
    StageResponse response;                     // parallel_leaf_stage report
    std::vector<FollowupRecord> followups;
    std::vector<ResourceEntry> resources;
    std::vector<SkillEntry> skills;
    std::vector<std::string> response_digests;
    std::vector<std::string> notes;
};

/// Diffs the workspace against its spawn snapshot. A change outside the
/// leaf-owned area discards the workspace and throws shared_file_conflict
/// naming every offending path; a missing or invalid worker report throws
/// unparseable_response.
ArtifactSet collect_leaf_artifacts(Workspace& ws);

struct CollectionResult {
    std::vector<ArtifactSet> sets;
    std::vector<std::pair<NodePath, std::string>> rejected;  // leaf, error text
};
/// Collects each workspace, keeping conflicts out of the result.
CollectionResult collect_workspaces(std::vector<Workspace>& workspaces);

struct MergeReport {
    std::vector<NodePath> merged;
    std::vector<std::string> skill_ids;
    std::map<std::string, std::string> renamed;  // worker id -> registered id
    size_t files = 0;
};

/// Applies sets in ascending leaf order regardless of input order: files,
/// resources, follow-ups, then skills (re-identified on id collision). Two
/// sets touching one path is an internal_invariant failure.
MergeReport merge_worker_outputs(const fs::path& repo_root, Registry& registry, std::vector<ArtifactSet> sets,
                                 int64_t cycle);

/// Runs resource_search and skill_build as concurrent per-leaf workers.
class ParallelLeafMiner final : public LeafMiner {
public:
    explicit ParallelLeafMiner(size_t max_workers = 4) : max_workers_(max_workers ? max_workers : 1) {}
    StageOutcome search(Pipeline& pipeline, const std::vector<NodePath>& focus, int64_t cycle) override;
    StageOutcome build(Pipeline& pipeline, const std::vector<NodePath>& focus, int64_t cycle,
                       std::vector<std::string>& built) override;

private:
    size_t max_workers_;
    std::vector<Workspace> workspaces_;
};

// ---- campaigns ---------------------------------------------------------------

struct CampaignConfig {
    std::string id;
    std::vector<NodePath> branches;
    int cycles_per_branch = 1;
    size_t eval_batch = 4;
    int failure_limit = 3;  // consecutive failed phases before halting
    bool parallel_workers = true;
    size_t max_workers = 4;

    nlohmann::json to_json() const;
    static CampaignConfig from_json(const nlohmann::json& doc);
};

enum class PhaseKind { mining, evaluation };
inline constexpr EnumNames<PhaseKind, 2> kPhaseKindNames{{{{PhaseKind::mining, "mining"}, {PhaseKind::evaluation, "evaluation"}}}};

struct ScheduledPhase {
    PhaseKind kind = PhaseKind::mining;
    NodePath branch;
};

/// Per branch: `cycles_per_branch` mining phases, then one evaluation phase.
std::vector<ScheduledPhase> campaign_schedule(const CampaignConfig& config);

struct CampaignPhase {
    size_t index = 0;
    PhaseKind kind = PhaseKind::mining;
    NodePath branch;
    bool failed = false;
    bool noop = false;
    std::string error;
    std::optional<CycleReport> cycle;
    std::optional<EvaluationReport> evaluation;

    nlohmann::json to_json() const;
    static CampaignPhase from_json(const nlohmann::json& doc);
};

enum class CampaignStatus { running, completed, halted, interrupted };
inline constexpr EnumNames<CampaignStatus, 4> kCampaignStatusNames{{{
    {CampaignStatus::running, "running"},
    {CampaignStatus::completed, "completed"},
    {CampaignStatus::halted, "halted"},
    {CampaignStatus::interrupted, "interrupted"}}}};

struct CampaignReport {
    std::string campaign_id;
    CampaignStatus status = CampaignStatus::running;
    std::vector<CampaignPhase> phases;

    size_t count(PhaseKind kind) const;
    std::vector<CycleReport> cycle_reports() const;
    nlohmann::json to_json() const;
};

struct CampaignCheckpoint {
    std::string campaign_id;
    size_t next_phase = 0;
    std::vector<int64_t> completed_cycles;
    std::vector<std::string> pending_skills;
    int consecutive_failures = 0;
    CampaignStatus status = CampaignStatus::running;
    std::string registry_digest;
    std::string tree_digest;
    std::string packages_digest;  // skills/ and tests/
    nlohmann::json pipeline_state;
    nlohmann::json provider_state;

    nlohmann::json to_json() const;
    static CampaignCheckpoint from_json(const nlohmann::json& doc);
};

/// Snapshot of the pipeline after a phase boundary.
CampaignCheckpoint checkpoint_campaign(Pipeline& pipeline, const std::string& campaign_id, size_t next_phase);
fs::path checkpoint_path(const fs::path& repo_root, const std::string& campaign_id);
CampaignCheckpoint load_checkpoint(const fs::path& repo_root, const std::string& campaign_id);

struct CampaignRunOptions {
    /// Stop (status interrupted) after this many phases in this invocation.
    std::optional<size_t> stop_after_phases;
};

CampaignReport run_campaign(Pipeline& pipeline, const CampaignConfig& config, CampaignRunOptions options = {});
/// Verifies the checkpoint against the on-disk state (digest_mismatch on
/// drift), restores pipeline and provider state and continues.
CampaignReport resume_campaign(Pipeline& pipeline, const std::string& campaign_id, CampaignRunOptions options = {});

}  // namespace skillforge

#pragma once

#include "skillforge/domain_tree.hpp"
#include "skillforge/novelty_review.hpp"
#include "skillforge/provider_gateway.hpp"
#include "skillforge/registry.hpp"
#include "skillforge/validation_harness.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace skillforge {

// Repository layout, relative to the repository root.
inline constexpr const char* kRegistryDir = "registry";
inline constexpr const char* kSkillsDir = "skills";
inline constexpr const char* kTestsDir = "tests";
inline constexpr const char* kSandboxDir = "sandbox";
inline constexpr const char* kReportsDir = "reports";
inline constexpr const char* kSiteDir = "site";
inline constexpr const char* kPipelineStateFile = "pipeline.json";

struct PipelineConfig {
    size_t focus_k = 2;
    size_t search_budget = 8;   // resources per focus leaf per cycle
    size_t candidate_cap = 3;   // skills built per focus leaf per cycle
    int repair_budget = kRepairBudget;
    int optimize_budget = kOptimizeBudget;
    double smoke_timeout_seconds = 5.0;
    size_t novelty_limit = 10;
    std::vector<fs::path> catalogs;  // offline catalog snapshots (NDJSON)
    PriorityWeights weights;
    SchedulerAdapter scheduler;
    EffortProfile effort = EffortProfile::defaults();

    nlohmann::json to_json() const;
    /// Unknown keys are rejected; relative catalog paths resolve against `base_dir`.
    static PipelineConfig from_json(const nlohmann::json& doc, const fs::path& base_dir = {});
};

/// Reads a JSON configuration document.
PipelineConfig load_config(const fs::path& path);

struct StageOutcome {
    StageKind stage = StageKind::tree_check;
    std::vector<std::string> response_digests;  // sha256 of each validated response
    double duration_seconds = 0.0;
    std::vector<std::string> notes;

    nlohmann::json to_json() const;
    static StageOutcome from_json(const nlohmann::json& doc);
};

struct CycleReport {
    int64_t cycle_index = 0;
    std::vector<StageOutcome> stages;
    std::vector<std::string> created;
    std::vector<std::string> verified;
    std::vector<std::string> removed;
    std::vector<std::string> tree_edits;
    bool aborted = false;
    std::string error;

    std::vector<StageKind> stage_order() const;
    nlohmann::json to_json() const;
    static CycleReport from_json(const nlohmann::json& doc);
};

struct PipelineState {
    int64_t cycle_index = 0;
    std::optional<StageKind> stage_cursor;  // last completed stage of the open cycle; empty when idle
    std::vector<NodePath> focus_leaves;
    std::vector<std::string> pending_skills;  // awaiting layer-2 evaluation
    std::vector<std::string> built_skills;    // built in the open cycle (or by design_skill)
    std::map<std::string, NoveltyVerdict> verdicts;  // applied at the next refresh
    nlohmann::json split_suggestions = nlohmann::json::array();
    std::optional<NodePath> branch;  // restricts tree_check to one branch
    bool site_stale = false;

    bool idle() const { return !stage_cursor; }
    nlohmann::json to_json() const;
    static PipelineState from_json(const nlohmann::json& doc);
};

nlohmann::json verdict_to_json(const NoveltyVerdict& v);
NoveltyVerdict verdict_from_json(const nlohmann::json& doc);

/// The stage that must run next from `state`.
StageKind next_stage(const PipelineState& state);

/// Digest of everything a cycle commits: registry files, skill and test
/// trees under the repository root, and the tree.
std::string shared_state_digest(const fs::path& repo_root, const Registry& registry);

/// Creates a fresh repository: registry with the taxonomy as its first tree
/// snapshot, empty skills/ and tests/, and an idle pipeline state.
void init_repository(const fs::path& root, std::string_view taxonomy);

/// A mined skill candidate before it is compiled.
struct BuildCandidate {
    std::string name;
    NodePath leaf;
    SkillContract contract;
    std::map<std::string, std::string> artifacts;
};

/// Validated resource_search response, ordered by authority rank (then
/// locator) and capped at `budget`. Every entry is attributed to `leaf`.
std::vector<ResourceEntry> ranked_resources(const StageResponse& response, const NodePath& leaf, size_t budget,
                                            int64_t cycle, std::vector<std::string>* notes = nullptr);

/// Top-level contract plus `candidates`, capped at `cap`. A candidate with a
/// `new_leaf` targets a sibling of `focus`. Unparseable candidates are
/// reported in `notes` and skipped.
std::vector<BuildCandidate> build_candidates(const StageResponse& response, const NodePath& focus, size_t cap,
                                             std::vector<std::string>* notes = nullptr);

/// Allocates an id, compiles the package under `repo_root` and returns the
/// untested registry entry (not yet upserted). Provenance links that name a
/// known resource id or locator map to that id; any other link is returned
/// in `new_resources` for the caller to record.
SkillEntry materialize_candidate(const BuildCandidate& candidate, const std::string& id, const fs::path& repo_root,
                                 const Registry& registry, int64_t cycle, std::vector<ResourceEntry>* new_resources);

struct DesignReport {
    std::string task_prompt;
    std::string response_key;
    std::vector<std::string> skill_ids;
    std::string status;  // verified | review | repaired | failed
    bool resource_search_skipped = false;
    std::vector<std::string> notes;
    std::string archive;  // reports/design/<key>.json

    nlohmann::json to_json() const;
};

struct EvaluationEntry {
    std::string skill_id;
    double margin = 0.0;
    bool optimized = false;
    std::string status;
    std::string note;
};

struct EvaluationReport {
    std::vector<EvaluationEntry> entries;
    bool noop() const { return entries.empty(); }
    nlohmann::json to_json() const;
};

class Pipeline;

/// Alternative executor for resource_search and skill_build (parallel leaf
/// workers). `build` must return the ids of skills registered as untested.
class LeafMiner {
public:
    virtual ~LeafMiner() = default;
    virtual StageOutcome search(Pipeline& pipeline, const std::vector<NodePath>& focus, int64_t cycle) = 0;
    virtual StageOutcome build(Pipeline& pipeline, const std::vector<NodePath>& focus, int64_t cycle,
                               std::vector<std::string>& built) = 0;
};

/// Cycle controller over one repository. Holds the committed tree; only
/// refresh (and the post-evaluation commit) rewrites it.
class Pipeline {
public:
    Pipeline(fs::path repo_root, Registry& registry, Gateway& gateway, PipelineConfig config = {},
             Clock* clock = nullptr);

    const fs::path& root() const { return root_; }
    Registry& registry() { return *registry_; }
    Gateway& gateway() { return *gateway_; }
    const PipelineConfig& config() const { return config_; }
    const PipelineState& state() const { return state_; }
    const DomainTree& tree() const { return tree_; }
    SandboxConfig sandbox() const;

    void set_miner(LeafMiner* miner) { miner_ = miner; }
    void set_branch(std::optional<NodePath> branch);
    /// Called inside refresh after all edits and before the integrity check.
    std::function<void(DomainTree&, Registry&)> before_commit;

    /// Throws out_of_order_stage unless `stage` is next_stage(state()).
    StageOutcome run_stage(StageKind stage);
    /// Runs all five stages. A stage error aborts the cycle, resets the cursor
    /// and is rethrown after the aborted report is written.
    CycleReport run_cycle();
    /// Report of the open or most recently finished cycle.
    const CycleReport& current_report() const { return report_; }

    DesignReport design_skill(const std::string& task_prompt);
    /// Layer-2 evaluation over the first `batch` pending skills.
    EvaluationReport evaluate_pending(size_t batch);
    /// Layer-2 evaluation of the named skills; they leave the pending list.
    EvaluationReport evaluate_skills(const std::vector<std::string>& skill_ids);
    /// validate_skill outside a cycle, committed like an evaluation.
    SkillStatus retest_skill(const std::string& skill_id, std::vector<std::string>& notes);

    /// Layer-1 (and synthetic, system) validation of one skill; returns its
    /// final status. Used by skill_test and the `test` command.
    SkillStatus validate_skill(const std::string& skill_id, int64_t cycle, std::vector<std::string>& notes);
    /// Novelty adjudication against local and configured catalogs.
    NoveltyVerdict judge_novelty(const std::string& skill_id, const std::set<std::string>& exclude,
                                 std::vector<std::string>& notes);

    /// shared_state_digest plus the persisted pipeline state.
    std::string state_digest() const;
    void restore_state(const PipelineState& state);
    void save_state() const;

private:
    StageOutcome stage_tree_check(int64_t cycle);
    StageOutcome stage_resource_search(int64_t cycle);
    StageOutcome stage_skill_build(int64_t cycle);
    StageOutcome stage_skill_test(int64_t cycle);
    StageOutcome stage_refresh(int64_t cycle);
    void record_resources(const std::vector<ResourceEntry>& resources);
    std::string build_one(const BuildCandidate& candidate, int64_t cycle, std::vector<std::string>& notes);
    void test_and_judge(const std::vector<std::string>& ids, int64_t cycle, std::vector<std::string>& notes);
    /// Reconciles links, checks integrity and persists the tree; rolls the
    /// registry back to `mark` on failure.
    void commit(DomainTree next, const Registry::Mark& mark, int64_t cycle, std::vector<std::string>& notes);
    void write_report(const CycleReport& report) const;
    std::vector<Catalog> external_catalogs();

    fs::path root_;
    Registry* registry_;
    Gateway* gateway_;
    PipelineConfig config_;
    Clock* clock_;
    SteadyClock steady_;
    LeafMiner* miner_ = nullptr;
    DomainTree tree_;
    PipelineState state_;
    CycleReport report_;
    std::optional<std::vector<Catalog>> catalogs_;
    std::vector<std::string> side_digests_;  // novelty_check responses of the running stage
};

}  // namespace skillforge

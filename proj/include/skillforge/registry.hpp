#pragma once

#include "skillforge/domain_tree.hpp"
#include "skillforge/types.hpp"
#include "skillforge/util.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace skillforge {

enum class ResourceKind { repository, paper, notebook, documentation, api, database, workflow, service };
inline constexpr EnumNames<ResourceKind, 8> kResourceKindNames{{{
    {ResourceKind::repository, "repository"},
    {ResourceKind::paper, "paper"},
    {ResourceKind::notebook, "notebook"},
    {ResourceKind::documentation, "documentation"},
    {ResourceKind::api, "api"},
    {ResourceKind::database, "database"},
    {ResourceKind::workflow, "workflow"},
    {ResourceKind::service, "service"}}}};

struct SkillEntry {
    std::string id;
    std::string name;
    NodePath leaf_path;
    SkillStatus status = SkillStatus::untested;
    std::string package_path;
    std::optional<std::string> smoke_target;
    std::vector<std::string> provenance;
    int64_t created_cycle = 0;
    int64_t updated_cycle = 0;
    Confidence confidence = Confidence::standard;

    bool operator==(const SkillEntry&) const = default;
};

struct ResourceEntry {
    std::string id;  // derived from the locator when empty
    ResourceKind kind = ResourceKind::repository;
    std::string locator;
    std::set<NodePath> leaf_paths;
    int64_t retrieved_cycle = 0;
    int authority_rank = 0;

    bool operator==(const ResourceEntry&) const = default;
};

struct VerificationRecord {
    std::string skill_id;
    Layer layer = Layer::execution;
    Outcome outcome = Outcome::pass;
    int attempt = 1;
    std::string report_locator;
    int64_t cycle = 0;

    bool operator==(const VerificationRecord&) const = default;
};

/// Novelty decision as persisted; `decision` holds the verdict name.
struct AdjudicationRecord {
    std::string skill_id;
    std::string decision;
    std::string rationale;
    std::optional<std::string> merge_target;  // local skill id or external entry ref
    std::vector<std::string> matches;         // "<catalog>:<entry_ref>:<overlap>"
    int64_t cycle = 0;

    bool operator==(const AdjudicationRecord&) const = default;
};

/// Shared-file follow-up reported by a leaf worker, queued for refresh.
struct FollowupRecord {
    NodePath leaf_path;
    std::string field;  // repo_changes | blockers | next_steps
    std::string item;
    int64_t cycle = 0;

    bool operator==(const FollowupRecord&) const = default;
};

struct LibraryStats {
    size_t skill_count = 0;
    size_t verified_count = 0;
    size_t domain_count = 0;
    size_t subdomain_count = 0;
    size_t resource_count = 0;
    size_t adjudicated_count = 0;
    size_t novel_count = 0;
    double novel_fraction = 0.0;

    bool operator==(const LibraryStats&) const = default;
    nlohmann::json to_json() const;
    /// Percentage with one decimal, e.g. "71.1%".
    std::string novel_percent() const;
};

struct Receipt {
    std::string id;
    size_t line = 0;  // 1-based line in the record file
    bool created = false;
    bool deduplicated = false;
};

nlohmann::json to_json(const SkillEntry& e);
SkillEntry skill_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ResourceEntry& e);
ResourceEntry resource_from_json(const nlohmann::json& j);
nlohmann::json to_json(const VerificationRecord& r);
VerificationRecord verification_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AdjudicationRecord& r);
AdjudicationRecord adjudication_from_json(const nlohmann::json& j);

/// Status machine. Beyond the base edges, verified/review -> removed is
/// allowed so a redundant or merged-away skill can leave the library.
bool transition_allowed(SkillStatus from, SkillStatus to);

std::string resource_id_for(std::string_view locator);

enum class LockPolicy { block, fail_fast };

struct RegistryOptions {
    bool writable = true;
    LockPolicy lock = LockPolicy::block;
    std::chrono::milliseconds lock_timeout{30000};
    bool sync = true;  // fsync appends and snapshots
};

inline constexpr const char* kSkillsFile = "skills.ndjson";
inline constexpr const char* kResourcesFile = "resources.ndjson";
inline constexpr const char* kVerificationsFile = "verifications.ndjson";
inline constexpr const char* kAdjudicationsFile = "adjudications.ndjson";
inline constexpr const char* kFollowupsFile = "followups.ndjson";
inline constexpr const char* kTreeSnapshotFile = "tree.snapshot";
inline constexpr const char* kLockFile = "LOCK";

/// Durable registry directory. One append-only NDJSON file per record class,
/// a tree snapshot and a compacted `index/`. A writable registry holds the
/// root LOCK for its whole lifetime.
class Registry {
public:
    static Registry open(const fs::path& root, RegistryOptions options = {});

    Registry(Registry&& other) noexcept;
    Registry& operator=(Registry&& other) noexcept;
    Registry(const Registry&) = delete;
    Registry& operator=(const Registry&) = delete;
    ~Registry();

    const fs::path& root() const { return root_; }
    bool writable() const { return lock_fd_ >= 0; }

    Receipt upsert_skill(const SkillEntry& entry);
    Receipt record_resource(const ResourceEntry& resource);
    /// Appends `record`; moves the skill to `target`, or when no target is
    /// given, promotes untested/repaired/review skills on a passing
    /// execution record (synthetic too when the skill has no smoke target).
    SkillEntry set_verification(const std::string& skill_id, const VerificationRecord& record,
                                std::optional<SkillStatus> target = std::nullopt);
    SkillEntry transition(const std::string& skill_id, SkillStatus target, int64_t cycle);
    SkillEntry relocate_skill(const std::string& skill_id, const NodePath& leaf, int64_t cycle);
    SkillEntry set_provenance(const std::string& skill_id, std::vector<std::string> provenance, int64_t cycle);
    SkillEntry set_confidence(const std::string& skill_id, Confidence confidence, int64_t cycle);
    void record_adjudication(const AdjudicationRecord& record);
    void record_followup(const FollowupRecord& record);

    const SkillEntry* find_skill(const std::string& id) const;
    const SkillEntry& skill(const std::string& id) const;
    const std::map<std::string, SkillEntry>& skills() const { return skills_; }
    const std::vector<SkillEntry>& skill_history(const std::string& id) const;
    const std::map<std::string, ResourceEntry>& resources() const { return resources_; }
    const ResourceEntry* find_resource_by_locator(const std::string& locator) const;
    const std::vector<VerificationRecord>& verifications() const { return verifications_; }
    std::vector<VerificationRecord> verifications_for(const std::string& skill_id, Layer layer) const;
    int next_attempt(const std::string& skill_id, Layer layer) const;
    const std::vector<AdjudicationRecord>& adjudications() const { return adjudications_; }
    std::map<std::string, AdjudicationRecord> latest_adjudications() const;
    const std::vector<FollowupRecord>& followups() const { return followups_; }

    /// Deterministic id: slug(leaf label)-slug(name), suffixed -2, -3... on collision.
    std::string allocate_skill_id(const NodePath& leaf, std::string_view name) const;

    RegistryView view(int64_t current_cycle) const;

    // Refresh-owned shared state.
    void write_tree_snapshot(const DomainTree& tree);
    std::optional<DomainTree> read_tree_snapshot() const;
    void compact();

    /// Digest of every persisted file except LOCK.
    std::string digest() const;

    /// Byte sizes of the append-only logs, for rolling back an uncommitted
    /// refresh.
    struct Mark {
        std::map<std::string, uintmax_t> sizes;
    };
    Mark mark() const;
    void rollback(const Mark& mark);
    void reload();

private:
    Registry(fs::path root, RegistryOptions options);
    void load();
    void require_writable() const;
    size_t append(const char* file, const nlohmann::json& record);
    SkillEntry commit_skill_change(SkillEntry updated);

    fs::path root_;
    RegistryOptions options_;
    int lock_fd_ = -1;
    std::map<std::string, SkillEntry> skills_;
    std::map<std::string, std::vector<SkillEntry>> history_;
    std::map<std::string, ResourceEntry> resources_;
    std::map<std::string, std::string> locator_index_;
    std::vector<VerificationRecord> verifications_;
    std::vector<AdjudicationRecord> adjudications_;
    std::vector<FollowupRecord> followups_;
    std::map<std::string, size_t> line_counts_;
};

/// Library counts. Throws inconsistency when a retained skill points at a
/// leaf that is missing (and not pending under a live parent) or pruned.
LibraryStats snapshot_stats(const Registry& registry, const DomainTree& tree);

/// Cross-reference, state-machine and evidence checks; empty when clean.
std::vector<std::string> integrity_check(const Registry& registry, const DomainTree& tree);

inline bool is_retained(SkillStatus s) { return s != SkillStatus::removed && s != SkillStatus::deprecated; }

// ---- tree/registry write-back ----------------------------------------------

/// Deprecates verified/review skills (removes untested ones) linked to the
/// leaf, then prunes it.
DomainTree prune_with_deprecation(const DomainTree& tree, Registry& registry, const NodePath& leaf,
                                  std::string_view reason, int64_t cycle);
/// Merges leaves and moves the absorbed leaf's skills onto the survivor.
DomainTree merge_with_relocation(const DomainTree& tree, Registry& registry, const NodePath& a, const NodePath& b,
                                 const NodePath& survivor, int64_t cycle);
/// Splits a branch and relocates each partitioned skill to its new leaf.
DomainTree split_with_relocation(const DomainTree& tree, Registry& registry, const NodePath& path,
                                 const std::vector<SplitPartition>& partitions, int64_t cycle);

}  // namespace skillforge

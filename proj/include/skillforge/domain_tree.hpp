#pragma once

#include "skillforge/types.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

namespace skillforge {

enum class NodeKind { root, domain, subdomain, leaf };
inline constexpr EnumNames<NodeKind, 4> kNodeKindNames{{{
    {NodeKind::root, "root"},
    {NodeKind::domain, "domain"},
    {NodeKind::subdomain, "subdomain"},
    {NodeKind::leaf, "leaf"}}}};

enum class CoverageFlag { uncovered, partial, covered };
inline constexpr EnumNames<CoverageFlag, 3> kCoverageNames{{{
    {CoverageFlag::uncovered, "uncovered"},
    {CoverageFlag::partial, "partial"},
    {CoverageFlag::covered, "covered"}}}};

enum class NodeStatus { active, merged, pruned, review };
inline constexpr EnumNames<NodeStatus, 4> kNodeStatusNames{{{
    {NodeStatus::active, "active"},
    {NodeStatus::merged, "merged"},
    {NodeStatus::pruned, "pruned"},
    {NodeStatus::review, "review"}}}};

/// Active or review: the node still participates in the tree.
inline bool is_live(NodeStatus s) { return s == NodeStatus::active || s == NodeStatus::review; }

struct NodeVerification {
    std::string skill_id;
    Outcome outcome = Outcome::pass;
    int64_t cycle = 0;

    bool operator==(const NodeVerification&) const = default;
};

inline constexpr size_t kRecentVerificationLimit = 10;

struct TreeNode {
    NodePath path;
    NodeKind kind = NodeKind::leaf;
    std::vector<NodePath> children;
    std::set<std::string> linked_resources;
    std::set<std::string> linked_skills;
    std::set<std::string> verified_skills;  // subset of linked_skills
    std::vector<NodeVerification> recent_verifications;  // oldest first, bounded
    CoverageFlag coverage_flag = CoverageFlag::uncovered;
    NodeStatus status = NodeStatus::active;
    std::optional<NodePath> merged_into;
    std::string status_reason;
    int64_t last_activity_cycle = 0;
    bool deprioritized = false;

    bool operator==(const TreeNode&) const = default;
};

/// Coverage rule: uncovered without a verified skill; covered with one and no
/// open failure; partial otherwise. A failure is open while it is the latest
/// recorded outcome for its skill in recent_verifications.
CoverageFlag compute_coverage(const TreeNode& node);

struct LeafSpec {
    std::string label;
};

struct SplitPartition {
    LeafSpec leaf;
    std::set<std::string> skills;
};

/// Immutable snapshot of the domain knowledge tree. Every edit returns a new
/// tree; untouched nodes are shared between snapshots.
class DomainTree {
public:
    using NodeMap = std::map<NodePath, std::shared_ptr<const TreeNode>>;

    DomainTree() = default;

    const NodePath& root() const { return root_; }
    size_t size() const { return nodes_.size(); }
    const NodeMap& nodes() const { return nodes_; }
    const TreeNode* find(const NodePath& path) const;
    const TreeNode& at(const NodePath& path) const;
    bool contains(const NodePath& path) const { return nodes_.count(path) > 0; }

    /// Live leaves in path order.
    std::vector<NodePath> live_leaves() const;
    size_t count(NodeKind kind, bool live_only = true) const;

    nlohmann::json to_json() const;
    static DomainTree from_json(const nlohmann::json& doc);
    /// Canonical serialized form (stable key order, trailing newline).
    std::string snapshot_text() const;
    std::string digest() const;
    /// Digest of the subtree rooted at `path` (node state included).
    std::string subtree_digest(const NodePath& path) const;

    bool operator==(const DomainTree& other) const;

    /// Structural invariant scan; empty when the tree is well-formed.
    std::vector<std::string> check_invariants() const;

private:
    friend struct TreeAccess;
    NodeMap nodes_;
    NodePath root_;
};

/// Parses the indentation-structured taxonomy document: one entry per line,
/// two spaces per depth level, trailing " *" marks a leaf, '#' starts a
/// comment line.
DomainTree load_tree(std::string_view document);

DomainTree insert_leaf(const DomainTree& tree, const NodePath& parent, const LeafSpec& leaf, int64_t cycle = 0);
DomainTree merge_leaves(const DomainTree& tree, const NodePath& a, const NodePath& b, const NodePath& survivor);
DomainTree prune_leaf(const DomainTree& tree, const NodePath& path, std::string_view reason);
DomainTree split_branch(const DomainTree& tree, const NodePath& path, const std::vector<SplitPartition>& partitions);

// Node-state edits used by refresh write-back.
DomainTree link_resource(const DomainTree& tree, const NodePath& path, const std::string& resource_id);
DomainTree link_skill(const DomainTree& tree, const NodePath& leaf, const std::string& skill_id, bool verified);
DomainTree unlink_skill(const DomainTree& tree, const NodePath& leaf, const std::string& skill_id);
DomainTree record_node_verification(const DomainTree& tree, const NodePath& path, const NodeVerification& v);
DomainTree touch_node(const DomainTree& tree, const NodePath& path, int64_t cycle);
DomainTree set_node_review(const DomainTree& tree, const NodePath& path, bool review, std::string_view reason = {});
DomainTree set_deprioritized(const DomainTree& tree, const NodePath& path, bool value);

// ---- branch prioritization ---------------------------------------------

enum class PriorityReason { resources_no_skills, starter_only, repeated_failures, stale };
inline constexpr EnumNames<PriorityReason, 4> kPriorityReasonNames{{{
    {PriorityReason::resources_no_skills, "resources_no_skills"},
    {PriorityReason::starter_only, "starter_only"},
    {PriorityReason::repeated_failures, "repeated_failures"},
    {PriorityReason::stale, "stale"}}}};

struct BranchPriority {
    NodePath path;
    double score = 0.0;
    std::vector<PriorityReason> reasons;

    bool operator==(const BranchPriority&) const = default;
};

/// What prioritization needs to know from the registry.
struct RegistryView {
    int64_t current_cycle = 0;
    std::set<std::string> starter_skills;  // linked skills with starter confidence
};

struct PriorityWeights {
    double resources_no_skills = 3.0;
    double per_failure = 2.0;
    int failure_cap = 3;
    int failure_window = 3;  // cycles
    double starter_only = 1.0;
    double stale = 1.0;
    int stale_after = 5;  // cycles without activity
    double deprioritized_factor = 0.5;
};

/// Scores a single leaf; exposed so callers can audit the ranking.
BranchPriority score_leaf(const TreeNode& node, const RegistryView& view, const PriorityWeights& w = {});

/// Top-k live leaves by descending score, ties by path. Review leaves score 0.
/// When `within` is given only leaves under that branch are considered.
std::vector<BranchPriority> prioritize_branches(const DomainTree& tree, const RegistryView& view, size_t k,
                                                const std::optional<NodePath>& within = std::nullopt,
                                                const PriorityWeights& w = {});

}  // namespace skillforge

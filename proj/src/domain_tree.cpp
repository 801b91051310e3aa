#include "skillforge/domain_tree.hpp"

#include "skillforge/util.hpp"

#include <algorithm>
#include <map>
#include <sstream>

namespace skillforge {

using nlohmann::json;

// ---- NodePath -------------------------------------------------------------

NodePath NodePath::parse(std::string_view text) {
    std::vector<std::string> labels;
    if (text.empty()) return NodePath{};
    for (auto& part : split(text, '/')) {
        if (part.empty()) throw Error(Errc::invalid_argument, "empty label in path '" + std::string(text) + "'");
        labels.push_back(std::move(part));
    }
    return NodePath(std::move(labels));
}

NodePath NodePath::parent() const {
    if (labels_.empty()) return {};
    return NodePath(std::vector<std::string>(labels_.begin(), labels_.end() - 1));
}

NodePath NodePath::child(std::string label) const {
    auto labels = labels_;
    labels.push_back(std::move(label));
    return NodePath(std::move(labels));
}

bool NodePath::is_ancestor_of(const NodePath& other) const {
    if (labels_.size() >= other.labels_.size()) return false;
    return std::equal(labels_.begin(), labels_.end(), other.labels_.begin());
}

std::string NodePath::str() const { return join(labels_, "/"); }

std::string NodePath::fs_form() const {
    std::vector<std::string> parts;
    for (const auto& l : labels_) parts.push_back(slugify(l));
    return join(parts, "/");
}

std::string NodePath::slug() const {
    std::vector<std::string> parts;
    for (const auto& l : labels_) parts.push_back(slugify(l));
    return join(parts, "--");
}

// ---- coverage ---------------------------------------------------------------

CoverageFlag compute_coverage(const TreeNode& node) {
    if (node.verified_skills.empty()) return CoverageFlag::uncovered;
    std::map<std::string, Outcome> latest;
    for (const auto& v : node.recent_verifications) latest[v.skill_id] = v.outcome;
    for (const auto& [skill, outcome] : latest) {
        if (outcome != Outcome::pass) return CoverageFlag::partial;
    }
    return CoverageFlag::covered;
}

// ---- mutable access ---------------------------------------------------------

struct TreeAccess {
    DomainTree tree;

    explicit TreeAccess(const DomainTree& base) : tree(base) {}

    // copy-on-write: the first edit of a path clones the shared node, later
    // edits in the same access reuse the clone
    TreeNode& edit(const NodePath& path) {
        auto it = tree.nodes_.find(path);
        if (it == tree.nodes_.end()) throw Error(Errc::unknown_node, path.str());
        if (auto own = owned.find(path); own != owned.end()) return *own->second;
        auto copy = std::make_shared<TreeNode>(*it->second);
        owned[path] = copy.get();
        TreeNode& ref = *copy;
        it->second = std::move(copy);
        return ref;
    }

    TreeNode& create(TreeNode node) {
        auto ptr = std::make_shared<TreeNode>(std::move(node));
        TreeNode& ref = *ptr;
        owned[ref.path] = ptr.get();
        tree.nodes_[ref.path] = std::move(ptr);
        return ref;
    }

    std::map<NodePath, TreeNode*> owned;

    void set_root(const NodePath& root) { tree.root_ = root; }

    static void refresh_coverage(TreeNode& node) { node.coverage_flag = compute_coverage(node); }
};

namespace {

const TreeNode& require(const DomainTree& tree, const NodePath& path, Errc missing) {
    const TreeNode* node = tree.find(path);
    if (!node) throw Error(missing, "no node at '" + path.str() + "'");
    return *node;
}

void require_live_leaf(const TreeNode& node) {
    if (node.kind != NodeKind::leaf) throw Error(Errc::not_a_leaf, "'" + node.path.str() + "' is not a leaf");
    if (node.status == NodeStatus::merged)
        throw Error(Errc::already_merged, "'" + node.path.str() + "' is already merged");
    if (node.status == NodeStatus::pruned)
        throw Error(Errc::already_pruned, "'" + node.path.str() + "' is already pruned");
}

void validate_label(const std::string& label) {
    if (label.empty() || label.find('/') != std::string::npos || trim(label) != label ||
        (label.size() >= 1 && label.back() == '*')) {
        throw Error(Errc::invalid_argument, "invalid node label '" + label + "'");
    }
}

NodeKind internal_kind_for(const NodePath& path) { return path.depth() == 1 ? NodeKind::domain : NodeKind::subdomain; }

void push_verification(TreeNode& node, const NodeVerification& v) {
    node.recent_verifications.push_back(v);
    if (node.recent_verifications.size() > kRecentVerificationLimit) {
        node.recent_verifications.erase(node.recent_verifications.begin(),
                                        node.recent_verifications.end() - kRecentVerificationLimit);
    }
}

json node_to_json(const TreeNode& n) {
    json children = json::array();
    for (const auto& c : n.children) children.push_back(c.labels());
    json recent = json::array();
    for (const auto& v : n.recent_verifications)
        recent.push_back({{"skill_id", v.skill_id}, {"outcome", kOutcomeNames.name(v.outcome)}, {"cycle", v.cycle}});
    json j = {
        {"path", n.path.labels()},
        {"kind", kNodeKindNames.name(n.kind)},
        {"children", children},
        {"linked_resources", n.linked_resources},
        {"linked_skills", n.linked_skills},
        {"verified_skills", n.verified_skills},
        {"recent_verifications", recent},
        {"coverage_flag", kCoverageNames.name(n.coverage_flag)},
        {"status", kNodeStatusNames.name(n.status)},
        {"status_reason", n.status_reason},
        {"last_activity_cycle", n.last_activity_cycle},
        {"deprioritized", n.deprioritized},
    };
    j["merged_into"] = n.merged_into ? json(n.merged_into->labels()) : json(nullptr);
    return j;
}

TreeNode node_from_json(const json& j) {
    TreeNode n;
    n.path = NodePath(j.at("path").get<std::vector<std::string>>());
    n.kind = kNodeKindNames.parse(j.at("kind").get<std::string>(), "node kind");
    for (const auto& c : j.at("children")) n.children.emplace_back(c.get<std::vector<std::string>>());
    n.linked_resources = j.at("linked_resources").get<std::set<std::string>>();
    n.linked_skills = j.at("linked_skills").get<std::set<std::string>>();
    n.verified_skills = j.at("verified_skills").get<std::set<std::string>>();
    for (const auto& v : j.at("recent_verifications")) {
        n.recent_verifications.push_back({v.at("skill_id").get<std::string>(),
                                          kOutcomeNames.parse(v.at("outcome").get<std::string>(), "outcome"),
                                          v.at("cycle").get<int64_t>()});
    }
    n.coverage_flag = kCoverageNames.parse(j.at("coverage_flag").get<std::string>(), "coverage flag");
    n.status = kNodeStatusNames.parse(j.at("status").get<std::string>(), "node status");
    n.status_reason = j.value("status_reason", "");
    n.last_activity_cycle = j.value("last_activity_cycle", int64_t{0});
    n.deprioritized = j.value("deprioritized", false);
    if (j.contains("merged_into") && !j.at("merged_into").is_null())
        n.merged_into = NodePath(j.at("merged_into").get<std::vector<std::string>>());
    return n;
}

}  // namespace

// ---- DomainTree -------------------------------------------------------------

const TreeNode* DomainTree::find(const NodePath& path) const {
    auto it = nodes_.find(path);
    return it == nodes_.end() ? nullptr : it->second.get();
}

const TreeNode& DomainTree::at(const NodePath& path) const { return require(*this, path, Errc::unknown_node); }

std::vector<NodePath> DomainTree::live_leaves() const {
    std::vector<NodePath> out;
    for (const auto& [path, node] : nodes_)
        if (node->kind == NodeKind::leaf && is_live(node->status)) out.push_back(path);
    return out;
}

size_t DomainTree::count(NodeKind kind, bool live_only) const {
    size_t n = 0;
    for (const auto& [path, node] : nodes_)
        if (node->kind == kind && (!live_only || is_live(node->status))) ++n;
    return n;
}

json DomainTree::to_json() const {
    json nodes = json::array();
    for (const auto& [path, node] : nodes_) nodes.push_back(node_to_json(*node));
    return {{"root", root_.labels()}, {"nodes", nodes}};
}

DomainTree DomainTree::from_json(const json& doc) {
    TreeAccess access{DomainTree{}};
    access.set_root(NodePath(doc.at("root").get<std::vector<std::string>>()));
    for (const auto& n : doc.at("nodes")) access.create(node_from_json(n));
    return access.tree;
}

std::string DomainTree::snapshot_text() const { return to_json().dump(1) + "\n"; }

std::string DomainTree::digest() const { return sha256_hex(to_json().dump()); }

std::string DomainTree::subtree_digest(const NodePath& path) const {
    std::string buf;
    for (const auto& [p, node] : nodes_) {
        if (p == path || path.is_ancestor_of(p)) buf += node_to_json(*node).dump() + "\n";
    }
    return sha256_hex(buf);
}

bool DomainTree::operator==(const DomainTree& other) const {
    if (root_ != other.root_ || nodes_.size() != other.nodes_.size()) return false;
    auto a = nodes_.begin();
    auto b = other.nodes_.begin();
    for (; a != nodes_.end(); ++a, ++b) {
        if (a->first != b->first || !(*a->second == *b->second)) return false;
    }
    return true;
}

std::vector<std::string> DomainTree::check_invariants() const {
    std::vector<std::string> v;
    const TreeNode* root = find(root_);
    if (!root) {
        if (!nodes_.empty()) v.push_back("root node missing");
        return v;
    }
    if (root->kind != NodeKind::root || root_.labels().size() != 1) v.push_back("root node malformed");
    for (const auto& [path, node] : nodes_) {
        const std::string where = "'" + path.str() + "': ";
        if (node->path != path) v.push_back(where + "stored path differs from key");
        if (path != root_) {
            if (node->kind == NodeKind::root) v.push_back(where + "non-root node of kind root");
            const TreeNode* parent = find(path.parent());
            if (!parent) {
                v.push_back(where + "parent missing");
            } else if (std::count(parent->children.begin(), parent->children.end(), path) != 1) {
                v.push_back(where + "not listed exactly once by its parent");
            } else if (parent->kind == NodeKind::leaf) {
                v.push_back(where + "parent is a leaf");
            }
        }
        if (node->kind == NodeKind::leaf && !node->children.empty()) v.push_back(where + "leaf with children");
        if (node->kind != NodeKind::leaf && !node->linked_skills.empty()) v.push_back(where + "non-leaf links skills");
        for (const auto& c : node->children) {
            const TreeNode* child = find(c);
            if (!child || c.parent() != path) v.push_back(where + "dangling child '" + c.str() + "'");
            else if ((node->status == NodeStatus::merged || node->status == NodeStatus::pruned) &&
                     is_live(child->status))
                v.push_back(where + "retired node has live child '" + c.str() + "'");
        }
        for (const auto& s : node->verified_skills)
            if (!node->linked_skills.count(s)) v.push_back(where + "verified skill not linked: " + s);
        if (node->recent_verifications.size() > kRecentVerificationLimit)
            v.push_back(where + "recent verifications exceed bound");
        if (node->coverage_flag != compute_coverage(*node)) v.push_back(where + "stale coverage flag");
        if (node->status == NodeStatus::merged && (!node->merged_into || !contains(*node->merged_into)))
            v.push_back(where + "merged without a valid forward reference");
    }
    return v;
}

// ---- taxonomy loading -------------------------------------------------------

DomainTree load_tree(std::string_view document) {
    TreeAccess access{DomainTree{}};
    std::vector<NodePath> stack;  // open ancestors, indexed by depth
    std::vector<bool> stack_is_leaf;
    size_t line_no = 0;
    bool have_root = false;
    for (const std::string& raw : split(document, '\n')) {
        ++line_no;
        std::string line = raw;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        const std::string body = trim(line);
        if (body.empty() || body.front() == '#') continue;
        const std::string loc = "line " + std::to_string(line_no);

        size_t indent = 0;
        while (indent < line.size() && line[indent] == ' ') ++indent;
        if (indent < line.size() && line[indent] == '\t')
            throw Error(Errc::parse_error, loc + ": tabs are not allowed for indentation");
        if (indent % 2 != 0) throw Error(Errc::parse_error, loc + ": indentation must be a multiple of two spaces");
        const size_t depth = indent / 2;

        std::string label = body;
        bool leaf = false;
        if (label.size() >= 2 && label.compare(label.size() - 2, 2, " *") == 0) {
            leaf = true;
            label = trim(label.substr(0, label.size() - 2));
        } else if (label == "*") {
            throw Error(Errc::parse_error, loc + ": leaf marker without a label");
        }
        if (label.empty() || label.find('/') != std::string::npos || label.back() == '*')
            throw Error(Errc::parse_error, loc + ": invalid label '" + body + "'");

        if (depth == 0) {
            if (have_root) throw Error(Errc::parse_error, loc + ": second root entry '" + label + "'");
            if (leaf) throw Error(Errc::parse_error, loc + ": root cannot be a leaf");
            have_root = true;
            NodePath path({label});
            TreeNode node;
            node.path = path;
            node.kind = NodeKind::root;
            access.create(std::move(node));
            access.set_root(path);
            stack = {path};
            stack_is_leaf = {false};
            continue;
        }
        if (!have_root || depth > stack.size())
            throw Error(Errc::orphan_parent, loc + ": '" + label + "' has no parent entry above it");
        stack.resize(depth);
        stack_is_leaf.resize(depth);
        const NodePath parent = stack.back();
        if (stack_is_leaf.back())
            throw Error(Errc::parent_is_leaf, loc + ": '" + label + "' is nested under leaf '" + parent.str() + "'");
        NodePath path = parent.child(label);
        if (access.tree.contains(path)) throw Error(Errc::duplicate_path, loc + ": duplicate path '" + path.str() + "'");
        TreeNode node;
        node.path = path;
        node.kind = leaf ? NodeKind::leaf : internal_kind_for(path);
        access.create(std::move(node));
        access.edit(parent).children.push_back(path);
        stack.push_back(path);
        stack_is_leaf.push_back(leaf);
    }
    if (!have_root) throw Error(Errc::parse_error, "document has no root entry");
    return access.tree;
}

// ---- structural edits ---------------------------------------------------------

DomainTree insert_leaf(const DomainTree& tree, const NodePath& parent_path, const LeafSpec& leaf, int64_t cycle) {
    validate_label(leaf.label);
    const TreeNode& parent = require(tree, parent_path, Errc::missing_parent);
    if (parent.kind == NodeKind::leaf)
        throw Error(Errc::parent_is_leaf, "'" + parent_path.str() + "' is a leaf; split it before adding children");
    if (!is_live(parent.status)) throw Error(Errc::missing_parent, "'" + parent_path.str() + "' is not active");
    const NodePath path = parent_path.child(leaf.label);
    TreeAccess access(tree);
    if (const TreeNode* existing = tree.find(path)) {
        if (existing->status != NodeStatus::pruned)
            throw Error(Errc::duplicate_leaf, "'" + path.str() + "' already exists");
        // a pruned path is replaced by a fresh node; its history lives in the registry
        auto& kids = access.edit(parent_path).children;
        kids.erase(std::remove(kids.begin(), kids.end(), path), kids.end());
    }
    TreeNode node;
    node.path = path;
    node.kind = NodeKind::leaf;
    node.last_activity_cycle = cycle;
    TreeAccess::refresh_coverage(node);
    access.create(std::move(node));
    access.edit(parent_path).children.push_back(path);
    return access.tree;
}

DomainTree merge_leaves(const DomainTree& tree, const NodePath& a, const NodePath& b, const NodePath& survivor) {
    if (a == b) throw Error(Errc::invalid_operand, "cannot merge '" + a.str() + "' into itself");
    if (survivor != a && survivor != b)
        throw Error(Errc::invalid_operand, "survivor '" + survivor.str() + "' is not one of the operands");
    const TreeNode& na = require(tree, a, Errc::invalid_operand);
    const TreeNode& nb = require(tree, b, Errc::invalid_operand);
    require_live_leaf(na);
    require_live_leaf(nb);
    const NodePath& absorbed = survivor == a ? b : a;
    const TreeNode& from = tree.at(absorbed);

    TreeAccess access(tree);
    TreeNode& keep = access.edit(survivor);
    keep.linked_resources.insert(from.linked_resources.begin(), from.linked_resources.end());
    keep.linked_skills.insert(from.linked_skills.begin(), from.linked_skills.end());
    keep.verified_skills.insert(from.verified_skills.begin(), from.verified_skills.end());
    std::vector<NodeVerification> merged = keep.recent_verifications;
    merged.insert(merged.end(), from.recent_verifications.begin(), from.recent_verifications.end());
    std::stable_sort(merged.begin(), merged.end(),
                     [](const NodeVerification& x, const NodeVerification& y) { return x.cycle < y.cycle; });
    keep.recent_verifications.clear();
    for (const auto& v : merged) push_verification(keep, v);
    keep.last_activity_cycle = std::max(keep.last_activity_cycle, from.last_activity_cycle);
    TreeAccess::refresh_coverage(keep);

    TreeNode& gone = access.edit(absorbed);
    gone.status = NodeStatus::merged;
    gone.merged_into = survivor;
    gone.status_reason = "merged into " + survivor.str();
    gone.linked_resources.clear();
    gone.linked_skills.clear();
    gone.verified_skills.clear();
    gone.recent_verifications.clear();
    TreeAccess::refresh_coverage(gone);
    return access.tree;
}

DomainTree prune_leaf(const DomainTree& tree, const NodePath& path, std::string_view reason) {
    const TreeNode& node = require(tree, path, Errc::unknown_node);
    require_live_leaf(node);
    TreeAccess access(tree);
    TreeNode& n = access.edit(path);
    n.status = NodeStatus::pruned;
    n.status_reason = std::string(reason);
    return access.tree;
}

DomainTree split_branch(const DomainTree& tree, const NodePath& path, const std::vector<SplitPartition>& partitions) {
    const TreeNode& node = require(tree, path, Errc::unknown_node);
    if (!is_live(node.status)) throw Error(Errc::invalid_operand, "'" + path.str() + "' is not active");
    if (node.kind == NodeKind::root && partitions.empty())
        throw Error(Errc::invalid_operand, "split needs at least one partition");
    if (partitions.empty()) throw Error(Errc::invalid_operand, "split needs at least one partition");

    std::map<std::string, size_t> owner;
    std::set<std::string> labels;
    for (size_t i = 0; i < partitions.size(); ++i) {
        validate_label(partitions[i].leaf.label);
        if (!labels.insert(partitions[i].leaf.label).second)
            throw Error(Errc::invalid_operand, "duplicate partition label '" + partitions[i].leaf.label + "'");
        const NodePath child = path.child(partitions[i].leaf.label);
        if (const TreeNode* existing = tree.find(child); existing && existing->status != NodeStatus::pruned)
            throw Error(Errc::duplicate_leaf, "'" + child.str() + "' already exists");
        for (const auto& s : partitions[i].skills) {
            if (!node.linked_skills.count(s))
                throw Error(Errc::invalid_operand, "skill '" + s + "' is not linked to '" + path.str() + "'");
            if (!owner.emplace(s, i).second)
                throw Error(Errc::doubly_assigned_skill, "skill '" + s + "' assigned to more than one leaf");
        }
    }
    for (const auto& s : node.linked_skills)
        if (!owner.count(s)) throw Error(Errc::unassigned_skill, "skill '" + s + "' is not assigned to any leaf");

    TreeAccess access(tree);
    TreeNode& parent = access.edit(path);
    const std::vector<NodeVerification> history = parent.recent_verifications;
    const std::set<std::string> verified = parent.verified_skills;
    if (parent.kind == NodeKind::leaf) parent.kind = internal_kind_for(path);
    parent.linked_skills.clear();
    parent.verified_skills.clear();
    parent.recent_verifications.clear();
    TreeAccess::refresh_coverage(parent);
    const int64_t activity = parent.last_activity_cycle;

    for (const auto& part : partitions) {
        const NodePath child_path = path.child(part.leaf.label);
        auto& kids = access.edit(path).children;
        kids.erase(std::remove(kids.begin(), kids.end(), child_path), kids.end());
        kids.push_back(child_path);
        TreeNode child;
        child.path = child_path;
        child.kind = NodeKind::leaf;
        child.linked_skills = part.skills;
        for (const auto& s : part.skills)
            if (verified.count(s)) child.verified_skills.insert(s);
        for (const auto& v : history)
            if (part.skills.count(v.skill_id)) push_verification(child, v);
        child.last_activity_cycle = activity;
        TreeAccess::refresh_coverage(child);
        access.create(std::move(child));
    }
    return access.tree;
}

// ---- node state edits ---------------------------------------------------------

namespace {

TreeNode& edit_live(TreeAccess& access, const NodePath& path) {
    const TreeNode& n = require(access.tree, path, Errc::unknown_node);
    if (!is_live(n.status)) throw Error(Errc::invalid_operand, "'" + path.str() + "' is not active");
    return access.edit(path);
}

}  // namespace

DomainTree link_resource(const DomainTree& tree, const NodePath& path, const std::string& resource_id) {
    TreeAccess access(tree);
    edit_live(access, path).linked_resources.insert(resource_id);
    return access.tree;
}

DomainTree link_skill(const DomainTree& tree, const NodePath& leaf, const std::string& skill_id, bool verified) {
    TreeAccess access(tree);
    TreeNode& n = edit_live(access, leaf);
    if (n.kind != NodeKind::leaf) throw Error(Errc::not_a_leaf, "skills link only to leaves: '" + leaf.str() + "'");
    n.linked_skills.insert(skill_id);
    if (verified) n.verified_skills.insert(skill_id);
    else n.verified_skills.erase(skill_id);
    TreeAccess::refresh_coverage(n);
    return access.tree;
}

DomainTree unlink_skill(const DomainTree& tree, const NodePath& leaf, const std::string& skill_id) {
    TreeAccess access(tree);
    TreeNode& n = access.edit(leaf);
    n.linked_skills.erase(skill_id);
    n.verified_skills.erase(skill_id);
    TreeAccess::refresh_coverage(n);
    return access.tree;
}

DomainTree record_node_verification(const DomainTree& tree, const NodePath& path, const NodeVerification& v) {
    TreeAccess access(tree);
    TreeNode& n = edit_live(access, path);
    push_verification(n, v);
    n.last_activity_cycle = std::max(n.last_activity_cycle, v.cycle);
    TreeAccess::refresh_coverage(n);
    return access.tree;
}

DomainTree touch_node(const DomainTree& tree, const NodePath& path, int64_t cycle) {
    TreeAccess access(tree);
    TreeNode& n = edit_live(access, path);
    n.last_activity_cycle = std::max(n.last_activity_cycle, cycle);
    return access.tree;
}

DomainTree set_node_review(const DomainTree& tree, const NodePath& path, bool review, std::string_view reason) {
    TreeAccess access(tree);
    TreeNode& n = edit_live(access, path);
    n.status = review ? NodeStatus::review : NodeStatus::active;
    n.status_reason = std::string(reason);
    return access.tree;
}

DomainTree set_deprioritized(const DomainTree& tree, const NodePath& path, bool value) {
    TreeAccess access(tree);
    edit_live(access, path).deprioritized = value;
    return access.tree;
}

// ---- prioritization -----------------------------------------------------------

BranchPriority score_leaf(const TreeNode& node, const RegistryView& view, const PriorityWeights& w) {
    BranchPriority p{node.path, 0.0, {}};
    if (node.status == NodeStatus::review) return p;

    if (!node.linked_resources.empty() && node.verified_skills.empty()) {
        p.score += w.resources_no_skills;
        p.reasons.push_back(PriorityReason::resources_no_skills);
    }
    int failures = 0;
    for (const auto& v : node.recent_verifications) {
        if (v.outcome != Outcome::pass && v.cycle > view.current_cycle - w.failure_window) ++failures;
    }
    if (failures > 0) {
        p.score += w.per_failure * std::min(failures, w.failure_cap);
        p.reasons.push_back(PriorityReason::repeated_failures);
    }
    if (!node.linked_skills.empty() &&
        std::all_of(node.linked_skills.begin(), node.linked_skills.end(),
                    [&](const std::string& s) { return view.starter_skills.count(s) > 0; })) {
        p.score += w.starter_only;
        p.reasons.push_back(PriorityReason::starter_only);
    }
    if (view.current_cycle - node.last_activity_cycle >= w.stale_after) {
        p.score += w.stale;
        p.reasons.push_back(PriorityReason::stale);
    }
    if (node.deprioritized) p.score *= w.deprioritized_factor;
    return p;
}

std::vector<BranchPriority> prioritize_branches(const DomainTree& tree, const RegistryView& view, size_t k,
                                                const std::optional<NodePath>& within, const PriorityWeights& w) {
    if (k == 0) throw Error(Errc::invalid_argument, "k must be at least 1");
    std::vector<BranchPriority> scored;
    for (const auto& path : tree.live_leaves()) {
        if (within && *within != path && !within->is_ancestor_of(path)) continue;
        scored.push_back(score_leaf(tree.at(path), view, w));
    }
    std::stable_sort(scored.begin(), scored.end(), [](const BranchPriority& x, const BranchPriority& y) {
        if (x.score != y.score) return x.score > y.score;
        return x.path < y.path;
    });
    if (scored.size() > k) scored.resize(k);
    return scored;
}

}  // namespace skillforge

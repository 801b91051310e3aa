#include "skillforge/registry.hpp"

#include <sys/file.h>
#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <regex>
#include <thread>

namespace skillforge {

using nlohmann::json;

// ---- record serialization ---------------------------------------------------

json to_json(const SkillEntry& e) {
    return {
        {"id", e.id},
        {"name", e.name},
        {"leaf_path", e.leaf_path.str()},
        {"status", kSkillStatusNames.name(e.status)},
        {"package_path", e.package_path},
        {"smoke_target", e.smoke_target ? json(*e.smoke_target) : json(nullptr)},
        {"provenance", e.provenance},
        {"created_cycle", e.created_cycle},
        {"updated_cycle", e.updated_cycle},
        {"confidence", kConfidenceNames.name(e.confidence)},
    };
}

SkillEntry skill_from_json(const json& j) {
    SkillEntry e;
    e.id = j.at("id").get<std::string>();
    e.name = j.at("name").get<std::string>();
    e.leaf_path = NodePath::parse(j.at("leaf_path").get<std::string>());
    e.status = kSkillStatusNames.parse(j.at("status").get<std::string>(), "skill status");
    e.package_path = j.at("package_path").get<std::string>();
    if (!j.at("smoke_target").is_null()) e.smoke_target = j.at("smoke_target").get<std::string>();
    e.provenance = j.at("provenance").get<std::vector<std::string>>();
    e.created_cycle = j.at("created_cycle").get<int64_t>();
    e.updated_cycle = j.at("updated_cycle").get<int64_t>();
    e.confidence = kConfidenceNames.parse(j.at("confidence").get<std::string>(), "confidence");
    return e;
}

json to_json(const ResourceEntry& e) {
    std::vector<std::string> leaves;
    for (const auto& l : e.leaf_paths) leaves.push_back(l.str());
    return {
        {"id", e.id},
        {"kind", kResourceKindNames.name(e.kind)},
        {"locator", e.locator},
        {"leaf_paths", leaves},
        {"retrieved_cycle", e.retrieved_cycle},
        {"authority_rank", e.authority_rank},
    };
}

ResourceEntry resource_from_json(const json& j) {
    ResourceEntry e;
    e.id = j.at("id").get<std::string>();
    e.kind = kResourceKindNames.parse(j.at("kind").get<std::string>(), "resource kind");
    e.locator = j.at("locator").get<std::string>();
    for (const auto& l : j.at("leaf_paths")) e.leaf_paths.insert(NodePath::parse(l.get<std::string>()));
    e.retrieved_cycle = j.at("retrieved_cycle").get<int64_t>();
    e.authority_rank = j.at("authority_rank").get<int>();
    return e;
}

json to_json(const VerificationRecord& r) {
    return {
        {"skill_id", r.skill_id},
        {"layer", kLayerNames.name(r.layer)},
        {"outcome", kOutcomeNames.name(r.outcome)},
        {"attempt", r.attempt},
        {"report_locator", r.report_locator},
        {"cycle", r.cycle},
    };
}

VerificationRecord verification_from_json(const json& j) {
    VerificationRecord r;
    r.skill_id = j.at("skill_id").get<std::string>();
    r.layer = kLayerNames.parse(j.at("layer").get<std::string>(), "layer");
    r.outcome = kOutcomeNames.parse(j.at("outcome").get<std::string>(), "outcome");
    r.attempt = j.at("attempt").get<int>();
    r.report_locator = j.at("report_locator").get<std::string>();
    r.cycle = j.at("cycle").get<int64_t>();
    return r;
}

json to_json(const AdjudicationRecord& r) {
    return {
        {"skill_id", r.skill_id},
        {"decision", r.decision},
        {"rationale", r.rationale},
        {"merge_target", r.merge_target ? json(*r.merge_target) : json(nullptr)},
        {"matches", r.matches},
        {"cycle", r.cycle},
    };
}

AdjudicationRecord adjudication_from_json(const json& j) {
    AdjudicationRecord r;
    r.skill_id = j.at("skill_id").get<std::string>();
    r.decision = j.at("decision").get<std::string>();
    r.rationale = j.at("rationale").get<std::string>();
    if (!j.at("merge_target").is_null()) r.merge_target = j.at("merge_target").get<std::string>();
    r.matches = j.at("matches").get<std::vector<std::string>>();
    r.cycle = j.at("cycle").get<int64_t>();
    return r;
}

namespace {

json followup_to_json(const FollowupRecord& r) {
    return {{"leaf_path", r.leaf_path.str()}, {"field", r.field}, {"item", r.item}, {"cycle", r.cycle}};
}

FollowupRecord followup_from_json(const json& j) {
    return {NodePath::parse(j.at("leaf_path").get<std::string>()), j.at("field").get<std::string>(),
            j.at("item").get<std::string>(), j.at("cycle").get<int64_t>()};
}

bool valid_slug(const std::string& id) { return !id.empty() && slugify(id) == id; }

}  // namespace

bool transition_allowed(SkillStatus from, SkillStatus to) {
    using S = SkillStatus;
    switch (from) {
        case S::untested: return to == S::repaired || to == S::verified || to == S::removed;
        case S::repaired: return to == S::verified || to == S::removed;
        case S::verified: return to == S::review || to == S::deprecated || to == S::removed;
        case S::review: return to == S::verified || to == S::deprecated || to == S::removed;
        case S::deprecated:
        case S::removed: return false;
    }
    return false;
}

std::string resource_id_for(std::string_view locator) { return "res-" + sha256_hex(locator).substr(0, 12); }

nlohmann::json LibraryStats::to_json() const {
    return {
        {"skill_count", skill_count},
        {"verified_count", verified_count},
        {"domain_count", domain_count},
        {"subdomain_count", subdomain_count},
        {"resource_count", resource_count},
        {"adjudicated_count", adjudicated_count},
        {"novel_count", novel_count},
        {"novel_fraction", novel_fraction},
        {"novel_percent", novel_percent()},
    };
}

std::string LibraryStats::novel_percent() const {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f%%", novel_fraction * 100.0);
    return buf;
}

// ---- Registry -----------------------------------------------------------------

Registry::Registry(fs::path root, RegistryOptions options) : root_(std::move(root)), options_(options) {}

Registry::Registry(Registry&& other) noexcept { *this = std::move(other); }

Registry& Registry::operator=(Registry&& other) noexcept {
    if (this == &other) return *this;
    if (lock_fd_ >= 0) ::close(lock_fd_);
    root_ = std::move(other.root_);
    options_ = other.options_;
    lock_fd_ = std::exchange(other.lock_fd_, -1);
    skills_ = std::move(other.skills_);
    history_ = std::move(other.history_);
    resources_ = std::move(other.resources_);
    locator_index_ = std::move(other.locator_index_);
    verifications_ = std::move(other.verifications_);
    adjudications_ = std::move(other.adjudications_);
    followups_ = std::move(other.followups_);
    line_counts_ = std::move(other.line_counts_);
    return *this;
}

Registry::~Registry() {
    if (lock_fd_ >= 0) ::close(lock_fd_);  // releases the flock
}

Registry Registry::open(const fs::path& root, RegistryOptions options) {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) throw Error(Errc::io_error, "cannot create registry root " + root.string() + ": " + ec.message());
    Registry reg(root, options);
    if (options.writable) {
        const fs::path lock = root / kLockFile;
        int fd = ::open(lock.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (fd < 0) throw Error(Errc::io_error, "cannot open " + lock.string());
        const auto deadline = std::chrono::steady_clock::now() + options.lock_timeout;
        while (::flock(fd, LOCK_EX | LOCK_NB) != 0) {
            if (options.lock == LockPolicy::fail_fast || std::chrono::steady_clock::now() >= deadline) {
                ::close(fd);
                throw Error(Errc::lock_held, "another writer holds " + lock.string());
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(10));
        }
        reg.lock_fd_ = fd;
    }
    reg.load();
    return reg;
}

void Registry::reload() {
    skills_.clear();
    history_.clear();
    resources_.clear();
    locator_index_.clear();
    verifications_.clear();
    adjudications_.clear();
    followups_.clear();
    line_counts_.clear();
    load();
}

namespace {

template <typename Fn>
void for_each_record(const fs::path& file, const char* name, Fn&& fn, size_t& lines_out) {
    lines_out = 0;
    std::error_code ec;
    if (!fs::exists(file, ec)) return;
    const std::string content = read_file(file);
    size_t pos = 0;
    size_t line_no = 0;
    while (pos < content.size()) {
        ++line_no;
        size_t end = content.find('\n', pos);
        const bool truncated = end == std::string::npos;
        std::string line = content.substr(pos, truncated ? std::string::npos : end - pos);
        pos = truncated ? content.size() : end + 1;
        auto locate = [&](const std::string& why) {
            std::smatch m;
            static const std::regex id_re(R"re("(?:id|skill_id)"\s*:\s*"([^"]*)")re");
            std::string who = std::regex_search(line, m, id_re) ? " (record '" + m[1].str() + "')" : "";
            return std::string(name) + ":" + std::to_string(line_no) + who + ": " + why;
        };
        if (truncated) throw Error(Errc::corrupt_record, locate("truncated record (no terminating newline)"));
        try {
            fn(json::parse(line));
        } catch (const json::exception& e) {
            throw Error(Errc::corrupt_record, locate(e.what()));
        } catch (const Error& e) {
            throw Error(Errc::corrupt_record, locate(e.what()));
        }
    }
    lines_out = line_no;
}

}  // namespace

void Registry::load() {
    size_t n = 0;
    for_each_record(root_ / kSkillsFile, kSkillsFile, [&](const json& j) {
        SkillEntry e = skill_from_json(j);
        history_[e.id].push_back(e);
        skills_[e.id] = std::move(e);
    }, n);
    line_counts_[kSkillsFile] = n;
    for_each_record(root_ / kResourcesFile, kResourcesFile, [&](const json& j) {
        ResourceEntry e = resource_from_json(j);
        locator_index_[e.locator] = e.id;
        resources_[e.id] = std::move(e);
    }, n);
    line_counts_[kResourcesFile] = n;
    for_each_record(root_ / kVerificationsFile, kVerificationsFile,
                    [&](const json& j) { verifications_.push_back(verification_from_json(j)); }, n);
    line_counts_[kVerificationsFile] = n;
    for_each_record(root_ / kAdjudicationsFile, kAdjudicationsFile,
                    [&](const json& j) { adjudications_.push_back(adjudication_from_json(j)); }, n);
    line_counts_[kAdjudicationsFile] = n;
    for_each_record(root_ / kFollowupsFile, kFollowupsFile,
                    [&](const json& j) { followups_.push_back(followup_from_json(j)); }, n);
    line_counts_[kFollowupsFile] = n;
}

void Registry::require_writable() const {
    if (lock_fd_ < 0) throw Error(Errc::lock_held, "registry opened read-only: " + root_.string());
}

size_t Registry::append(const char* file, const json& record) {
    require_writable();
    append_file(root_ / file, record.dump() + "\n", options_.sync);
    return ++line_counts_[file];
}

Receipt Registry::upsert_skill(const SkillEntry& entry) {
    require_writable();
    if (!valid_slug(entry.id)) throw Error(Errc::invalid_argument, "skill id must be a lowercase slug: '" + entry.id + "'");
    if (entry.name.empty()) throw Error(Errc::invalid_argument, "skill '" + entry.id + "' has no name");
    if (entry.leaf_path.empty()) throw Error(Errc::invalid_argument, "skill '" + entry.id + "' has no leaf path");
    if (entry.provenance.empty())
        throw Error(Errc::invalid_argument, "skill '" + entry.id + "' has no provenance");
    Receipt receipt{entry.id, 0, false, false};
    auto it = skills_.find(entry.id);
    if (it == skills_.end()) {
        if (entry.status != SkillStatus::untested)
            throw Error(Errc::invalid_status, "new skill '" + entry.id + "' must start untested, got " +
                                                  std::string(kSkillStatusNames.name(entry.status)));
        receipt.created = true;
    } else {
        if (it->second.leaf_path != entry.leaf_path)
            throw Error(Errc::id_collision, "skill id '" + entry.id + "' already bound to leaf '" +
                                                it->second.leaf_path.str() + "'");
        if (entry.status != it->second.status && !transition_allowed(it->second.status, entry.status))
            throw Error(Errc::invalid_status, "skill '" + entry.id + "' cannot move from " +
                                                  std::string(kSkillStatusNames.name(it->second.status)) + " to " +
                                                  std::string(kSkillStatusNames.name(entry.status)));
    }
    receipt.line = append(kSkillsFile, to_json(entry));
    history_[entry.id].push_back(entry);
    skills_[entry.id] = entry;
    return receipt;
}

Receipt Registry::record_resource(const ResourceEntry& resource) {
    require_writable();
    if (resource.locator.empty()) throw Error(Errc::invalid_argument, "resource locator is empty");
    ResourceEntry entry = resource;
    if (auto existing = locator_index_.find(resource.locator); existing != locator_index_.end()) {
        ResourceEntry merged = resources_.at(existing->second);
        size_t before = merged.leaf_paths.size();
        merged.leaf_paths.insert(resource.leaf_paths.begin(), resource.leaf_paths.end());
        Receipt receipt{merged.id, 0, false, true};
        if (merged.leaf_paths.size() != before) {
            receipt.line = append(kResourcesFile, to_json(merged));
            resources_[merged.id] = merged;
        }
        return receipt;
    }
    if (entry.id.empty()) entry.id = resource_id_for(entry.locator);
    if (resources_.count(entry.id))
        throw Error(Errc::id_collision, "resource id '" + entry.id + "' already used by another locator");
    Receipt receipt{entry.id, append(kResourcesFile, to_json(entry)), true, false};
    locator_index_[entry.locator] = entry.id;
    resources_[entry.id] = std::move(entry);
    return receipt;
}

SkillEntry Registry::commit_skill_change(SkillEntry updated) {
    append(kSkillsFile, to_json(updated));
    history_[updated.id].push_back(updated);
    skills_[updated.id] = updated;
    return updated;
}

SkillEntry Registry::set_verification(const std::string& skill_id, const VerificationRecord& record,
                                      std::optional<SkillStatus> target) {
    require_writable();
    const SkillEntry& current = skill(skill_id);
    if (record.skill_id != skill_id)
        throw Error(Errc::invalid_argument, "record names '" + record.skill_id + "', expected '" + skill_id + "'");
    const int expected_attempt = next_attempt(skill_id, record.layer);
    if (record.attempt != expected_attempt)
        throw Error(Errc::invalid_argument, "attempt " + std::to_string(record.attempt) + " for '" + skill_id +
                                                "' layer " + std::string(kLayerNames.name(record.layer)) +
                                                ", expected " + std::to_string(expected_attempt));
    if (!target && record.outcome == Outcome::pass &&
        (current.status == SkillStatus::untested || current.status == SkillStatus::repaired) &&
        (record.layer == Layer::execution || (record.layer == Layer::synthetic && !current.smoke_target))) {
        target = SkillStatus::verified;
    }
    if (target && *target != current.status && !transition_allowed(current.status, *target)) {
        throw Error(Errc::illegal_transition, "skill '" + skill_id + "': " +
                                                  std::string(kSkillStatusNames.name(current.status)) + " -> " +
                                                  std::string(kSkillStatusNames.name(*target)));
    }
    append(kVerificationsFile, to_json(record));
    verifications_.push_back(record);
    if (!target || *target == current.status) return current;
    SkillEntry updated = current;
    updated.status = *target;
    updated.updated_cycle = record.cycle;
    return commit_skill_change(std::move(updated));
}

SkillEntry Registry::transition(const std::string& skill_id, SkillStatus target, int64_t cycle) {
    require_writable();
    const SkillEntry& current = skill(skill_id);
    if (current.status == target) return current;
    if (!transition_allowed(current.status, target)) {
        throw Error(Errc::illegal_transition, "skill '" + skill_id + "': " +
                                                  std::string(kSkillStatusNames.name(current.status)) + " -> " +
                                                  std::string(kSkillStatusNames.name(target)));
    }
    SkillEntry updated = current;
    updated.status = target;
    updated.updated_cycle = cycle;
    return commit_skill_change(std::move(updated));
}

SkillEntry Registry::relocate_skill(const std::string& skill_id, const NodePath& leaf, int64_t cycle) {
    require_writable();
    SkillEntry updated = skill(skill_id);
    if (updated.leaf_path == leaf) return updated;
    updated.leaf_path = leaf;
    updated.updated_cycle = cycle;
    return commit_skill_change(std::move(updated));
}

SkillEntry Registry::set_provenance(const std::string& skill_id, std::vector<std::string> provenance, int64_t cycle) {
    require_writable();
    SkillEntry updated = skill(skill_id);
    if (updated.provenance == provenance) return updated;
    if (provenance.empty()) throw Error(Errc::invalid_argument, "provenance cannot become empty");
    updated.provenance = std::move(provenance);
    updated.updated_cycle = cycle;
    return commit_skill_change(std::move(updated));
}

SkillEntry Registry::set_confidence(const std::string& skill_id, Confidence confidence, int64_t cycle) {
    require_writable();
    SkillEntry updated = skill(skill_id);
    if (updated.confidence == confidence) return updated;
    updated.confidence = confidence;
    updated.updated_cycle = cycle;
    return commit_skill_change(std::move(updated));
}

void Registry::record_adjudication(const AdjudicationRecord& record) {
    skill(record.skill_id);
    append(kAdjudicationsFile, to_json(record));
    adjudications_.push_back(record);
}

void Registry::record_followup(const FollowupRecord& record) {
    append(kFollowupsFile, followup_to_json(record));
    followups_.push_back(record);
}

const SkillEntry* Registry::find_skill(const std::string& id) const {
    auto it = skills_.find(id);
    return it == skills_.end() ? nullptr : &it->second;
}

const SkillEntry& Registry::skill(const std::string& id) const {
    const SkillEntry* e = find_skill(id);
    if (!e) throw Error(Errc::unknown_skill, "no skill '" + id + "'");
    return *e;
}

const std::vector<SkillEntry>& Registry::skill_history(const std::string& id) const {
    auto it = history_.find(id);
    if (it == history_.end()) throw Error(Errc::unknown_skill, "no skill '" + id + "'");
    return it->second;
}

const ResourceEntry* Registry::find_resource_by_locator(const std::string& locator) const {
    auto it = locator_index_.find(locator);
    return it == locator_index_.end() ? nullptr : &resources_.at(it->second);
}

std::vector<VerificationRecord> Registry::verifications_for(const std::string& skill_id, Layer layer) const {
    std::vector<VerificationRecord> out;
    for (const auto& r : verifications_)
        if (r.skill_id == skill_id && r.layer == layer) out.push_back(r);
    return out;
}

int Registry::next_attempt(const std::string& skill_id, Layer layer) const {
    int n = 0;
    for (const auto& r : verifications_)
        if (r.skill_id == skill_id && r.layer == layer) ++n;
    return n + 1;
}

std::map<std::string, AdjudicationRecord> Registry::latest_adjudications() const {
    std::map<std::string, AdjudicationRecord> out;
    for (const auto& r : adjudications_) out[r.skill_id] = r;
    return out;
}

std::string Registry::allocate_skill_id(const NodePath& leaf, std::string_view name) const {
    std::string base = slugify(leaf.empty() ? std::string() : leaf.leaf_label());
    std::string name_slug = slugify(name);
    if (!name_slug.empty()) base = base.empty() ? name_slug : base + "-" + name_slug;
    if (base.empty()) base = "skill";
    std::string id = base;
    for (int n = 2; skills_.count(id); ++n) id = base + "-" + std::to_string(n);
    return id;
}

RegistryView Registry::view(int64_t current_cycle) const {
    RegistryView v{current_cycle, {}};
    for (const auto& [id, e] : skills_)
        if (e.confidence == Confidence::starter) v.starter_skills.insert(id);
    return v;
}

void Registry::write_tree_snapshot(const DomainTree& tree) {
    require_writable();
    write_file_atomic(root_ / kTreeSnapshotFile, tree.snapshot_text(), options_.sync);
}

std::optional<DomainTree> Registry::read_tree_snapshot() const {
    const fs::path path = root_ / kTreeSnapshotFile;
    std::error_code ec;
    if (!fs::exists(path, ec)) return std::nullopt;
    try {
        return DomainTree::from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        throw Error(Errc::corrupt_record, std::string(kTreeSnapshotFile) + ": " + e.what());
    }
}

void Registry::compact() {
    require_writable();
    json skills = json::array();
    std::map<std::string, size_t> by_status;
    for (const auto& [id, e] : skills_) {
        skills.push_back(to_json(e));
        by_status[std::string(kSkillStatusNames.name(e.status))]++;
    }
    json resources = json::array();
    for (const auto& [id, e] : resources_) resources.push_back(to_json(e));
    json adjudications = json::object();
    for (const auto& [id, r] : latest_adjudications()) adjudications[id] = to_json(r);
    write_file_atomic(root_ / "index" / "skills.json", skills.dump(1) + "\n", options_.sync);
    write_file_atomic(root_ / "index" / "resources.json", resources.dump(1) + "\n", options_.sync);
    write_file_atomic(root_ / "index" / "adjudications.json", adjudications.dump(1) + "\n", options_.sync);
    json summary = {{"skills_by_status", by_status},
                    {"skill_records", line_counts_[kSkillsFile]},
                    {"verification_records", line_counts_[kVerificationsFile]}};
    write_file_atomic(root_ / "index" / "summary.json", summary.dump(1) + "\n", options_.sync);
}

std::string Registry::digest() const {
    return digest_directory(root_, [](const fs::path& rel) {
        const std::string s = rel.generic_string();
        return s == kLockFile || s.find(".tmp.") != std::string::npos;
    });
}

Registry::Mark Registry::mark() const {
    Mark m;
    for (const char* f : {kSkillsFile, kResourcesFile, kVerificationsFile, kAdjudicationsFile, kFollowupsFile}) {
        std::error_code ec;
        auto size = fs::file_size(root_ / f, ec);
        m.sizes[f] = ec ? 0 : size;
    }
    return m;
}

void Registry::rollback(const Mark& mark) {
    require_writable();
    for (const auto& [file, size] : mark.sizes) {
        const fs::path path = root_ / file;
        std::error_code ec;
        if (!fs::exists(path, ec)) continue;
        if (size == 0) fs::remove(path);
        else fs::resize_file(path, size);
    }
    reload();
}

// ---- stats and integrity ----------------------------------------------------------

namespace {

// A retained skill may point at a leaf that refresh has not inserted yet, as
// long as the leaf's parent is a live internal node.
bool leaf_resolves(const DomainTree& tree, const NodePath& leaf, std::string* problem) {
    if (const TreeNode* node = tree.find(leaf)) {
        if (node->status == NodeStatus::pruned) {
            *problem = "points at pruned leaf '" + leaf.str() + "' without deprecation";
            return false;
        }
        if (node->status == NodeStatus::merged) {
            *problem = "points at merged leaf '" + leaf.str() + "'";
            return false;
        }
        if (node->kind != NodeKind::leaf) {
            *problem = "points at non-leaf '" + leaf.str() + "'";
            return false;
        }
        return true;
    }
    const TreeNode* parent = tree.find(leaf.parent());
    if (parent && parent->kind != NodeKind::leaf && is_live(parent->status)) return true;
    *problem = "points at missing leaf '" + leaf.str() + "'";
    return false;
}

}  // namespace

LibraryStats snapshot_stats(const Registry& registry, const DomainTree& tree) {
    LibraryStats s;
    for (const auto& [id, e] : registry.skills()) {
        if (!is_retained(e.status)) continue;
        std::string problem;
        if (!leaf_resolves(tree, e.leaf_path, &problem))
            throw Error(Errc::inconsistency, "skill '" + id + "' " + problem);
        ++s.skill_count;
        if (e.status == SkillStatus::verified) ++s.verified_count;
    }
    s.domain_count = tree.count(NodeKind::domain);
    s.subdomain_count = tree.count(NodeKind::subdomain);
    s.resource_count = registry.resources().size();
    for (const auto& [id, r] : registry.latest_adjudications()) {
        ++s.adjudicated_count;
        if (r.decision == "novel") ++s.novel_count;
    }
    s.novel_fraction =
        s.adjudicated_count ? static_cast<double>(s.novel_count) / static_cast<double>(s.adjudicated_count) : 0.0;
    return s;
}

std::vector<std::string> integrity_check(const Registry& registry, const DomainTree& tree) {
    std::vector<std::string> v;
    for (const auto& msg : tree.check_invariants()) v.push_back("tree: " + msg);

    for (const auto& [path, node] : tree.nodes()) {
        for (const auto& id : node->linked_skills) {
            const SkillEntry* e = registry.find_skill(id);
            if (!e) v.push_back("node '" + path.str() + "' links unknown skill '" + id + "'");
            else if (e->leaf_path != path)
                v.push_back("node '" + path.str() + "' links skill '" + id + "' registered under '" +
                            e->leaf_path.str() + "'");
        }
        for (const auto& id : node->linked_resources)
            if (!registry.resources().count(id))
                v.push_back("node '" + path.str() + "' links unknown resource '" + id + "'");
    }

    std::map<std::pair<std::string, Layer>, std::vector<int>> attempts;
    for (const auto& r : registry.verifications()) {
        if (!registry.find_skill(r.skill_id)) v.push_back("verification for unknown skill '" + r.skill_id + "'");
        attempts[{r.skill_id, r.layer}].push_back(r.attempt);
    }
    for (const auto& [key, list] : attempts) {
        for (size_t i = 0; i < list.size(); ++i) {
            if (list[i] != static_cast<int>(i + 1)) {
                v.push_back("skill '" + key.first + "' " + std::string(kLayerNames.name(key.second)) +
                            " attempts are not consecutive");
                break;
            }
        }
    }

    for (const auto& [id, e] : registry.skills()) {
        const auto& hist = registry.skill_history(id);
        if (hist.front().status != SkillStatus::untested)
            v.push_back("skill '" + id + "' history does not start untested");
        for (size_t i = 1; i < hist.size(); ++i) {
            if (hist[i].status != hist[i - 1].status && !transition_allowed(hist[i - 1].status, hist[i].status)) {
                v.push_back("skill '" + id + "' history has illegal transition " +
                            std::string(kSkillStatusNames.name(hist[i - 1].status)) + " -> " +
                            std::string(kSkillStatusNames.name(hist[i].status)));
            }
        }
        if (hist.back() != e) v.push_back("skill '" + id + "' history does not replay to current entry");
        for (const auto& res : e.provenance)
            if (!registry.resources().count(res)) v.push_back("skill '" + id + "' cites unknown resource '" + res + "'");
        if (is_retained(e.status)) {
            std::string problem;
            if (!leaf_resolves(tree, e.leaf_path, &problem)) v.push_back("skill '" + id + "' " + problem);
        }
        if (e.status == SkillStatus::verified) {
            bool evidence = false;
            for (const auto& r : registry.verifications()) {
                if (r.skill_id != id || r.outcome != Outcome::pass) continue;
                if (r.layer == Layer::execution || (r.layer == Layer::synthetic && !e.smoke_target)) evidence = true;
            }
            if (!evidence) v.push_back("verified skill '" + id + "' has no passing layer-1 record");
        }
    }
    return v;
}

// ---- write-back helpers ------------------------------------------------------------

DomainTree prune_with_deprecation(const DomainTree& tree, Registry& registry, const NodePath& leaf,
                                  std::string_view reason, int64_t cycle) {
    const TreeNode& node = tree.at(leaf);
    if (node.kind != NodeKind::leaf) throw Error(Errc::not_a_leaf, "'" + leaf.str() + "' is not a leaf");
    for (const auto& id : node.linked_skills) {
        const SkillEntry& e = registry.skill(id);
        if (e.status == SkillStatus::verified || e.status == SkillStatus::review)
            registry.transition(id, SkillStatus::deprecated, cycle);
        else if (e.status == SkillStatus::untested || e.status == SkillStatus::repaired)
            registry.transition(id, SkillStatus::removed, cycle);
    }
    return prune_leaf(tree, leaf, reason);
}

DomainTree merge_with_relocation(const DomainTree& tree, Registry& registry, const NodePath& a, const NodePath& b,
                                 const NodePath& survivor, int64_t cycle) {
    const NodePath absorbed = survivor == a ? b : a;
    const TreeNode* from = tree.find(absorbed);
    const std::set<std::string> moving = from ? from->linked_skills : std::set<std::string>{};
    DomainTree next = merge_leaves(tree, a, b, survivor);
    for (const auto& id : moving) registry.relocate_skill(id, survivor, cycle);
    return next;
}

DomainTree split_with_relocation(const DomainTree& tree, Registry& registry, const NodePath& path,
                                 const std::vector<SplitPartition>& partitions, int64_t cycle) {
    DomainTree next = split_branch(tree, path, partitions);
    for (const auto& part : partitions)
        for (const auto& id : part.skills) registry.relocate_skill(id, path.child(part.leaf.label), cycle);
    return next;
}

}  // namespace skillforge

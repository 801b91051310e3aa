#pragma once

#include "skillforge/domain_tree.hpp"
#include "skillforge/pipeline.hpp"
#include "skillforge/registry.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace skillforge {

struct SkillCard {
    std::string id;
    std::string name;
    NodePath leaf;
    SkillStatus status = SkillStatus::untested;
    std::vector<std::string> provenance_locators;
    std::string compute_profile;  // free text from the contract's environment assumptions

    nlohmann::json to_json() const;
};

/// Files written by export_site, relative to the bundle directory.
inline constexpr const char* kSiteFiles[] = {"index.html", "resources.json", "skills.json", "stats.json",
                                             "taxonomy.json"};

struct SiteBundle {
    fs::path dest;
    LibraryStats stats;
    nlohmann::json taxonomy;
    std::vector<SkillCard> skills_index;
    nlohmann::json resources_index;

    /// sha256 over the bundle files in name order.
    std::string digest() const;
};

/// Writes a static, self-contained bundle to `dest` (created or replaced).
/// Skill cards cover retained skills; each card's compute profile comes from
/// the package under `repo_root`. Throws integrity_failure when
/// integrity_check reports problems, invalid_argument when `dest` holds
/// files that are not part of a bundle.
SiteBundle export_site(const fs::path& repo_root, const Registry& registry, const DomainTree& tree,
                       const fs::path& dest);

struct StageTiming {
    StageKind stage = StageKind::tree_check;
    size_t samples = 0;
    std::optional<double> mean_seconds;  // empty when no sample exists
};

struct TimingReport {
    size_t cycles = 0;
    std::vector<StageTiming> stages;  // the five cycle stages in order

    nlohmann::json to_json() const;
    std::string table() const;
};

/// Mean duration of each cycle stage over the reports. Stages an aborted
/// cycle never reached contribute no sample. Throws invalid_argument on an
/// empty input.
TimingReport stage_timing_report(const std::vector<CycleReport>& reports);

/// Every `reports/cycle-*.json` under the repository, in file-name order.
std::vector<CycleReport> load_cycle_reports(const fs::path& repo_root);

}  // namespace skillforge

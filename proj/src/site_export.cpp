#include "skillforge/site_export.hpp"

#include "skillforge/error.hpp"
#include "skillforge/skill_package.hpp"
#include "skillforge/util.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace skillforge {

using json = nlohmann::json;

namespace {

std::string html_escape(std::string_view text) {
    std::string out;
    out.reserve(text.size());
    for (char c : text) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            case '\'': out += "&#39;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string compute_profile(const fs::path& repo_root, const SkillEntry& entry) {
    try {
        const SkillPackage package = load_package(repo_root / entry.package_path);
        if (package.contract.environment_assumptions.empty()) return "not stated";
        return join(package.contract.environment_assumptions, "; ");
    } catch (const Error&) {
        return "package unavailable";
    }
}

json taxonomy_json(const DomainTree& tree) {
    json nodes = json::array();
    for (const auto& [path, ptr] : tree.nodes()) {
        const TreeNode& node = *ptr;
        json children = json::array();
        for (const auto& c : node.children) children.push_back(c.str());
        json doc = {{"path", path.str()},
                    {"kind", kNodeKindNames.name(node.kind)},
                    {"status", kNodeStatusNames.name(node.status)},
                    {"coverage", kCoverageNames.name(node.coverage_flag)},
                    {"skills", node.linked_skills.size()},
                    {"verified_skills", node.verified_skills.size()},
                    {"resources", node.linked_resources.size()},
                    {"children", children}};
        if (node.merged_into) doc["merged_into"] = node.merged_into->str();
        nodes.push_back(std::move(doc));
    }
    return {{"root", tree.root().str()}, {"nodes", nodes}};
}

json stats_json(const LibraryStats& stats) {
    json doc = stats.to_json();
    doc["novel_percent"] = stats.novel_percent();
    doc["panel"] = json::array({{{"label", "Skills"}, {"value", stats.skill_count}},
                                {{"label", "Domains"}, {"value", stats.domain_count}},
                                {{"label", "Subdomains"}, {"value", stats.subdomain_count}},
                                {{"label", "Resources"}, {"value", stats.resource_count}}});
    return doc;
}

std::string render_index(const LibraryStats& stats, const std::vector<SkillCard>& cards, const DomainTree& tree) {
    std::ostringstream out;
    out << "<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n<meta charset=\"utf-8\">\n"
        << "<title>Skill library</title>\n"
        << "<style>body{font-family:sans-serif;margin:2em}table{border-collapse:collapse}"
           "td,th{border:1px solid #ccc;padding:4px 8px;text-align:left}"
           ".panel{display:flex;gap:2em}.panel div{font-size:1.4em}</style>\n"
        << "</head>\n<body>\n<h1>Skill library</h1>\n";
    out << "<section class=\"panel\" id=\"stats\">\n";
    for (const auto& item : stats_json(stats).at("panel"))
        out << "<div><strong>" << item.at("value").get<size_t>() << "</strong> "
            << html_escape(item.at("label").get<std::string>()) << "</div>\n";
    out << "</section>\n<p>" << stats.skill_count << " skills spanning " << stats.domain_count << " domains and "
        << stats.subdomain_count << " subdomains, mined from " << stats.resource_count << " resources. "
        << html_escape(stats.novel_percent()) << " of adjudicated skills are novel.</p>\n";

    out << "<h2>Taxonomy</h2>\n<ul id=\"taxonomy\">\n";
    for (const auto& [path, ptr] : tree.nodes()) {
        const TreeNode& node = *ptr;
        if (node.kind == NodeKind::root) continue;
        out << "<li style=\"margin-left:" << (path.depth() - 1) * 1.5 << "em\">" << html_escape(node.path.leaf_label())
            << " <small>(" << kCoverageNames.name(node.coverage_flag) << ", " << node.linked_skills.size()
            << " skills";
        if (node.status != NodeStatus::active) out << ", " << kNodeStatusNames.name(node.status);
        out << ")</small></li>\n";
    }
    out << "</ul>\n";

    out << "<h2>Skills</h2>\n<table id=\"skills\">\n"
        << "<tr><th>Skill</th><th>Leaf</th><th>Status</th><th>Compute profile</th><th>Mined from</th></tr>\n";
    for (const auto& c : cards) {
        out << "<tr><td>" << html_escape(c.name) << " <small>" << html_escape(c.id) << "</small></td><td>"
            << html_escape(c.leaf.str()) << "</td><td>" << kSkillStatusNames.name(c.status) << "</td><td>"
            << html_escape(c.compute_profile) << "</td><td>";
        for (size_t i = 0; i < c.provenance_locators.size(); ++i)
            out << (i ? "<br>" : "") << "<code>" << html_escape(c.provenance_locators[i]) << "</code>";
        out << "</td></tr>\n";
    }
    out << "</table>\n</body>\n</html>\n";
    return out.str();
}

std::string format_seconds(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.3f", v);
    return buf;
}

}  // namespace

json SkillCard::to_json() const {
    return {{"id", id},
            {"name", name},
            {"leaf", leaf.str()},
            {"status", kSkillStatusNames.name(status)},
            {"provenance", provenance_locators},
            {"compute_profile", compute_profile}};
}

std::string SiteBundle::digest() const {
    std::string all;
    for (const char* name : kSiteFiles) all += std::string(name) + "\n" + sha256_hex(read_file(dest / name)) + "\n";
    return sha256_hex(all);
}

SiteBundle export_site(const fs::path& repo_root, const Registry& registry, const DomainTree& tree,
                       const fs::path& dest) {
    const auto problems = integrity_check(registry, tree);
    if (!problems.empty())
        throw Error(Errc::integrity_failure, "export refused: " + join(problems, "; "));

    std::error_code ec;
    if (fs::exists(dest, ec)) {
        if (!fs::is_directory(dest)) throw Error(Errc::invalid_argument, "'" + dest.string() + "' is not a directory");
        for (const auto& entry : fs::directory_iterator(dest)) {
            const std::string name = entry.path().filename().string();
            if (std::find(std::begin(kSiteFiles), std::end(kSiteFiles), name) == std::end(kSiteFiles))
                throw Error(Errc::invalid_argument,
                            "'" + dest.string() + "' contains '" + name + "', which is not part of a site bundle");
        }
    }
    fs::create_directories(dest);

    SiteBundle bundle;
    bundle.dest = dest;
    bundle.stats = snapshot_stats(registry, tree);
    bundle.taxonomy = taxonomy_json(tree);
    for (const auto& [id, entry] : registry.skills()) {
        if (!is_retained(entry.status)) continue;
        SkillCard card{id, entry.name, entry.leaf_path, entry.status, {}, compute_profile(repo_root, entry)};
        for (const auto& rid : entry.provenance) {
            auto it = registry.resources().find(rid);
            card.provenance_locators.push_back(it == registry.resources().end() ? rid : it->second.locator);
        }
        bundle.skills_index.push_back(std::move(card));
    }
    bundle.resources_index = json::array();
    for (const auto& [id, r] : registry.resources()) {
        json leaves = json::array();
        for (const auto& l : r.leaf_paths) leaves.push_back(l.str());
        bundle.resources_index.push_back({{"id", id},
                                          {"kind", kResourceKindNames.name(r.kind)},
                                          {"locator", r.locator},
                                          {"leaves", leaves},
                                          {"authority_rank", r.authority_rank}});
    }

    json skills = json::array();
    for (const auto& c : bundle.skills_index) skills.push_back(c.to_json());
    write_file_atomic(dest / "stats.json", stats_json(bundle.stats).dump(2) + "\n", false);
    write_file_atomic(dest / "taxonomy.json", bundle.taxonomy.dump(2) + "\n", false);
    write_file_atomic(dest / "skills.json", skills.dump(2) + "\n", false);
    write_file_atomic(dest / "resources.json", bundle.resources_index.dump(2) + "\n", false);
    write_file_atomic(dest / "index.html", render_index(bundle.stats, bundle.skills_index, tree), false);
    return bundle;
}

json TimingReport::to_json() const {
    json list = json::array();
    for (const auto& s : stages) {
        json doc = {{"stage", kStageKindNames.name(s.stage)}, {"samples", s.samples}};
        doc["mean_seconds"] = s.mean_seconds ? json(*s.mean_seconds) : json(nullptr);
        list.push_back(std::move(doc));
    }
    return {{"cycles", cycles}, {"stages", list}};
}

std::string TimingReport::table() const {
    std::ostringstream out;
    char line[96];
    std::snprintf(line, sizeof(line), "%-16s %8s %14s\n", "stage", "samples", "mean seconds");
    out << line;
    for (const auto& s : stages) {
        std::snprintf(line, sizeof(line), "%-16s %8zu %14s\n", std::string(kStageKindNames.name(s.stage)).c_str(),
                      s.samples, s.mean_seconds ? format_seconds(*s.mean_seconds).c_str() : "-");
        out << line;
    }
    out << "cycles: " << cycles << "\n";
    return out.str();
}

TimingReport stage_timing_report(const std::vector<CycleReport>& reports) {
    if (reports.empty()) throw Error(Errc::invalid_argument, "timing report needs at least one cycle report");
    TimingReport report;
    report.cycles = reports.size();
    for (StageKind stage : kCycleStages) {
        std::vector<double> samples;
        for (const auto& r : reports)
            for (const auto& s : r.stages)
                if (s.stage == stage) samples.push_back(s.duration_seconds);
        StageTiming timing{stage, samples.size(), std::nullopt};
        if (!samples.empty())
            timing.mean_seconds = std::accumulate(samples.begin(), samples.end(), 0.0) / static_cast<double>(samples.size());
        report.stages.push_back(timing);
    }
    return report;
}

std::vector<CycleReport> load_cycle_reports(const fs::path& repo_root) {
    std::vector<fs::path> files;
    std::error_code ec;
    const fs::path dir = repo_root / kReportsDir;
    if (fs::is_directory(dir, ec))
        for (const auto& entry : fs::directory_iterator(dir)) {
            const std::string name = entry.path().filename().string();
            if (entry.is_regular_file() && name.rfind("cycle-", 0) == 0 && entry.path().extension() == ".json")
                files.push_back(entry.path());
        }
    std::sort(files.begin(), files.end());
    std::vector<CycleReport> out;
    for (const auto& f : files) {
        try {
            out.push_back(CycleReport::from_json(json::parse(read_file(f))));
        } catch (const json::exception& e) {
            throw Error(Errc::corrupt_record, "cycle report " + f.filename().string() + " is unreadable: " + e.what());
        }
    }
    return out;
}

}  // namespace skillforge

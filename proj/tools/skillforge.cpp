// Command-line front end. Each command opens the repository, calls one engine
// operation and prints its result as JSON (or a table for timing-report).

#include "skillforge/error.hpp"
#include "skillforge/pipeline.hpp"
#include "skillforge/site_export.hpp"
#include "skillforge/worker_coordination.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <functional>
#include <iostream>
#include <memory>
#include <optional>

using namespace skillforge;
using json = nlohmann::json;

namespace {

struct GlobalOptions {
    std::string repo = ".";
    std::string config;
    std::string provider = "mock";
    std::string script;
};

/// Everything a command needs, opened in dependency order.
struct Session {
    PipelineConfig config;
    std::unique_ptr<Provider> provider;
    std::unique_ptr<Gateway> gateway;
    std::optional<Registry> registry;
    std::unique_ptr<Pipeline> pipeline;

    Session(const GlobalOptions& g, bool writable) {
        const fs::path root(g.repo);
        if (!fs::exists(root / kRegistryDir))
            throw Error(Errc::invalid_argument, "'" + root.string() + "' is not an initialized repository");
        if (!g.config.empty()) config = load_config(g.config);
        if (g.provider == "mock") {
            if (g.script.empty()) throw Error(Errc::invalid_argument, "--provider mock needs --script <dir>");
            provider = std::make_unique<MockProvider>(g.script);
        } else {
            provider = make_live_provider_from_env();
        }
        gateway = std::make_unique<Gateway>(*provider, config.effort);
        RegistryOptions options;
        options.writable = writable;
        registry.emplace(Registry::open(root / kRegistryDir, options));
        pipeline = std::make_unique<Pipeline>(root, *registry, *gateway, config);
    }
};

json read_json_file(const fs::path& path) {
    try {
        return json::parse(read_file(path));
    } catch (const json::exception& e) {
        throw Error(Errc::invalid_argument, "'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void print(const json& doc) { std::cout << doc.dump(2) << "\n"; }

json campaign_summary(const CampaignReport& report) {
    json doc = report.to_json();
    doc["mining_phases"] = report.count(PhaseKind::mining);
    doc["evaluation_phases"] = report.count(PhaseKind::evaluation);
    return doc;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Self-evolving skill library engine"};
    app.require_subcommand(1);
    app.fallthrough();
    GlobalOptions g;
    app.add_option("--registry", g.repo, "Repository root holding registry/, skills/ and tests/")->capture_default_str();
    app.add_option("--config", g.config, "Pipeline configuration (JSON)");
    app.add_option("--provider", g.provider, "Model provider")->check(CLI::IsMember({"mock", "live"}))->capture_default_str();
    app.add_option("--script", g.script, "Directory of scripted mock responses");

    std::string command;
    std::function<void()> action;
    auto bind = [&](CLI::App* sub, std::function<void()> fn) {
        sub->callback([&command, &action, sub, fn] {
            command = sub->get_name();
            action = fn;
        });
    };

    std::string taxonomy_file;
    auto* init = app.add_subcommand("init", "Create a repository from a taxonomy outline");
    init->add_option("taxonomy", taxonomy_file, "Indented taxonomy outline")->required()->check(CLI::ExistingFile);
    bind(init, [&] {
        init_repository(g.repo, read_file(taxonomy_file));
        print({{"initialized", g.repo}});
    });

    std::string branch;
    size_t workers = 0;
    auto* cycle = app.add_subcommand("cycle", "Run one full mining cycle");
    cycle->add_option("--branch", branch, "Restrict focus to one branch");
    cycle->add_option("--workers", workers, "Run search and build as this many parallel leaf workers");
    bind(cycle, [&] {
        Session s(g, true);
        if (!branch.empty()) s.pipeline->set_branch(NodePath::parse(branch));
        ParallelLeafMiner miner(workers);
        if (workers > 0) s.pipeline->set_miner(&miner);
        print(s.pipeline->run_cycle().to_json());
    });

    auto* campaign = app.add_subcommand("campaign", "Multi-cycle campaigns");
    campaign->require_subcommand(1);
    std::string campaign_file;
    std::string campaign_id;
    std::optional<size_t> stop_after;
    auto* run = campaign->add_subcommand("run", "Start a campaign");
    run->add_option("--campaign", campaign_file, "Campaign definition (JSON)")->required()->check(CLI::ExistingFile);
    run->add_option("--stop-after", stop_after, "Stop after this many phases");
    bind(run, [&] {
        Session s(g, true);
        const CampaignConfig cfg = CampaignConfig::from_json(read_json_file(campaign_file));
        const CampaignReport report = run_campaign(*s.pipeline, cfg, {stop_after});
        print(campaign_summary(report));
        if (report.status == CampaignStatus::halted)
            throw Error(Errc::internal_invariant, "campaign halted after repeated phase failures");
    });
    auto* resume = campaign->add_subcommand("resume", "Continue a campaign from its checkpoint");
    resume->add_option("id", campaign_id, "Campaign id")->required();
    resume->add_option("--stop-after", stop_after, "Stop after this many phases");
    bind(resume, [&] {
        Session s(g, true);
        const CampaignReport report = resume_campaign(*s.pipeline, campaign_id, {stop_after});
        print(campaign_summary(report));
        if (report.status == CampaignStatus::halted)
            throw Error(Errc::internal_invariant, "campaign halted after repeated phase failures");
    });

    std::string prompt_file;
    auto* design = app.add_subcommand("design-skill", "Build a skill for a task description");
    design->add_option("--prompt", prompt_file, "File holding the task description")->required()->check(CLI::ExistingFile);
    bind(design, [&] {
        Session s(g, true);
        const DesignReport report = s.pipeline->design_skill(read_file(prompt_file));
        print(report.to_json());
        if (report.status == "failed") throw Error(Errc::internal_invariant, "no skill passed validation");
    });

    std::string skill_id;
    std::string layer = "layer1";
    auto* test = app.add_subcommand("test", "Validate one skill");
    test->add_option("skill-id", skill_id, "Skill id")->required();
    test->add_option("--layer", layer, "layer1 (execution, synthetic, system) or layer2 (benchmark)")
        ->check(CLI::IsMember({"layer1", "layer2"}))
        ->capture_default_str();
    bind(test, [&] {
        Session s(g, true);
        if (layer == "layer1") {
            std::vector<std::string> notes;
            const SkillStatus status = s.pipeline->retest_skill(skill_id, notes);
            print({{"skill_id", skill_id}, {"status", kSkillStatusNames.name(status)}, {"notes", notes}});
        } else {
            print(s.pipeline->evaluate_skills({skill_id}).to_json());
        }
    });

    auto* novelty = app.add_subcommand("novelty", "Judge one skill against the catalogs");
    novelty->add_option("skill-id", skill_id, "Skill id")->required();
    bind(novelty, [&] {
        Session s(g, false);
        std::vector<std::string> notes;
        json doc = verdict_to_json(s.pipeline->judge_novelty(skill_id, {}, notes));
        doc["notes"] = notes;
        print(doc);
    });

    auto* status = app.add_subcommand("status", "Library statistics and pipeline state");
    bind(status, [&] {
        Session s(g, false);
        json doc = snapshot_stats(*s.registry, s.pipeline->tree()).to_json();
        doc["pipeline"] = s.pipeline->state().to_json();
        doc["integrity_problems"] = integrity_check(*s.registry, s.pipeline->tree());
        print(doc);
    });

    std::string dest;
    auto* site = app.add_subcommand("export-site", "Write the static site bundle");
    site->add_option("dest", dest, "Bundle directory (default <registry>/site)");
    bind(site, [&] {
        Session s(g, false);
        const fs::path out = dest.empty() ? fs::path(g.repo) / kSiteDir : fs::path(dest);
        const SiteBundle bundle = export_site(g.repo, *s.registry, s.pipeline->tree(), out);
        print({{"dest", out.string()},
               {"digest", bundle.digest()},
               {"skills", bundle.skills_index.size()},
               {"stats", bundle.stats.to_json()}});
    });

    std::string timing_out;
    auto* timing = app.add_subcommand("timing-report", "Mean duration of each cycle stage");
    timing->add_option("--out", timing_out, "Where to write the JSON summary (default <registry>/reports/timing.json)");
    bind(timing, [&] {
        const TimingReport report = stage_timing_report(load_cycle_reports(g.repo));
        const fs::path out = timing_out.empty() ? fs::path(g.repo) / kReportsDir / "timing.json" : fs::path(timing_out);
        write_file_atomic(out, report.to_json().dump(2) + "\n");
        std::cout << report.table();
    });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    try {
        action();
    } catch (const Error& e) {
        std::cerr << "skillforge " << command << ": " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "skillforge " << command << ": " << e.what() << "\n";
        return 1;
    }
    return 0;
}

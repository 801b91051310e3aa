#pragma once

#include "skillforge/provider_gateway.hpp"
#include "skillforge/skill_package.hpp"
#include "skillforge/types.hpp"

#include <nlohmann/json.hpp>

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace skillforge {

inline constexpr double kAdvantageThreshold = 0.05;
inline constexpr int kRepairBudget = 3;
inline constexpr int kOptimizeBudget = 2;

struct SandboxConfig {
    fs::path root;  // sandbox/<skill-id>/<layer>/<attempt>/ lives under here
    double timeout_seconds = 5.0;
    /// Points proxy variables at a closed local port. Best effort only: it does
    /// not stop programs that open sockets directly.
    bool deny_network = true;
};

struct TestReport {
    std::string skill_id;
    Layer layer = Layer::execution;
    int attempt = 1;
    std::string command;
    int exit_status = -1;
    bool timed_out = false;
    double duration_seconds = 0.0;
    std::string log_digest;
    std::string artifacts_digest;
    Outcome verdict = Outcome::error;
    std::string reason;                // timeout, exit status, harness fault or rejected edit
    std::string sandbox_dir;           // relative to the sandbox root
    std::string rendered_submission;   // system layer only

    nlohmann::json to_json() const;
    /// Equality ignoring duration_seconds.
    bool same_result(const TestReport& other) const;
};

/// Runs the package's smoke target in a fresh copy of the package under
/// sandbox/<id>/execution/<attempt>/ and writes report.json there.
TestReport execution_test(const SkillPackage& package, const SandboxConfig& sandbox, int attempt);

struct RepairOutcome {
    bool repaired = false;
    int attempts = 0;  // execution attempts including the initial failing one
    std::vector<TestReport> reports;  // one per attempt after the initial one
    std::vector<std::string> rejected_edits;
};

using AttemptCallback = std::function<void(const TestReport&)>;

/// Asks the provider (layer1_fix, keyed by skill id) for edits, applies them
/// to the package in place and re-runs the smoke target. `budget` counts
/// execution attempts including `failing` itself. An edit outside the
/// editable package layout is rejected and the attempt counts as failed.
RepairOutcome repair_loop(const fs::path& package_root, const TestReport& failing, int budget, Gateway& gateway,
                          const SandboxConfig& sandbox, const AttemptCallback& on_attempt = {});

struct SyntheticFixtures {
    std::map<std::string, std::string> values;  // input name -> argument value or file content
    bool generate_defaults = true;
};

struct CoverageEntry {
    bool exercised = false;
    std::string note;

    bool operator==(const CoverageEntry&) const = default;
};

enum class Stability { stable, unstable };
inline constexpr EnumNames<Stability, 2> kStabilityNames{{{{Stability::stable, "stable"}, {Stability::unstable, "unstable"}}}};

struct SyntheticReport {
    std::string skill_id;
    int attempt = 1;
    std::string command;
    std::map<std::string, CoverageEntry> input_coverage;
    std::map<std::string, CoverageEntry> output_coverage;
    Stability stability = Stability::unstable;
    std::pair<std::string, std::string> run_digests;
    Outcome verdict = Outcome::error;
    std::string reason;

    bool full_coverage() const;
    std::vector<std::string> coverage_gaps() const;
    nlohmann::json to_json() const;
};

/// Fills `{name}` / `{name=default}` placeholders of the first example
/// invocation, runs it twice, and reruns once per input with that input
/// perturbed to detect inputs that do not affect the output.
SyntheticReport synthetic_test(const SkillPackage& package, const SyntheticFixtures& fixtures,
                               const SandboxConfig& sandbox, int attempt);

struct SchedulerAdapter {
    std::string partition = "local";
    int ntasks = 1;
    int time_limit_minutes = 10;
    int max_ntasks = 4;         // simulated queue capacity
    bool inject_env = true;     // export SF_JOB_ID, SF_JOB_NAME, SF_NTASKS
};

/// True when an environment assumption names a batch scheduler.
bool needs_scheduler(const SkillContract& contract);

/// Renders a batch submission for the first example invocation and executes
/// it locally with simulated scheduler variables.
TestReport system_test(const SkillPackage& package, const SchedulerAdapter& adapter, const SandboxConfig& sandbox,
                       int attempt);

struct BenchmarkCase {
    std::string case_id;
    std::vector<std::string> fixtures;  // package-relative files both arms can read
    std::string with_command;
    std::string baseline_command;
    std::string score_command;          // prints one number in [0, 1]
};

struct CaseScore {
    std::string case_id;
    double with_skill_score = 0.0;
    double baseline_score = 0.0;
    std::string note;

    bool operator==(const CaseScore&) const = default;
};

struct BenchmarkReport {
    std::string skill_id;
    std::vector<CaseScore> cases;
    double margin = 0.0;
    bool weak = true;

    static double compute_margin(const std::vector<CaseScore>& cases);
    nlohmann::json to_json() const;
};

/// Reads tests/benchmark.ndjson from the package; empty when absent.
std::vector<BenchmarkCase> load_benchmark_cases(const SkillPackage& package);

BenchmarkReport benchmark_compare(const SkillPackage& package, const std::vector<BenchmarkCase>& cases,
                                  const SandboxConfig& sandbox, int attempt);

/// Single-case report from a layer2_benchmark provider response.
BenchmarkReport benchmark_from_response(const std::string& skill_id, const StageResponse& response);

struct OptimizeOutcome {
    bool optimized = false;
    int attempts = 0;
    double final_margin = 0.0;
    std::vector<BenchmarkReport> reports;
    std::vector<TestReport> smoke_reports;
    int restorations = 0;
};

using Benchmarker = std::function<BenchmarkReport(const SkillPackage&, int attempt)>;

/// Asks for layer2_optimize actions, applies them, re-runs the smoke target
/// (restoring the previous package when it breaks) and re-benchmarks, up to
/// `budget` rounds or the first margin at or above the threshold.
OptimizeOutcome optimize_loop(const fs::path& package_root, const BenchmarkReport& weak, int budget, Gateway& gateway,
                              const Benchmarker& benchmark, const SandboxConfig& sandbox);

}  // namespace skillforge

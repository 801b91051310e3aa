#include "skillforge/validation_harness.hpp"

#include "skillforge/error.hpp"
#include "skillforge/ownership.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <regex>
#include <set>
#include <sstream>

namespace skillforge {

using json = nlohmann::json;

namespace {

const std::regex& placeholder_regex() {
    static const std::regex re(R"(\{([A-Za-z0-9_.\-]+)(?:=([^}]*))?\})");
    return re;
}

std::string layer_dir_name(Layer layer) { return std::string(kLayerNames.name(layer)); }

fs::path attempt_dir(const SandboxConfig& sandbox, const std::string& skill_id, const std::string& layer, int attempt) {
    return sandbox.root / skill_id / layer / std::to_string(attempt);
}

std::map<std::string, std::string> sandbox_env(const SandboxConfig& sandbox, const fs::path& home) {
    auto env = hermetic_env(home);
    if (sandbox.deny_network) {
        for (const char* var : {"http_proxy", "https_proxy", "HTTP_PROXY", "HTTPS_PROXY", "ALL_PROXY", "all_proxy"})
            env[var] = "http://127.0.0.1:9";
        env["no_proxy"] = "";
    }
    return env;
}

PathFilter volatile_filter(const std::vector<std::string>& patterns) {
    return [patterns](const fs::path& rel) {
        const std::string s = rel.generic_string();
        for (const auto& p : patterns)
            if (glob_match(p, s)) return true;
        return false;
    };
}

/// Fresh run directory: work/ holds a copy of the package, home/ is $HOME.
struct RunDir {
    fs::path base;
    fs::path work;
    fs::path home;
};

RunDir prepare_run_dir(const fs::path& base, const fs::path& package_root) {
    RunDir dir{base, base / "work", base / "home"};
    std::error_code ec;
    fs::remove_all(base, ec);
    fs::create_directories(dir.home);
    if (!package_root.empty())
        copy_tree(package_root, dir.work);
    else
        fs::create_directories(dir.work);
    return dir;
}

std::string relative_to_root(const fs::path& path, const SandboxConfig& sandbox) {
    return path.lexically_relative(sandbox.root).generic_string();
}

void persist_report(const fs::path& dir, const json& report) {
    write_file_atomic(dir / "report.json", report.dump(2) + "\n");
}

std::string shell_quote(const std::string& s) {
    if (!s.empty() && std::all_of(s.begin(), s.end(), [](unsigned char c) {
            return std::isalnum(c) || c == '_' || c == '-' || c == '.' || c == '/' || c == '=' || c == ':';
        }))
        return s;
    std::string out = "'";
    for (char c : s) {
        if (c == '\'')
            out += "'\\''";
        else
            out += c;
    }
    return out + "'";
}

TestReport run_command_report(const std::string& skill_id, Layer layer, int attempt, const std::string& command,
                              const std::vector<std::string>& argv, const RunDir& dir, const fs::path& cwd,
                              std::map<std::string, std::string> env, double timeout_seconds, int expected_exit,
                              const std::vector<std::string>& volatile_patterns, const SandboxConfig& sandbox) {
    TestReport report;
    report.skill_id = skill_id;
    report.layer = layer;
    report.attempt = attempt;
    report.command = command;
    report.sandbox_dir = relative_to_root(dir.base, sandbox);

    ProcessSpec spec;
    spec.argv = argv;
    spec.working_dir = cwd;
    spec.env = std::move(env);
    spec.timeout = std::chrono::milliseconds(static_cast<int64_t>(timeout_seconds * 1000));
    const ProcessResult result = run_process(spec);

    report.exit_status = result.exit_status;
    report.timed_out = result.timed_out;
    report.duration_seconds = result.duration_seconds;
    write_file_atomic(dir.base / "log.txt", result.output, false);
    report.log_digest = sha256_hex(strip_trailing_whitespace(result.output));
    report.artifacts_digest = digest_directory(dir.work, volatile_filter(volatile_patterns));

    if (result.spawn_failed) {
        report.verdict = Outcome::error;
        report.reason = "could not start '" + argv.front() + "'";
    } else if (result.timed_out) {
        report.verdict = Outcome::fail;
        report.reason = "timeout after " + std::to_string(static_cast<int>(timeout_seconds)) + "s";
    } else if (result.exit_status == expected_exit) {
        report.verdict = Outcome::pass;
    } else {
        report.verdict = Outcome::fail;
        report.reason = "exit status " + std::to_string(result.exit_status) + ", expected " + std::to_string(expected_exit);
    }
    return report;
}

TestReport error_report(const std::string& skill_id, Layer layer, int attempt, std::string reason) {
    TestReport report;
    report.skill_id = skill_id;
    report.layer = layer;
    report.attempt = attempt;
    report.verdict = Outcome::error;
    report.reason = std::move(reason);
    return report;
}

/// Execution test with an explicit sandbox location, shared by the public
/// entry point and the optimize loop's smoke re-runs.
TestReport execution_test_at(const SkillPackage& package, const SandboxConfig& sandbox, int attempt,
                             const fs::path& base) {
    const std::string& id = package.identity.id;
    auto smoke = resolve_smoke_target(package, sandbox.timeout_seconds);
    TestReport report;
    try {
        if (!smoke) {
            report = error_report(id, Layer::execution, attempt, "no smoke target declared");
            fs::create_directories(base);
            report.sandbox_dir = relative_to_root(base, sandbox);
        } else {
            auto argv = tokenize_command(smoke->command);
            RunDir dir = prepare_run_dir(base, package.root_path);
            if (!argv || argv->empty()) {
                report = error_report(id, Layer::execution, attempt, "smoke target does not tokenize");
                report.sandbox_dir = relative_to_root(base, sandbox);
            } else {
                report = run_command_report(id, Layer::execution, attempt, smoke->command, *argv, dir,
                                            dir.work / smoke->working_dir, sandbox_env(sandbox, dir.home),
                                            smoke->timeout_seconds, smoke->expected_exit,
                                            package.contract.volatile_outputs, sandbox);
            }
        }
        persist_report(base, report.to_json());
    } catch (const fs::filesystem_error& e) {
        report = error_report(id, Layer::execution, attempt, std::string("sandbox setup failed: ") + e.what());
    } catch (const Error& e) {
        if (e.code() != Errc::io_error && e.code() != Errc::write_failure) throw;
        report = error_report(id, Layer::execution, attempt, std::string("sandbox setup failed: ") + e.what());
    }
    return report;
}

struct Edit {
    std::string path;
    std::string content;
};

std::vector<Edit> parse_edits(const json& array) {
    std::vector<Edit> edits;
    for (const auto& e : array) edits.push_back({e.at("path").get<std::string>(), e.at("content").get<std::string>()});
    return edits;
}

/// Names the first edit that may not be applied to a package, if any.
std::optional<std::string> reject_reason(const std::vector<Edit>& edits) {
    for (const auto& e : edits) {
        if (!safe_relative(e.path)) return "edit path '" + e.path + "' escapes the package root";
        if (!is_package_editable(e.path)) return "edit path '" + e.path + "' is outside the editable package layout";
    }
    return std::nullopt;
}

/// Writes edits into the package. A skill.json edit re-renders SKILL.md so the
/// two documents stay in agreement.
void apply_edits(const fs::path& root, const std::vector<Edit>& edits) {
    bool metadata_changed = false;
    for (const auto& e : edits) {
        const fs::path rel = *safe_relative(e.path);
        const fs::path target = root / rel;
        fs::create_directories(target.parent_path());
        write_file_atomic(target, e.content, false);
        const bool exec = rel.generic_string().rfind("scripts/", 0) == 0 || e.content.rfind("#!", 0) == 0;
        set_executable(target, exec);
        if (rel == kMetadataFile) metadata_changed = true;
    }
    if (metadata_changed) {
        const SpecView spec = parse_spec(read_file(root / kSpecFile));
        const SkillContract contract = parse_contract(json::parse(read_file(root / kMetadataFile)));
        write_file_atomic(root / kSpecFile, render_spec({spec.id, spec.name}, contract), false);
    }
}

std::string read_log(const SandboxConfig& sandbox, const TestReport& report) {
    std::string log;
    if (!report.sandbox_dir.empty()) {
        const fs::path path = sandbox.root / report.sandbox_dir / "log.txt";
        std::error_code ec;
        if (fs::exists(path, ec)) log = read_file(path);
    }
    std::string text = "verdict: " + std::string(kOutcomeNames.name(report.verdict));
    if (!report.reason.empty()) text += "\nreason: " + report.reason;
    if (!report.command.empty()) text += "\ncommand: " + report.command;
    return text + "\n" + log;
}

// ---- synthetic helpers --------------------------------------------------

struct Placeholder {
    std::string name;
    std::optional<std::string> default_value;
};

std::vector<Placeholder> placeholders_of(const std::string& command) {
    std::vector<Placeholder> out;
    for (auto it = std::sregex_iterator(command.begin(), command.end(), placeholder_regex());
         it != std::sregex_iterator(); ++it) {
        Placeholder p{(*it)[1].str(), std::nullopt};
        if ((*it)[2].matched) p.default_value = (*it)[2].str();
        out.push_back(p);
    }
    return out;
}

std::string substitute(const std::string& token, const std::map<std::string, std::string>& args) {
    std::string out;
    size_t last = 0;
    for (auto it = std::sregex_iterator(token.begin(), token.end(), placeholder_regex()); it != std::sregex_iterator();
         ++it) {
        out += token.substr(last, it->position() - last);
        auto found = args.find((*it)[1].str());
        out += found != args.end() ? found->second : "";
        last = it->position() + it->length();
    }
    return out + token.substr(last);
}

/// Controlled value per input. For file inputs the value is the file content;
/// a placeholder default for a file input names a package file instead.
struct InputValue {
    const ContractInput* input = nullptr;
    std::string value;
    bool package_path = false;
};

std::map<std::string, InputValue> resolve_inputs(const SkillPackage& package, const std::vector<Placeholder>& used,
                                                 const SyntheticFixtures& fixtures) {
    std::map<std::string, InputValue> values;
    for (const auto& in : package.contract.inputs) {
        InputValue v{&in, "", false};
        auto given = fixtures.values.find(in.name);
        auto ph = std::find_if(used.begin(), used.end(), [&](const Placeholder& p) { return p.name == in.name; });
        if (given != fixtures.values.end()) {
            v.value = given->second;
        } else if (ph != used.end() && ph->default_value) {
            v.value = *ph->default_value;
            v.package_path = in.kind == InputKind::file;
        } else if (fixtures.generate_defaults) {
            if (in.kind == InputKind::file)
                v.value = "";
            else
                v.value = in.value_type == ValueType::number ? "0" : "synthetic";
        } else if (in.required) {
            throw Error(Errc::missing_fixture, "no fixture value for required input '" + in.name + "'");
        } else {
            continue;
        }
        values.emplace(in.name, v);
    }
    return values;
}

std::string perturb(const InputValue& v) {
    if (v.input->kind == InputKind::file) return v.value + "\nperturbed\n";
    if (v.input->value_type == ValueType::number) {
        char* end = nullptr;
        const double d = std::strtod(v.value.c_str(), &end);
        if (end && *end == '\0' && !v.value.empty()) {
            std::ostringstream os;
            os << d + 1;
            return os.str();
        }
        return "1";
    }
    return v.value + "-perturbed";
}

/// Writes file inputs and returns placeholder substitutions.
std::map<std::string, std::string> stage_inputs(const fs::path& work, const std::map<std::string, InputValue>& values) {
    std::map<std::string, std::string> args;
    for (const auto& [name, v] : values) {
        if (v.input->kind == InputKind::file && !v.package_path) {
            const std::string rel = "inputs/" + name;
            fs::create_directories(work / "inputs");
            write_file_atomic(work / rel, v.value, false);
            args[name] = rel;
        } else {
            args[name] = v.value;
        }
    }
    return args;
}

struct SyntheticRun {
    ProcessResult result;
    std::string digest;
    std::set<std::string> files;  // files present after the run, relative to work/
};

SyntheticRun synthetic_run(const SkillPackage& package, const std::vector<std::string>& template_argv,
                           const std::map<std::string, InputValue>& values, const fs::path& base,
                           const SandboxConfig& sandbox) {
    RunDir dir = prepare_run_dir(base, package.root_path);
    const auto package_files = file_digests(package.root_path);
    const auto args = stage_inputs(dir.work, values);
    std::vector<std::string> argv;
    for (const auto& t : template_argv) argv.push_back(substitute(t, args));

    ProcessSpec spec;
    spec.argv = argv;
    spec.working_dir = dir.work;
    spec.env = sandbox_env(sandbox, dir.home);
    spec.timeout = std::chrono::milliseconds(static_cast<int64_t>(sandbox.timeout_seconds * 1000));
    SyntheticRun run;
    run.result = run_process(spec);
    write_file_atomic(base / "log.txt", run.result.output, false);

    const auto volatile_skip = volatile_filter(package.contract.volatile_outputs);
    std::ostringstream normalized;
    for (const auto& entry : fs::recursive_directory_iterator(dir.work)) {
        if (!entry.is_regular_file()) continue;
        run.files.insert(entry.path().lexically_relative(dir.work).generic_string());
    }
    for (const auto& s : run.files) {
        if (package_files.count(s) || s.rfind("inputs/", 0) == 0 || volatile_skip(fs::path(s))) continue;
        normalized << s << "\n" << sha256_hex(strip_trailing_whitespace(read_file(dir.work / s))) << "\n";
    }
    normalized << "--stdout--\n" << strip_trailing_whitespace(run.result.output);
    run.digest = sha256_hex(normalized.str());
    return run;
}

// ---- benchmark helpers --------------------------------------------------

double parse_score(const std::string& text, const std::string& where) {
    const std::string t = trim(text);
    char* end = nullptr;
    const double d = std::strtod(t.c_str(), &end);
    if (t.empty() || !end || *end != '\0' || !std::isfinite(d))
        throw Error(Errc::non_numeric_score, where + ": score output '" + t + "' is not a number");
    if (d < 0.0 || d > 1.0) throw Error(Errc::non_numeric_score, where + ": score " + t + " lies outside [0, 1]");
    return d;
}

ProcessResult run_in(const std::string& command, const fs::path& cwd, const fs::path& home,
                     const SandboxConfig& sandbox) {
    auto argv = tokenize_command(command);
    if (!argv || argv->empty()) throw Error(Errc::malformed_invocation, "cannot tokenize '" + command + "'");
    ProcessSpec spec;
    spec.argv = *argv;
    spec.working_dir = cwd;
    spec.env = sandbox_env(sandbox, home);
    spec.timeout = std::chrono::milliseconds(static_cast<int64_t>(sandbox.timeout_seconds * 1000));
    return run_process(spec);
}

/// Runs one arm of a case and scores it; an arm that fails scores 0.
double score_arm(const BenchmarkCase& c, const std::string& arm_command, const fs::path& arm_base,
                 const SkillPackage& package, bool with_package, const SandboxConfig& sandbox, std::string& note) {
    RunDir dir = prepare_run_dir(arm_base, with_package ? package.root_path : fs::path());
    if (!with_package) {
        for (const auto& f : c.fixtures) {
            auto rel = safe_relative(f);
            if (!rel) throw Error(Errc::path_escape, "benchmark fixture '" + f + "' escapes the package root");
            fs::create_directories((dir.work / *rel).parent_path());
            fs::copy_file(package.root_path / *rel, dir.work / *rel, fs::copy_options::overwrite_existing);
        }
    }
    const std::string arm = with_package ? "with" : "baseline";
    const ProcessResult run = run_in(arm_command, dir.work, dir.home, sandbox);
    write_file_atomic(arm_base / "log.txt", run.output, false);
    if (run.spawn_failed || run.timed_out || run.exit_status != 0) {
        note += (note.empty() ? "" : "; ") + arm + " arm failed (exit " + std::to_string(run.exit_status) +
                (run.timed_out ? ", timeout" : "") + "), scored 0";
        return 0.0;
    }
    const ProcessResult scored = run_in(c.score_command, dir.work, dir.home, sandbox);
    if (scored.exit_status != 0)
        throw Error(Errc::non_numeric_score,
                    "case '" + c.case_id + "' " + arm + " arm: scoring command exited " + std::to_string(scored.exit_status));
    return parse_score(scored.output, "case '" + c.case_id + "' " + arm + " arm");
}

}  // namespace

// ---- reports ------------------------------------------------------------

json TestReport::to_json() const {
    json j = {{"skill_id", skill_id},
              {"layer", kLayerNames.name(layer)},
              {"attempt", attempt},
              {"command", command},
              {"exit_status", exit_status},
              {"timed_out", timed_out},
              {"duration_seconds", duration_seconds},
              {"log_digest", log_digest},
              {"artifacts_digest", artifacts_digest},
              {"verdict", kOutcomeNames.name(verdict)},
              {"reason", reason},
              {"sandbox_dir", sandbox_dir}};
    if (!rendered_submission.empty()) j["rendered_submission"] = rendered_submission;
    return j;
}

bool TestReport::same_result(const TestReport& o) const {
    json a = to_json(), b = o.to_json();
    a.erase("duration_seconds");
    b.erase("duration_seconds");
    return a == b;
}

TestReport execution_test(const SkillPackage& package, const SandboxConfig& sandbox, int attempt) {
    return execution_test_at(package, sandbox, attempt,
                             attempt_dir(sandbox, package.identity.id, layer_dir_name(Layer::execution), attempt));
}

// ---- repair -------------------------------------------------------------

RepairOutcome repair_loop(const fs::path& package_root, const TestReport& failing, int budget, Gateway& gateway,
                          const SandboxConfig& sandbox, const AttemptCallback& on_attempt) {
    if (failing.verdict == Outcome::pass) throw Error(Errc::invalid_argument, "repair_loop needs a failing report");
    if (budget < 1) throw Error(Errc::invalid_argument, "repair budget must be at least 1");

    RepairOutcome outcome;
    outcome.attempts = 1;
    TestReport last = failing;
    int attempt = failing.attempt;
    while (outcome.attempts < budget) {
        ++attempt;
        ++outcome.attempts;
        const StageResponse response = gateway.call(
            StageKind::layer1_fix, {{"skill_id", failing.skill_id}, {"failure_log", read_log(sandbox, last)}},
            failing.skill_id);
        const auto edits = parse_edits(response.fields.at("edits"));
        TestReport report;
        if (auto why = reject_reason(edits)) {
            outcome.rejected_edits.push_back(*why);
            report = error_report(failing.skill_id, Layer::execution, attempt, "rejected edit: " + *why);
            report.verdict = Outcome::fail;
            const fs::path base = attempt_dir(sandbox, failing.skill_id, layer_dir_name(Layer::execution), attempt);
            fs::create_directories(base);
            report.sandbox_dir = relative_to_root(base, sandbox);
            persist_report(base, report.to_json());
        } else {
            apply_edits(package_root, edits);
            report = execution_test(load_package(package_root), sandbox, attempt);
        }
        outcome.reports.push_back(report);
        if (on_attempt) on_attempt(report);
        last = report;
        if (report.verdict == Outcome::pass) {
            outcome.repaired = true;
            break;
        }
    }
    return outcome;
}

// ---- synthetic ----------------------------------------------------------

bool SyntheticReport::full_coverage() const { return coverage_gaps().empty(); }

std::vector<std::string> SyntheticReport::coverage_gaps() const {
    std::vector<std::string> gaps;
    for (const auto& [name, entry] : input_coverage)
        if (!entry.exercised) gaps.push_back("input " + name);
    for (const auto& [name, entry] : output_coverage)
        if (!entry.exercised) gaps.push_back("output " + name);
    return gaps;
}

json SyntheticReport::to_json() const {
    json inputs = json::object(), outputs = json::object();
    for (const auto& [n, e] : input_coverage) inputs[n] = {{"exercised", e.exercised}, {"note", e.note}};
    for (const auto& [n, e] : output_coverage) outputs[n] = {{"observed", e.exercised}, {"note", e.note}};
    return {{"skill_id", skill_id},
            {"layer", "synthetic"},
            {"attempt", attempt},
            {"command", command},
            {"contract_coverage", {{"inputs", inputs}, {"outputs", outputs}}},
            {"stability", kStabilityNames.name(stability)},
            {"run_digests", {run_digests.first, run_digests.second}},
            {"verdict", kOutcomeNames.name(verdict)},
            {"reason", reason}};
}

SyntheticReport synthetic_test(const SkillPackage& package, const SyntheticFixtures& fixtures,
                               const SandboxConfig& sandbox, int attempt) {
    SyntheticReport report;
    report.skill_id = package.identity.id;
    report.attempt = attempt;
    for (const auto& in : package.contract.inputs) report.input_coverage[in.name] = {false, "not exercised"};
    for (const auto& out : package.contract.outputs) report.output_coverage[out.name] = {false, "not observed"};

    const fs::path base = attempt_dir(sandbox, package.identity.id, "synthetic", attempt);
    std::error_code ec;
    fs::remove_all(base, ec);
    fs::create_directories(base);
    auto finish = [&](SyntheticReport& r) -> SyntheticReport {
        persist_report(base, r.to_json());
        return r;
    };

    if (package.contract.example_invocations.empty()) {
        report.reason = "no example invocation to drive";
        return finish(report);
    }
    report.command = package.contract.example_invocations.front();
    const auto used = placeholders_of(report.command);
    const auto values = resolve_inputs(package, used, fixtures);
    auto template_argv = tokenize_command(report.command);
    if (!template_argv || template_argv->empty()) {
        report.reason = "example invocation does not tokenize";
        return finish(report);
    }

    const SyntheticRun run1 = synthetic_run(package, *template_argv, values, base / "run1", sandbox);
    const SyntheticRun run2 = synthetic_run(package, *template_argv, values, base / "run2", sandbox);
    report.run_digests = {run1.digest, run2.digest};
    report.stability = run1.digest == run2.digest ? Stability::stable : Stability::unstable;
    for (const auto* run : {&run1, &run2}) {
        if (run->result.spawn_failed || run->result.timed_out || run->result.exit_status != 0) {
            report.reason = "example invocation failed with exit status " + std::to_string(run->result.exit_status) +
                            (run->result.timed_out ? " (timeout)" : "");
            report.verdict = Outcome::error;
            return finish(report);
        }
    }

    for (const auto& out : package.contract.outputs) {
        const bool seen = out.kind == OutputKind::stream ? !trim(run1.result.output).empty()
                                                         : run1.files.count(out.name) > 0;
        report.output_coverage[out.name] = {seen, seen ? "observed" : "not produced by the example invocation"};
    }

    std::set<std::string> referenced;
    for (const auto& p : used) referenced.insert(p.name);
    for (const auto& [name, v] : values) {
        if (!referenced.count(name)) {
            report.input_coverage[name] = {false, "not referenced by the example invocation"};
            continue;
        }
        auto perturbed = values;
        perturbed[name].value = perturb(v);
        perturbed[name].package_path = false;
        const SyntheticRun ablation = synthetic_run(package, *template_argv, perturbed, base / ("ablate-" + name), sandbox);
        const bool changed = ablation.digest != run1.digest || ablation.result.exit_status != run1.result.exit_status;
        report.input_coverage[name] = {changed, changed ? "passed; output depends on it"
                                                        : "output unchanged when the input is perturbed"};
    }

    if (report.stability == Stability::unstable) {
        report.verdict = Outcome::fail;
        report.reason = "two identical runs produced different outputs";
    } else if (!report.full_coverage()) {
        report.verdict = Outcome::fail;
        report.reason = "coverage gaps: " + join(report.coverage_gaps(), ", ");
    } else {
        report.verdict = Outcome::pass;
    }
    return finish(report);
}

// ---- system -------------------------------------------------------------

bool needs_scheduler(const SkillContract& contract) {
    static const std::regex re(R"(\b(slurm|scheduler|sbatch|batch)\b)", std::regex::icase);
    return std::any_of(contract.environment_assumptions.begin(), contract.environment_assumptions.end(),
                       [](const std::string& a) { return std::regex_search(a, re); });
}

TestReport system_test(const SkillPackage& package, const SchedulerAdapter& adapter, const SandboxConfig& sandbox,
                       int attempt) {
    const std::string& id = package.identity.id;
    if (!needs_scheduler(package.contract))
        throw Error(Errc::not_applicable, "skill '" + id + "' declares no scheduler-dependent environment");
    if (adapter.ntasks < 1) throw Error(Errc::adapter_misconfiguration, "ntasks must be at least 1");
    if (adapter.time_limit_minutes < 1) throw Error(Errc::adapter_misconfiguration, "time limit must be positive");
    if (adapter.max_ntasks < 1) throw Error(Errc::adapter_misconfiguration, "queue capacity must be positive");
    if (adapter.partition.empty() ||
        std::any_of(adapter.partition.begin(), adapter.partition.end(), [](unsigned char c) { return std::isspace(c); }))
        throw Error(Errc::adapter_misconfiguration, "partition name '" + adapter.partition + "' is invalid");
    if (package.contract.example_invocations.empty())
        throw Error(Errc::adapter_misconfiguration, "skill '" + id + "' has no example invocation to submit");

    const std::string command_template = package.contract.example_invocations.front();
    auto template_argv = tokenize_command(command_template);
    if (!template_argv || template_argv->empty())
        throw Error(Errc::malformed_invocation, "cannot tokenize '" + command_template + "'");

    const fs::path base = attempt_dir(sandbox, id, layer_dir_name(Layer::system), attempt);
    RunDir dir = prepare_run_dir(base, package.root_path);
    const auto values = resolve_inputs(package, placeholders_of(command_template), {});
    const auto args = stage_inputs(dir.work, values);
    std::vector<std::string> quoted;
    for (const auto& t : *template_argv) quoted.push_back(shell_quote(substitute(t, args)));
    const std::string command = join(quoted, " ");

    const std::string job_name = "sf-" + id;
    char time_buf[32];
    std::snprintf(time_buf, sizeof time_buf, "%02d:%02d:00", adapter.time_limit_minutes / 60,
                  adapter.time_limit_minutes % 60);
    std::ostringstream script;
    script << "#!/bin/sh\n"
           << "#SBATCH --job-name=" << job_name << "\n"
           << "#SBATCH --ntasks=" << adapter.ntasks << "\n"
           << "#SBATCH --time=" << time_buf << "\n"
           << "#SBATCH --partition=" << adapter.partition << "\n"
           << "set -eu\n"
           << command << "\n";
    const std::string submission = script.str();
    write_file_atomic(base / "submission.sh", submission, false);

    TestReport report;
    if (adapter.ntasks > adapter.max_ntasks) {
        report = error_report(id, Layer::system, attempt,
                              "queue rejected the job: " + std::to_string(adapter.ntasks) + " tasks requested, capacity " +
                                  std::to_string(adapter.max_ntasks));
        report.verdict = Outcome::fail;
        report.command = command;
        report.sandbox_dir = relative_to_root(base, sandbox);
    } else {
        auto env = sandbox_env(sandbox, dir.home);
        if (adapter.inject_env) {
            env["SF_JOB_ID"] = "sim-" + sha256_hex(id + "/" + std::to_string(attempt)).substr(0, 8);
            env["SF_JOB_NAME"] = job_name;
            env["SF_NTASKS"] = std::to_string(adapter.ntasks);
        }
        report = run_command_report(id, Layer::system, attempt, command, {"sh", (base / "submission.sh").string()}, dir,
                                    dir.work, std::move(env), sandbox.timeout_seconds, 0,
                                    package.contract.volatile_outputs, sandbox);
    }
    report.rendered_submission = submission;
    persist_report(base, report.to_json());
    return report;
}

// ---- benchmark ----------------------------------------------------------

double BenchmarkReport::compute_margin(const std::vector<CaseScore>& cases) {
    if (cases.empty()) return 0.0;
    double sum = 0.0;
    for (const auto& c : cases) sum += c.with_skill_score - c.baseline_score;
    return sum / static_cast<double>(cases.size());
}

json BenchmarkReport::to_json() const {
    json cs = json::array();
    for (const auto& c : cases)
        cs.push_back({{"case_id", c.case_id},
                      {"with_skill_score", c.with_skill_score},
                      {"baseline_score", c.baseline_score},
                      {"note", c.note}});
    return {{"skill_id", skill_id}, {"layer", "benchmark"}, {"cases", cs}, {"margin", margin}, {"weak", weak}};
}

std::vector<BenchmarkCase> load_benchmark_cases(const SkillPackage& package) {
    const fs::path path = package.root_path / "tests" / "benchmark.ndjson";
    std::vector<BenchmarkCase> cases;
    std::error_code ec;
    if (!fs::exists(path, ec)) return cases;
    std::istringstream in(read_file(path));
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        try {
            const json j = json::parse(line);
            BenchmarkCase c;
            c.case_id = j.at("id").get<std::string>();
            c.fixtures = j.value("fixtures", std::vector<std::string>{});
            c.with_command = j.at("with").get<std::string>();
            c.baseline_command = j.at("baseline").get<std::string>();
            c.score_command = j.at("score").get<std::string>();
            cases.push_back(std::move(c));
        } catch (const json::exception& e) {
            throw Error(Errc::invalid_argument,
                        "tests/benchmark.ndjson:" + std::to_string(line_no) + ": " + std::string(e.what()));
        }
    }
    return cases;
}

BenchmarkReport benchmark_compare(const SkillPackage& package, const std::vector<BenchmarkCase>& cases,
                                  const SandboxConfig& sandbox, int attempt) {
    if (cases.empty()) throw Error(Errc::invalid_argument, "benchmark needs at least one case");
    std::set<std::string> ids;
    for (const auto& c : cases) {
        if (!ids.insert(c.case_id).second) throw Error(Errc::invalid_argument, "duplicate case id '" + c.case_id + "'");
        if (slugify(c.case_id) != c.case_id) throw Error(Errc::invalid_argument, "case id '" + c.case_id + "' is not a slug");
    }

    const fs::path base = attempt_dir(sandbox, package.identity.id, layer_dir_name(Layer::benchmark), attempt);
    BenchmarkReport report;
    report.skill_id = package.identity.id;
    for (const auto& c : cases) {
        CaseScore score;
        score.case_id = c.case_id;
        score.with_skill_score = score_arm(c, c.with_command, base / c.case_id / "with", package, true, sandbox, score.note);
        score.baseline_score =
            score_arm(c, c.baseline_command, base / c.case_id / "baseline", package, false, sandbox, score.note);
        report.cases.push_back(std::move(score));
    }
    report.margin = BenchmarkReport::compute_margin(report.cases);
    report.weak = report.margin < kAdvantageThreshold;
    persist_report(base, report.to_json());
    return report;
}

BenchmarkReport benchmark_from_response(const std::string& skill_id, const StageResponse& response) {
    BenchmarkReport report;
    report.skill_id = skill_id;
    report.cases.push_back({"provider", response.fields.at("with_skill_score").get<double>(),
                            response.fields.at("baseline_score").get<double>(),
                            response.fields.value("notes", std::string())});
    report.margin = BenchmarkReport::compute_margin(report.cases);
    report.weak = report.margin < kAdvantageThreshold;
    return report;
}

// ---- optimize -----------------------------------------------------------

OptimizeOutcome optimize_loop(const fs::path& package_root, const BenchmarkReport& weak, int budget, Gateway& gateway,
                              const Benchmarker& benchmark, const SandboxConfig& sandbox) {
    if (!weak.weak || weak.margin >= kAdvantageThreshold)
        throw Error(Errc::invalid_argument, "optimize_loop needs a weak benchmark report");
    if (budget < 1) throw Error(Errc::invalid_argument, "optimize budget must be at least 1");

    OptimizeOutcome outcome;
    outcome.final_margin = weak.margin;
    BenchmarkReport current = weak;
    const std::string& id = weak.skill_id;
    while (outcome.attempts < budget) {
        const int round = ++outcome.attempts;
        const StageResponse response = gateway.call(
            StageKind::layer2_optimize, {{"skill_id", id}, {"benchmark_results", current.to_json().dump()}}, id);
        const auto edits = parse_edits(response.fields.at("actions"));
        if (reject_reason(edits)) continue;

        const fs::path round_dir = sandbox.root / id / "optimize" / std::to_string(round);
        const fs::path backup = round_dir / "backup";
        std::error_code ec;
        fs::remove_all(round_dir, ec);
        copy_tree(package_root, backup);

        apply_edits(package_root, edits);
        const TestReport smoke = execution_test_at(load_package(package_root), sandbox, round, round_dir / "smoke");
        outcome.smoke_reports.push_back(smoke);
        if (smoke.verdict != Outcome::pass) {
            fs::remove_all(package_root);
            copy_tree(backup, package_root);
            ++outcome.restorations;
            continue;
        }
        current = benchmark(load_package(package_root), round);
        outcome.reports.push_back(current);
        outcome.final_margin = current.margin;
        if (!current.weak) {
            outcome.optimized = true;
            break;
        }
    }
    return outcome;
}

}  // namespace skillforge

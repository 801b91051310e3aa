#pragma once

#include "skillforge/types.hpp"
#include "skillforge/util.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace skillforge {

enum class InputKind { file, argument };
inline constexpr EnumNames<InputKind, 2> kInputKindNames{{{{InputKind::file, "file"}, {InputKind::argument, "argument"}}}};

enum class OutputKind { file, stream };
inline constexpr EnumNames<OutputKind, 2> kOutputKindNames{{{{OutputKind::file, "file"}, {OutputKind::stream, "stream"}}}};

enum class ValueType { text, number };
inline constexpr EnumNames<ValueType, 2> kValueTypeNames{{{{ValueType::text, "text"}, {ValueType::number, "number"}}}};

struct ContractInput {
    std::string name;
    std::string description;
    bool required = true;
    InputKind kind = InputKind::argument;
    ValueType value_type = ValueType::text;

    bool operator==(const ContractInput&) const = default;
};

struct ContractOutput {
    std::string name;
    std::string description;
    OutputKind kind = OutputKind::file;

    bool operator==(const ContractOutput&) const = default;
};

struct SkillContract {
    std::string task_scope;
    std::vector<ContractInput> inputs;
    std::vector<ContractOutput> outputs;
    std::vector<std::string> environment_assumptions;
    std::vector<std::string> execution_steps;
    std::vector<std::string> provenance_links;
    std::string follow_up_guidance;
    std::vector<std::string> example_invocations;
    std::vector<std::string> test_commands;
    /// Glob patterns (relative to the run directory) excluded from output digests.
    std::vector<std::string> volatile_outputs;

    bool operator==(const SkillContract&) const = default;
};

/// Serializes the contract with its field names as keys (the skill.json body).
nlohmann::json render_contract(const SkillContract& contract);

/// Maps a validated stage document onto a contract. Optional fields default
/// to empty; every command string must tokenize.
SkillContract parse_contract(const nlohmann::json& document);

/// Contract-level invariant findings, such as a required input that no step or
/// example references. Empty when the contract is internally consistent.
std::vector<std::string> contract_findings(const SkillContract& contract, bool mined = true);

struct TestCommand {
    std::string command;
    std::string working_dir = ".";
    int expected_exit = 0;
    double timeout_seconds = 5.0;

    bool operator==(const TestCommand&) const = default;
};

struct PackageIdentity {
    std::string id;
    std::string name;
};

struct SkillPackage {
    fs::path root_path;
    PackageIdentity identity;
    SkillContract contract;
    std::string spec_document;
    nlohmann::json metadata_document;
    std::string provenance_document;
    std::vector<std::string> scripts;   // relative to root_path
    std::vector<std::string> examples;
    std::vector<std::string> tests;
};

inline constexpr const char* kSpecFile = "SKILL.md";
inline constexpr const char* kMetadataFile = "skill.json";
inline constexpr const char* kProvenanceFile = "PROVENANCE.md";

/// Renders SKILL.md with the fixed section list.
std::string render_spec(const PackageIdentity& identity, const SkillContract& contract);

/// The parts of SKILL.md that must agree with the metadata.
struct SpecView {
    std::string id;
    std::string name;
    std::string task_scope;
    std::vector<ContractInput> inputs;
    std::vector<ContractOutput> outputs;
};
SpecView parse_spec(std::string_view markdown);

/// Field-level agreement after whitespace collapsing. Returns the names of
/// disagreeing fields.
std::vector<std::string> spec_metadata_divergence(const SpecView& spec, const SkillContract& contract);

/// Writes a package at `dest`, replacing any previous content. Artifact keys
/// are package-relative paths; anything under scripts/ or starting with "#!"
/// is made executable. `resource_locators` annotates PROVENANCE.md.
SkillPackage compile_package(const PackageIdentity& identity, const SkillContract& contract,
                             const std::map<std::string, std::string>& artifacts, const fs::path& dest,
                             const std::map<std::string, std::string>& resource_locators = {});

/// Reads a package directory. Throws when the metadata is missing or invalid.
SkillPackage load_package(const fs::path& root);

/// First declared test command, or nothing when the contract declares none.
std::optional<TestCommand> resolve_smoke_target(const SkillPackage& package, double timeout_seconds = 5.0);

struct LintFinding {
    std::string code;  // missing-file | bad-metadata | divergence | not-executable | missing-tests
    std::string path;
    std::string message;
    bool blocking = true;

    bool operator==(const LintFinding&) const = default;
};

/// Blocking findings cover required files, metadata parsing, spec/metadata
/// agreement, and the executable bit on scripts. A package without test
/// commands gets a non-blocking missing-tests note.
std::vector<LintFinding> lint_package(const fs::path& root, const std::vector<std::string>& listed_scripts = {});
bool lint_clean(const std::vector<LintFinding>& findings);

/// Input names referenced as `{name}` or `{name=default}` placeholders.
std::vector<std::string> placeholder_names(std::string_view command);

}  // namespace skillforge

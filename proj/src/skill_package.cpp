#include "skillforge/skill_package.hpp"

#include <algorithm>
#include <regex>
#include <set>
#include <sstream>

namespace skillforge {

using nlohmann::json;

namespace {

bool valid_io_name(const std::string& name) {
    if (name.empty()) return false;
    return std::all_of(name.begin(), name.end(), [](unsigned char c) {
        return std::isalnum(c) || c == '_' || c == '-' || c == '.';
    });
}

const json& require_field(const json& doc, const char* field) {
    if (!doc.is_object() || !doc.contains(field) || doc.at(field).is_null())
        throw Error(Errc::missing_required_field, std::string("contract field '") + field + "' is missing");
    return doc.at(field);
}

std::string string_field(const json& value, const std::string& field) {
    if (!value.is_string()) throw Error(Errc::contract_violation, "contract field '" + field + "' must be a string");
    return value.get<std::string>();
}

std::vector<std::string> string_list(const json& doc, const char* field, bool required) {
    if (!doc.contains(field) || doc.at(field).is_null()) {
        if (required) require_field(doc, field);
        return {};
    }
    const json& v = doc.at(field);
    if (!v.is_array()) throw Error(Errc::contract_violation, std::string("contract field '") + field + "' must be a list");
    std::vector<std::string> out;
    for (size_t i = 0; i < v.size(); ++i) out.push_back(string_field(v[i], std::string(field) + "[" + std::to_string(i) + "]"));
    return out;
}

template <typename E, size_t N>
E enum_field(const json& item, const char* key, const EnumNames<E, N>& names, E fallback, const std::string& where) {
    if (!item.contains(key) || item.at(key).is_null()) return fallback;
    const std::string text = string_field(item.at(key), where + "." + key);
    if (!names.contains(text)) throw Error(Errc::contract_violation, where + "." + key + " has unknown value '" + text + "'");
    return names.parse(text, key);
}

bool mentions_word(std::string_view haystack, const std::string& word) {
    const std::string h = to_lower(haystack);
    const std::string w = to_lower(word);
    auto ident = [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '_'; };
    for (size_t pos = h.find(w); pos != std::string::npos; pos = h.find(w, pos + 1)) {
        bool left = pos == 0 || !ident(h[pos - 1]);
        bool right = pos + w.size() >= h.size() || !ident(h[pos + w.size()]);
        if (left && right) return true;
    }
    return false;
}

}  // namespace

std::vector<std::string> placeholder_names(std::string_view command) {
    static const std::regex re(R"(\{([A-Za-z0-9_.\-]+)(=[^}]*)?\})");
    std::vector<std::string> names;
    std::string text(command);
    for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator(); ++it)
        names.push_back((*it)[1].str());
    return names;
}

json render_contract(const SkillContract& c) {
    json inputs = json::array();
    for (const auto& in : c.inputs) {
        inputs.push_back({{"name", in.name},
                          {"description", in.description},
                          {"required", in.required},
                          {"kind", kInputKindNames.name(in.kind)},
                          {"value_type", kValueTypeNames.name(in.value_type)}});
    }
    json outputs = json::array();
    for (const auto& out : c.outputs)
        outputs.push_back({{"name", out.name}, {"description", out.description}, {"kind", kOutputKindNames.name(out.kind)}});
    return {
        {"task_scope", c.task_scope},
        {"inputs", inputs},
        {"outputs", outputs},
        {"environment_assumptions", c.environment_assumptions},
        {"execution_steps", c.execution_steps},
        {"provenance_links", c.provenance_links},
        {"follow_up_guidance", c.follow_up_guidance},
        {"example_invocations", c.example_invocations},
        {"test_commands", c.test_commands},
        {"volatile_outputs", c.volatile_outputs},
    };
}

SkillContract parse_contract(const json& doc) {
    if (!doc.is_object()) throw Error(Errc::contract_violation, "contract document must be an object");
    SkillContract c;
    c.task_scope = string_field(require_field(doc, "task_scope"), "task_scope");
    if (trim(c.task_scope).empty()) throw Error(Errc::missing_required_field, "contract field 'task_scope' is empty");

    const json& inputs = require_field(doc, "inputs");
    if (!inputs.is_array()) throw Error(Errc::contract_violation, "contract field 'inputs' must be a list");
    for (size_t i = 0; i < inputs.size(); ++i) {
        const std::string where = "inputs[" + std::to_string(i) + "]";
        const json& item = inputs[i];
        if (!item.is_object()) throw Error(Errc::contract_violation, where + " must be an object");
        ContractInput in;
        if (!item.contains("name")) throw Error(Errc::missing_required_field, "contract field '" + where + ".name' is missing");
        in.name = string_field(item.at("name"), where + ".name");
        if (!valid_io_name(in.name)) throw Error(Errc::contract_violation, where + ".name '" + in.name + "' is not an identifier");
        if (item.contains("description")) in.description = string_field(item.at("description"), where + ".description");
        if (item.contains("required")) {
            if (!item.at("required").is_boolean()) throw Error(Errc::contract_violation, where + ".required must be a boolean");
            in.required = item.at("required").get<bool>();
        }
        in.kind = enum_field(item, "kind", kInputKindNames, InputKind::argument, where);
        in.value_type = enum_field(item, "value_type", kValueTypeNames, ValueType::text, where);
        c.inputs.push_back(std::move(in));
    }

    if (doc.contains("outputs") && !doc.at("outputs").is_null()) {
        const json& outputs = doc.at("outputs");
        if (!outputs.is_array()) throw Error(Errc::contract_violation, "contract field 'outputs' must be a list");
        for (size_t i = 0; i < outputs.size(); ++i) {
            const std::string where = "outputs[" + std::to_string(i) + "]";
            const json& item = outputs[i];
            if (!item.is_object()) throw Error(Errc::contract_violation, where + " must be an object");
            ContractOutput out;
            if (!item.contains("name")) throw Error(Errc::missing_required_field, "contract field '" + where + ".name' is missing");
            out.name = string_field(item.at("name"), where + ".name");
            if (!valid_io_name(out.name)) throw Error(Errc::contract_violation, where + ".name '" + out.name + "' is not an identifier");
            if (item.contains("description")) out.description = string_field(item.at("description"), where + ".description");
            out.kind = enum_field(item, "kind", kOutputKindNames, OutputKind::file, where);
            c.outputs.push_back(std::move(out));
        }
    }

    c.environment_assumptions = string_list(doc, "environment_assumptions", false);
    c.execution_steps = string_list(doc, "execution_steps", true);
    c.provenance_links = string_list(doc, "provenance_links", true);
    if (doc.contains("follow_up_guidance") && !doc.at("follow_up_guidance").is_null())
        c.follow_up_guidance = string_field(doc.at("follow_up_guidance"), "follow_up_guidance");
    c.example_invocations = string_list(doc, "example_invocations", false);
    c.test_commands = string_list(doc, "test_commands", false);
    c.volatile_outputs = string_list(doc, "volatile_outputs", false);

    for (const auto* list : {&c.example_invocations, &c.test_commands}) {
        for (const auto& cmd : *list) {
            auto tokens = tokenize_command(cmd);
            if (!tokens || tokens->empty()) throw Error(Errc::malformed_invocation, "cannot tokenize command: " + cmd);
        }
    }
    return c;
}

std::vector<std::string> contract_findings(const SkillContract& c, bool mined) {
    std::vector<std::string> findings;
    if (trim(c.task_scope).empty()) findings.push_back("task_scope is empty");
    if (mined && c.provenance_links.empty()) findings.push_back("provenance_links is empty for a mined contract");
    std::set<std::string> seen;
    for (const auto& in : c.inputs) {
        if (!seen.insert(in.name).second) findings.push_back("input '" + in.name + "' is declared twice");
        if (!in.required) continue;
        bool referenced = false;
        for (const auto& step : c.execution_steps) referenced = referenced || mentions_word(step, in.name);
        for (const auto* list : {&c.example_invocations, &c.test_commands}) {
            for (const auto& cmd : *list) {
                auto names = placeholder_names(cmd);
                referenced = referenced || std::count(names.begin(), names.end(), in.name) > 0 || mentions_word(cmd, in.name);
            }
        }
        if (!referenced) findings.push_back("required input '" + in.name + "' is not referenced by any step or example");
    }
    return findings;
}

// ---- SKILL.md ---------------------------------------------------------------------

std::string render_spec(const PackageIdentity& identity, const SkillContract& c) {
    std::ostringstream out;
    out << "# " << collapse_whitespace(identity.name) << "\n\n";
    out << "id: " << identity.id << "\n\n";
    out << "## Scope\n\n" << collapse_whitespace(c.task_scope) << "\n\n";
    out << "## Inputs\n\n";
    if (c.inputs.empty()) out << "- none\n";
    for (const auto& in : c.inputs) {
        out << "- `" << in.name << "` (" << kInputKindNames.name(in.kind) << ", "
            << (in.required ? "required" : "optional") << ", " << kValueTypeNames.name(in.value_type)
            << "): " << collapse_whitespace(in.description) << "\n";
    }
    out << "\n## Outputs\n\n";
    if (c.outputs.empty()) out << "- none\n";
    for (const auto& o : c.outputs)
        out << "- `" << o.name << "` (" << kOutputKindNames.name(o.kind) << "): " << collapse_whitespace(o.description) << "\n";
    out << "\n## Environment\n\n";
    if (c.environment_assumptions.empty()) out << "- none declared\n";
    for (const auto& e : c.environment_assumptions) out << "- " << collapse_whitespace(e) << "\n";
    out << "\n## Steps\n\n";
    for (size_t i = 0; i < c.execution_steps.size(); ++i)
        out << i + 1 << ". " << collapse_whitespace(c.execution_steps[i]) << "\n";
    out << "\n## Provenance\n\n";
    if (c.provenance_links.empty()) out << "- none\n";
    for (const auto& p : c.provenance_links) out << "- " << p << "\n";
    out << "\n## Follow-up\n\n"
        << (c.follow_up_guidance.empty() ? std::string("None.") : collapse_whitespace(c.follow_up_guidance)) << "\n";
    out << "\n## Examples\n\n";
    if (c.example_invocations.empty()) out << "None.\n";
    for (const auto& e : c.example_invocations) out << "    " << e << "\n";
    out << "\n## Tests\n\n";
    if (c.test_commands.empty()) out << "None.\n";
    for (const auto& t : c.test_commands) out << "    " << t << "\n";
    return out.str();
}

SpecView parse_spec(std::string_view markdown) {
    SpecView view;
    std::map<std::string, std::vector<std::string>> sections;
    std::string current;
    for (const auto& raw : split(markdown, '\n')) {
        std::string line = strip_trailing_whitespace(raw);
        if (line.rfind("## ", 0) == 0) {
            current = trim(line.substr(3));
            sections[current];
            continue;
        }
        if (current.empty()) {
            if (line.rfind("# ", 0) == 0) view.name = trim(line.substr(2));
            else if (line.rfind("id:", 0) == 0) view.id = trim(line.substr(3));
            continue;
        }
        sections[current].push_back(line);
    }
    std::string scope;
    for (const auto& l : sections["Scope"]) scope += l + " ";
    view.task_scope = collapse_whitespace(scope);

    static const std::regex item_re(R"(^- `([^`]+)` \(([^)]*)\):?\s?(.*)$)");
    for (const auto& l : sections["Inputs"]) {
        std::smatch m;
        if (!std::regex_match(l, m, item_re)) continue;
        ContractInput in;
        in.name = m[1];
        auto attrs = split(m[2].str(), ',');
        for (auto& a : attrs) a = trim(a);
        if (attrs.size() >= 1 && kInputKindNames.contains(attrs[0])) in.kind = kInputKindNames.parse(attrs[0], "kind");
        if (attrs.size() >= 2) in.required = attrs[1] == "required";
        if (attrs.size() >= 3 && kValueTypeNames.contains(attrs[2])) in.value_type = kValueTypeNames.parse(attrs[2], "value_type");
        in.description = collapse_whitespace(m[3].str());
        view.inputs.push_back(std::move(in));
    }
    for (const auto& l : sections["Outputs"]) {
        std::smatch m;
        if (!std::regex_match(l, m, item_re)) continue;
        ContractOutput out;
        out.name = m[1];
        const std::string kind = trim(m[2].str());
        if (kOutputKindNames.contains(kind)) out.kind = kOutputKindNames.parse(kind, "kind");
        out.description = collapse_whitespace(m[3].str());
        view.outputs.push_back(std::move(out));
    }
    return view;
}

std::vector<std::string> spec_metadata_divergence(const SpecView& spec, const SkillContract& c) {
    std::vector<std::string> fields;
    if (collapse_whitespace(spec.task_scope) != collapse_whitespace(c.task_scope)) fields.push_back("task_scope");
    auto norm_in = [](std::vector<ContractInput> v) {
        for (auto& i : v) i.description = collapse_whitespace(i.description);
        return v;
    };
    auto norm_out = [](std::vector<ContractOutput> v) {
        for (auto& o : v) o.description = collapse_whitespace(o.description);
        return v;
    };
    if (norm_in(spec.inputs) != norm_in(c.inputs)) fields.push_back("inputs");
    if (norm_out(spec.outputs) != norm_out(c.outputs)) fields.push_back("outputs");
    return fields;
}

// ---- compile / load -------------------------------------------------------------

namespace {

std::string render_provenance(const PackageIdentity& identity, const SkillContract& c,
                              const std::map<std::string, std::string>& locators) {
    std::ostringstream out;
    out << "# Provenance: " << collapse_whitespace(identity.name) << "\n\n";
    out << "Skill `" << identity.id << "` was derived from the resources below.\n\n";
    if (c.provenance_links.empty()) out << "- none recorded\n";
    for (const auto& id : c.provenance_links) {
        out << "- " << id;
        if (auto it = locators.find(id); it != locators.end()) out << ": " << it->second;
        out << "\n";
    }
    return out.str();
}

bool is_reserved(const std::string& rel) { return rel == kSpecFile || rel == kMetadataFile || rel == kProvenanceFile; }

std::vector<std::string> list_files(const fs::path& root, const char* sub) {
    std::vector<std::string> out;
    std::error_code ec;
    const fs::path dir = root / sub;
    if (!fs::is_directory(dir, ec)) return out;
    for (auto it = fs::recursive_directory_iterator(dir); it != fs::recursive_directory_iterator(); ++it)
        if (it->is_regular_file()) out.push_back(fs::relative(it->path(), root).generic_string());
    std::sort(out.begin(), out.end());
    return out;
}

void write_package_file(const fs::path& root, const std::string& rel, const std::string& content, bool exec) {
    const fs::path path = root / rel;
    fs::create_directories(path.parent_path());
    write_file_atomic(path, content, false);
    fs::permissions(path, exec ? fs::perms(0755) : fs::perms(0644), fs::perm_options::replace);
}

}  // namespace

SkillPackage compile_package(const PackageIdentity& identity, const SkillContract& contract,
                             const std::map<std::string, std::string>& artifacts, const fs::path& dest,
                             const std::map<std::string, std::string>& resource_locators) {
    if (trim(contract.task_scope).empty()) throw Error(Errc::contract_violation, "task_scope is empty");
    std::map<std::string, std::pair<std::string, bool>> files;
    for (const auto& [rel, content] : artifacts) {
        auto safe = safe_relative(rel);
        if (!safe) throw Error(Errc::path_escape, "artifact path escapes the package: " + rel);
        const std::string key = safe->generic_string();
        if (is_reserved(key)) throw Error(Errc::contract_violation, "artifact would overwrite " + key);
        const bool exec = key.rfind("scripts/", 0) == 0 || content.rfind("#!", 0) == 0;
        files[key] = {content, exec};
    }

    const fs::path tmp = dest.parent_path() / ("." + dest.filename().string() + ".build");
    try {
        std::error_code ec;
        fs::remove_all(tmp, ec);
        fs::create_directories(tmp);
        write_package_file(tmp, kSpecFile, render_spec(identity, contract), false);
        write_package_file(tmp, kMetadataFile, render_contract(contract).dump(2) + "\n", false);
        write_package_file(tmp, kProvenanceFile, render_provenance(identity, contract, resource_locators), false);
        for (const char* sub : {"scripts", "examples", "tests"}) fs::create_directories(tmp / sub);
        for (const auto& [rel, entry] : files) write_package_file(tmp, rel, entry.first, entry.second);
        fs::remove_all(dest, ec);
        fs::create_directories(dest.parent_path());
        fs::rename(tmp, dest);
    } catch (const fs::filesystem_error& e) {
        std::error_code ec;
        fs::remove_all(tmp, ec);
        throw Error(Errc::write_failure, "cannot write package " + dest.string() + ": " + e.what());
    } catch (const Error& e) {
        std::error_code ec;
        fs::remove_all(tmp, ec);
        throw Error(Errc::write_failure, "cannot write package " + dest.string() + ": " + e.what());
    }

    SkillPackage pkg = load_package(dest);
    auto diverged = spec_metadata_divergence(parse_spec(pkg.spec_document), pkg.contract);
    if (!diverged.empty() || pkg.contract != contract)
        throw Error(Errc::divergence, "compiled package disagrees with its contract on " +
                                          (diverged.empty() ? std::string("metadata") : join(diverged, ", ")));
    return pkg;
}

SkillPackage load_package(const fs::path& root) {
    SkillPackage pkg;
    pkg.root_path = root;
    std::error_code ec;
    if (!fs::exists(root / kMetadataFile, ec)) throw Error(Errc::io_error, "package has no skill.json: " + root.string());
    try {
        pkg.metadata_document = json::parse(read_file(root / kMetadataFile));
    } catch (const json::exception& e) {
        throw Error(Errc::contract_violation, "skill.json does not parse: " + std::string(e.what()));
    }
    pkg.contract = parse_contract(pkg.metadata_document);
    if (fs::exists(root / kSpecFile, ec)) {
        pkg.spec_document = read_file(root / kSpecFile);
        auto view = parse_spec(pkg.spec_document);
        pkg.identity = {view.id, view.name};
    }
    if (fs::exists(root / kProvenanceFile, ec)) pkg.provenance_document = read_file(root / kProvenanceFile);
    pkg.scripts = list_files(root, "scripts");
    pkg.examples = list_files(root, "examples");
    pkg.tests = list_files(root, "tests");
    return pkg;
}

std::optional<TestCommand> resolve_smoke_target(const SkillPackage& package, double timeout_seconds) {
    if (package.contract.test_commands.empty()) return std::nullopt;
    TestCommand cmd;
    cmd.command = package.contract.test_commands.front();
    cmd.timeout_seconds = timeout_seconds;
    return cmd;
}

std::vector<LintFinding> lint_package(const fs::path& root, const std::vector<std::string>& listed_scripts) {
    std::vector<LintFinding> findings;
    std::error_code ec;
    for (const char* f : {kSpecFile, kMetadataFile, kProvenanceFile})
        if (!fs::is_regular_file(root / f, ec)) findings.push_back({"missing-file", f, std::string(f) + " is missing"});

    std::optional<SkillContract> contract;
    if (fs::is_regular_file(root / kMetadataFile, ec)) {
        try {
            contract = parse_contract(json::parse(read_file(root / kMetadataFile)));
        } catch (const std::exception& e) {
            findings.push_back({"bad-metadata", kMetadataFile, e.what()});
        }
    }
    if (contract && fs::is_regular_file(root / kSpecFile, ec)) {
        for (const auto& field : spec_metadata_divergence(parse_spec(read_file(root / kSpecFile)), *contract))
            findings.push_back({"divergence", kSpecFile, "SKILL.md and skill.json disagree on " + field});
    }

    for (const auto& script : list_files(root, "scripts"))
        if (!is_executable(root / script)) findings.push_back({"not-executable", script, script + " is not executable"});

    std::set<std::string> referenced(listed_scripts.begin(), listed_scripts.end());
    if (contract) {
        for (const auto* list : {&contract->example_invocations, &contract->test_commands}) {
            for (const auto& cmd : *list) {
                for (const auto& tok : tokenize_command(cmd).value_or(std::vector<std::string>{})) {
                    if (tok.find('{') != std::string::npos) continue;
                    for (const char* prefix : {"scripts/", "tests/", "examples/"})
                        if (tok.rfind(prefix, 0) == 0) referenced.insert(tok);
                }
            }
        }
        if (contract->test_commands.empty())
            findings.push_back({"missing-tests", kMetadataFile, "no test commands declared", false});
    }
    for (const auto& rel : referenced) {
        auto safe = safe_relative(rel);
        if (!safe) {
            findings.push_back({"missing-file", rel, rel + " escapes the package"});
        } else if (!fs::is_regular_file(root / *safe, ec)) {
            findings.push_back({"missing-file", rel, rel + " is listed but absent"});
        }
    }
    return findings;
}

bool lint_clean(const std::vector<LintFinding>& findings) {
    return std::none_of(findings.begin(), findings.end(), [](const LintFinding& f) { return f.blocking; });
}

}  // namespace skillforge

#include "skillforge/ownership.hpp"

#include "skillforge/util.hpp"

namespace skillforge {

const std::vector<std::string>& refresh_owned_patterns() {
    static const std::vector<std::string> patterns = {
        "registry/*", "site/*", "reports/*", "campaigns/*", "index/*", "*.ndjson", "*.md", "*.json", "*.txt",
        "tree.snapshot", "LOCK",
    };
    return patterns;
}

bool is_leaf_owned(std::string_view repo_relative, const NodePath& leaf) {
    auto safe = safe_relative(repo_relative);
    if (!safe) return false;
    const std::string rel = safe->generic_string();
    const std::string leaf_dir = leaf.fs_form();
    for (const char* root : {"skills/", "tests/"}) {
        const std::string prefix = root + leaf_dir + "/";
        if (rel.rfind(prefix, 0) == 0 && rel.size() > prefix.size()) return true;
    }
    return false;
}

bool is_refresh_owned(std::string_view repo_relative) {
    auto safe = safe_relative(repo_relative);
    if (!safe) return false;
    const std::string rel = safe->generic_string();
    const bool top_level = rel.find('/') == std::string::npos;
    for (const auto& pattern : refresh_owned_patterns()) {
        const bool dir_pattern = pattern.size() > 2 && pattern.compare(pattern.size() - 2, 2, "/*") == 0;
        if (dir_pattern) {
            if (rel.rfind(pattern.substr(0, pattern.size() - 1), 0) == 0) return true;
        } else if (top_level && glob_match(pattern, rel)) {
            return true;
        }
    }
    return top_level;
}

bool is_package_editable(std::string_view package_relative) {
    auto safe = safe_relative(package_relative);
    if (!safe) return false;
    const std::string rel = safe->generic_string();
    if (rel == "SKILL.md" || rel == "skill.json" || rel == "PROVENANCE.md") return true;
    for (const char* dir : {"scripts/", "examples/", "tests/"})
        if (rel.rfind(dir, 0) == 0 && rel.size() > std::string_view(dir).size()) return true;
    return false;
}

}  // namespace skillforge

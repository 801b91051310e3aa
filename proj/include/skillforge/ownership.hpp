#pragma once

#include "skillforge/types.hpp"

#include <string>
#include <string_view>
#include <vector>

namespace skillforge {

/// Repository-relative glob patterns that only the refresh stage may write.
const std::vector<std::string>& refresh_owned_patterns();

/// True for `skills/<leaf>/**` and `tests/<leaf>/**`, with <leaf> in fs form.
bool is_leaf_owned(std::string_view repo_relative, const NodePath& leaf);

/// True when the path matches a refresh-owned pattern (registry, site,
/// reports, campaigns, top-level documents).
bool is_refresh_owned(std::string_view repo_relative);

/// Package-relative paths a repair or optimize edit may touch.
bool is_package_editable(std::string_view package_relative);

}  // namespace skillforge

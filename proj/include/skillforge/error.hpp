#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace skillforge {

/// Error cases raised by engine operations. Each maps to a named case in the
/// operation contracts so callers (and the CLI) can report exactly what failed.
enum class Errc {
    // domain_tree
    parse_error,
    duplicate_path,
    orphan_parent,
    missing_parent,
    duplicate_leaf,
    parent_is_leaf,
    invalid_operand,
    not_a_leaf,
    already_merged,
    already_pruned,
    unassigned_skill,
    doubly_assigned_skill,
    unknown_node,
    // registry_store
    corrupt_record,
    lock_held,
    id_collision,
    invalid_status,
    illegal_transition,
    unknown_skill,
    inconsistency,
    // skill_package
    missing_required_field,
    malformed_invocation,
    contract_violation,
    path_escape,
    write_failure,
    divergence,
    // provider_gateway
    missing_context_field,
    transport_failure,
    mock_miss,
    not_a_single_document,
    schema_violation,
    // pipeline
    out_of_order_stage,
    integrity_failure,
    // validation_harness
    sandbox_failure,
    missing_fixture,
    not_applicable,
    adapter_misconfiguration,
    non_numeric_score,
    // novelty_review
    empty_after_filtering,
    unreadable_catalog,
    // worker_coordination
    duplicate_workspace,
    snapshot_failure,
    shared_file_conflict,
    unparseable_response,
    internal_invariant,
    digest_mismatch,
    // general
    io_error,
    invalid_argument,
};

std::string_view to_string(Errc code);

class Error : public std::runtime_error {
public:
    Error(Errc code, const std::string& message)
        : std::runtime_error(std::string(to_string(code)) + ": " + message), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

}  // namespace skillforge

#include "skillforge/error.hpp"

namespace skillforge {

std::string_view to_string(Errc code) {
    switch (code) {
        case Errc::parse_error: return "parse-error";
        case Errc::duplicate_path: return "duplicate-path";
        case Errc::orphan_parent: return "orphan-parent";
        case Errc::missing_parent: return "missing-parent";
        case Errc::duplicate_leaf: return "duplicate-leaf";
        case Errc::parent_is_leaf: return "parent-is-leaf";
        case Errc::invalid_operand: return "invalid-operand";
        case Errc::not_a_leaf: return "non-leaf";
        case Errc::already_merged: return "already-merged";
        case Errc::already_pruned: return "already-pruned";
        case Errc::unassigned_skill: return "unassigned-skill";
        case Errc::doubly_assigned_skill: return "doubly-assigned-skill";
        case Errc::unknown_node: return "unknown-node";
        case Errc::corrupt_record: return "corrupt-record";
        case Errc::lock_held: return "lock-held";
        case Errc::id_collision: return "id-collision";
        case Errc::invalid_status: return "invalid-status";
        case Errc::illegal_transition: return "illegal-transition";
        case Errc::unknown_skill: return "unknown-skill";
        case Errc::inconsistency: return "inconsistency";
        case Errc::missing_required_field: return "missing-required-field";
        case Errc::malformed_invocation: return "malformed-invocation";
        case Errc::contract_violation: return "contract-violation";
        case Errc::path_escape: return "path-escape";
        case Errc::write_failure: return "write-failure";
        case Errc::divergence: return "spec-metadata-divergence";
        case Errc::missing_context_field: return "missing-context-field";
        case Errc::transport_failure: return "transport-failure";
        case Errc::mock_miss: return "mock-miss";
        case Errc::not_a_single_document: return "not-a-single-document";
        case Errc::schema_violation: return "schema-violation";
        case Errc::out_of_order_stage: return "out-of-order-stage";
        case Errc::integrity_failure: return "integrity-failure";
        case Errc::sandbox_failure: return "sandbox-failure";
        case Errc::missing_fixture: return "missing-fixture";
        case Errc::not_applicable: return "not-applicable";
        case Errc::adapter_misconfiguration: return "adapter-misconfiguration";
        case Errc::non_numeric_score: return "non-numeric-score";
        case Errc::empty_after_filtering: return "empty-after-filtering";
        case Errc::unreadable_catalog: return "unreadable-catalog";
        case Errc::duplicate_workspace: return "duplicate-workspace";
        case Errc::snapshot_failure: return "snapshot-failure";
        case Errc::shared_file_conflict: return "shared-file-write-conflict";
        case Errc::unparseable_response: return "unparseable-stage-response";
        case Errc::internal_invariant: return "internal-invariant";
        case Errc::digest_mismatch: return "digest-mismatch";
        case Errc::io_error: return "io-error";
        case Errc::invalid_argument: return "invalid-argument";
    }
    return "unknown";
}

}  // namespace skillforge

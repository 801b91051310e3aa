#pragma once

#include "skillforge/error.hpp"

#include <array>
#include <compare>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace skillforge {

/// Enum <-> string table helper. Each enum below provides a constexpr table
/// in declaration order.
template <typename E, size_t N>
struct EnumNames {
    std::array<std::pair<E, std::string_view>, N> entries;

    std::string_view name(E value) const {
        for (const auto& [v, n] : entries)
            if (v == value) return n;
        return "?";
    }

    E parse(std::string_view text, std::string_view what) const {
        for (const auto& [v, n] : entries)
            if (n == text) return v;
        throw Error(Errc::invalid_argument, "unknown " + std::string(what) + " '" + std::string(text) + "'");
    }

    bool contains(std::string_view text) const {
        for (const auto& [v, n] : entries)
            if (n == text) return true;
        return false;
    }
};

enum class Outcome { pass, fail, error };
inline constexpr EnumNames<Outcome, 3> kOutcomeNames{{{
    {Outcome::pass, "pass"}, {Outcome::fail, "fail"}, {Outcome::error, "error"}}}};

enum class SkillStatus { untested, repaired, verified, review, deprecated, removed };
inline constexpr EnumNames<SkillStatus, 6> kSkillStatusNames{{{
    {SkillStatus::untested, "untested"},
    {SkillStatus::repaired, "repaired"},
    {SkillStatus::verified, "verified"},
    {SkillStatus::review, "review"},
    {SkillStatus::deprecated, "deprecated"},
    {SkillStatus::removed, "removed"}}}};

enum class Confidence { starter, standard };
inline constexpr EnumNames<Confidence, 2> kConfidenceNames{{{
    {Confidence::starter, "starter"}, {Confidence::standard, "standard"}}}};

enum class Layer { execution, synthetic, system, benchmark };
inline constexpr EnumNames<Layer, 4> kLayerNames{{{
    {Layer::execution, "execution"},
    {Layer::synthetic, "synthetic"},
    {Layer::system, "system"},
    {Layer::benchmark, "benchmark"}}}};

/// Ordered label sequence from the root; the unique key of a tree node.
class NodePath {
public:
    NodePath() = default;
    explicit NodePath(std::vector<std::string> labels) : labels_(std::move(labels)) {}

    /// Parses "a/b/c". Empty segments are rejected.
    static NodePath parse(std::string_view text);

    const std::vector<std::string>& labels() const { return labels_; }
    size_t depth() const { return labels_.empty() ? 0 : labels_.size() - 1; }
    bool empty() const { return labels_.empty(); }
    const std::string& leaf_label() const { return labels_.back(); }

    NodePath parent() const;
    NodePath child(std::string label) const;
    bool is_ancestor_of(const NodePath& other) const;

    std::string str() const;
    /// Filesystem form: slugified labels joined with '/'.
    std::string fs_form() const;
    /// Single-token slug of the whole path, labels joined with "--".
    std::string slug() const;

    auto operator<=>(const NodePath&) const = default;
    bool operator==(const NodePath&) const = default;

private:
    std::vector<std::string> labels_;
};

}  // namespace skillforge

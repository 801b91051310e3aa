#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace skillforge {

namespace fs = std::filesystem;

// ---- digests ------------------------------------------------------------

/// Lowercase hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view data);

/// Path filter used by directory digests and copies; return true to skip.
using PathFilter = std::function<bool(const fs::path& relative)>;

/// Content digest of a directory tree: sorted relative paths, each with its
/// content hash and executable bit. Missing directories digest as empty.
std::string digest_directory(const fs::path& root, const PathFilter& skip = {});

/// Per-file digests (relative path -> content hash, with "+x" suffix for
/// executable files).
std::map<std::string, std::string> file_digests(const fs::path& root, const PathFilter& skip = {});

// ---- files --------------------------------------------------------------

std::string read_file(const fs::path& path);

/// Write via a sibling temp file, fsync, then rename over the target.
void write_file_atomic(const fs::path& path, std::string_view content, bool sync = true);

/// Append one buffer in a single write call and (optionally) fdatasync it.
void append_file(const fs::path& path, std::string_view content, bool sync = true);

void set_executable(const fs::path& path, bool executable);
bool is_executable(const fs::path& path);

/// Recursive copy preserving permission bits; `skip` prunes relative paths.
void copy_tree(const fs::path& from, const fs::path& to, const PathFilter& skip = {});

/// Lexically normalizes `relative` and rejects absolute paths and any path
/// that climbs above its base. Returns the normalized relative path.
std::optional<fs::path> safe_relative(std::string_view relative);

// ---- text ---------------------------------------------------------------

std::string to_lower(std::string_view s);
std::string trim(std::string_view s);
/// Collapse every whitespace run to one space and trim both ends.
std::string collapse_whitespace(std::string_view s);
/// Strip trailing whitespace from every line; drop trailing blank lines.
std::string strip_trailing_whitespace(std::string_view s);
/// Lowercase, every non-alphanumeric run becomes '-', no leading/trailing '-'.
std::string slugify(std::string_view s);
std::vector<std::string> split(std::string_view s, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);
bool glob_match(std::string_view pattern, std::string_view text);

/// Shell-free tokenizer: whitespace separates tokens; single quotes are
/// literal; double quotes allow backslash escapes. Returns nullopt on an
/// unterminated quote or dangling escape.
std::optional<std::vector<std::string>> tokenize_command(std::string_view command);

// ---- processes ----------------------------------------------------------

struct ProcessSpec {
    std::vector<std::string> argv;
    fs::path working_dir;
    std::map<std::string, std::string> env;  // complete environment
    std::chrono::milliseconds timeout{5000};
    std::optional<std::string> stdin_data;
};

struct ProcessResult {
    int exit_status = -1;  // exit code, or 128 + signal
    bool timed_out = false;
    bool spawn_failed = false;
    std::string output;  // stdout and stderr interleaved
    double duration_seconds = 0.0;
};

/// Runs argv[0] (PATH lookup, no shell) in its own process group; kills the
/// group on timeout.
ProcessResult run_process(const ProcessSpec& spec);

/// Minimal deterministic environment: PATH, LANG=C, HOME/TMPDIR set to `home`.
std::map<std::string, std::string> hermetic_env(const fs::path& home);

// ---- clocks -------------------------------------------------------------

/// Duration source for stage timing; swappable so tests can script durations.
class Clock {
public:
    virtual ~Clock() = default;
    virtual double now_seconds() = 0;
};

class SteadyClock final : public Clock {
public:
    double now_seconds() override;
};

}  // namespace skillforge

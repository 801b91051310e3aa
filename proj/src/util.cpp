#include "skillforge/util.hpp"

#include "skillforge/error.hpp"

#include <openssl/evp.h>

#include <fcntl.h>
#include <fnmatch.h>
#include <poll.h>
#include <signal.h>
#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>
#include <thread>

namespace skillforge {

std::string sha256_hex(std::string_view data) {
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx(EVP_MD_CTX_new(), &EVP_MD_CTX_free);
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!ctx || EVP_DigestInit_ex(ctx.get(), EVP_sha256(), nullptr) != 1 ||
        EVP_DigestUpdate(ctx.get(), data.data(), data.size()) != 1 ||
        EVP_DigestFinal_ex(ctx.get(), md, &len) != 1) {
        throw Error(Errc::io_error, "sha256 failed");
    }
    static constexpr char hex[] = "0123456789abcdef";
    std::string out;
    out.reserve(len * 2);
    for (unsigned int i = 0; i < len; ++i) {
        out.push_back(hex[md[i] >> 4]);
        out.push_back(hex[md[i] & 0xf]);
    }
    return out;
}

std::map<std::string, std::string> file_digests(const fs::path& root, const PathFilter& skip) {
    std::map<std::string, std::string> out;
    std::error_code ec;
    if (!fs::is_directory(root, ec)) return out;
    for (auto it = fs::recursive_directory_iterator(root); it != fs::recursive_directory_iterator(); ++it) {
        const fs::path rel = it->path().lexically_relative(root);
        if (skip && skip(rel)) {
            if (it->is_directory()) it.disable_recursion_pending();
            continue;
        }
        if (!it->is_regular_file()) continue;
        std::string digest = sha256_hex(read_file(it->path()));
        if (is_executable(it->path())) digest += "+x";
        out.emplace(rel.generic_string(), std::move(digest));
    }
    return out;
}

std::string digest_directory(const fs::path& root, const PathFilter& skip) {
    std::string manifest;
    for (const auto& [path, digest] : file_digests(root, skip)) {
        manifest += path;
        manifest += '\0';
        manifest += digest;
        manifest += '\n';
    }
    return sha256_hex(manifest);
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(Errc::io_error, "cannot read " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

namespace {

void write_all(int fd, std::string_view content, const fs::path& path) {
    const char* p = content.data();
    size_t left = content.size();
    while (left > 0) {
        ssize_t n = ::write(fd, p, left);
        if (n < 0) {
            if (errno == EINTR) continue;
            throw Error(Errc::write_failure, path.string() + ": " + std::strerror(errno));
        }
        p += n;
        left -= static_cast<size_t>(n);
    }
}

}  // namespace

void write_file_atomic(const fs::path& path, std::string_view content, bool sync) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    fs::path tmp = path;
    tmp += ".tmp." + std::to_string(::getpid());
    int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(Errc::write_failure, tmp.string() + ": " + std::strerror(errno));
    try {
        write_all(fd, content, tmp);
        if (sync && ::fsync(fd) != 0) throw Error(Errc::write_failure, "fsync " + tmp.string());
    } catch (...) {
        ::close(fd);
        ::unlink(tmp.c_str());
        throw;
    }
    ::close(fd);
    if (::rename(tmp.c_str(), path.c_str()) != 0) {
        ::unlink(tmp.c_str());
        throw Error(Errc::write_failure, "rename " + path.string() + ": " + std::strerror(errno));
    }
}

void append_file(const fs::path& path, std::string_view content, bool sync) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd < 0) throw Error(Errc::write_failure, path.string() + ": " + std::strerror(errno));
    try {
        write_all(fd, content, path);
        if (sync && ::fdatasync(fd) != 0) throw Error(Errc::write_failure, "fdatasync " + path.string());
    } catch (...) {
        ::close(fd);
        throw;
    }
    ::close(fd);
}

void set_executable(const fs::path& path, bool executable) {
    auto perms = fs::perms::owner_exec | fs::perms::group_exec | fs::perms::others_exec;
    fs::permissions(path, perms, executable ? fs::perm_options::add : fs::perm_options::remove);
}

bool is_executable(const fs::path& path) {
    std::error_code ec;
    auto st = fs::status(path, ec);
    if (ec) return false;
    return (st.permissions() & fs::perms::owner_exec) != fs::perms::none;
}

void copy_tree(const fs::path& from, const fs::path& to, const PathFilter& skip) {
    fs::create_directories(to);
    std::error_code ec;
    if (!fs::is_directory(from, ec)) return;
    for (auto it = fs::recursive_directory_iterator(from); it != fs::recursive_directory_iterator(); ++it) {
        const fs::path rel = it->path().lexically_relative(from);
        if (skip && skip(rel)) {
            if (it->is_directory()) it.disable_recursion_pending();
            continue;
        }
        const fs::path dest = to / rel;
        if (it->is_directory()) {
            fs::create_directories(dest);
        } else if (it->is_regular_file()) {
            fs::create_directories(dest.parent_path());
            fs::copy_file(it->path(), dest, fs::copy_options::overwrite_existing);
            fs::permissions(dest, fs::status(it->path()).permissions() | fs::perms::owner_write);
        }
    }
}

std::optional<fs::path> safe_relative(std::string_view relative) {
    if (relative.empty()) return std::nullopt;
    fs::path p(relative);
    if (p.is_absolute() || p.has_root_name() || p.has_root_directory()) return std::nullopt;
    fs::path norm = p.lexically_normal();
    if (norm.empty() || norm == ".") return std::nullopt;
    for (const auto& part : norm) {
        if (part == "..") return std::nullopt;
    }
    return norm;
}

std::string to_lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string trim(std::string_view s) {
    size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return std::string(s.substr(b, e - b));
}

std::string collapse_whitespace(std::string_view s) {
    std::string out;
    bool pending_space = false;
    for (char c : s) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            pending_space = !out.empty();
        } else {
            if (pending_space) out.push_back(' ');
            pending_space = false;
            out.push_back(c);
        }
    }
    return out;
}

std::string strip_trailing_whitespace(std::string_view s) {
    std::vector<std::string> lines = split(s, '\n');
    for (auto& line : lines) {
        while (!line.empty() && std::isspace(static_cast<unsigned char>(line.back()))) line.pop_back();
    }
    while (!lines.empty() && lines.back().empty()) lines.pop_back();
    return join(lines, "\n");
}

std::string slugify(std::string_view s) {
    std::string out;
    bool dash = false;
    for (unsigned char c : s) {
        if (std::isalnum(c)) {
            if (dash && !out.empty()) out.push_back('-');
            dash = false;
            out.push_back(static_cast<char>(std::tolower(c)));
        } else {
            dash = true;
        }
    }
    return out;
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.emplace_back(s.substr(start));
            break;
        }
        out.emplace_back(s.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); ++i) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

bool glob_match(std::string_view pattern, std::string_view text) {
    return ::fnmatch(std::string(pattern).c_str(), std::string(text).c_str(), 0) == 0;
}

std::optional<std::vector<std::string>> tokenize_command(std::string_view command) {
    std::vector<std::string> tokens;
    std::string current;
    bool in_token = false;
    enum class Quote { none, single, dbl } quote = Quote::none;
    for (size_t i = 0; i < command.size(); ++i) {
        char c = command[i];
        switch (quote) {
            case Quote::single:
                if (c == '\'') quote = Quote::none;
                else current.push_back(c);
                break;
            case Quote::dbl:
                if (c == '"') {
                    quote = Quote::none;
                } else if (c == '\\') {
                    if (i + 1 >= command.size()) return std::nullopt;
                    current.push_back(command[++i]);
                } else {
                    current.push_back(c);
                }
                break;
            case Quote::none:
                if (std::isspace(static_cast<unsigned char>(c))) {
                    if (in_token) tokens.push_back(std::move(current));
                    current.clear();
                    in_token = false;
                } else if (c == '\'') {
                    quote = Quote::single;
                    in_token = true;
                } else if (c == '"') {
                    quote = Quote::dbl;
                    in_token = true;
                } else if (c == '\\') {
                    if (i + 1 >= command.size()) return std::nullopt;
                    current.push_back(command[++i]);
                    in_token = true;
                } else {
                    current.push_back(c);
                    in_token = true;
                }
                break;
        }
    }
    if (quote != Quote::none) return std::nullopt;
    if (in_token) tokens.push_back(std::move(current));
    return tokens;
}

ProcessResult run_process(const ProcessSpec& spec) {
    ProcessResult result;
    if (spec.argv.empty()) {
        result.spawn_failed = true;
        result.output = "empty command";
        return result;
    }
    int out_pipe[2];
    int in_pipe[2];
    if (::pipe2(out_pipe, O_CLOEXEC) != 0 || ::pipe2(in_pipe, O_CLOEXEC) != 0) {
        result.spawn_failed = true;
        result.output = std::string("pipe: ") + std::strerror(errno);
        return result;
    }

    std::vector<std::string> env_strings;
    for (const auto& [k, v] : spec.env) env_strings.push_back(k + "=" + v);
    std::vector<char*> envp;
    for (auto& s : env_strings) envp.push_back(s.data());
    envp.push_back(nullptr);
    std::vector<std::string> argv_copy = spec.argv;
    std::vector<char*> argv;
    for (auto& s : argv_copy) argv.push_back(s.data());
    argv.push_back(nullptr);
    std::string path_env = spec.env.count("PATH") ? spec.env.at("PATH") : "/usr/bin:/bin";

    const auto start = std::chrono::steady_clock::now();
    pid_t pid = ::fork();
    if (pid < 0) {
        result.spawn_failed = true;
        result.output = std::string("fork: ") + std::strerror(errno);
        return result;
    }
    if (pid == 0) {
        ::setpgid(0, 0);
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::dup2(out_pipe[1], STDERR_FILENO);
        if (!spec.working_dir.empty() && ::chdir(spec.working_dir.c_str()) != 0) _exit(126);
        // execvpe resolves argv[0] against the child's PATH
        ::setenv("PATH", path_env.c_str(), 1);
        ::execvpe(argv[0], argv.data(), envp.data());
        _exit(127);
    }
    ::setpgid(pid, pid);
    ::close(out_pipe[1]);
    ::close(in_pipe[0]);
    if (spec.stdin_data) {
        const std::string& data = *spec.stdin_data;
        size_t off = 0;
        while (off < data.size()) {
            ssize_t n = ::write(in_pipe[1], data.data() + off, data.size() - off);
            if (n <= 0) break;
            off += static_cast<size_t>(n);
        }
    }
    ::close(in_pipe[1]);

    const auto deadline = start + spec.timeout;
    char buf[4096];
    bool eof = false;
    while (!eof) {
        auto now = std::chrono::steady_clock::now();
        if (now >= deadline) {
            result.timed_out = true;
            break;
        }
        int wait_ms = static_cast<int>(
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count());
        pollfd pfd{out_pipe[0], POLLIN, 0};
        int rc = ::poll(&pfd, 1, std::max(1, std::min(wait_ms, 200)));
        if (rc < 0 && errno != EINTR) break;
        if (rc > 0) {
            ssize_t n = ::read(out_pipe[0], buf, sizeof buf);
            if (n > 0) result.output.append(buf, static_cast<size_t>(n));
            else if (n == 0) eof = true;
        }
    }
    int status = 0;
    if (result.timed_out) {
        ::kill(-pid, SIGKILL);
        ::waitpid(pid, &status, 0);
    } else {
        // output closed; the child may still be running without holding stdout
        while (true) {
            pid_t w = ::waitpid(pid, &status, WNOHANG);
            if (w == pid) break;
            if (std::chrono::steady_clock::now() >= deadline) {
                result.timed_out = true;
                ::kill(-pid, SIGKILL);
                ::waitpid(pid, &status, 0);
                break;
            }
            std::this_thread::sleep_for(std::chrono::milliseconds(2));
        }
    }
    ::close(out_pipe[0]);
    result.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (WIFEXITED(status)) result.exit_status = WEXITSTATUS(status);
    else if (WIFSIGNALED(status)) result.exit_status = 128 + WTERMSIG(status);
    if (!result.timed_out && result.exit_status == 127 && result.output.empty()) {
        result.spawn_failed = true;
        result.output = "command not found: " + spec.argv[0];
    }
    return result;
}

std::map<std::string, std::string> hermetic_env(const fs::path& home) {
    return {
        {"PATH", "/usr/local/bin:/usr/bin:/bin"},
        {"LANG", "C"},
        {"LC_ALL", "C"},
        {"HOME", home.string()},
        {"TMPDIR", home.string()},
        {"TZ", "UTC"},
    };
}

double SteadyClock::now_seconds() {
    return std::chrono::duration<double>(std::chrono::steady_clock::now().time_since_epoch()).count();
}

}  // namespace skillforge

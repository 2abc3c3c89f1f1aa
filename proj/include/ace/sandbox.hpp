#pragma once

#include <fcntl.h>
#include <poll.h>
#include <sched.h>
#include <signal.h>
#include <sys/prctl.h>
#include <sys/resource.h>
#include <sys/stat.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cerrno>
#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "ace/core.hpp"
#include "ace/errors.hpp"

namespace ace {

struct ExitStatus {
    enum class Kind { Exited, Killed };
    Kind kind = Kind::Exited;
    int exit_code = 0;
    int term_signal = 0;
    std::string reason;

    bool exited(int code) const { return kind == Kind::Exited && exit_code == code; }
    static ExitStatus make_exited(int code) {
        ExitStatus s;
        s.kind = Kind::Exited;
        s.exit_code = code;
        return s;
    }
    static ExitStatus make_killed(int sig, std::string why) {
        ExitStatus s;
        s.kind = Kind::Killed;
        s.term_signal = sig;
        s.reason = std::move(why);
        return s;
    }
};

/// What actually happened when one program ran on one stdin payload.
/// stdout/stderr are truncated at the output cap; the *_truncated flags
/// record that the cap was hit. sandbox_error marks a harness failure
/// (spawn/exec), never a failure of the program under test.
struct RawExecution {
    std::string stdout_data;
    std::string stderr_data;
    ExitStatus status;
    std::chrono::milliseconds wall_time_used{0};
    std::chrono::milliseconds cpu_time_used{0};
    std::uint64_t peak_memory_bytes = 0;
    bool timed_out = false;
    bool memory_exceeded = false;
    bool stdout_truncated = false;
    bool stderr_truncated = false;
    std::optional<std::string> sandbox_error;
};

enum class VerdictKind {
    Pass,
    WrongOutput,
    RuntimeError,
    Timeout,
    MemoryExceeded,
    OutputLimit,
    SandboxError
};

inline std::string to_string(VerdictKind k) {
    switch (k) {
        case VerdictKind::Pass: return "pass";
        case VerdictKind::WrongOutput: return "wrong_output";
        case VerdictKind::RuntimeError: return "runtime_error";
        case VerdictKind::Timeout: return "timeout";
        case VerdictKind::MemoryExceeded: return "memory_exceeded";
        case VerdictKind::OutputLimit: return "output_limit";
        case VerdictKind::SandboxError: return "sandbox_error";
    }
    return "sandbox_error";
}

inline VerdictKind verdict_kind_from_string(const std::string& s) {
    if (s == "pass") return VerdictKind::Pass;
    if (s == "wrong_output") return VerdictKind::WrongOutput;
    if (s == "runtime_error") return VerdictKind::RuntimeError;
    if (s == "timeout") return VerdictKind::Timeout;
    if (s == "memory_exceeded") return VerdictKind::MemoryExceeded;
    if (s == "output_limit") return VerdictKind::OutputLimit;
    if (s == "sandbox_error") return VerdictKind::SandboxError;
    throw ParseError("unknown verdict kind: " + s);
}

struct Verdict {
    VerdictKind kind = VerdictKind::SandboxError;
    std::string detail;
};

struct SandboxConfig {
    std::vector<std::string> interpreter{"python3"};
    std::string scratch_root;  // empty = system temp dir

    static bool debug_enabled() {
        const char* v = std::getenv("SANDBOX_DEBUG");
        return v && *v && std::string_view(v) != "0";
    }
};

inline void to_json(json& j, const SandboxConfig& c) {
    j = json{{"interpreter", c.interpreter}};
    if (!c.scratch_root.empty()) j["scratch_root"] = c.scratch_root;
}

inline void from_json(const json& j, SandboxConfig& c) {
    if (j.contains("interpreter")) c.interpreter = j.at("interpreter").get<std::vector<std::string>>();
    c.scratch_root = j.value("scratch_root", std::string());
    if (c.interpreter.empty()) throw ValidationError("empty interpreter command");
}

namespace detail {

struct Fd {
    int fd = -1;
    Fd() = default;
    explicit Fd(int f) : fd(f) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    Fd(Fd&& o) noexcept : fd(o.fd) { o.fd = -1; }
    Fd& operator=(Fd&& o) noexcept {
        reset();
        fd = o.fd;
        o.fd = -1;
        return *this;
    }
    ~Fd() { reset(); }
    void reset() {
        if (fd >= 0) ::close(fd);
        fd = -1;
    }
    bool valid() const { return fd >= 0; }
};

struct ScratchDir {
    std::filesystem::path path;
    explicit ScratchDir(const std::string& root) {
        namespace fs = std::filesystem;
        fs::path base = root.empty() ? fs::temp_directory_path() : fs::path(root);
        std::string tmpl = (base / "ace-sbx-XXXXXX").string();
        std::vector<char> buf(tmpl.begin(), tmpl.end());
        buf.push_back('\0');
        if (!mkdtemp(buf.data())) {
            throw SandboxError(std::string("mkdtemp failed: ") + std::strerror(errno));
        }
        path = buf.data();
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;
    ~ScratchDir() {
        std::error_code ec;
        std::filesystem::remove_all(path, ec);
    }
};

inline void set_nonblocking(int fd) {
    int flags = fcntl(fd, F_GETFL, 0);
    fcntl(fd, F_SETFL, flags | O_NONBLOCK);
}

inline void ignore_sigpipe_once() {
    static const int done = [] {
        ::signal(SIGPIPE, SIG_IGN);
        return 0;
    }();
    (void)done;
}

inline void apply_child_limits(const ResourceLimits& limits) {
    auto set = [](int resource, rlim_t soft, rlim_t hard) {
        struct rlimit rl{soft, hard};
        setrlimit(resource, &rl);
    };
    rlim_t cpu_s = static_cast<rlim_t>((limits.cpu_time.count() + 999) / 1000);
    if (cpu_s == 0) cpu_s = 1;
    set(RLIMIT_CPU, cpu_s, cpu_s + 1);
    set(RLIMIT_AS, limits.memory_bytes, limits.memory_bytes);
    set(RLIMIT_FSIZE, limits.output_cap_bytes, limits.output_cap_bytes);
    set(RLIMIT_CORE, 0, 0);
    set(RLIMIT_NOFILE, 256, 256);
    set(RLIMIT_NPROC, 2048, 2048);
}

}  // namespace detail

/// Runs `source` under the configured interpreter with `stdin_data` on
/// standard input, inside a fresh scratch directory, under hard limits.
///
/// The stdin pipe's write end stays open after the payload is written:
/// a program that reads past the provided input blocks and is killed at the
/// wall deadline, so non-termination on input shows up as a timeout rather
/// than an EOF error. The whole process group is SIGKILLed at the deadline.
inline RawExecution execute(const std::string& source, const std::string& stdin_data,
                            const ResourceLimits& limits, const SandboxConfig& cfg = {}) {
    using clock = std::chrono::steady_clock;
    limits.validate();
    if (stdin_data.size() > limits.max_test_input_bytes) {
        throw DomainError("stdin payload exceeds max_test_input_bytes");
    }
    if (cfg.interpreter.empty()) {
        throw DomainError("empty interpreter command");
    }
    detail::ignore_sigpipe_once();

    RawExecution result;
    auto fail = [&](const std::string& msg) {
        result.sandbox_error = msg;
        return result;
    };

    std::unique_ptr<detail::ScratchDir> scratch;
    try {
        scratch = std::make_unique<detail::ScratchDir>(cfg.scratch_root);
        write_file(scratch->path / "main.py", source);
    } catch (const Error& e) {
        return fail(e.what());
    }

    int in_pipe[2], out_pipe[2], err_pipe[2], status_pipe[2];
    if (pipe2(in_pipe, O_CLOEXEC) != 0 || pipe2(out_pipe, O_CLOEXEC) != 0 ||
        pipe2(err_pipe, O_CLOEXEC) != 0 || pipe2(status_pipe, O_CLOEXEC) != 0) {
        return fail(std::string("pipe2 failed: ") + std::strerror(errno));
    }
    detail::Fd in_r(in_pipe[0]), in_w(in_pipe[1]);
    detail::Fd out_r(out_pipe[0]), out_w(out_pipe[1]);
    detail::Fd err_r(err_pipe[0]), err_w(err_pipe[1]);
    detail::Fd status_r(status_pipe[0]), status_w(status_pipe[1]);

    std::string script_path = (scratch->path / "main.py").string();
    std::vector<std::string> argv_store = cfg.interpreter;
    argv_store.push_back(script_path);
    std::vector<char*> argv;
    for (auto& a : argv_store) argv.push_back(a.data());
    argv.push_back(nullptr);

    std::string scratch_str = scratch->path.string();
    std::vector<std::string> env_store = {
        "PATH=/usr/local/bin:/usr/bin:/bin",
        "HOME=" + scratch_str,
        "TMPDIR=" + scratch_str,
        "LC_ALL=C",
        "PYTHONDONTWRITEBYTECODE=1",
        "PYTHONHASHSEED=0",
        "PYTHONIOENCODING=utf-8",
    };
    std::vector<char*> envp;
    for (auto& e : env_store) envp.push_back(e.data());
    envp.push_back(nullptr);

    auto start = clock::now();
    pid_t pid = fork();
    if (pid < 0) {
        return fail(std::string("fork failed: ") + std::strerror(errno));
    }
    if (pid == 0) {
        // Child: async-signal-safe calls only from here to exec.
        setsid();
        prctl(PR_SET_PDEATHSIG, SIGKILL);
        unshare(CLONE_NEWNET);  // best effort; needs privilege
        dup2(in_r.fd, STDIN_FILENO);
        dup2(out_w.fd, STDOUT_FILENO);
        dup2(err_w.fd, STDERR_FILENO);
        if (chdir(scratch_str.c_str()) != 0) _exit(125);
        detail::apply_child_limits(limits);
        execvpe(argv[0], argv.data(), envp.data());
        int err = errno;
        ssize_t ignored = write(status_pipe[1], &err, sizeof(err));
        (void)ignored;
        _exit(127);
    }

    in_r.reset();
    out_w.reset();
    err_w.reset();
    status_w.reset();
    detail::set_nonblocking(in_w.fd);
    detail::set_nonblocking(out_r.fd);
    detail::set_nonblocking(err_r.fd);

    // Blocks only until exec: the pipe is close-on-exec, so success reads EOF.
    int exec_errno = 0;
    ssize_t sn = read(status_r.fd, &exec_errno, sizeof(exec_errno));
    status_r.reset();
    bool exec_failed = sn == static_cast<ssize_t>(sizeof(exec_errno));

    auto deadline = start + limits.wall_time;
    bool killed_for_wall = false;
    auto kill_group = [&] {
        if (kill(-pid, SIGKILL) != 0) kill(pid, SIGKILL);
    };
    if (exec_failed) kill_group();

    size_t stdin_offset = 0;
    bool stdin_open = true;
    bool stdin_pending = !stdin_data.empty();
    bool out_done = false, err_done = false;
    bool reaped = false;
    int wstatus = 0;
    struct rusage ru{};
    std::optional<clock::time_point> drain_deadline;

    auto drain = [&](detail::Fd& fd, std::string& sink, bool& truncated, bool& done) {
        char buf[65536];
        for (;;) {
            ssize_t n = read(fd.fd, buf, sizeof(buf));
            if (n > 0) {
                size_t room = sink.size() < limits.output_cap_bytes
                                  ? limits.output_cap_bytes - sink.size()
                                  : 0;
                size_t take = std::min(room, static_cast<size_t>(n));
                sink.append(buf, take);
                if (take < static_cast<size_t>(n)) truncated = true;
                if (static_cast<size_t>(n) < sizeof(buf)) return;
            } else if (n == 0) {
                done = true;
                fd.reset();
                return;
            } else {
                if (errno == EINTR) continue;
                if (errno != EAGAIN && errno != EWOULDBLOCK) {
                    done = true;
                    fd.reset();
                }
                return;
            }
        }
    };

    while (true) {
        auto now = clock::now();
        if (!killed_for_wall && now >= deadline) {
            killed_for_wall = true;
            kill_group();
        }
        if (reaped) {
            if (!drain_deadline) drain_deadline = now + std::chrono::milliseconds(500);
            if ((out_done && err_done) || now >= *drain_deadline) break;
        }

        struct pollfd fds[3];
        int nfds = 0;
        int in_slot = -1, out_slot = -1, err_slot = -1;
        if (stdin_open && stdin_pending) {
            in_slot = nfds;
            fds[nfds++] = {in_w.fd, POLLOUT, 0};
        }
        if (!out_done) {
            out_slot = nfds;
            fds[nfds++] = {out_r.fd, POLLIN, 0};
        }
        if (!err_done) {
            err_slot = nfds;
            fds[nfds++] = {err_r.fd, POLLIN, 0};
        }

        int timeout_ms = 20;
        if (!killed_for_wall) {
            auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now);
            timeout_ms = static_cast<int>(std::clamp<long long>(left.count(), 0, 20));
        }
        if (nfds > 0) {
            poll(fds, nfds, timeout_ms);
        } else if (!reaped) {
            std::this_thread::sleep_for(std::chrono::milliseconds(2));
        }

        if (in_slot >= 0 && (fds[in_slot].revents & (POLLOUT | POLLERR | POLLHUP))) {
            if (fds[in_slot].revents & (POLLERR | POLLHUP)) {
                in_w.reset();
                stdin_open = false;
            } else {
                ssize_t n = write(in_w.fd, stdin_data.data() + stdin_offset,
                                  std::min<size_t>(stdin_data.size() - stdin_offset, 65536));
                if (n > 0) {
                    stdin_offset += static_cast<size_t>(n);
                    if (stdin_offset == stdin_data.size()) stdin_pending = false;
                } else if (n < 0 && errno != EAGAIN && errno != EWOULDBLOCK && errno != EINTR) {
                    in_w.reset();
                    stdin_open = false;
                }
            }
        }
        if (out_slot >= 0 && (fds[out_slot].revents & (POLLIN | POLLHUP | POLLERR))) {
            drain(out_r, result.stdout_data, result.stdout_truncated, out_done);
        }
        if (err_slot >= 0 && (fds[err_slot].revents & (POLLIN | POLLHUP | POLLERR))) {
            drain(err_r, result.stderr_data, result.stderr_truncated, err_done);
        }

        if (!reaped) {
            pid_t r = wait4(pid, &wstatus, WNOHANG, &ru);
            if (r == pid) {
                reaped = true;
                result.wall_time_used =
                    std::chrono::duration_cast<std::chrono::milliseconds>(clock::now() - start);
            } else if (r < 0 && errno == ECHILD) {
                reaped = true;
            }
        }
    }

    // Nuke any stragglers in the group (double-forked descendants share it).
    kill_group();
    if (!out_done) drain(out_r, result.stdout_data, result.stdout_truncated, out_done);
    if (!err_done) drain(err_r, result.stderr_data, result.stderr_truncated, err_done);

    result.cpu_time_used = std::chrono::milliseconds(
        (ru.ru_utime.tv_sec + ru.ru_stime.tv_sec) * 1000 +
        (ru.ru_utime.tv_usec + ru.ru_stime.tv_usec) / 1000);
    result.peak_memory_bytes = static_cast<std::uint64_t>(ru.ru_maxrss) * 1024;

    if (exec_failed) {
        result.sandbox_error = std::string("exec failed: ") + std::strerror(exec_errno);
        return result;
    }

    if (WIFEXITED(wstatus)) {
        result.status = ExitStatus::make_exited(WEXITSTATUS(wstatus));
    } else if (WIFSIGNALED(wstatus)) {
        int sig = WTERMSIG(wstatus);
        std::string why = killed_for_wall ? "wall limit" : std::string("signal ") + std::to_string(sig);
        result.status = ExitStatus::make_killed(sig, why);
    } else {
        result.status = ExitStatus::make_killed(0, "unknown termination");
    }

    bool cpu_exhausted = result.cpu_time_used >= limits.cpu_time;
    result.timed_out = killed_for_wall ||
                       (result.status.kind == ExitStatus::Kind::Killed &&
                        (result.status.term_signal == SIGXCPU || cpu_exhausted));
    if (result.timed_out && result.status.kind != ExitStatus::Kind::Killed) {
        // exited in the instant between the deadline kill and reaping
        result.status = ExitStatus::make_killed(SIGKILL, "wall limit");
    }
    result.memory_exceeded = result.peak_memory_bytes >= limits.memory_bytes;

    if (SandboxConfig::debug_enabled()) {
        std::fprintf(stderr,
                     "[sandbox] exit=%s code=%d sig=%d wall=%lldms cpu=%lldms rss=%llu "
                     "timeout=%d mem=%d out=%zuB err=%zuB\n",
                     result.status.kind == ExitStatus::Kind::Exited ? "exited" : "killed",
                     result.status.exit_code, result.status.term_signal,
                     static_cast<long long>(result.wall_time_used.count()),
                     static_cast<long long>(result.cpu_time_used.count()),
                     static_cast<unsigned long long>(result.peak_memory_bytes),
                     int(result.timed_out), int(result.memory_exceeded),
                     result.stdout_data.size(), result.stderr_data.size());
    }
    return result;
}

/// Ground-truth semantics: pass requires clean exit within limits plus exact
/// normalized output match. Failure kinds are ordered most-specific-first:
/// Timeout > MemoryExceeded > OutputLimit > RuntimeError > WrongOutput.
inline Verdict gt_verdict(const RawExecution& raw, const std::string& expected) {
    if (raw.sandbox_error) return {VerdictKind::SandboxError, *raw.sandbox_error};
    if (raw.timed_out) return {VerdictKind::Timeout, "killed at resource deadline"};
    if (raw.memory_exceeded) return {VerdictKind::MemoryExceeded, "peak memory at limit"};
    if (raw.stdout_truncated) return {VerdictKind::OutputLimit, "stdout exceeded cap"};
    if (raw.status.kind == ExitStatus::Kind::Killed) {
        return {VerdictKind::RuntimeError, "killed by signal " + std::to_string(raw.status.term_signal)};
    }
    if (raw.status.exit_code != 0) {
        return {VerdictKind::RuntimeError, "exit code " + std::to_string(raw.status.exit_code)};
    }
    if (normalize_output(raw.stdout_data) == normalize_output(expected)) {
        return {VerdictKind::Pass, ""};
    }
    return {VerdictKind::WrongOutput, "output mismatch"};
}

/// Adversarial semantics: pass requires only normal termination within time
/// and memory limits; stdout content is ignored entirely. Never WrongOutput.
inline Verdict adv_verdict(const RawExecution& raw) {
    if (raw.sandbox_error) return {VerdictKind::SandboxError, *raw.sandbox_error};
    if (raw.timed_out) return {VerdictKind::Timeout, "killed at resource deadline"};
    if (raw.memory_exceeded) return {VerdictKind::MemoryExceeded, "peak memory at limit"};
    if (raw.status.kind == ExitStatus::Kind::Killed) {
        return {VerdictKind::RuntimeError, "killed by signal " + std::to_string(raw.status.term_signal)};
    }
    if (raw.status.exit_code != 0) {
        return {VerdictKind::RuntimeError, "exit code " + std::to_string(raw.status.exit_code)};
    }
    return {VerdictKind::Pass, ""};
}

struct ExecJob {
    std::string source;
    std::string stdin_data;
    ResourceLimits limits;
};

/// Executes jobs across `parallelism` workers. Results are positionally
/// aligned with jobs; per-job sandbox failures land in the corresponding slot.
inline std::vector<RawExecution> run_batch(const std::vector<ExecJob>& jobs, int parallelism,
                                           const SandboxConfig& cfg = {}) {
    if (parallelism < 1) throw DomainError("parallelism must be >= 1");
    std::vector<RawExecution> results(jobs.size());
    if (jobs.empty()) return results;

    std::atomic<size_t> next{0};
    auto worker = [&] {
        for (;;) {
            size_t i = next.fetch_add(1);
            if (i >= jobs.size()) return;
            try {
                results[i] = execute(jobs[i].source, jobs[i].stdin_data, jobs[i].limits, cfg);
            } catch (const std::exception& e) {
                results[i].sandbox_error = e.what();
            }
        }
    };

    size_t n_workers = std::min(static_cast<size_t>(parallelism), jobs.size());
    if (n_workers == 1) {
        worker();
        return results;
    }
    std::vector<std::thread> threads;
    threads.reserve(n_workers);
    for (size_t i = 0; i < n_workers; ++i) threads.emplace_back(worker);
    for (auto& t : threads) t.join();
    return results;
}

}  // namespace ace

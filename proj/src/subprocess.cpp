#include "codesign/subprocess.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <mutex>
#include <thread>

extern char** environ;

namespace codesign {

namespace {

constexpr std::size_t kStderrCap = 16 * 1024;

class Fd {
public:
    Fd() = default;
    explicit Fd(int fd) : fd_(fd) {}
    Fd(const Fd&) = delete;
    Fd& operator=(const Fd&) = delete;
    Fd(Fd&& o) noexcept : fd_(o.fd_) { o.fd_ = -1; }
    Fd& operator=(Fd&& o) noexcept {
        if (this != &o) {
            reset();
            fd_ = o.fd_;
            o.fd_ = -1;
        }
        return *this;
    }
    ~Fd() { reset(); }

    int get() const noexcept { return fd_; }
    explicit operator bool() const noexcept { return fd_ >= 0; }
    void reset() noexcept {
        if (fd_ >= 0) ::close(fd_);
        fd_ = -1;
    }

private:
    int fd_ = -1;
};

bool make_pipe(Fd& read_end, Fd& write_end) {
    int fds[2];
    if (::pipe2(fds, O_CLOEXEC) != 0) return false;
    read_end = Fd(fds[0]);
    write_end = Fd(fds[1]);
    return true;
}

void set_nonblocking(int fd) { ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) | O_NONBLOCK); }

void ignore_sigpipe() {
    static std::once_flag once;
    std::call_once(once, [] { ::signal(SIGPIPE, SIG_IGN); });
}

void record_status(LineExchange& out, int status) {
    if (WIFEXITED(status)) out.exit_code = WEXITSTATUS(status);
    if (WIFSIGNALED(status)) out.term_signal = WTERMSIG(status);
}

} // namespace

LineExchange exchange_line(const std::vector<std::string>& argv, const std::string& input,
                           std::chrono::milliseconds timeout) {
    using Clock = std::chrono::steady_clock;
    ignore_sigpipe();
    LineExchange out;
    if (argv.empty()) {
        out.launch_errno = EINVAL;
        return out;
    }

    Fd in_r, in_w, out_r, out_w, err_r, err_w;
    if (!make_pipe(in_r, in_w) || !make_pipe(out_r, out_w) || !make_pipe(err_r, err_w)) {
        out.launch_errno = errno;
        return out;
    }

    posix_spawn_file_actions_t actions;
    posix_spawn_file_actions_init(&actions);
    posix_spawn_file_actions_adddup2(&actions, in_r.get(), STDIN_FILENO);
    posix_spawn_file_actions_adddup2(&actions, out_w.get(), STDOUT_FILENO);
    posix_spawn_file_actions_adddup2(&actions, err_w.get(), STDERR_FILENO);
    posix_spawnattr_t attr;
    posix_spawnattr_init(&attr);
    posix_spawnattr_setflags(&attr, POSIX_SPAWN_SETPGROUP);
    posix_spawnattr_setpgroup(&attr, 0);

    std::vector<char*> args;
    for (const auto& a : argv) args.push_back(const_cast<char*>(a.c_str()));
    args.push_back(nullptr);

    pid_t pid = -1;
    const int rc = ::posix_spawnp(&pid, args[0], &actions, &attr, args.data(), environ);
    posix_spawn_file_actions_destroy(&actions);
    posix_spawnattr_destroy(&attr);
    if (rc != 0) {
        out.launch_errno = rc;
        return out;
    }
    out.launched = true;
    in_r.reset();
    out_w.reset();
    err_w.reset();
    set_nonblocking(in_w.get());
    set_nonblocking(out_r.get());
    set_nonblocking(err_r.get());

    const auto deadline = Clock::now() + timeout;
    std::size_t written = 0;
    std::string stdout_buf;
    bool exited = false;
    int status = 0;

    auto remaining_ms = [&] {
        // Rounded up so the wait never ends before the deadline.
        const auto left = std::chrono::ceil<std::chrono::milliseconds>(deadline - Clock::now());
        return static_cast<int>(std::max<std::int64_t>(0, left.count()));
    };

    while (!out.got_line) {
        if (written == input.size() && in_w) in_w.reset();
        pollfd fds[3];
        nfds_t n = 0;
        int in_idx = -1, out_idx = -1, err_idx = -1;
        if (in_w) { in_idx = static_cast<int>(n); fds[n++] = {in_w.get(), POLLOUT, 0}; }
        if (out_r) { out_idx = static_cast<int>(n); fds[n++] = {out_r.get(), POLLIN, 0}; }
        if (err_r) { err_idx = static_cast<int>(n); fds[n++] = {err_r.get(), POLLIN, 0}; }
        if (!out_r) break;  // stdout closed without a full line

        const int wait = remaining_ms();
        if (wait == 0) {
            out.timed_out = true;
            break;
        }
        const int ready = ::poll(fds, n, wait);
        if (ready < 0 && errno != EINTR) break;
        if (ready <= 0) continue;

        if (in_idx >= 0 && (fds[in_idx].revents & (POLLOUT | POLLERR | POLLHUP))) {
            const auto w = ::write(in_w.get(), input.data() + written, input.size() - written);
            if (w > 0) written += static_cast<std::size_t>(w);
            else if (errno != EAGAIN) { written = input.size(); in_w.reset(); }
        }
        if (err_idx >= 0 && (fds[err_idx].revents & (POLLIN | POLLHUP))) {
            char buf[4096];
            const auto r = ::read(err_r.get(), buf, sizeof buf);
            if (r > 0) {
                if (out.stderr_text.size() < kStderrCap) out.stderr_text.append(buf, static_cast<std::size_t>(r));
            } else if (r == 0) {
                err_r.reset();
            }
        }
        if (out_idx >= 0 && (fds[out_idx].revents & (POLLIN | POLLHUP))) {
            char buf[4096];
            const auto r = ::read(out_r.get(), buf, sizeof buf);
            if (r > 0) {
                stdout_buf.append(buf, static_cast<std::size_t>(r));
                const auto nl = stdout_buf.find('\n');
                if (nl != std::string::npos) {
                    out.line = stdout_buf.substr(0, nl);
                    out.got_line = true;
                }
            } else if (r == 0) {
                out_r.reset();
                if (!stdout_buf.empty()) {
                    out.line = stdout_buf;
                    out.got_line = true;
                }
            }
        }
    }
    in_w.reset();

    // Give the child the rest of the budget to exit, then kill the group.
    while (!exited && !out.timed_out) {
        const pid_t w = ::waitpid(pid, &status, WNOHANG);
        if (w == pid) {
            exited = true;
            record_status(out, status);
            break;
        }
        if (remaining_ms() == 0) break;
        if (err_r) {
            char buf[4096];
            const auto r = ::read(err_r.get(), buf, sizeof buf);
            if (r > 0 && out.stderr_text.size() < kStderrCap) out.stderr_text.append(buf, static_cast<std::size_t>(r));
            if (r == 0) err_r.reset();
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(2));
    }
    if (!exited) {
        if (!out.got_line) out.timed_out = true;
        ::kill(-pid, SIGKILL);
        ::waitpid(pid, &status, 0);
        if (out.timed_out) {
            out.exit_code = -1;
        } else {
            record_status(out, status);
        }
    }
    return out;
}

} // namespace codesign

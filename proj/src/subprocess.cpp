#include "alita/subprocess.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cctype>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <stdexcept>

namespace alita::subprocess {

namespace {

void append_capped(std::string& sink, const char* data, std::size_t n, bool& truncated) {
    if (truncated) return;
    std::size_t room = kStreamCapBytes > sink.size() ? kStreamCapBytes - sink.size() : 0;
    if (n <= room) {
        sink.append(data, n);
        return;
    }
    sink.append(data, room);
    sink.append(kTruncationMarker);
    truncated = true;
}

} // namespace

std::string shell_quote(const std::string& token) {
    bool plain = !token.empty();
    for (unsigned char c : token) {
        if (!(std::isalnum(c) || c == '_' || c == '-' || c == '.' || c == '/' ||
              c == ':' || c == '=' || c == '+' || c == ',' || c == '@' || c == '%')) {
            plain = false;
            break;
        }
    }
    if (plain) return token;
    std::string quoted = "'";
    for (char c : token) {
        if (c == '\'') quoted += "'\\''";
        else quoted += c;
    }
    quoted += "'";
    return quoted;
}

std::string shell_join(const std::vector<std::string>& argv) {
    std::string line;
    for (const auto& tok : argv) {
        if (!line.empty()) line += ' ';
        line += shell_quote(tok);
    }
    return line;
}

CommandResult run_shell(const std::string& command,
                        const std::filesystem::path& cwd,
                        double timeout_seconds) {
    int out_pipe[2];
    int err_pipe[2];
    if (pipe(out_pipe) != 0 || pipe(err_pipe) != 0) {
        throw std::runtime_error("subprocess: pipe() failed: " + std::string(strerror(errno)));
    }

    const auto start = std::chrono::steady_clock::now();
    pid_t pid = fork();
    if (pid < 0) {
        throw std::runtime_error("subprocess: fork() failed: " + std::string(strerror(errno)));
    }

    if (pid == 0) {
        // Child: own process group so a timeout can kill the whole tree.
        setpgid(0, 0);
        if (!cwd.empty() && chdir(cwd.c_str()) != 0) _exit(127);
        dup2(out_pipe[1], STDOUT_FILENO);
        dup2(err_pipe[1], STDERR_FILENO);
        close(out_pipe[0]);
        close(out_pipe[1]);
        close(err_pipe[0]);
        close(err_pipe[1]);
        execl("/bin/sh", "sh", "-c", command.c_str(), static_cast<char*>(nullptr));
        _exit(127);
    }

    close(out_pipe[1]);
    close(err_pipe[1]);
    fcntl(out_pipe[0], F_SETFL, O_NONBLOCK);
    fcntl(err_pipe[0], F_SETFL, O_NONBLOCK);

    CommandResult result;
    bool out_truncated = false;
    bool err_truncated = false;
    bool out_open = true;
    bool err_open = true;
    char buf[8192];

    const auto deadline = start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                      std::chrono::duration<double>(timeout_seconds));

    while (out_open || err_open) {
        auto now = std::chrono::steady_clock::now();
        if (now >= deadline) {
            result.timed_out = true;
            kill(-pid, SIGKILL);
            break;
        }
        int wait_ms = static_cast<int>(
            std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count());
        if (wait_ms < 1) wait_ms = 1;
        if (wait_ms > 200) wait_ms = 200;

        struct pollfd fds[2];
        nfds_t nfds = 0;
        int out_idx = -1;
        int err_idx = -1;
        if (out_open) {
            out_idx = static_cast<int>(nfds);
            fds[nfds++] = {out_pipe[0], POLLIN, 0};
        }
        if (err_open) {
            err_idx = static_cast<int>(nfds);
            fds[nfds++] = {err_pipe[0], POLLIN, 0};
        }
        int rc = poll(fds, nfds, wait_ms);
        if (rc < 0) {
            if (errno == EINTR) continue;
            break;
        }
        if (rc == 0) continue;

        if (out_idx >= 0 && (fds[out_idx].revents & (POLLIN | POLLHUP))) {
            ssize_t n = read(out_pipe[0], buf, sizeof(buf));
            if (n > 0) append_capped(result.stdout_text, buf, static_cast<std::size_t>(n), out_truncated);
            else if (n == 0 || (n < 0 && errno != EAGAIN)) out_open = false;
        }
        if (err_idx >= 0 && (fds[err_idx].revents & (POLLIN | POLLHUP))) {
            ssize_t n = read(err_pipe[0], buf, sizeof(buf));
            if (n > 0) append_capped(result.stderr_text, buf, static_cast<std::size_t>(n), err_truncated);
            else if (n == 0 || (n < 0 && errno != EAGAIN)) err_open = false;
        }
    }

    close(out_pipe[0]);
    close(err_pipe[0]);

    int status = 0;
    waitpid(pid, &status, 0);
    if (!result.timed_out) {
        if (WIFEXITED(status)) result.exit_code = WEXITSTATUS(status);
        else if (WIFSIGNALED(status)) result.exit_code = 128 + WTERMSIG(status);
    }

    result.duration_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

} // namespace alita::subprocess

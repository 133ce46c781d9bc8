/*
 * udocker-cpp
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "udocker/util.hpp"
#include "udocker/errors.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

extern char** environ;

namespace udocker {

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw io_error("cannot read " + p.string() + ": " + std::strerror(errno));
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, std::string_view data) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw io_error("cannot write " + p.string() + ": " + std::strerror(errno));
    out.write(data.data(), static_cast<std::streamsize>(data.size()));
    if (!out) throw io_error("short write to " + p.string());
}

void ensure_dir(const fs::path& p) {
    std::error_code ec;
    fs::create_directories(p, ec);
    if (ec) throw io_error("mkdir " + p.string() + ": " + ec.message());
    if (!fs::is_directory(p)) throw io_error(p.string() + " exists and is not a directory");
}

std::string hex_encode(const unsigned char* data, size_t n) {
    static const char digits[] = "0123456789abcdef";
    std::string out;
    out.reserve(n * 2);
    for (size_t i = 0; i < n; i++) {
        out.push_back(digits[data[i] >> 4]);
        out.push_back(digits[data[i] & 0xf]);
    }
    return out;
}

std::string uuid4() {
    static thread_local std::mt19937_64 rng{std::random_device{}()};
    uint64_t hi = rng(), lo = rng();
    unsigned char b[16];
    std::memcpy(b, &hi, 8);
    std::memcpy(b + 8, &lo, 8);
    b[6] = static_cast<unsigned char>((b[6] & 0x0f) | 0x40);  // version 4
    b[8] = static_cast<unsigned char>((b[8] & 0x3f) | 0x80);  // variant 10
    std::string h = hex_encode(b, 16);
    return h.substr(0, 8) + "-" + h.substr(8, 4) + "-" + h.substr(12, 4) + "-" +
           h.substr(16, 4) + "-" + h.substr(20, 12);
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    size_t start = 0;
    while (true) {
        size_t pos = s.find(sep, start);
        if (pos == std::string::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

std::string join(const std::vector<std::string>& parts, const std::string& sep) {
    std::string out;
    for (size_t i = 0; i < parts.size(); i++) {
        if (i) out += sep;
        out += parts[i];
    }
    return out;
}

bool starts_with(std::string_view s, std::string_view prefix) {
    return s.size() >= prefix.size() && s.substr(0, prefix.size()) == prefix;
}

std::optional<std::string> env_var(const char* name) {
    const char* v = ::getenv(name);
    if (!v) return std::nullopt;
    return std::string(v);
}

std::string normalize_abs_path(std::string_view path) {
    std::vector<std::string> stack;
    size_t i = 0;
    while (i < path.size()) {
        while (i < path.size() && path[i] == '/') i++;
        size_t j = i;
        while (j < path.size() && path[j] != '/') j++;
        std::string_view comp = path.substr(i, j - i);
        if (comp.empty() || comp == ".") {
            // skip
        } else if (comp == "..") {
            if (!stack.empty()) stack.pop_back();
        } else {
            stack.emplace_back(comp);
        }
        i = j;
    }
    std::string out = "/";
    for (size_t k = 0; k < stack.size(); k++) {
        if (k) out += "/";
        out += stack[k];
    }
    return out;
}

FileLock::FileLock(const fs::path& lock_file) {
    fd_ = ::open(lock_file.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw io_error("cannot open lock file " + lock_file.string());
    if (::flock(fd_, LOCK_EX) != 0) {
        ::close(fd_);
        fd_ = -1;
        throw io_error("cannot lock " + lock_file.string());
    }
}

FileLock::~FileLock() {
    if (fd_ >= 0) {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
}

static void read_all_fd(int fd, std::string& out) {
    char buf[4096];
    ssize_t n;
    while ((n = ::read(fd, buf, sizeof buf)) > 0) out.append(buf, static_cast<size_t>(n));
}

ProcessResult run_process(const std::vector<std::string>& argv, const ProcessOptions& opts) {
    if (argv.empty()) throw usage_error("run_process: empty argv");

    int out_pipe[2], err_pipe[2], in_pipe[2] = {-1, -1};
    if (::pipe(out_pipe) != 0 || ::pipe(err_pipe) != 0)
        throw io_error("pipe failed");
    if (opts.stdin_data && ::pipe(in_pipe) != 0)
        throw io_error("pipe failed");

    pid_t pid = ::fork();
    if (pid < 0) throw io_error("fork failed");

    if (pid == 0) {
        ::dup2(out_pipe[1], 1);
        ::dup2(err_pipe[1], 2);
        ::close(out_pipe[0]); ::close(out_pipe[1]);
        ::close(err_pipe[0]); ::close(err_pipe[1]);
        if (opts.stdin_data) {
            ::dup2(in_pipe[0], 0);
            ::close(in_pipe[0]); ::close(in_pipe[1]);
        } else {
            int devnull = ::open("/dev/null", O_RDONLY);
            if (devnull >= 0) ::dup2(devnull, 0);
        }
        if (opts.cwd && ::chdir(opts.cwd->c_str()) != 0) _exit(127);

        std::vector<char*> cargv;
        for (auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
        cargv.push_back(nullptr);

        if (!opts.env.empty() || !opts.inherit_env) {
            std::vector<char*> cenv;
            for (auto& e : opts.env) cenv.push_back(const_cast<char*>(e.c_str()));
            cenv.push_back(nullptr);
            ::execvpe(cargv[0], cargv.data(), cenv.data());
        } else {
            ::execvp(cargv[0], cargv.data());
        }
        _exit(127);
    }

    ::close(out_pipe[1]);
    ::close(err_pipe[1]);
    if (opts.stdin_data) {
        ::close(in_pipe[0]);
        const std::string& d = *opts.stdin_data;
        size_t off = 0;
        while (off < d.size()) {
            ssize_t n = ::write(in_pipe[1], d.data() + off, d.size() - off);
            if (n <= 0) break;
            off += static_cast<size_t>(n);
        }
        ::close(in_pipe[1]);
    }

    ProcessResult res;
    read_all_fd(out_pipe[0], res.out);
    read_all_fd(err_pipe[0], res.err);
    ::close(out_pipe[0]);
    ::close(err_pipe[0]);

    int status = 0;
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {}
    if (WIFEXITED(status)) {
        res.exit_code = WEXITSTATUS(status);
    } else if (WIFSIGNALED(status)) {
        res.exit_code = -1;
        res.term_signal = WTERMSIG(status);
    }
    return res;
}

}  // namespace udocker

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

#include "udocker/engine_ptrace.hpp"

#include "udocker/errors.hpp"
#include "udocker/log.hpp"
#include "udocker/util.hpp"

#include <elf.h>
#include <fcntl.h>
#include <linux/audit.h>
#include <linux/filter.h>
#include <linux/seccomp.h>
#include <sys/prctl.h>
#include <sys/ptrace.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <sys/uio.h>
#include <sys/user.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <cstddef>
#include <cstring>
#include <map>
#include <memory>
#include <set>

#ifndef __x86_64__
#error "the tracing engine currently supports x86_64 only"
#endif

namespace udocker::engine {

namespace {

// ---------------------------------------------------------------- dispatch

enum class Kind {
    Path,         // translate path argument(s), no exit work
    Open,         // like Path, plus fd tracking for containment checks
    Chdir,        // translate + update tracked cwd on success
    Fchdir,       // no path; re-read cwd on success
    Getcwd,       // divert to scratch, answer from tracked cwd
    Readlink,     // translate + reverse-translate the result
    Exec,         // full command-line rewrite
    Deny,         // suppress, fail with EPERM
    IdGet,        // fake identity value in the return register
    IdResGet,     // fake identity values through out-pointers
    IdAbsorb,     // suppress, pretend success
    ChownAbsorb,  // translate path, then suppress with success
};

enum class FlagsUse { None, OpenFlags, AtFlags, AtFlagsFollow };

struct SyscallSpec {
    Kind kind = Kind::Path;
    int path_arg = -1;
    int dirfd_arg = -1;
    int path2_arg = -1;
    int dirfd2_arg = -1;
    bool follow_last = true;
    int flags_arg = -1;
    FlagsUse flags_use = FlagsUse::None;
};

const std::map<long, SyscallSpec>& dispatch_table() {
    static const std::map<long, SyscallSpec> table = [] {
        std::map<long, SyscallSpec> t;
        auto path0 = [](bool follow) {
            SyscallSpec s;
            s.path_arg = 0;
            s.follow_last = follow;
            return s;
        };
        auto at1 = [](bool follow) {
            SyscallSpec s;
            s.dirfd_arg = 0;
            s.path_arg = 1;
            s.follow_last = follow;
            return s;
        };

        t[SYS_open] = {Kind::Open, 0, -1, -1, -1, true, 1, FlagsUse::OpenFlags};
        t[SYS_creat] = {Kind::Open, 0, -1, -1, -1, true, -1, FlagsUse::None};
        t[SYS_openat] = {Kind::Open, 1, 0, -1, -1, true, 2, FlagsUse::OpenFlags};
        t[SYS_openat2] = {Kind::Open, 1, 0, -1, -1, true, -1, FlagsUse::None};

        t[SYS_stat] = path0(true);
        t[SYS_lstat] = path0(false);
        t[SYS_newfstatat] = {Kind::Path, 1, 0, -1, -1, true, 3, FlagsUse::AtFlags};
        t[SYS_statx] = {Kind::Path, 1, 0, -1, -1, true, 2, FlagsUse::AtFlags};
        t[SYS_access] = path0(true);
        t[SYS_faccessat] = at1(true);
        t[439 /*faccessat2*/] = {Kind::Path, 1, 0, -1, -1, true, 3, FlagsUse::AtFlags};
        t[SYS_statfs] = path0(true);
        t[SYS_truncate] = path0(true);

        t[SYS_chdir] = {Kind::Chdir, 0, -1, -1, -1, true, -1, FlagsUse::None};
        t[SYS_fchdir] = {Kind::Fchdir, -1, -1, -1, -1, true, -1, FlagsUse::None};
        t[SYS_getcwd] = {Kind::Getcwd, -1, -1, -1, -1, true, -1, FlagsUse::None};

        t[SYS_readlink] = {Kind::Readlink, 0, -1, -1, -1, false, -1, FlagsUse::None};
        t[SYS_readlinkat] = {Kind::Readlink, 1, 0, -1, -1, false, -1, FlagsUse::None};

        t[SYS_mkdir] = path0(false);
        t[SYS_mkdirat] = at1(false);
        t[SYS_rmdir] = path0(false);
        t[SYS_unlink] = path0(false);
        t[SYS_unlinkat] = at1(false);

        t[SYS_rename] = {Kind::Path, 0, -1, 1, -1, false, -1, FlagsUse::None};
        t[SYS_renameat] = {Kind::Path, 1, 0, 3, 2, false, -1, FlagsUse::None};
        t[SYS_renameat2] = {Kind::Path, 1, 0, 3, 2, false, -1, FlagsUse::None};
        t[SYS_link] = {Kind::Path, 0, -1, 1, -1, false, -1, FlagsUse::None};
        t[SYS_linkat] = {Kind::Path, 1, 0, 3, 2, false, 4, FlagsUse::AtFlagsFollow};
        // symlink: the target string is stored verbatim, only the link
        // path maps into the container
        t[SYS_symlink] = {Kind::Path, 1, -1, -1, -1, false, -1, FlagsUse::None};
        t[SYS_symlinkat] = {Kind::Path, 2, 1, -1, -1, false, -1, FlagsUse::None};

        t[SYS_chmod] = path0(true);
        t[SYS_fchmodat] = {Kind::Path, 1, 0, -1, -1, true, 3, FlagsUse::AtFlags};
        t[452 /*fchmodat2*/] = {Kind::Path, 1, 0, -1, -1, true, 3, FlagsUse::AtFlags};

        t[SYS_chown] = {Kind::ChownAbsorb, 0, -1, -1, -1, true, -1, FlagsUse::None};
        t[SYS_lchown] = {Kind::ChownAbsorb, 0, -1, -1, -1, false, -1, FlagsUse::None};
        t[SYS_fchownat] = {Kind::ChownAbsorb, 1, 0, -1, -1, true, 4, FlagsUse::AtFlags};
        t[SYS_fchown] = {Kind::ChownAbsorb, -1, -1, -1, -1, true, -1, FlagsUse::None};

        t[SYS_utime] = path0(true);
        t[SYS_utimes] = path0(true);
        t[SYS_futimesat] = at1(true);
        t[SYS_utimensat] = {Kind::Path, 1, 0, -1, -1, true, 3, FlagsUse::AtFlags};

        t[SYS_getxattr] = path0(true);
        t[SYS_lgetxattr] = path0(false);
        t[SYS_setxattr] = path0(true);
        t[SYS_lsetxattr] = path0(false);
        t[SYS_listxattr] = path0(true);
        t[SYS_llistxattr] = path0(false);
        t[SYS_removexattr] = path0(true);
        t[SYS_lremovexattr] = path0(false);
        t[SYS_inotify_add_watch] = {Kind::Path, 1, -1, -1, -1, true, -1, FlagsUse::None};

        t[SYS_execve] = {Kind::Exec, 0, -1, -1, -1, true, -1, FlagsUse::None};
        t[SYS_execveat] = {Kind::Exec, 1, 0, -1, -1, true, -1, FlagsUse::None};

        t[SYS_mknod] = {Kind::Deny, 0, -1, -1, -1, false, -1, FlagsUse::None};
        t[SYS_mknodat] = {Kind::Deny, 1, 0, -1, -1, false, -1, FlagsUse::None};
        t[SYS_mount] = {Kind::Deny, -1, -1, -1, -1, true, -1, FlagsUse::None};
        t[SYS_umount2] = {Kind::Deny, -1, -1, -1, -1, true, -1, FlagsUse::None};
        t[SYS_chroot] = {Kind::Deny, -1, -1, -1, -1, true, -1, FlagsUse::None};
        return t;
    }();
    return table;
}

const std::map<long, SyscallSpec>& identity_table() {
    static const std::map<long, SyscallSpec> table = [] {
        std::map<long, SyscallSpec> t;
        for (long nr : {SYS_getuid, SYS_geteuid, SYS_getgid, SYS_getegid})
            t[nr] = {Kind::IdGet, -1, -1, -1, -1, true, -1, FlagsUse::None};
        for (long nr : {SYS_getresuid, SYS_getresgid})
            t[nr] = {Kind::IdResGet, -1, -1, -1, -1, true, -1, FlagsUse::None};
        for (long nr : {SYS_setuid, SYS_setgid, SYS_setreuid, SYS_setregid, SYS_setresuid,
                        SYS_setresgid, SYS_setfsuid, SYS_setfsgid, SYS_setgroups})
            t[nr] = {Kind::IdAbsorb, -1, -1, -1, -1, true, -1, FlagsUse::None};
        return t;
    }();
    return table;
}

// ------------------------------------------------------------ tracee memory

std::string read_tracee_string(pid_t tid, uint64_t addr, size_t cap = 2 * PM_PATH_MAX) {
    std::string out;
    if (addr == 0) return out;
    char buf[512];
    while (out.size() < cap) {
        size_t page_left = 4096 - (addr % 4096);
        size_t take = std::min(page_left, sizeof buf);
        struct iovec liov{buf, take}, riov{reinterpret_cast<void*>(addr), take};
        ssize_t n = ::process_vm_readv(tid, &liov, 1, &riov, 1, 0);
        if (n <= 0) {
            // fall back to word peeks (e.g. across guard pages)
            errno = 0;
            long w = ::ptrace(PTRACE_PEEKDATA, tid, addr, nullptr);
            if (errno != 0) return out;
            std::memcpy(buf, &w, sizeof w);
            n = sizeof w;
        }
        for (ssize_t i = 0; i < n; i++) {
            if (buf[i] == '\0') return out;
            out.push_back(buf[i]);
        }
        addr += static_cast<uint64_t>(n);
    }
    return out;
}

bool write_tracee(pid_t tid, uint64_t addr, const void* data, size_t len) {
    struct iovec liov{const_cast<void*>(data), len}, riov{reinterpret_cast<void*>(addr), len};
    if (::process_vm_writev(tid, &liov, 1, &riov, 1, 0) == static_cast<ssize_t>(len))
        return true;
    const char* p = static_cast<const char*>(data);
    for (size_t off = 0; off < len; off += sizeof(long)) {
        long word = 0;
        std::memcpy(&word, p + off, std::min(sizeof(long), len - off));
        if (::ptrace(PTRACE_POKEDATA, tid, addr + off, word) != 0) return false;
    }
    return true;
}

std::vector<uint64_t> read_pointer_array(pid_t tid, uint64_t addr, size_t cap = 1024) {
    std::vector<uint64_t> out;
    if (addr == 0) return out;
    while (out.size() < cap) {
        errno = 0;
        uint64_t v = 0;
        struct iovec liov{&v, 8}, riov{reinterpret_cast<void*>(addr), 8};
        if (::process_vm_readv(tid, &liov, 1, &riov, 1, 0) != 8) {
            errno = 0;
            long w = ::ptrace(PTRACE_PEEKDATA, tid, addr, nullptr);
            if (errno != 0) break;
            v = static_cast<uint64_t>(w);
        }
        if (v == 0) break;
        out.push_back(v);
        addr += 8;
    }
    return out;
}

// ------------------------------------------------------------------- tasks

struct FsState {
    std::string cwd = "/";
};

struct Pending {
    enum class Type {
        None,
        FakeReturn,
        Chdir,
        Fchdir,
        Getcwd,
        Readlink,
        TrackFd,
        IdGet,
        IdResGet,
    };
    Type type = Type::None;
    long long fake_value = 0;
    std::string new_cwd;
    uint64_t user_buf = 0;
    uint64_t user_size = 0;
    uint64_t aux_ptrs[3] = {0, 0, 0};
};

struct Task {
    pid_t tid = 0;
    std::shared_ptr<FsState> fs;
    bool in_syscall = false;       // P2 entry/exit alternation
    bool exit_requested = false;   // P1: PTRACE_SYSCALL issued from a seccomp stop
    bool seen_first_stop = false;
    bool linked = false;           // fs state inherited from the parent
    bool skip_exec_rewrite = false;
    Pending pending;
};

// Kernels differ in what PTRACE_SYSCALL delivers after a seccomp stop:
// since 4.8 the next stop is the syscall exit, before that a syscall
// entry comes first. Probed once with a disposable tracee.
enum class PostSeccompStop { ExitDirect, EntryFirst };

PostSeccompStop probe_post_seccomp_semantics() {
    static PostSeccompStop cached = [] {
        pid_t child = ::fork();
        if (child == 0) {
            ::ptrace(PTRACE_TRACEME, 0, nullptr, nullptr);
            ::raise(SIGSTOP);
            sock_filter filt[] = {
                BPF_STMT(BPF_LD | BPF_W | BPF_ABS, offsetof(seccomp_data, nr)),
                BPF_JUMP(BPF_JMP | BPF_JEQ | BPF_K, SYS_getppid, 0, 1),
                BPF_STMT(BPF_RET | BPF_K, SECCOMP_RET_TRACE),
                BPF_STMT(BPF_RET | BPF_K, SECCOMP_RET_ALLOW),
            };
            sock_fprog prog{sizeof(filt) / sizeof(filt[0]), filt};
            if (::prctl(PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) != 0 ||
                ::prctl(PR_SET_SECCOMP, SECCOMP_MODE_FILTER, &prog) != 0)
                _exit(1);
            ::syscall(SYS_getppid);
            _exit(0);
        }
        PostSeccompStop result = PostSeccompStop::ExitDirect;
        int st = 0;
        ::waitpid(child, &st, 0);
        if (WIFSTOPPED(st)) {
            ::ptrace(PTRACE_SETOPTIONS, child, nullptr,
                     PTRACE_O_TRACESYSGOOD | PTRACE_O_TRACESECCOMP | PTRACE_O_EXITKILL);
            ::ptrace(PTRACE_CONT, child, nullptr, 0);
            ::waitpid(child, &st, 0);
            if (WIFSTOPPED(st) && (st >> 16) == PTRACE_EVENT_SECCOMP) {
                ::ptrace(PTRACE_SYSCALL, child, nullptr, 0);
                ::waitpid(child, &st, 0);
                if (WIFSTOPPED(st) && WSTOPSIG(st) == (SIGTRAP | 0x80)) {
                    user_regs_struct regs{};
                    if (::ptrace(PTRACE_GETREGS, child, nullptr, &regs) == 0 &&
                        static_cast<long long>(regs.rax) == -ENOSYS)
                        result = PostSeccompStop::EntryFirst;
                }
            }
        }
        ::kill(child, SIGKILL);
        ::waitpid(child, &st, 0);
        return result;
    }();
    return cached;
}

// ------------------------------------------------------------------ tracer

class Tracer {
public:
    Tracer(const ExecSpec& spec, const fs::path& rootfs, const PtraceOptions& opts)
        : spec_(spec), opts_(opts) {
        ExecSpec augmented = spec;
        // host /proc and /dev are always reachable, like a real chroot
        // environment prepared by a privileged runtime would provide
        for (const char* p : {"/proc", "/dev"})
            if (fs::exists(p)) augmented.binds.push_back({p, p});
        build_path_map(map_, rootfs, augmented);
        binds_ = augmented.binds;
        fake_identity_ = spec.identity.uid != ::getuid() || spec.identity.gid != ::getgid();
        selective_ = spec.mode != ExecMode::P2;
    }

    RunResult run() {
        if (selective_) entry_first_ = probe_post_seccomp_semantics() ==
                                       PostSeccompStop::EntryFirst;
        prepare_cwd();
        std::string prog_cont = resolve_program(map_, spec_);
        ExecPlan plan = plan_exec(map_, cwd_cont_, prog_cont, spec_.argv[0]);

        std::vector<std::string> argv_full = plan.prefix_argv;
        for (size_t i = 1; i < spec_.argv.size(); i++) argv_full.push_back(spec_.argv[i]);
        std::vector<std::string> envp = environment_for(spec_);

        int status_pipe[2];
        if (::pipe2(status_pipe, O_CLOEXEC) != 0) throw engine_fault("pipe2 failed");

        pid_t child = ::fork();
        if (child < 0) throw engine_fault("fork failed");
        if (child == 0) {
            ::close(status_pipe[0]);
            child_exec(plan, argv_full, envp, status_pipe[1]);
            _exit(127);  // not reached
        }
        ::close(status_pipe[1]);
        root_ = child;

        char status_byte = 'K';
        ssize_t got = ::read(status_pipe[0], &status_byte, 1);
        ::close(status_pipe[0]);
        if (got != 1) {
            int st;
            ::waitpid(child, &st, 0);
            throw engine_fault("tracee failed before setup completed");
        }
        if (status_byte == 'F' && selective_) {
            log::warn("selective tracing unavailable, downgrading to full tracing (P2)");
            selective_ = false;
            stats_.seccomp_downgraded = true;
        }

        loop();

        RunResult res;
        res.exit_status = root_status_;
        res.stats = stats_;
        return res;
    }

private:
    void prepare_cwd() {
        char host[PM_PATH_MAX], cont[PM_PATH_MAX];
        if (pm_translate(&map_, "/", spec_.cwd.c_str(), 1, host, cont) != 0)
            throw not_found_error("cannot resolve working directory: " + spec_.cwd);
        cwd_cont_ = cont;
        if (!fs::is_directory(host)) {
            if (starts_with(host, map_.rootfs))
                fs::create_directories(host);
            else
                throw not_found_error("working directory missing: " + spec_.cwd);
        }
        cwd_host_ = host;
    }

    [[noreturn]] void child_exec(const ExecPlan& plan,
                                 const std::vector<std::string>& argv,
                                 const std::vector<std::string>& envp, int status_fd) {
        if (::chdir(cwd_host_.c_str()) != 0) {
            ::perror("udocker: chdir");
            _exit(126);
        }
        if (::ptrace(PTRACE_TRACEME, 0, nullptr, nullptr) != 0) {
            ::perror("udocker: ptrace");
            _exit(126);
        }

        char status = 'K';
        if (selective_) {
            if (opts_.simulate_seccomp_unsupported || install_filter() != 0) status = 'F';
        }
        (void)!::write(status_fd, &status, 1);
        ::raise(SIGSTOP);

        std::vector<char*> cargv, cenv;
        for (const auto& a : argv) cargv.push_back(const_cast<char*>(a.c_str()));
        cargv.push_back(nullptr);
        for (const auto& e : envp) cenv.push_back(const_cast<char*>(e.c_str()));
        cenv.push_back(nullptr);
        ::execve(plan.kernel_path.c_str(), cargv.data(), cenv.data());
        ::perror("udocker: execve");
        _exit(127);
    }

    int install_filter() {
        std::set<long> traced;
        for (const auto& [nr, spec] : dispatch_table()) traced.insert(nr);
        if (fake_identity_)
            for (const auto& [nr, spec] : identity_table()) traced.insert(nr);

        std::vector<sock_filter> filt;
        filt.push_back(BPF_STMT(BPF_LD | BPF_W | BPF_ABS, offsetof(seccomp_data, arch)));
        filt.push_back(BPF_JUMP(BPF_JMP | BPF_JEQ | BPF_K, AUDIT_ARCH_X86_64, 1, 0));
        filt.push_back(BPF_STMT(BPF_RET | BPF_K, SECCOMP_RET_KILL));
        filt.push_back(BPF_STMT(BPF_LD | BPF_W | BPF_ABS, offsetof(seccomp_data, nr)));
        size_t n = traced.size();
        size_t i = 0;
        for (long nr : traced) {
            // distance to the TRACE statement below
            uint8_t jt = static_cast<uint8_t>(n - i);
            filt.push_back(BPF_JUMP(BPF_JMP | BPF_JEQ | BPF_K,
                                    static_cast<uint32_t>(nr), jt, 0));
            i++;
        }
        filt.push_back(BPF_STMT(BPF_RET | BPF_K, SECCOMP_RET_ALLOW));
        filt.push_back(BPF_STMT(BPF_RET | BPF_K, SECCOMP_RET_TRACE));

        sock_fprog fprog;
        fprog.len = static_cast<unsigned short>(filt.size());
        fprog.filter = filt.data();
        if (::prctl(PR_SET_NO_NEW_PRIVS, 1, 0, 0, 0) != 0) return -1;
        return ::prctl(PR_SET_SECCOMP, SECCOMP_MODE_FILTER, &fprog);
    }

    // -------------------------------------------------------- event loop

    Task& task_for(pid_t tid) {
        auto it = tasks_.find(tid);
        if (it != tasks_.end()) return it->second;
        Task t;
        t.tid = tid;
        t.fs = std::make_shared<FsState>();
        t.fs->cwd = cwd_cont_;
        return tasks_.emplace(tid, std::move(t)).first->second;
    }

    void resume(Task& t, bool want_exit, int sig = 0) {
        __ptrace_request req;
        if (want_exit || !selective_)
            req = PTRACE_SYSCALL;
        else
            req = PTRACE_CONT;
        t.exit_requested = want_exit;
        if (::ptrace(req, t.tid, nullptr, sig) != 0 && errno != ESRCH)
            log::debug("resume failed for tid " + std::to_string(t.tid));
    }

    void loop() {
        while (true) {
            int status = 0;
            pid_t tid = ::waitpid(-1, &status, __WALL);
            if (tid < 0) {
                if (errno == ECHILD) break;  // every tracee is gone
                if (errno == EINTR) continue;
                throw engine_fault("waitpid failed in tracer loop");
            }
            if (WIFEXITED(status) || WIFSIGNALED(status)) {
                if (tid == root_)
                    root_status_ = WIFEXITED(status) ? WEXITSTATUS(status)
                                                     : 128 + WTERMSIG(status);
                tasks_.erase(tid);
                continue;
            }
            if (!WIFSTOPPED(status)) continue;

            Task& t = task_for(tid);
            int event = status >> 16;
            int sig = WSTOPSIG(status);

            if (!t.seen_first_stop) {
                t.seen_first_stop = true;
                if (tid == root_) {
                    long o = PTRACE_O_TRACESYSGOOD | PTRACE_O_TRACESECCOMP |
                             PTRACE_O_TRACEFORK | PTRACE_O_TRACEVFORK |
                             PTRACE_O_TRACECLONE | PTRACE_O_TRACEEXEC |
                             PTRACE_O_EXITKILL;
                    if (::ptrace(PTRACE_SETOPTIONS, tid, nullptr, o) != 0)
                        throw engine_fault("PTRACE_SETOPTIONS failed");
                    t.linked = true;
                    t.skip_exec_rewrite = true;  // the launch exec is pre-translated
                    resume(t, false);
                    continue;
                }
                // new child from fork/clone: options are inherited; it
                // may stop before we learn about it from the event
                if (t.linked) {
                    resume(t, false);
                } else {
                    t.in_syscall = false;  // parked until the event arrives
                }
                continue;
            }

            if (event == PTRACE_EVENT_SECCOMP) {
                stats_.seccomp_stops++;
                bool want_exit = handle_entry(t);
                resume(t, want_exit);
                continue;
            }
            if (event == PTRACE_EVENT_FORK || event == PTRACE_EVENT_VFORK ||
                event == PTRACE_EVENT_CLONE) {
                unsigned long msg = 0;
                ::ptrace(PTRACE_GETEVENTMSG, tid, nullptr, &msg);
                pid_t child = static_cast<pid_t>(msg);
                bool parked = tasks_.count(child) && tasks_[child].seen_first_stop;
                Task& c = task_for(child);
                // threads share the working directory, processes copy it
                c.fs = (event == PTRACE_EVENT_CLONE)
                           ? t.fs
                           : std::make_shared<FsState>(*t.fs);
                c.linked = true;
                if (parked) resume(c, false);
                resume(t, t.exit_requested);
                continue;
            }
            if (event == PTRACE_EVENT_EXEC) {
                // after exec the pending syscall-exit stop (if any) still
                // arrives in P2; state flags stay as they are
                resume(t, t.exit_requested);
                continue;
            }

            if (sig == (SIGTRAP | 0x80)) {
                if (!selective_) {
                    if (!t.in_syscall) {
                        t.in_syscall = true;
                        stats_.entry_stops++;
                        bool want_exit = handle_entry(t);
                        (void)want_exit;  // exit stop always follows in P2
                        resume(t, false);
                    } else {
                        t.in_syscall = false;
                        stats_.exit_stops++;
                        handle_exit(t);
                        resume(t, false);
                    }
                } else {
                    // P1: only requested exits stop here. Entry-first
                    // kernels insert a syscall-entry stop after the
                    // seccomp stop for calls that really execute; it is
                    // recognizable by the not-yet-run return value.
                    if (entry_first_) {
                        Regs probe;
                        if (get_regs(t.tid, probe) &&
                            static_cast<long long>(probe.r.rax) == -ENOSYS &&
                            static_cast<long long>(probe.r.orig_rax) != -1) {
                            resume(t, true);
                            continue;
                        }
                    }
                    stats_.exit_stops++;
                    handle_exit(t);
                    resume(t, false);
                }
                continue;
            }

            // plain signal-delivery stop: forward it
            resume(t, t.exit_requested, sig == SIGSTOP && !t.linked ? 0 : sig);
        }
    }

    // ------------------------------------------------------ entry handling

    struct Regs {
        user_regs_struct r;
        bool dirty = false;
        uint64_t arg(int i) const {
            switch (i) {
                case 0: return r.rdi;
                case 1: return r.rsi;
                case 2: return r.rdx;
                case 3: return r.r10;
                case 4: return r.r8;
                default: return r.r9;
            }
        }
        void set_arg(int i, uint64_t v) {
            switch (i) {
                case 0: r.rdi = v; break;
                case 1: r.rsi = v; break;
                case 2: r.rdx = v; break;
                case 3: r.r10 = v; break;
                case 4: r.r8 = v; break;
                default: r.r9 = v; break;
            }
            dirty = true;
        }
    };

    bool get_regs(pid_t tid, Regs& regs) {
        return ::ptrace(PTRACE_GETREGS, tid, nullptr, &regs.r) == 0;
    }
    void put_regs(pid_t tid, Regs& regs) {
        if (regs.dirty) ::ptrace(PTRACE_SETREGS, tid, nullptr, &regs.r);
        regs.dirty = false;
    }

    // scratch area on the tracee stack, below the red zone
    uint64_t scratch_base(const Regs& regs, size_t total) {
        return (regs.r.rsp - 128 - total) & ~uint64_t(15);
    }

    void suppress(Regs& regs, long long fake_return, Task& t) {
        regs.r.orig_rax = static_cast<unsigned long long>(-1);
        regs.dirty = true;
        t.pending.type = Pending::Type::FakeReturn;
        t.pending.fake_value = fake_return;
    }

    // resolves the container-view cwd for a dirfd-relative path
    bool dirfd_cwd(Task& t, const SyscallSpec& spec, const Regs& regs, int dirfd_arg,
                   std::string& cwd_out) {
        (void)spec;
        if (dirfd_arg < 0) {
            cwd_out = t.fs->cwd;
            return true;
        }
        int dirfd = static_cast<int>(regs.arg(dirfd_arg));
        if (dirfd == AT_FDCWD) {
            cwd_out = t.fs->cwd;
            return true;
        }
        char link[64], host[PM_PATH_MAX];
        std::snprintf(link, sizeof link, "/proc/%d/fd/%d", t.tid, dirfd);
        ssize_t n = ::readlink(link, host, sizeof host - 1);
        if (n <= 0) return false;
        host[n] = '\0';
        char cont[PM_PATH_MAX];
        if (pm_reverse(&map_, host, cont) != 0) return false;
        cwd_out = cont;
        return true;
    }

    bool follow_for(const SyscallSpec& spec, const Regs& regs, long nr) {
        bool follow = spec.follow_last;
        if (spec.flags_arg < 0) return follow;
        uint64_t flags = regs.arg(spec.flags_arg);
        switch (spec.flags_use) {
            case FlagsUse::OpenFlags:
                if (flags & O_NOFOLLOW) follow = false;
                if ((flags & O_CREAT) && (flags & O_EXCL)) follow = false;
                break;
            case FlagsUse::AtFlags:
                if (flags & AT_SYMLINK_NOFOLLOW) follow = false;
                break;
            case FlagsUse::AtFlagsFollow:
                follow = (flags & AT_SYMLINK_FOLLOW) != 0;
                break;
            case FlagsUse::None:
                break;
        }
        (void)nr;
        return follow;
    }

    // returns true when a syscall-exit stop is needed
    bool handle_entry(Task& t) {
        Regs regs;
        if (!get_regs(t.tid, regs)) return false;
        long nr = static_cast<long>(regs.r.orig_rax);
        stats_.per_syscall[nr]++;

        const SyscallSpec* spec = nullptr;
        if (auto it = dispatch_table().find(nr); it != dispatch_table().end())
            spec = &it->second;
        else if (fake_identity_) {
            if (auto it2 = identity_table().find(nr); it2 != identity_table().end())
                spec = &it2->second;
        }
        if (!spec) return false;

        switch (spec->kind) {
            case Kind::Deny:
                suppress(regs, -EPERM, t);
                put_regs(t.tid, regs);
                return true;

            case Kind::IdGet: {
                t.pending.type = Pending::Type::IdGet;
                t.pending.fake_value =
                    (nr == SYS_getuid || nr == SYS_geteuid) ? spec_.identity.uid
                                                            : spec_.identity.gid;
                return true;
            }
            case Kind::IdResGet: {
                t.pending.type = Pending::Type::IdResGet;
                t.pending.fake_value =
                    nr == SYS_getresuid ? spec_.identity.uid : spec_.identity.gid;
                t.pending.aux_ptrs[0] = regs.arg(0);
                t.pending.aux_ptrs[1] = regs.arg(1);
                t.pending.aux_ptrs[2] = regs.arg(2);
                return true;
            }
            case Kind::IdAbsorb:
                suppress(regs, 0, t);
                put_regs(t.tid, regs);
                return true;

            case Kind::Getcwd: {
                uint64_t user_buf = regs.arg(0);
                uint64_t user_size = regs.arg(1);
                if (user_buf == 0 || user_size == 0) return false;
                uint64_t scratch = scratch_base(regs, PM_PATH_MAX);
                regs.set_arg(0, scratch);
                regs.set_arg(1, PM_PATH_MAX);
                put_regs(t.tid, regs);
                t.pending.type = Pending::Type::Getcwd;
                t.pending.user_buf = user_buf;
                t.pending.user_size = user_size;
                return true;
            }

            case Kind::Fchdir:
                t.pending.type = Pending::Type::Fchdir;
                return true;

            case Kind::Exec:
                handle_exec_entry(t, regs, nr);
                return false;

            default:
                break;
        }

        // path-translating kinds
        std::string cwd;
        if (!dirfd_cwd(t, *spec, regs, spec->dirfd_arg, cwd))
            return false;  // untranslatable dirfd: leave the call alone

        std::string raw = read_tracee_string(t.tid, regs.arg(spec->path_arg));
        bool translated_any = false;
        std::string host1, host2, cont1;

        if (!raw.empty()) {
            char host[PM_PATH_MAX], cont[PM_PATH_MAX];
            int rc = pm_translate(&map_, cwd.c_str(), raw.c_str(),
                                  follow_for(*spec, regs, nr) ? 1 : 0, host, cont);
            if (rc != 0) {
                suppress(regs, rc, t);
                put_regs(t.tid, regs);
                return true;
            }
            host1 = host;
            cont1 = cont;
            translated_any = true;
        }
        if (spec->path2_arg >= 0) {
            std::string cwd2;
            if (dirfd_cwd(t, *spec, regs, spec->dirfd2_arg, cwd2)) {
                std::string raw2 = read_tracee_string(t.tid, regs.arg(spec->path2_arg));
                if (!raw2.empty()) {
                    char host[PM_PATH_MAX];
                    int rc = pm_translate(&map_, cwd2.c_str(), raw2.c_str(), 0, host,
                                          nullptr);
                    if (rc != 0) {
                        suppress(regs, rc, t);
                        put_regs(t.tid, regs);
                        return true;
                    }
                    host2 = host;
                    translated_any = true;
                }
            }
        }

        if (translated_any) {
            stats_.translations += (host1.empty() ? 0 : 1) + (host2.empty() ? 0 : 1);
            size_t need = host1.size() + 1 + host2.size() + 1;
            uint64_t base = scratch_base(regs, need + 16);
            uint64_t addr1 = base, addr2 = base + host1.size() + 1;
            if (!host1.empty()) {
                if (!write_tracee(t.tid, addr1, host1.c_str(), host1.size() + 1)) {
                    suppress(regs, -EFAULT, t);
                    put_regs(t.tid, regs);
                    return true;
                }
                regs.set_arg(spec->path_arg, addr1);
            }
            if (!host2.empty()) {
                if (!write_tracee(t.tid, addr2, host2.c_str(), host2.size() + 1)) {
                    suppress(regs, -EFAULT, t);
                    put_regs(t.tid, regs);
                    return true;
                }
                regs.set_arg(spec->path2_arg, addr2);
            }
        }

        switch (spec->kind) {
            case Kind::Chdir:
                put_regs(t.tid, regs);
                t.pending.type = Pending::Type::Chdir;
                t.pending.new_cwd = cont1;
                return true;
            case Kind::Readlink: {
                put_regs(t.tid, regs);
                t.pending.type = Pending::Type::Readlink;
                t.pending.user_buf = regs.arg(nr == SYS_readlink ? 1 : 2);
                t.pending.user_size = regs.arg(nr == SYS_readlink ? 2 : 3);
                return true;
            }
            case Kind::Open:
                put_regs(t.tid, regs);
                if (opts_.verify_containment) {
                    t.pending.type = Pending::Type::TrackFd;
                    return true;
                }
                return false;
            case Kind::ChownAbsorb:
                if (fake_identity_) {
                    suppress(regs, 0, t);
                    put_regs(t.tid, regs);
                    return true;
                }
                put_regs(t.tid, regs);
                return false;
            default:
                put_regs(t.tid, regs);
                return false;
        }
    }

    void handle_exec_entry(Task& t, Regs& regs, long nr) {
        if (t.skip_exec_rewrite) {
            t.skip_exec_rewrite = false;
            return;
        }
        stats_.exec_rewrites++;

        int path_arg = nr == SYS_execveat ? 1 : 0;
        int argv_arg = nr == SYS_execveat ? 2 : 1;
        int envp_arg = nr == SYS_execveat ? 3 : 2;

        std::string raw = read_tracee_string(t.tid, regs.arg(path_arg));
        if (raw.empty()) return;  // AT_EMPTY_PATH etc.: leave to the kernel

        std::string cwd;
        if (!dirfd_cwd(t, dispatch_table().at(nr), regs,
                       nr == SYS_execveat ? 0 : -1, cwd))
            return;

        std::vector<uint64_t> argv_ptrs = read_pointer_array(t.tid, regs.arg(argv_arg));
        std::string argv0 =
            argv_ptrs.empty() ? raw : read_tracee_string(t.tid, argv_ptrs[0]);

        ExecPlan plan;
        try {
            plan = plan_exec(map_, cwd, raw, argv0);
        } catch (const Error& e) {
            log::debug(std::string("exec rewrite failed: ") + e.what());
            suppress(regs, -ENOENT, t);
            put_regs(t.tid, regs);
            return;
        }

        // scratch image: [kernel path][prefix strings...][pointer array]
        std::vector<std::string> strings;
        strings.push_back(plan.kernel_path);
        for (const auto& s : plan.prefix_argv) strings.push_back(s);

        size_t str_bytes = 0;
        for (const auto& s : strings) str_bytes += s.size() + 1;
        size_t n_ptrs = plan.prefix_argv.size() +
                        (argv_ptrs.empty() ? 0 : argv_ptrs.size() - 1) + 1;
        size_t total = str_bytes + 8 * n_ptrs + 16;
        if (total > 60 * 1024) {
            suppress(regs, -E2BIG, t);
            put_regs(t.tid, regs);
            return;
        }

        uint64_t base = scratch_base(regs, total);
        uint64_t ptr_array = base;  // 8-aligned by scratch_base
        uint64_t str_cursor = base + 8 * n_ptrs;

        std::vector<uint64_t> new_ptrs;
        uint64_t kernel_path_addr = 0;
        for (size_t i = 0; i < strings.size(); i++) {
            if (!write_tracee(t.tid, str_cursor, strings[i].c_str(),
                              strings[i].size() + 1)) {
                suppress(regs, -EFAULT, t);
                put_regs(t.tid, regs);
                return;
            }
            if (i == 0)
                kernel_path_addr = str_cursor;
            else
                new_ptrs.push_back(str_cursor);
            str_cursor += strings[i].size() + 1;
        }
        for (size_t i = 1; i < argv_ptrs.size(); i++) new_ptrs.push_back(argv_ptrs[i]);
        new_ptrs.push_back(0);
        if (!write_tracee(t.tid, ptr_array, new_ptrs.data(), 8 * new_ptrs.size())) {
            suppress(regs, -EFAULT, t);
            put_regs(t.tid, regs);
            return;
        }

        if (nr == SYS_execveat) {
            // normalize to execve with absolute host path
            regs.r.orig_rax = SYS_execve;
            regs.set_arg(2, regs.arg(envp_arg));
        }
        regs.set_arg(0, kernel_path_addr);
        regs.set_arg(1, ptr_array);
        regs.dirty = true;
        put_regs(t.tid, regs);
    }

    // ------------------------------------------------------- exit handling

    void handle_exit(Task& t) {
        Pending pending = t.pending;
        t.pending = Pending{};
        if (pending.type == Pending::Type::None) return;

        Regs regs;
        if (!get_regs(t.tid, regs)) return;
        long long ret = static_cast<long long>(regs.r.rax);

        switch (pending.type) {
            case Pending::Type::FakeReturn:
                regs.r.rax = static_cast<unsigned long long>(pending.fake_value);
                regs.dirty = true;
                break;

            case Pending::Type::IdGet:
                regs.r.rax = static_cast<unsigned long long>(pending.fake_value);
                regs.dirty = true;
                break;

            case Pending::Type::IdResGet:
                if (ret == 0) {
                    uint32_t v = static_cast<uint32_t>(pending.fake_value);
                    for (uint64_t p : pending.aux_ptrs)
                        if (p) write_tracee(t.tid, p, &v, sizeof v);
                }
                break;

            case Pending::Type::Chdir:
                if (ret == 0 && !pending.new_cwd.empty()) t.fs->cwd = pending.new_cwd;
                break;

            case Pending::Type::Fchdir:
                if (ret == 0) {
                    char link[64], host[PM_PATH_MAX], cont[PM_PATH_MAX];
                    std::snprintf(link, sizeof link, "/proc/%d/cwd", t.tid);
                    ssize_t n = ::readlink(link, host, sizeof host - 1);
                    if (n > 0) {
                        host[n] = '\0';
                        if (pm_reverse(&map_, host, cont) == 0) t.fs->cwd = cont;
                    }
                }
                break;

            case Pending::Type::Getcwd: {
                if (ret <= 0) {
                    // propagate as-is (error already in rax)
                    break;
                }
                const std::string& cwd = t.fs->cwd;
                if (cwd.size() + 1 > pending.user_size) {
                    regs.r.rax = static_cast<unsigned long long>(-ERANGE);
                } else {
                    if (write_tracee(t.tid, pending.user_buf, cwd.c_str(),
                                     cwd.size() + 1))
                        regs.r.rax = cwd.size() + 1;
                    else
                        regs.r.rax = static_cast<unsigned long long>(-EFAULT);
                }
                regs.dirty = true;
                break;
            }

            case Pending::Type::Readlink: {
                if (ret <= 0) break;
                size_t len = std::min<size_t>(static_cast<size_t>(ret), PM_PATH_MAX - 1);
                std::string target(len, '\0');
                struct iovec liov{target.data(), len},
                    riov{reinterpret_cast<void*>(pending.user_buf), len};
                if (::process_vm_readv(t.tid, &liov, 1, &riov, 1, 0) !=
                    static_cast<ssize_t>(len))
                    break;
                char cont[PM_PATH_MAX];
                if (pm_reverse(&map_, target.c_str(), cont) != 0) break;
                size_t new_len = std::min<size_t>(std::strlen(cont), pending.user_size);
                if (write_tracee(t.tid, pending.user_buf, cont, new_len)) {
                    regs.r.rax = new_len;
                    regs.dirty = true;
                }
                break;
            }

            case Pending::Type::TrackFd: {
                if (ret < 0) break;
                char link[64], host[PM_PATH_MAX];
                std::snprintf(link, sizeof link, "/proc/%d/fd/%lld", t.tid, ret);
                ssize_t n = ::readlink(link, host, sizeof host - 1);
                if (n <= 0) break;
                host[n] = '\0';
                char cont[PM_PATH_MAX];
                if (pm_reverse(&map_, host, cont) != 0)
                    stats_.containment_violations.push_back(host);
                break;
            }

            case Pending::Type::None:
                break;
        }
        put_regs(t.tid, regs);
    }

    ExecSpec spec_;
    PtraceOptions opts_;
    pm_map map_{};
    std::vector<BindMount> binds_;
    bool fake_identity_ = false;
    bool selective_ = true;
    std::string cwd_cont_, cwd_host_;
    bool entry_first_ = false;
    pid_t root_ = -1;
    int root_status_ = 128 + SIGKILL;
    std::map<pid_t, Task> tasks_;
    TraceStats stats_;
};

}  // namespace

RunResult run_ptrace(const ExecSpec& spec, const fs::path& rootfs,
                     const PtraceOptions& opts) {
    if (spec.mode != ExecMode::P1 && spec.mode != ExecMode::P2)
        throw engine_fault("tracing engine invoked with a non-tracing mode");
    Tracer tracer(spec, rootfs, opts);
    return tracer.run();
}

}  // namespace udocker::engine

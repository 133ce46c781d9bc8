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

#include "udocker/engine_loader.hpp"

#include "udocker/elf_patcher.hpp"
#include "udocker/errors.hpp"
#include "udocker/ldcache.hpp"
#include "udocker/log.hpp"
#include "udocker/util.hpp"

#include <sys/stat.h>
#include <sys/wait.h>
#include <unistd.h>

namespace udocker::engine {

namespace {

ExecSpec with_implicit_binds(const ExecSpec& spec) {
    ExecSpec augmented = spec;
    for (const char* p : {"/proc", "/dev"})
        if (fs::exists(p)) augmented.binds.push_back({p, p});
    return augmented;
}

// host-expanded library directories: the container's loader cache when
// parsable, a standard-directory scan otherwise
std::vector<std::string> host_library_path(const pm_map& map, const fs::path& rootfs) {
    std::vector<std::string> cont_dirs;
    fs::path cache = rootfs / "etc/ld.so.cache";
    if (fs::is_regular_file(cache)) {
        try {
            auto view = ldcache::parse_ld_so_cache(cache);
            cont_dirs = ldcache::library_directories(view);
        } catch (const Error& e) {
            log::warn(std::string("loader cache unusable, falling back to directory "
                                  "scan: ") + e.what());
        }
    }
    if (cont_dirs.empty()) {
        for (const char* d : {"/lib/x86_64-linux-gnu", "/usr/lib/x86_64-linux-gnu",
                              "/lib64", "/usr/lib64", "/lib", "/usr/lib",
                              "/usr/local/lib"}) {
            std::error_code ec;
            if (fs::is_directory(rootfs / fs::path(d).relative_path(), ec))
                cont_dirs.push_back(d);
        }
    }
    std::vector<std::string> out;
    for (const auto& d : cont_dirs) {
        char host[PM_PATH_MAX];
        if (pm_translate(&map, "/", d.c_str(), 1, host, nullptr) == 0)
            out.push_back(host);
    }
    return out;
}

std::string binds_wire_format(const ExecSpec& spec) {
    std::string s;
    for (const auto& b : spec.binds) {
        if (!s.empty()) s += ';';
        s += b.host + ":" + b.container;
    }
    return s;
}

}  // namespace

LoaderEnv prepare_loader(const ExecSpec& spec, const fs::path& rootfs,
                         const LoaderOptions& opts) {
    if (spec.mode != ExecMode::F1 && spec.mode != ExecMode::F2 &&
        spec.mode != ExecMode::F3 && spec.mode != ExecMode::F4)
        throw engine_fault("loader engine invoked with a non-loader mode");
    if (!fs::is_regular_file(opts.interposer))
        throw mode_unavailable("interposer object missing: " + opts.interposer.string() +
                               " (run the install step first)");

    ExecSpec augmented = with_implicit_binds(spec);
    pm_map map;
    build_path_map(map, rootfs, augmented);

    std::string prog_cont = resolve_program(map, spec);

    // reject statically linked targets up front with usable guidance
    {
        char host[PM_PATH_MAX];
        if (pm_translate(&map, spec.cwd.c_str(), prog_cont.c_str(), 1, host, nullptr) == 0) {
            std::string head = read_file(host).substr(0, 2);
            if (head != "#!") {
                auto info = elf::read_elf(host);
                if (!info.is_dynamic)
                    throw mode_unavailable(
                        "statically linked executables cannot run in loader-based "
                        "modes; switch the container to P1/P2: " + prog_cont);
            }
        }
    }

    if (spec.mode == ExecMode::F3) {
        // whole-tree patching is normally done at mode-switch time;
        // applying here is an idempotent no-op in that case
        elf::apply_prefix_plan(rootfs, opts.container_dir);
    }
    if (spec.mode == ExecMode::F4) {
        char host[PM_PATH_MAX];
        if (pm_translate(&map, spec.cwd.c_str(), prog_cont.c_str(), 1, host, nullptr) == 0)
            elf::patch_one_file(rootfs, opts.container_dir, host);
    }

    ExecPlan plan = plan_exec(map, spec.cwd, prog_cont, spec.argv[0]);

    LoaderEnv env;
    env.kernel_path = plan.kernel_path;
    env.argv = plan.prefix_argv;
    if (plan.uses_loader) {
        // the loader opens its target directly, so it must receive the
        // host-expanded path (the interposer is not active inside ld.so)
        char host[PM_PATH_MAX];
        if (pm_translate(&map, "/", plan.program_arg.c_str(), 1, host, nullptr) != 0)
            throw not_found_error("cannot resolve exec target: " + plan.program_arg);
        env.argv[plan.target_index] = host;
    }
    for (size_t i = 1; i < spec.argv.size(); i++) env.argv.push_back(spec.argv[i]);
    env.wrapped_by_loader = plan.uses_loader;
    env.library_path = host_library_path(map, rootfs);

    std::string loader_for_children;
    if (spec.mode == ExecMode::F2) {
        // modified loader copy that cannot search host locations
        fs::path copy = opts.container_dir / "ld.so.F2";
        if (!fs::is_regular_file(copy)) {
            ensure_dir(opts.container_dir);
            if (!plan.uses_loader)
                throw mode_unavailable("cannot derive a loader for this container");
            fs::copy_file(plan.kernel_path, copy, fs::copy_options::overwrite_existing);
            elf::disable_host_paths_in_loader(copy);
        }
        loader_for_children = copy.string();
        if (plan.uses_loader) {
            // swap the loader invocation to the patched copy
            env.kernel_path = copy.string();
            env.argv[0] = copy.string();
        }
    }

    env.control_env["UDOCKER_I_ROOT"] = fs::absolute(rootfs).string();
    std::string binds = binds_wire_format(augmented);
    if (!binds.empty()) env.control_env["UDOCKER_I_BINDS"] = binds;
    env.control_env["UDOCKER_I_PRELOAD"] = fs::absolute(opts.interposer).string();
    if (!loader_for_children.empty())
        env.control_env["UDOCKER_I_LDSO"] = loader_for_children;
    env.control_env["UDOCKER_I_LDPATH"] = join(env.library_path, ":");
    env.control_env["UDOCKER_I_ARGV0"] =
        plan.uses_loader && loader_supports_argv0(plan.kernel_path) ? "1" : "0";
    if (spec.mode == ExecMode::F4 && !opts.elfpatch_tool.empty()) {
        std::string cmd = fs::absolute(opts.elfpatch_tool).string();
        cmd += '\x1f';
        cmd += fs::absolute(rootfs).string();
        cmd += '\x1f';
        cmd += fs::absolute(opts.container_dir).string();
        env.control_env["UDOCKER_I_PATCH"] = cmd;
    }
    if (spec.identity.uid != ::getuid() || spec.identity.gid != ::getgid()) {
        env.control_env["UDOCKER_I_UID"] = std::to_string(spec.identity.uid);
        env.control_env["UDOCKER_I_GID"] = std::to_string(spec.identity.gid);
    }
    return env;
}

RunResult run_loader(const ExecSpec& spec, const fs::path& rootfs,
                     const LoaderOptions& opts) {
    LoaderEnv lenv = prepare_loader(spec, rootfs, opts);

    ExecSpec augmented = with_implicit_binds(spec);
    pm_map map;
    build_path_map(map, rootfs, augmented);
    char cwd_host[PM_PATH_MAX];
    if (pm_translate(&map, "/", spec.cwd.c_str(), 1, cwd_host, nullptr) != 0)
        throw not_found_error("cannot resolve working directory: " + spec.cwd);
    if (!fs::is_directory(cwd_host)) {
        if (starts_with(cwd_host, map.rootfs))
            fs::create_directories(cwd_host);
        else
            throw not_found_error("working directory missing: " + spec.cwd);
    }

    std::vector<std::string> envp = environment_for(spec);
    envp.push_back("LD_PRELOAD=" + lenv.control_env.at("UDOCKER_I_PRELOAD"));
    envp.push_back("LD_LIBRARY_PATH=" + join(lenv.library_path, ":"));
    for (const auto& [k, v] : lenv.control_env) envp.push_back(k + "=" + v);

    pid_t pid = ::fork();
    if (pid < 0) throw engine_fault("fork failed");
    if (pid == 0) {
        if (::chdir(cwd_host) != 0) _exit(126);
        std::vector<char*> cargv, cenv;
        for (auto& a : lenv.argv) cargv.push_back(const_cast<char*>(a.c_str()));
        cargv.push_back(nullptr);
        for (auto& e : envp) cenv.push_back(const_cast<char*>(e.c_str()));
        cenv.push_back(nullptr);
        ::execve(lenv.kernel_path.c_str(), cargv.data(), cenv.data());
        ::perror("udocker: execve");
        _exit(127);
    }
    int status = 0;
    while (::waitpid(pid, &status, 0) < 0 && errno == EINTR) {}

    RunResult res;
    if (WIFEXITED(status))
        res.exit_status = WEXITSTATUS(status);
    else if (WIFSIGNALED(status))
        res.exit_status = 128 + WTERMSIG(status);
    return res;
}

}  // namespace udocker::engine

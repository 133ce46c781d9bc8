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

#include "udocker/engine.hpp"

#include "udocker/elf_patcher.hpp"
#include "udocker/errors.hpp"
#include "udocker/log.hpp"
#include "udocker/util.hpp"

#include <sys/stat.h>
#include <unistd.h>

#include <fstream>
#include <mutex>
#include <sstream>

namespace udocker::engine {

std::string TraceStats::to_json() const {
    std::ostringstream s;
    s << "{\"seccomp_stops\":" << seccomp_stops << ",\"entry_stops\":" << entry_stops
      << ",\"exit_stops\":" << exit_stops << ",\"total_stops\":" << total_stops()
      << ",\"translations\":" << translations << ",\"exec_rewrites\":" << exec_rewrites
      << ",\"seccomp_downgraded\":" << (seccomp_downgraded ? "true" : "false")
      << ",\"containment_violations\":" << containment_violations.size() << "}";
    return s.str();
}

void build_path_map(pm_map& map, const fs::path& rootfs, const ExecSpec& spec) {
    if (pm_map_init(&map, fs::absolute(rootfs).c_str()) != 0)
        throw engine_fault("invalid rootfs path: " + rootfs.string());
    for (const auto& b : spec.binds)
        if (pm_map_add_bind(&map, b.host.c_str(), b.container.c_str()) != 0)
            throw engine_fault("invalid bind: " + b.host + " -> " + b.container);
}

namespace {

bool host_is_executable_file(const std::string& host) {
    struct stat st{};
    if (::stat(host.c_str(), &st) != 0) return false;
    return S_ISREG(st.st_mode) && (st.st_mode & 0111);
}

}  // namespace

std::string resolve_program(const pm_map& map, const ExecSpec& spec) {
    const std::string& prog = spec.argv.at(0);
    char host[PM_PATH_MAX], cont[PM_PATH_MAX];

    if (prog.find('/') != std::string::npos) {
        if (pm_translate(&map, spec.cwd.c_str(), prog.c_str(), 1, host, cont) != 0)
            throw not_found_error("cannot resolve program path: " + prog);
        if (!host_is_executable_file(host))
            throw not_found_error("no such executable in container: " + prog);
        return cont;
    }

    std::string path_value = "/usr/local/bin:/usr/bin:/bin:/usr/sbin:/sbin";
    if (auto it = spec.env.find("PATH"); it != spec.env.end()) path_value = it->second;
    for (const auto& dir : split(path_value, ':')) {
        if (dir.empty()) continue;
        std::string candidate = dir + "/" + prog;
        if (pm_translate(&map, spec.cwd.c_str(), candidate.c_str(), 1, host, cont) != 0)
            continue;
        if (host_is_executable_file(host)) return cont;
    }
    throw not_found_error("command not found in container PATH: " + prog);
}

bool loader_supports_argv0(const std::string& loader_host_path) {
    static std::mutex mu;
    static std::map<std::string, bool> cache;
    std::lock_guard<std::mutex> g(mu);
    auto it = cache.find(loader_host_path);
    if (it != cache.end()) return it->second;
    bool ok = false;
    try {
        auto res = run_process({loader_host_path, "--help"});
        ok = (res.out + res.err).find("--argv0") != std::string::npos;
    } catch (...) {
        ok = false;
    }
    cache[loader_host_path] = ok;
    return ok;
}

ExecPlan plan_exec(const pm_map& map, const std::string& cwd_cont,
                   const std::string& prog_cont_path, const std::string& argv0) {
    // cmd mirrors what the kernel would assemble while unwrapping
    // interpreter lines: cmd[0] is the current head, the rest are the
    // arguments accumulated so far (script paths, interpreter args).
    std::vector<std::string> cmd{prog_cont_path};
    bool wrapped = false;

    for (int depth = 0; depth < 5; depth++) {
        char host[PM_PATH_MAX], cont[PM_PATH_MAX];
        if (pm_translate(&map, cwd_cont.c_str(), cmd[0].c_str(), 1, host, cont) != 0)
            throw not_found_error("cannot resolve exec target: " + cmd[0]);
        if (!host_is_executable_file(host))
            throw not_found_error("no such executable in container: " + cmd[0]);

        std::ifstream in(host, std::ios::binary);
        char head[256] = {};
        in.read(head, sizeof head - 1);
        std::streamsize got = in.gcount();
        if (got < 2) throw format_error("exec target too short: " + cmd[0]);

        if (head[0] == '#' && head[1] == '!') {
            std::string line(head + 2, static_cast<size_t>(got - 2));
            line = line.substr(0, line.find('\n'));
            size_t s = line.find_first_not_of(" \t");
            if (s == std::string::npos)
                throw format_error("malformed interpreter line in " + cmd[0]);
            size_t e = line.find_first_of(" \t", s);
            std::string interp =
                line.substr(s, e == std::string::npos ? std::string::npos : e - s);
            std::string optarg;
            if (e != std::string::npos) {
                size_t a = line.find_first_not_of(" \t", e);
                if (a != std::string::npos) {
                    optarg = line.substr(a);
                    while (!optarg.empty() && (optarg.back() == ' ' ||
                                               optarg.back() == '\t' ||
                                               optarg.back() == '\r'))
                        optarg.pop_back();
                }
            }
            // [interp, optarg?, resolved-script-path] ++ cmd[1:]
            std::vector<std::string> next{interp};
            if (!optarg.empty()) next.push_back(optarg);
            next.push_back(cont);
            next.insert(next.end(), cmd.begin() + 1, cmd.end());
            cmd = std::move(next);
            wrapped = true;
            continue;
        }

        elf::ElfInfo info;
        try {
            info = elf::read_elf(host);
        } catch (const Error&) {
            throw Error(ErrorClass::Format, "exec target is not an executable: " + cmd[0]);
        }

        ExecPlan plan;
        std::string head_argv0 = wrapped ? cmd[0] : argv0;
        if (info.interpreter && starts_with(*info.interpreter, map.rootfs)) {
            // interpreter already host-expanded (container-prefix
            // patched binary): the kernel can start it directly
            plan.kernel_path = host;
            plan.prefix_argv.push_back(head_argv0.empty() ? cont : head_argv0);
        } else if (info.interpreter && !info.interpreter->empty()) {
            char ld_host[PM_PATH_MAX];
            if (pm_translate(&map, "/", info.interpreter->c_str(), 1, ld_host, nullptr) != 0 ||
                !host_is_executable_file(ld_host))
                throw mode_unavailable("container loader missing in rootfs: " +
                                       *info.interpreter);
            plan.kernel_path = ld_host;
            plan.uses_loader = true;
            plan.prefix_argv.push_back(ld_host);
            if (!head_argv0.empty() && loader_supports_argv0(ld_host)) {
                plan.prefix_argv.push_back("--argv0");
                plan.prefix_argv.push_back(head_argv0);
            }
            plan.target_index = plan.prefix_argv.size();
            plan.prefix_argv.push_back(cont);  // loader target, container view
        } else {
            plan.kernel_path = host;
            plan.prefix_argv.push_back(head_argv0.empty() ? cont : head_argv0);
        }
        plan.prefix_argv.insert(plan.prefix_argv.end(), cmd.begin() + 1, cmd.end());
        plan.program_arg = cont;
        return plan;
    }
    throw format_error("interpreter chain too deep for " + prog_cont_path);
}

std::vector<std::string> environment_for(const ExecSpec& spec) {
    std::vector<std::string> env;
    for (const auto& [k, v] : spec.env) env.push_back(k + "=" + v);
    return env;
}

}  // namespace udocker::engine

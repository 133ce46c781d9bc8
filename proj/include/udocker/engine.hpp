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

#ifndef UDOCKER_ENGINE_HPP
#define UDOCKER_ENGINE_HPP

#include "udocker/metadata.hpp"
#include "udocker/pathmap.h"

#include <map>
#include <optional>
#include <string>
#include <vector>

namespace udocker::engine {

namespace fs = std::filesystem;

struct TraceStats {
    long long seccomp_stops = 0;
    long long entry_stops = 0;  // syscall-entry stops (always counted in P2)
    long long exit_stops = 0;
    long long translations = 0;
    long long exec_rewrites = 0;
    bool seccomp_downgraded = false;
    std::map<long, long long> per_syscall;
    std::vector<std::string> containment_violations;  // host paths seen outside

    long long total_stops() const { return seccomp_stops + entry_stops + exit_stops; }
    std::string to_json() const;
};

struct RunResult {
    int exit_status = 0;  // exit code, or 128+signal
    TraceStats stats;
};

/// Builds the translation map for a run: rootfs plus the spec's binds.
void build_path_map(pm_map& map, const fs::path& rootfs, const ExecSpec& spec);

/// Resolves spec.argv[0] to an absolute container path: as-is when it
/// contains a slash, otherwise searched along PATH from the spec env.
/// Returns container path; throws when nothing executable matches.
std::string resolve_program(const pm_map& map, const ExecSpec& spec);

/// Exec-target analysis shared by the engines: unwraps shebang scripts
/// and dynamically linked ELFs into a command line the host kernel can
/// start directly (explicit loader invocation for dynamic targets).
///
/// final argv = prefix_argv ++ original argv[1:]
struct ExecPlan {
    std::string kernel_path;               // host path for the kernel to exec
    std::vector<std::string> prefix_argv;  // complete head of the new argv
    std::string program_arg;               // container path of the final target
    size_t target_index = 0;               // position of program_arg in prefix_argv
    bool uses_loader = false;
};

ExecPlan plan_exec(const pm_map& map, const std::string& cwd_cont,
                   const std::string& prog_cont_path, const std::string& argv0);

/// Whether this loader understands --argv0 (memoized per loader path).
bool loader_supports_argv0(const std::string& loader_host_path);

/// envp entries ("K=V", key-sorted) for a spec.
std::vector<std::string> environment_for(const ExecSpec& spec);

}  // namespace udocker::engine

#endif

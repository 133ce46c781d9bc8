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

#ifndef UDOCKER_METADATA_HPP
#define UDOCKER_METADATA_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace udocker {

namespace fs = std::filesystem;

/// Selectable chroot-emulation engine per container. P modes trace
/// syscalls, F modes control the dynamic loader, R1 uses namespaces.
enum class ExecMode { P1, P2, F1, F2, F3, F4, R1 };

std::optional<ExecMode> parse_exec_mode(const std::string& s);
std::string exec_mode_name(ExecMode m);

/// Subset of the image config document this runtime honors.
struct ContainerConfig {
    std::vector<std::string> entrypoint;
    std::vector<std::string> cmd;
    std::vector<std::string> env;  // KEY=VALUE, first '=' splits
    std::string working_dir;
    std::set<std::string> exposed_volumes;
    std::string user;
};

/// Parses a Docker v2 image config blob. Unknown keys are ignored with
/// a debug note.
ContainerConfig parse_config(const std::string& config_json);

struct BindMount {
    std::string host;       // absolute host path
    std::string container;  // absolute container path
    bool operator==(const BindMount&) const = default;
};

struct Identity {
    unsigned uid = 0;
    unsigned gid = 0;
    std::string user;
};

/// Fully resolved launch request.
struct ExecSpec {
    std::vector<std::string> argv;       // non-empty
    std::map<std::string, std::string> env;
    std::string cwd = "/";
    std::vector<BindMount> binds;
    Identity identity;
    ExecMode mode = ExecMode::P1;
    bool host_env_passthrough = false;
    bool bind_home = false;
};

/// Command-line overrides feeding into an ExecSpec.
struct RunOverrides {
    std::vector<std::string> argv;       // overrides cmd when non-empty
    std::vector<std::string> env;        // --env KEY=VALUE
    std::vector<std::string> volumes;    // --volume/-v host[:container]
    std::optional<std::string> user;     // --user
    std::optional<std::string> workdir;  // --workdir
    bool hostenv = false;
    bool hostauth = false;
    bool bindhome = false;
    bool dri = false;
};

/// Resolution rules:
///   argv: override if given, else entrypoint ++ cmd (either may be empty)
///   env:  image env < host passthrough (--hostenv) < explicit --env
///   cwd:  --workdir else image working_dir else "/"
/// --user=root presents uid 0 / gid 0 through engine emulation only.
ExecSpec build_exec_spec(const ContainerConfig& cfg, const RunOverrides& overrides);

/// OCI runtime-spec config document (JSON text, version 1.0.2) for a
/// rootless run: user+mount+pid namespaces, single-entry uid/gid maps
/// of the invoking ids onto the presented identity, binds as bind
/// mounts, proc at /proc.
std::string to_oci(const ExecSpec& spec, const fs::path& rootfs);

}  // namespace udocker

#endif

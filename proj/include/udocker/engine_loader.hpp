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

#ifndef UDOCKER_ENGINE_LOADER_HPP
#define UDOCKER_ENGINE_LOADER_HPP

#include "udocker/engine.hpp"

namespace udocker::engine {

struct LoaderOptions {
    fs::path interposer;     // host path of the preloadable object
    fs::path container_dir;  // holds the patch journal and loader copies
    fs::path elfpatch_tool;  // helper used for on-demand (F4) patching
};

/// Resolved launch environment for a loader-based run, exposed so tests
/// can inspect the pieces.
struct LoaderEnv {
    std::string kernel_path;                 // what the kernel execs
    std::vector<std::string> argv;           // full argv
    std::vector<std::string> library_path;   // host-expanded directories
    std::map<std::string, std::string> control_env;
    bool wrapped_by_loader = false;
};

/// Prepares the mode-specific launch (loader invocation, loader copy,
/// tree patching) without running anything.
LoaderEnv prepare_loader(const ExecSpec& spec, const fs::path& rootfs,
                         const LoaderOptions& opts);

/// Runs the spec under the selected F mode.
RunResult run_loader(const ExecSpec& spec, const fs::path& rootfs,
                     const LoaderOptions& opts);

}  // namespace udocker::engine

#endif

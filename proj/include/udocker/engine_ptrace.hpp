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

#ifndef UDOCKER_ENGINE_PTRACE_HPP
#define UDOCKER_ENGINE_PTRACE_HPP

#include "udocker/engine.hpp"

namespace udocker::engine {

struct PtraceOptions {
    /// Tracer-side /proc inspection of every opened descriptor,
    /// recording real paths outside rootfs+binds (test support).
    bool verify_containment = false;
    /// Pretend the kernel rejects the selective-tracing filter so the
    /// downgrade path can be exercised.
    bool simulate_seccomp_unsupported = false;
};

/// Chroot-like execution by tracing the process tree and rewriting
/// pathname syscall arguments. spec.mode selects P1 (selective tracing
/// via a seccomp filter) or P2 (every syscall traced).
RunResult run_ptrace(const ExecSpec& spec, const fs::path& rootfs,
                     const PtraceOptions& opts = {});

}  // namespace udocker::engine

#endif

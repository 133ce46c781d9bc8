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

#ifndef UDOCKER_TESTS_FIXTURE_ROOTFS_HPP
#define UDOCKER_TESTS_FIXTURE_ROOTFS_HPP

#include <filesystem>
#include <string>

namespace udocker::test {

namespace fs = std::filesystem;

fs::path fixture_bin_dir();

/// Builds a self-contained rootfs for engine tests: fixture binaries
/// under /bin, the host loader and libc mirrored at their usual
/// locations (so dynamic fixtures run in every mode), a small /etc
/// tree and a set of symlinks exercising resolution.
struct EngineRootfs {
    fs::path root;
    std::string loader_cont = "/lib64/ld-linux-x86-64.so.2";
    fs::path lib_dir_cont = "/lib/x86_64-linux-gnu";
};

EngineRootfs make_engine_rootfs(const fs::path& dest);

}  // namespace udocker::test

#endif

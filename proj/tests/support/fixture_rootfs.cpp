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

#include "fixture_rootfs.hpp"

#include "udocker/elf_patcher.hpp"
#include "udocker/errors.hpp"
#include "udocker/util.hpp"

#include <stdexcept>

namespace udocker::test {

fs::path fixture_bin_dir() {
    auto v = env_var("UDOCKER_FIXTURE_DIR");
    if (!v) throw std::runtime_error("UDOCKER_FIXTURE_DIR not set");
    return fs::path(*v);
}

EngineRootfs make_engine_rootfs(const fs::path& dest) {
    EngineRootfs r;
    r.root = dest;

    for (const char* d : {"bin", "etc", "tmp", "data", "a/b/c",
                          "lib/x86_64-linux-gnu", "lib64", "usr"})
        fs::create_directories(dest / d);

    write_file(dest / "etc/msg", "inside");
    write_file(dest / "a/b/c/deep.txt", "deep");
    write_file(dest / "data/present.txt", "data-present");

    fs::create_symlink("/etc", dest / "x");                 // absolute
    fs::create_symlink("a/b", dest / "rel");                // relative
    fs::create_symlink("msg", dest / "etc/alias");          // relative, same dir
    fs::create_symlink("/loop2", dest / "loop1");           // cycle
    fs::create_symlink("/loop1", dest / "loop2");
    fs::create_symlink("../../..", dest / "a/b/up");        // climbs to the root

    for (const char* prog : {"static_cat", "cwd_walker", "fuzz_agent", "id_report",
                             "stat_bench", "cpu_loop", "fork_tree", "mknod_probe",
                             "parity_app", "parity_child", "env_mutator"})
        fs::copy_file(fixture_bin_dir() / prog, dest / "bin" / prog,
                      fs::copy_options::overwrite_existing);

    // mirror the host loader and libc so dynamic fixtures resolve
    // entirely inside the rootfs
    auto info = elf::read_elf(fixture_bin_dir() / "parity_app");
    if (!info.interpreter) throw std::runtime_error("parity_app lost its interpreter");
    fs::path host_loader = fs::canonical(*info.interpreter);
    fs::copy_file(host_loader, dest / "lib/x86_64-linux-gnu/ld-linux-x86-64.so.2",
                  fs::copy_options::overwrite_existing);
    fs::create_symlink("../lib/x86_64-linux-gnu/ld-linux-x86-64.so.2",
                       dest / "lib64/ld-linux-x86-64.so.2");

    fs::path libc = host_loader.parent_path() / "libc.so.6";
    if (!fs::exists(libc)) throw std::runtime_error("host libc not found next to loader");
    fs::copy_file(libc, dest / "lib/x86_64-linux-gnu/libc.so.6",
                  fs::copy_options::overwrite_existing);

    return r;
}

}  // namespace udocker::test

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

// On-demand single-binary patch helper, invoked by the interposer when
// a container process execs a binary that has not been rewritten yet.

#include "udocker/elf_patcher.hpp"
#include "udocker/errors.hpp"

#include <cstdio>

int main(int argc, char** argv) {
    if (argc != 4) {
        std::fprintf(stderr, "usage: udocker-elfpatch <rootfs> <journal-dir> <file>\n");
        return 1;
    }
    try {
        udocker::elf::patch_one_file(argv[1], argv[2], argv[3]);
        return 0;
    } catch (const udocker::Error& e) {
        std::fprintf(stderr, "udocker-elfpatch: %s\n", e.what());
        return e.exit_code();
    } catch (const std::exception& e) {
        std::fprintf(stderr, "udocker-elfpatch: %s\n", e.what());
        return 1;
    }
}

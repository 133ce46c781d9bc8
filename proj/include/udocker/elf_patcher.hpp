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

#ifndef UDOCKER_ELF_PATCHER_HPP
#define UDOCKER_ELF_PATCHER_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace udocker::elf {

namespace fs = std::filesystem;

struct ElfInfo {
    int cls = 64;  // 32 or 64
    bool is_dynamic = false;
    std::optional<std::string> interpreter;
    std::vector<std::string> rpath;    // DT_RPATH entries, ':'-split
    std::vector<std::string> runpath;  // DT_RUNPATH entries
    std::vector<std::string> needed;
};

/// Decodes header, PT_INTERP and .dynamic. Throws on non-ELF input.
ElfInfo read_elf(const fs::path& file);
bool looks_like_elf(const fs::path& file);

/// Rewrites the program interpreter. Grows the file with a fresh
/// PT_LOAD segment when the new path does not fit in place.
void set_interpreter(const fs::path& file, const std::string& new_interp);

/// Replaces the library search path with a single joined value (':'
/// separated). An existing DT_RPATH is retagged to DT_RUNPATH so the
/// result is always visible as runpath.
void set_rpath(const fs::path& file, const std::vector<std::string>& paths);

/// Renames DT_NEEDED entries; names absent from the table are skipped
/// with a warning.
void set_needed(const fs::path& file, const std::map<std::string, std::string>& renames);

// --- whole-tree plans with a reversal journal ------------------------------

struct PatchEntry {
    std::string rel_path;  // under the rootfs
    ElfInfo original;
    ElfInfo patched;
};

struct ElfPatchPlan {
    fs::path rootfs;
    std::vector<PatchEntry> entries;
};

/// Container-prefix patch of every (matching-architecture) dynamic ELF
/// under the rootfs: interpreter -> rootfs-internal loader, absolute
/// RPATH/RUNPATH entries and absolute DT_NEEDED names prefixed with the
/// rootfs path. Originals are journaled under `journal_dir` first; a
/// file already journaled is not touched again (idempotent apply).
ElfPatchPlan apply_prefix_plan(const fs::path& rootfs, const fs::path& journal_dir);

/// Same patch for exactly one file (on-demand mode); false when the
/// file needed no change or was journaled already.
bool patch_one_file(const fs::path& rootfs, const fs::path& journal_dir, const fs::path& file);

/// Restores every journaled file byte-for-byte and empties the journal.
/// Returns the number of restored files.
size_t revert_journal(const fs::path& journal_dir, const fs::path& rootfs);
size_t journal_entry_count(const fs::path& journal_dir);

/// Disables host ld.so.cache lookup and host default-directory search
/// in a loader binary copy by blanking the compiled-in path strings.
/// Returns the number of strings blanked.
size_t disable_host_paths_in_loader(const fs::path& loader_copy);

}  // namespace udocker::elf

#endif

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

#ifndef UDOCKER_LAYER_ASSEMBLER_HPP
#define UDOCKER_LAYER_ASSEMBLER_HPP

#include <filesystem>
#include <vector>

namespace udocker::layers {

namespace fs = std::filesystem;

/// Extraction hardening. Device nodes are always skipped and symlink
/// escape is always denied; those two are not user-configurable.
struct ExtractionPolicy {
    bool strip_setuid = true;
    int max_path_depth = 64;
};

/// Flattens an ordered stack of layer archives (base first) into an
/// empty directory. Within one layer, deletions signalled by whiteout
/// markers (".wh.<name>" files and ".wh..wh..opq" opaque markers) are
/// applied to the lower layers' content before the layer's own entries
/// are extracted; the markers themselves never materialize.
void flatten(const std::vector<fs::path>& layer_tars, const fs::path& dest,
             const ExtractionPolicy& policy = {});

/// Makes every file user-readable and every directory user-readable,
/// writable and traversable. Executable bits are preserved. Idempotent.
void adjust_permissions(const fs::path& rootfs);

/// Deterministic tar of a rootfs (sorted walk, hardlinks preserved,
/// fifos and devices skipped with a warning).
void export_tree(const fs::path& rootfs, const fs::path& out_tar);

/// Extracts a tree archive into an empty directory under the same
/// hardening rules as flatten.
void import_tree(const fs::path& in_tar, const fs::path& dest,
                 const ExtractionPolicy& policy = {});

}  // namespace udocker::layers

#endif

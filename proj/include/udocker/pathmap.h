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

/*
 * Container <-> host path translation with chroot-like semantics:
 *
 *   - container paths map to rootfs-prefixed host paths, except under
 *     bind entries (longest container-prefix match wins);
 *   - ".." clamps at the container root, it never escapes the rootfs;
 *   - symlinks are resolved component-wise in the CONTAINER view, so
 *     an absolute symlink target restarts at the container root;
 *   - resolution is purely lexical for components that do not exist.
 *
 * Plain C with direct syscalls only: this file is compiled both into
 * the runtime library and into the LD_PRELOAD interposer, where libc
 * wrappers may themselves be interposed.
 */

#ifndef UDOCKER_PATHMAP_H
#define UDOCKER_PATHMAP_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

#define PM_PATH_MAX 4096
#define PM_MAX_BINDS 64

typedef struct {
    char host[PM_PATH_MAX];
    char cont[PM_PATH_MAX];
    size_t host_len;
    size_t cont_len;
} pm_bind;

typedef struct {
    char rootfs[PM_PATH_MAX];
    size_t rootfs_len;
    pm_bind binds[PM_MAX_BINDS];
    int nbinds;
} pm_map;

/* Both return 0 on success, -1 on bad input. Paths must be absolute. */
int pm_map_init(pm_map* m, const char* rootfs);
int pm_map_add_bind(pm_map* m, const char* host, const char* cont);

/* Parses "host1:cont1;host2:cont2" as produced for the interposer. */
int pm_map_parse_binds(pm_map* m, const char* binds_str);

/*
 * Resolves `path` (relative paths are taken against `cwd_cont`, an
 * absolute container path) to a host path. When follow_last is 0 the
 * final component's symlink, if any, is not followed.
 *
 * out_host / out_cont may be NULL when not wanted; out_cont receives
 * the fully resolved container-view path.
 *
 * Returns 0, or a negative errno (-ELOOP, -ENAMETOOLONG, -EINVAL).
 */
int pm_translate(const pm_map* m, const char* cwd_cont, const char* path,
                 int follow_last, char* out_host, char* out_cont);

/*
 * Maps a host path back into the container view (bind sources first,
 * then the rootfs prefix). Returns 0, or -1 when the path lies outside
 * the container's reach.
 */
int pm_reverse(const pm_map* m, const char* host_path, char* out_cont);

#ifdef __cplusplus
}
#endif

#endif

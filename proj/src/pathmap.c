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

#define _GNU_SOURCE
#include "udocker/pathmap.h"

#include <errno.h>
#include <fcntl.h>
#include <string.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <unistd.h>

#define PM_MAX_SYMLINKS 40
#define PM_MAX_COMPS 256

static int raw_lstat_mode(const char* path, unsigned int* mode_out) {
    struct stat st;
    long rc = syscall(SYS_newfstatat, AT_FDCWD, path, &st, AT_SYMLINK_NOFOLLOW);
    if (rc != 0) return -1;
    *mode_out = st.st_mode;
    return 0;
}

static long raw_readlink(const char* path, char* buf, size_t n) {
    return syscall(SYS_readlinkat, AT_FDCWD, path, buf, n);
}

int pm_map_init(pm_map* m, const char* rootfs) {
    if (!rootfs || rootfs[0] != '/') return -1;
    size_t n = strlen(rootfs);
    while (n > 1 && rootfs[n - 1] == '/') n--;  /* no trailing slash */
    if (n >= PM_PATH_MAX) return -1;
    memcpy(m->rootfs, rootfs, n);
    m->rootfs[n] = '\0';
    m->rootfs_len = n;
    m->nbinds = 0;
    return 0;
}

int pm_map_add_bind(pm_map* m, const char* host, const char* cont) {
    if (m->nbinds >= PM_MAX_BINDS) return -1;
    if (!host || host[0] != '/' || !cont || cont[0] != '/') return -1;
    pm_bind* b = &m->binds[m->nbinds];
    size_t hn = strlen(host), cn = strlen(cont);
    while (hn > 1 && host[hn - 1] == '/') hn--;
    while (cn > 1 && cont[cn - 1] == '/') cn--;
    if (hn >= PM_PATH_MAX || cn >= PM_PATH_MAX) return -1;
    memcpy(b->host, host, hn); b->host[hn] = '\0'; b->host_len = hn;
    memcpy(b->cont, cont, cn); b->cont[cn] = '\0'; b->cont_len = cn;
    m->nbinds++;
    return 0;
}

int pm_map_parse_binds(pm_map* m, const char* s) {
    if (!s) return 0;
    char host[PM_PATH_MAX], cont[PM_PATH_MAX];
    while (*s) {
        const char* colon = strchr(s, ':');
        if (!colon) return -1;
        const char* semi = strchr(colon, ';');
        size_t hn = (size_t)(colon - s);
        size_t cn = semi ? (size_t)(semi - colon - 1) : strlen(colon + 1);
        if (hn == 0 || cn == 0 || hn >= PM_PATH_MAX || cn >= PM_PATH_MAX) return -1;
        memcpy(host, s, hn); host[hn] = '\0';
        memcpy(cont, colon + 1, cn); cont[cn] = '\0';
        if (pm_map_add_bind(m, host, cont) != 0) return -1;
        s = semi ? semi + 1 : colon + 1 + cn;
    }
    return 0;
}

/* container path (absolute, normalized) -> host path */
static int map_to_host(const pm_map* m, const char* cont, char* out) {
    size_t cl = strlen(cont);
    /* longest container-prefix bind match, at a component boundary */
    const pm_bind* best = 0;
    for (int i = 0; i < m->nbinds; i++) {
        const pm_bind* b = &m->binds[i];
        size_t bl = b->cont_len;
        int match;
        if (bl == 1 && b->cont[0] == '/')
            match = 1;  /* bind of container root */
        else
            match = (cl >= bl && memcmp(cont, b->cont, bl) == 0 &&
                     (cont[bl] == '\0' || cont[bl] == '/'));
        if (match && (!best || bl > best->cont_len)) best = b;
    }
    if (best) {
        const char* rest = cont + best->cont_len;
        if (best->host_len + strlen(rest) >= PM_PATH_MAX) return -ENAMETOOLONG;
        memcpy(out, best->host, best->host_len);
        strcpy(out + best->host_len, rest);
        if (out[0] == '\0') strcpy(out, "/");
        return 0;
    }
    if (m->rootfs_len + cl >= PM_PATH_MAX) return -ENAMETOOLONG;
    memcpy(out, m->rootfs, m->rootfs_len);
    if (cl == 1 && cont[0] == '/')
        out[m->rootfs_len] = '\0';
    else
        strcpy(out + m->rootfs_len, cont);
    return 0;
}

struct comp_queue {
    /* indices into bufs; a simple slice-based queue with splicing */
    const char* items[PM_MAX_COMPS];
    size_t lens[PM_MAX_COMPS];
    int head, tail;
    char storage[PM_PATH_MAX * 2];
    size_t used;
};

static int queue_push_path(struct comp_queue* q, const char* path, int front) {
    /* split path on '/', push components preserving order; when front
       is set the components are spliced before the current head */
    const char* comps[PM_MAX_COMPS];
    size_t lens[PM_MAX_COMPS];
    int n = 0;
    const char* p = path;
    while (*p) {
        while (*p == '/') p++;
        if (!*p) break;
        const char* start = p;
        while (*p && *p != '/') p++;
        if (n >= PM_MAX_COMPS) return -ENAMETOOLONG;
        comps[n] = start;
        lens[n] = (size_t)(p - start);
        n++;
    }
    if (n == 0) return 0;
    /* copy strings into storage (path buffer may be reused by caller) */
    const char* stored[PM_MAX_COMPS];
    for (int i = 0; i < n; i++) {
        if (q->used + lens[i] + 1 > sizeof q->storage) return -ENAMETOOLONG;
        char* dst = q->storage + q->used;
        memcpy(dst, comps[i], lens[i]);
        dst[lens[i]] = '\0';
        q->used += lens[i] + 1;
        stored[i] = dst;
    }
    if (front) {
        if (q->head - n < 0) {
            /* shift right to make room */
            int count = q->tail - q->head;
            if (n + count > PM_MAX_COMPS) return -ENAMETOOLONG;
            memmove((void*)&q->items[n], (void*)&q->items[q->head],
                    (size_t)count * sizeof q->items[0]);
            memmove(&q->lens[n], &q->lens[q->head], (size_t)count * sizeof q->lens[0]);
            q->head = 0;
            q->tail = count + n;
            for (int i = 0; i < n; i++) { q->items[i] = stored[i]; q->lens[i] = lens[i]; }
            return 0;
        }
        q->head -= n;
        for (int i = 0; i < n; i++) { q->items[q->head + i] = stored[i]; q->lens[q->head + i] = lens[i]; }
    } else {
        if (q->tail + n > PM_MAX_COMPS) return -ENAMETOOLONG;
        for (int i = 0; i < n; i++) { q->items[q->tail + i] = stored[i]; q->lens[q->tail + i] = lens[i]; }
        q->tail += n;
    }
    return 0;
}

int pm_translate(const pm_map* m, const char* cwd_cont, const char* path,
                 int follow_last, char* out_host, char* out_cont) {
    if (!path) return -EINVAL;

    struct comp_queue q;
    q.head = q.tail = 0;
    q.used = 0;

    int rc;
    if (path[0] != '/') {
        if (!cwd_cont || cwd_cont[0] != '/') return -EINVAL;
        if ((rc = queue_push_path(&q, cwd_cont, 0)) != 0) return rc;
    }
    if ((rc = queue_push_path(&q, path, 0)) != 0) return rc;

    /* resolved container-view component stack */
    char stack[PM_PATH_MAX];
    size_t offs[PM_MAX_COMPS];
    int depth = 0;
    size_t stack_len = 0;
    int links = 0;

    char cont_buf[PM_PATH_MAX];
    char host_buf[PM_PATH_MAX];
    char target[PM_PATH_MAX];

    while (q.head < q.tail) {
        const char* comp = q.items[q.head];
        size_t clen = q.lens[q.head];
        q.head++;

        if (clen == 1 && comp[0] == '.') continue;
        if (clen == 2 && comp[0] == '.' && comp[1] == '.') {
            if (depth > 0) {
                depth--;
                stack_len = offs[depth];
            }
            continue;  /* ".." at the root clamps */
        }
        if (depth >= PM_MAX_COMPS || stack_len + 1 + clen >= PM_PATH_MAX)
            return -ENAMETOOLONG;

        /* tentative container path with this component appended */
        offs[depth] = stack_len;
        stack[stack_len] = '/';
        memcpy(stack + stack_len + 1, comp, clen);
        size_t new_len = stack_len + 1 + clen;
        memcpy(cont_buf, stack, new_len);
        cont_buf[new_len] = '\0';

        if ((rc = map_to_host(m, cont_buf, host_buf)) != 0) return rc;

        int more = q.head < q.tail;
        if (more || follow_last) {
            unsigned int mode;
            if (raw_lstat_mode(host_buf, &mode) == 0 && S_ISLNK(mode)) {
                if (++links > PM_MAX_SYMLINKS) return -ELOOP;
                long n = raw_readlink(host_buf, target, sizeof target - 1);
                if (n > 0) {
                    target[n] = '\0';
                    if (target[0] == '/') {
                        depth = 0;
                        stack_len = 0;
                    }
                    if ((rc = queue_push_path(&q, target, 1)) != 0) return rc;
                    continue;  /* component replaced by its target */
                }
            }
        }
        depth++;
        stack_len = new_len;
    }

    if (stack_len == 0) {
        cont_buf[0] = '/';
        cont_buf[1] = '\0';
    } else {
        memcpy(cont_buf, stack, stack_len);
        cont_buf[stack_len] = '\0';
    }
    if ((rc = map_to_host(m, cont_buf, host_buf)) != 0) return rc;
    if (out_cont) strcpy(out_cont, cont_buf);
    if (out_host) strcpy(out_host, host_buf);
    return 0;
}

int pm_reverse(const pm_map* m, const char* host_path, char* out_cont) {
    if (!host_path || host_path[0] != '/') return -1;
    size_t hl = strlen(host_path);

    const pm_bind* best = 0;
    for (int i = 0; i < m->nbinds; i++) {
        const pm_bind* b = &m->binds[i];
        size_t bl = b->host_len;
        int match = (hl >= bl && memcmp(host_path, b->host, bl) == 0 &&
                     (host_path[bl] == '\0' || host_path[bl] == '/' ||
                      (bl == 1 && b->host[0] == '/')));
        if (match && (!best || bl > best->host_len)) best = b;
    }
    if (best) {
        const char* rest = host_path + best->host_len;
        if (best->cont_len + strlen(rest) >= PM_PATH_MAX) return -1;
        memcpy(out_cont, best->cont, best->cont_len);
        strcpy(out_cont + best->cont_len, rest);
        if (out_cont[0] == '\0') strcpy(out_cont, "/");
        return 0;
    }
    size_t rl = m->rootfs_len;
    if (hl >= rl && memcmp(host_path, m->rootfs, rl) == 0 &&
        (host_path[rl] == '\0' || host_path[rl] == '/')) {
        if (host_path[rl] == '\0')
            strcpy(out_cont, "/");
        else
            strcpy(out_cont, host_path + rl);
        return 0;
    }
    return -1;
}

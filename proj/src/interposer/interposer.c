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
 * Preloadable path interposer: rewrites container paths to host paths
 * inside the process, mirroring the tracing engine's translation
 * semantics (shared pathmap resolver). Configured exclusively through
 * UDOCKER_I_* environment variables:
 *
 *   UDOCKER_I_ROOT     rootfs (host absolute path), enables the layer
 *   UDOCKER_I_BINDS    "host:cont;host:cont" bind table
 *   UDOCKER_I_PRELOAD  this object's host path, re-injected on exec
 *   UDOCKER_I_LDSO     loader override for wrapped execs (modified copy)
 *   UDOCKER_I_LDPATH   host-expanded library path for child processes
 *   UDOCKER_I_ARGV0    "1" when the loader understands --argv0
 *   UDOCKER_I_PATCH    on-demand patch command (unit-separated argv)
 *   UDOCKER_I_UID/GID  presented identity when it differs from the real one
 *
 * Only dynamically linked programs route through here; direct syscall
 * users bypass libc and are out of scope for the loader-based modes.
 */

#define _GNU_SOURCE
#include "udocker/pathmap.h"

#include <dirent.h>
#include <dlfcn.h>
#include <elf.h>
#include <errno.h>
#include <fcntl.h>
#include <pthread.h>
#include <stdarg.h>
#include <stdio.h>
#include <stdlib.h>
#include <string.h>
#include <sys/stat.h>
#include <sys/syscall.h>
#include <sys/wait.h>
#include <unistd.h>
#include <utime.h>

static pm_map g_map;
static int g_active = 0;
static const char* g_preload = 0;
static const char* g_ldso = 0;
static const char* g_ldpath = 0;
static const char* g_patch = 0;
static int g_argv0_ok = 0;
static int g_fake_id = 0;
static unsigned g_uid = 0, g_gid = 0;
static pthread_once_t g_once = PTHREAD_ONCE_INIT;

#define REAL(name) \
    static __typeof__(name)* real_##name; \
    if (!real_##name) real_##name = (__typeof__(name)*)dlsym(RTLD_NEXT, #name);

/* environ scan without getenv(): our own getenv wrapper must never be
 * reached from initialization (pthread_once would self-deadlock) */
static const char* raw_getenv(const char* name) {
    size_t n = strlen(name);
    if (!environ) return 0;
    for (char** e = environ; *e; e++)
        if (strncmp(*e, name, n) == 0 && (*e)[n] == '=') return *e + n + 1;
    return 0;
}

static void init_once(void) {
    const char* root = raw_getenv("UDOCKER_I_ROOT");
    if (!root || root[0] != '/') return;
    if (pm_map_init(&g_map, root) != 0) return;
    const char* binds = raw_getenv("UDOCKER_I_BINDS");
    if (binds && pm_map_parse_binds(&g_map, binds) != 0) return;
    g_preload = raw_getenv("UDOCKER_I_PRELOAD");
    g_ldso = raw_getenv("UDOCKER_I_LDSO");
    g_ldpath = raw_getenv("UDOCKER_I_LDPATH");
    g_patch = raw_getenv("UDOCKER_I_PATCH");
    const char* a0 = raw_getenv("UDOCKER_I_ARGV0");
    g_argv0_ok = a0 && a0[0] == '1';
    const char* uid = raw_getenv("UDOCKER_I_UID");
    const char* gid = raw_getenv("UDOCKER_I_GID");
    if (uid && gid) {
        g_uid = (unsigned)atoi(uid);
        g_gid = (unsigned)atoi(gid);
        g_fake_id = g_uid != getuid() || g_gid != getgid();
    }
    g_active = 1;
}

static int active(void) {
    pthread_once(&g_once, init_once);
    return g_active;
}

/* current working directory in container view */
static int cwd_cont(char* out) {
    char host[PM_PATH_MAX];
    long n = syscall(SYS_getcwd, host, sizeof host);
    if (n <= 0) return -1;
    if (pm_reverse(&g_map, host, out) != 0) {
        /* outside the map (should not happen): degrade to "/" */
        out[0] = '/';
        out[1] = '\0';
    }
    return 0;
}

/*
 * Translates `path` for use with the real libc call. Returns:
 *   0  -> out contains the host path
 *   1  -> pass the original pointer through untouched
 *  -1  -> error, errno set
 */
static int tr(const char* path, int follow, char* out) {
    if (!active() || !path || !path[0]) return 1;
    char cwd[PM_PATH_MAX];
    const char* base = "/";
    if (path[0] != '/') {
        if (cwd_cont(cwd) != 0) return 1;
        base = cwd;
    }
    int rc = pm_translate(&g_map, base, path, follow, out, 0);
    if (rc != 0) {
        errno = -rc;
        return -1;
    }
    return 0;
}

/* dirfd-relative variant: relative paths against a real dirfd resolve
 * through /proc; the result is always an absolute host path */
static int tr_at(int dirfd, const char* path, int follow, char* out) {
    if (!active() || !path || !path[0]) return 1;
    if (path[0] == '/' || dirfd == AT_FDCWD) return tr(path, follow, out);
    char link[64], host[PM_PATH_MAX], cont[PM_PATH_MAX];
    snprintf(link, sizeof link, "/proc/self/fd/%d", dirfd);
    long n = syscall(SYS_readlinkat, AT_FDCWD, link, host, sizeof host - 1);
    if (n <= 0) return 1; /* inherited host fd: leave the call alone */
    host[n] = '\0';
    if (pm_reverse(&g_map, host, cont) != 0) return 1;
    int rc = pm_translate(&g_map, cont, path, follow, out, 0);
    if (rc != 0) {
        errno = -rc;
        return -1;
    }
    return 0;
}

#define TR1(path, follow, var) \
    char var##_buf[PM_PATH_MAX]; \
    const char* var = (path); \
    { \
        int rc_ = tr(path, follow, var##_buf); \
        if (rc_ < 0) return -1; \
        if (rc_ == 0) var = var##_buf; \
    }

#define TRAT(fd, path, follow, var) \
    char var##_buf[PM_PATH_MAX]; \
    const char* var = (path); \
    { \
        int rc_ = tr_at(fd, path, follow, var##_buf); \
        if (rc_ < 0) return -1; \
        if (rc_ == 0) var = var##_buf; \
    }

/* ------------------------------------------------------------- open/fopen */

int open(const char* path, int flags, ...) {
    REAL(open);
    mode_t mode = 0;
    if (flags & O_CREAT) {
        va_list ap;
        va_start(ap, flags);
        mode = va_arg(ap, mode_t);
        va_end(ap);
    }
    int follow = !(flags & O_NOFOLLOW) && !((flags & O_CREAT) && (flags & O_EXCL));
    TR1(path, follow, p);
    return real_open(p, flags, mode);
}

int open64(const char* path, int flags, ...) {
    mode_t mode = 0;
    if (flags & O_CREAT) {
        va_list ap;
        va_start(ap, flags);
        mode = va_arg(ap, mode_t);
        va_end(ap);
    }
    return open(path, flags | O_LARGEFILE, mode);
}

int openat(int dirfd, const char* path, int flags, ...) {
    REAL(openat);
    mode_t mode = 0;
    if (flags & O_CREAT) {
        va_list ap;
        va_start(ap, flags);
        mode = va_arg(ap, mode_t);
        va_end(ap);
    }
    int follow = !(flags & O_NOFOLLOW) && !((flags & O_CREAT) && (flags & O_EXCL));
    TRAT(dirfd, path, follow, p);
    return real_openat(dirfd, p, flags, mode);
}

int openat64(int dirfd, const char* path, int flags, ...) {
    mode_t mode = 0;
    if (flags & O_CREAT) {
        va_list ap;
        va_start(ap, flags);
        mode = va_arg(ap, mode_t);
        va_end(ap);
    }
    return openat(dirfd, path, flags | O_LARGEFILE, mode);
}

int creat(const char* path, mode_t mode) { return open(path, O_WRONLY | O_CREAT | O_TRUNC, mode); }
int creat64(const char* path, mode_t mode) { return creat(path, mode); }

FILE* fopen(const char* path, const char* mode) {
    REAL(fopen);
    char buf[PM_PATH_MAX];
    const char* p = path;
    int rc = tr(path, 1, buf);
    if (rc < 0) return 0;
    if (rc == 0) p = buf;
    return real_fopen(p, mode);
}

FILE* fopen64(const char* path, const char* mode) { return fopen(path, mode); }

FILE* freopen(const char* path, const char* mode, FILE* stream) {
    REAL(freopen);
    char buf[PM_PATH_MAX];
    const char* p = path;
    if (path) {
        int rc = tr(path, 1, buf);
        if (rc < 0) return 0;
        if (rc == 0) p = buf;
    }
    return real_freopen(p, mode, stream);
}

DIR* opendir(const char* path) {
    REAL(opendir);
    char buf[PM_PATH_MAX];
    const char* p = path;
    int rc = tr(path, 1, buf);
    if (rc < 0) return 0;
    if (rc == 0) p = buf;
    return real_opendir(p);
}

/* ------------------------------------------------------------ stat family */

int stat(const char* path, struct stat* st) {
    REAL(stat);
    TR1(path, 1, p);
    return real_stat(p, st);
}

int lstat(const char* path, struct stat* st) {
    REAL(lstat);
    TR1(path, 0, p);
    return real_lstat(p, st);
}

int fstatat(int dirfd, const char* path, struct stat* st, int flags) {
    REAL(fstatat);
    TRAT(dirfd, path, !(flags & AT_SYMLINK_NOFOLLOW), p);
    return real_fstatat(dirfd, p, st, flags);
}

int __xstat(int ver, const char* path, struct stat* st) {
    REAL(__xstat);
    TR1(path, 1, p);
    return real___xstat(ver, p, st);
}

int __lxstat(int ver, const char* path, struct stat* st) {
    REAL(__lxstat);
    TR1(path, 0, p);
    return real___lxstat(ver, p, st);
}

int __fxstatat(int ver, int dirfd, const char* path, struct stat* st, int flags) {
    REAL(__fxstatat);
    TRAT(dirfd, path, !(flags & AT_SYMLINK_NOFOLLOW), p);
    return real___fxstatat(ver, dirfd, p, st, flags);
}

int access(const char* path, int mode) {
    REAL(access);
    TR1(path, 1, p);
    return real_access(p, mode);
}

int faccessat(int dirfd, const char* path, int mode, int flags) {
    REAL(faccessat);
    TRAT(dirfd, path, !(flags & AT_SYMLINK_NOFOLLOW), p);
    return real_faccessat(dirfd, p, mode, flags);
}

int euidaccess(const char* path, int mode) { return access(path, mode); }
int eaccess(const char* path, int mode) { return access(path, mode); }

/* ------------------------------------------------------------- cwd family */

int chdir(const char* path) {
    REAL(chdir);
    TR1(path, 1, p);
    return real_chdir(p);
}

char* getcwd(char* buf, size_t size) {
    REAL(getcwd);
    if (!active()) return real_getcwd(buf, size);
    char host[PM_PATH_MAX], cont[PM_PATH_MAX];
    if (!real_getcwd(host, sizeof host)) return 0;
    if (pm_reverse(&g_map, host, cont) != 0) {
        /* outside the container view: report as-is */
        strncpy(cont, host, sizeof cont - 1);
        cont[sizeof cont - 1] = '\0';
    }
    size_t len = strlen(cont) + 1;
    if (!buf) {
        if (size && size < len) {
            errno = ERANGE;
            return 0;
        }
        char* out = malloc(size ? size : len);
        if (!out) return 0;
        memcpy(out, cont, len);
        return out;
    }
    if (size < len) {
        errno = ERANGE;
        return 0;
    }
    memcpy(buf, cont, len);
    return buf;
}

char* get_current_dir_name(void) {
    char buf[PM_PATH_MAX];
    if (!getcwd(buf, sizeof buf)) return 0;
    return strdup(buf);
}

/* --------------------------------------------------------------- mutation */

int mkdir(const char* path, mode_t mode) {
    REAL(mkdir);
    TR1(path, 0, p);
    return real_mkdir(p, mode);
}

int mkdirat(int dirfd, const char* path, mode_t mode) {
    REAL(mkdirat);
    TRAT(dirfd, path, 0, p);
    return real_mkdirat(dirfd, p, mode);
}

int rmdir(const char* path) {
    REAL(rmdir);
    TR1(path, 0, p);
    return real_rmdir(p);
}

int unlink(const char* path) {
    REAL(unlink);
    TR1(path, 0, p);
    return real_unlink(p);
}

int unlinkat(int dirfd, const char* path, int flags) {
    REAL(unlinkat);
    TRAT(dirfd, path, 0, p);
    return real_unlinkat(dirfd, p, flags);
}

int remove(const char* path) {
    REAL(remove);
    TR1(path, 0, p);
    return real_remove(p);
}

int rename(const char* oldp, const char* newp) {
    REAL(rename);
    TR1(oldp, 0, po);
    TR1(newp, 0, pn);
    return real_rename(po, pn);
}

int renameat(int ofd, const char* oldp, int nfd, const char* newp) {
    REAL(renameat);
    TRAT(ofd, oldp, 0, po);
    TRAT(nfd, newp, 0, pn);
    return real_renameat(ofd, po, nfd, pn);
}

int renameat2(int ofd, const char* oldp, int nfd, const char* newp, unsigned flags) {
    REAL(renameat2);
    TRAT(ofd, oldp, 0, po);
    TRAT(nfd, newp, 0, pn);
    return real_renameat2(ofd, po, nfd, pn, flags);
}

int link(const char* oldp, const char* newp) {
    REAL(link);
    TR1(oldp, 0, po);
    TR1(newp, 0, pn);
    return real_link(po, pn);
}

int linkat(int ofd, const char* oldp, int nfd, const char* newp, int flags) {
    REAL(linkat);
    TRAT(ofd, oldp, (flags & AT_SYMLINK_FOLLOW) != 0, po);
    TRAT(nfd, newp, 0, pn);
    return real_linkat(ofd, po, nfd, pn, flags);
}

/* symlink targets are container text, stored verbatim */
int symlink(const char* target, const char* linkpath) {
    REAL(symlink);
    TR1(linkpath, 0, p);
    return real_symlink(target, p);
}

int symlinkat(const char* target, int dirfd, const char* linkpath) {
    REAL(symlinkat);
    TRAT(dirfd, linkpath, 0, p);
    return real_symlinkat(target, dirfd, p);
}

static ssize_t reverse_result(char* buf, ssize_t n, size_t bufsiz) {
    if (n <= 0 || (size_t)n >= PM_PATH_MAX) return n;
    char tmp[PM_PATH_MAX], cont[PM_PATH_MAX];
    memcpy(tmp, buf, (size_t)n);
    tmp[n] = '\0';
    if (tmp[0] != '/' || pm_reverse(&g_map, tmp, cont) != 0) return n;
    size_t len = strlen(cont);
    if (len > bufsiz) len = bufsiz;
    memcpy(buf, cont, len);
    return (ssize_t)len;
}

ssize_t readlink(const char* path, char* buf, size_t bufsiz) {
    REAL(readlink);
    TR1(path, 0, p);
    ssize_t n = real_readlink(p, buf, bufsiz);
    return active() ? reverse_result(buf, n, bufsiz) : n;
}

ssize_t readlinkat(int dirfd, const char* path, char* buf, size_t bufsiz) {
    REAL(readlinkat);
    TRAT(dirfd, path, 0, p);
    ssize_t n = real_readlinkat(dirfd, p, buf, bufsiz);
    return active() ? reverse_result(buf, n, bufsiz) : n;
}

char* realpath(const char* path, char* resolved) {
    REAL(realpath);
    if (!active()) return real_realpath(path, resolved);
    char host[PM_PATH_MAX], cont[PM_PATH_MAX];
    char cwd[PM_PATH_MAX];
    const char* base = "/";
    if (!path) {
        errno = EINVAL;
        return 0;
    }
    if (path[0] != '/') {
        if (cwd_cont(cwd) != 0) return real_realpath(path, resolved);
        base = cwd;
    }
    int rc = pm_translate(&g_map, base, path, 1, host, cont);
    if (rc != 0) {
        errno = -rc;
        return 0;
    }
    struct stat st;
    if (syscall(SYS_newfstatat, AT_FDCWD, host, &st, 0) != 0) return 0; /* errno set */
    if (!resolved) return strdup(cont);
    strncpy(resolved, cont, PM_PATH_MAX);
    return resolved;
}

char* canonicalize_file_name(const char* path) { return realpath(path, 0); }

int chmod(const char* path, mode_t mode) {
    REAL(chmod);
    TR1(path, 1, p);
    return real_chmod(p, mode);
}

int fchmodat(int dirfd, const char* path, mode_t mode, int flags) {
    REAL(fchmodat);
    TRAT(dirfd, path, !(flags & AT_SYMLINK_NOFOLLOW), p);
    return real_fchmodat(dirfd, p, mode, flags);
}

int chown(const char* path, uid_t uid, gid_t gid) {
    REAL(chown);
    TR1(path, 1, p);
    if (g_fake_id) return 0; /* absorbed under a presented identity */
    return real_chown(p, uid, gid);
}

int lchown(const char* path, uid_t uid, gid_t gid) {
    REAL(lchown);
    TR1(path, 0, p);
    if (g_fake_id) return 0;
    return real_lchown(p, uid, gid);
}

int fchownat(int dirfd, const char* path, uid_t uid, gid_t gid, int flags) {
    REAL(fchownat);
    TRAT(dirfd, path, !(flags & AT_SYMLINK_NOFOLLOW), p);
    if (g_fake_id) return 0;
    return real_fchownat(dirfd, p, uid, gid, flags);
}

int truncate(const char* path, off_t len) {
    REAL(truncate);
    TR1(path, 1, p);
    return real_truncate(p, len);
}

int utime(const char* path, const struct utimbuf* times) {
    REAL(utime);
    TR1(path, 1, p);
    return real_utime(p, times);
}

int utimes(const char* path, const struct timeval times[2]) {
    REAL(utimes);
    TR1(path, 1, p);
    return real_utimes(p, times);
}

int lutimes(const char* path, const struct timeval times[2]) {
    REAL(lutimes);
    TR1(path, 0, p);
    return real_lutimes(p, times);
}

int utimensat(int dirfd, const char* path, const struct timespec times[2], int flags) {
    REAL(utimensat);
    TRAT(dirfd, path, !(flags & AT_SYMLINK_NOFOLLOW), p);
    return real_utimensat(dirfd, p, times, flags);
}

int mkstemp(char* tmpl) {
    REAL(mkstemp);
    if (!active()) return real_mkstemp(tmpl);
    char buf[PM_PATH_MAX];
    int rc = tr(tmpl, 0, buf);
    if (rc != 0) return real_mkstemp(tmpl);
    int fd = real_mkstemp(buf);
    if (fd >= 0) {
        /* copy the chosen suffix back into the caller's template */
        size_t tl = strlen(tmpl), bl = strlen(buf);
        if (tl >= 6 && bl >= 6) memcpy(tmpl + tl - 6, buf + bl - 6, 6);
    }
    return fd;
}

char* mkdtemp(char* tmpl) {
    REAL(mkdtemp);
    if (!active()) return real_mkdtemp(tmpl);
    char buf[PM_PATH_MAX];
    int rc = tr(tmpl, 0, buf);
    if (rc != 0) return real_mkdtemp(tmpl);
    char* r = real_mkdtemp(buf);
    if (r) {
        size_t tl = strlen(tmpl), bl = strlen(buf);
        if (tl >= 6 && bl >= 6) memcpy(tmpl + tl - 6, buf + bl - 6, 6);
        return tmpl;
    }
    return 0;
}

/* ------------------------------------------------------ denied operations */

int mknod(const char* path, mode_t mode, dev_t dev) {
    (void)path; (void)mode; (void)dev;
    if (!active()) {
        REAL(mknod);
        return real_mknod(path, mode, dev);
    }
    errno = EPERM;
    return -1;
}

int mknodat(int dirfd, const char* path, mode_t mode, dev_t dev) {
    (void)dirfd; (void)path; (void)mode; (void)dev;
    if (!active()) {
        REAL(mknodat);
        return real_mknodat(dirfd, path, mode, dev);
    }
    errno = EPERM;
    return -1;
}

int mount(const char* src, const char* dst, const char* type, unsigned long flags,
          const void* data) {
    (void)src; (void)dst; (void)type; (void)flags; (void)data;
    errno = EPERM;
    return -1;
}

int umount(const char* target) {
    (void)target;
    errno = EPERM;
    return -1;
}

int umount2(const char* target, int flags) {
    (void)target; (void)flags;
    errno = EPERM;
    return -1;
}

int chroot(const char* path) {
    (void)path;
    errno = EPERM;
    return -1;
}

/* ---------------------------------------------------------------- identity */

uid_t getuid(void) {
    REAL(getuid);
    return g_fake_id ? (uid_t)g_uid : real_getuid();
}
uid_t geteuid(void) {
    REAL(geteuid);
    return g_fake_id ? (uid_t)g_uid : real_geteuid();
}
gid_t getgid(void) {
    REAL(getgid);
    return g_fake_id ? (gid_t)g_gid : real_getgid();
}
gid_t getegid(void) {
    REAL(getegid);
    return g_fake_id ? (gid_t)g_gid : real_getegid();
}
int setuid(uid_t u) {
    REAL(setuid);
    return g_fake_id ? 0 : real_setuid(u);
}
int setgid(gid_t g) {
    REAL(setgid);
    return g_fake_id ? 0 : real_setgid(g);
}

/* ------------------------------------------------- environment interception */

static int is_control_var(const char* name) {
    return strncmp(name, "UDOCKER_I_", 10) == 0;
}

/* container paths in LD_LIBRARY_PATH become host paths before the
 * loader can see them */
static char* expand_ld_library_path(const char* value, char* out, size_t outsz) {
    size_t used = 0;
    const char* p = value;
    out[0] = '\0';
    while (*p) {
        const char* colon = strchr(p, ':');
        size_t len = colon ? (size_t)(colon - p) : strlen(p);
        char entry[PM_PATH_MAX];
        if (len < sizeof entry) {
            memcpy(entry, p, len);
            entry[len] = '\0';
            char host[PM_PATH_MAX], back[PM_PATH_MAX];
            const char* usep = entry;
            /* entries already on the host side (rootfs- or bind-prefixed)
             * pass through; container paths get expanded */
            if (entry[0] == '/' && pm_reverse(&g_map, entry, back) != 0 &&
                pm_translate(&g_map, "/", entry, 1, host, 0) == 0)
                usep = host;
            size_t ulen = strlen(usep);
            if (used + ulen + 2 < outsz) {
                if (used) out[used++] = ':';
                memcpy(out + used, usep, ulen);
                used += ulen;
                out[used] = '\0';
            }
        }
        if (!colon) break;
        p = colon + 1;
    }
    return out;
}

int setenv(const char* name, const char* value, int overwrite) {
    REAL(setenv);
    if (active() && name && value && strcmp(name, "LD_LIBRARY_PATH") == 0) {
        char buf[4 * PM_PATH_MAX];
        return real_setenv(name, expand_ld_library_path(value, buf, sizeof buf),
                           overwrite);
    }
    return real_setenv(name, value, overwrite);
}

int putenv(char* str) {
    REAL(putenv);
    if (active() && str && strncmp(str, "LD_LIBRARY_PATH=", 16) == 0) {
        char buf[4 * PM_PATH_MAX];
        expand_ld_library_path(str + 16, buf, sizeof buf);
        char* copy = malloc(strlen(buf) + 17);
        if (!copy) return -1;
        strcpy(copy, "LD_LIBRARY_PATH=");
        strcat(copy, buf);
        return real_putenv(copy); /* putenv keeps the string alive */
    }
    return real_putenv(str);
}

char* getenv(const char* name) {
    if (active() && name && is_control_var(name)) return 0;
    return (char*)raw_getenv(name);
}

/* ------------------------------------------------------------ exec family */

static int read_interp(const char* host_path, char* out, size_t outsz, int* is_dyn) {
    *is_dyn = 0;
    out[0] = '\0';
    int fd = (int)syscall(SYS_openat, AT_FDCWD, host_path, O_RDONLY);
    if (fd < 0) return -1;
    unsigned char hdr[sizeof(Elf64_Ehdr)];
    if (read(fd, hdr, sizeof hdr) != (ssize_t)sizeof hdr ||
        memcmp(hdr, ELFMAG, 4) != 0 || hdr[EI_CLASS] != ELFCLASS64) {
        close(fd);
        return -1;
    }
    const Elf64_Ehdr* eh = (const Elf64_Ehdr*)hdr;
    for (int i = 0; i < eh->e_phnum; i++) {
        Elf64_Phdr ph;
        if (pread(fd, &ph, sizeof ph, (off_t)(eh->e_phoff + i * sizeof ph)) !=
            (ssize_t)sizeof ph)
            break;
        if (ph.p_type == PT_DYNAMIC) *is_dyn = 1;
        if (ph.p_type == PT_INTERP && ph.p_filesz > 0 && ph.p_filesz < outsz) {
            if (pread(fd, out, ph.p_filesz, (off_t)ph.p_offset) ==
                (ssize_t)ph.p_filesz) {
                out[ph.p_filesz] = '\0';
            }
        }
    }
    close(fd);
    return 0;
}

static void run_patch_command(const char* host_path) {
    if (!g_patch) return;
    /* unit-separated argv prefix + target path */
    char* argv[32];
    static char cmdbuf[2048];
    strncpy(cmdbuf, g_patch, sizeof cmdbuf - 1);
    cmdbuf[sizeof cmdbuf - 1] = '\0';
    int argc = 0;
    char* save = 0;
    for (char* tok = strtok_r(cmdbuf, "\x1f", &save); tok && argc < 30;
         tok = strtok_r(0, "\x1f", &save))
        argv[argc++] = tok;
    argv[argc++] = (char*)host_path;
    argv[argc] = 0;
    pid_t pid = fork();
    if (pid == 0) {
        REAL(execve);
        real_execve(argv[0], argv, environ);
        _exit(127);
    }
    if (pid > 0) {
        int st = 0;
        waitpid(pid, &st, 0);
    }
}

static int env_count(char* const* envp) {
    int n = 0;
    while (envp && envp[n]) n++;
    return n;
}

/* builds the child environment: control vars present, LD_PRELOAD keeps
 * the interposer, LD_LIBRARY_PATH entries host-expanded */
static char** fix_child_env(char* const* envp) {
    static const char* forced[] = {"UDOCKER_I_ROOT", "UDOCKER_I_BINDS",
                                   "UDOCKER_I_PRELOAD", "UDOCKER_I_LDSO",
                                   "UDOCKER_I_LDPATH", "UDOCKER_I_ARGV0",
                                   "UDOCKER_I_PATCH", "UDOCKER_I_UID",
                                   "UDOCKER_I_GID", 0};
    int n = env_count(envp);
    /* worst case: all forced vars added plus LD_PRELOAD */
    char** out = calloc((size_t)n + 16, sizeof(char*));
    if (!out) return 0;
    int m = 0;
    int saw_preload = 0, saw_ldpath = 0;
    for (int i = 0; i < n; i++) {
        const char* e = envp[i];
        if (strncmp(e, "LD_LIBRARY_PATH=", 16) == 0) {
            char buf[4 * PM_PATH_MAX];
            expand_ld_library_path(e + 16, buf, sizeof buf);
            char* copy = malloc(strlen(buf) + 17);
            if (!copy) continue;
            strcpy(copy, "LD_LIBRARY_PATH=");
            strcat(copy, buf);
            out[m++] = copy;
            saw_ldpath = 1;
            continue;
        }
        if (strncmp(e, "LD_PRELOAD=", 11) == 0 && g_preload) {
            if (!strstr(e, g_preload)) {
                char* copy = malloc(strlen(e) + strlen(g_preload) + 2);
                if (copy) {
                    sprintf(copy, "%s:%s", e, g_preload);
                    out[m++] = copy;
                    saw_preload = 1;
                    continue;
                }
            } else {
                saw_preload = 1;
            }
        }
        out[m++] = (char*)e;
    }
    if (!saw_preload && g_preload) {
        char* copy = malloc(strlen(g_preload) + 12);
        if (copy) {
            sprintf(copy, "LD_PRELOAD=%s", g_preload);
            out[m++] = copy;
        }
    }
    if (!saw_ldpath && g_ldpath) {
        char* copy = malloc(strlen(g_ldpath) + 17);
        if (copy) {
            sprintf(copy, "LD_LIBRARY_PATH=%s", g_ldpath);
            out[m++] = copy;
        }
    }
    for (int f = 0; forced[f]; f++) {
        int present = 0;
        size_t flen = strlen(forced[f]);
        for (int i = 0; i < m; i++)
            if (strncmp(out[i], forced[f], flen) == 0 && out[i][flen] == '=')
                present = 1;
        if (present) continue;
        const char* v = raw_getenv(forced[f]);
        if (!v) continue;
        char* copy = malloc(flen + strlen(v) + 2);
        if (!copy) continue;
        sprintf(copy, "%s=%s", forced[f], v);
        out[m++] = copy;
    }
    out[m] = 0;
    return out;
}

int execve(const char* path, char* const argv[], char* const envp[]) {
    REAL(execve);
    if (!active()) return real_execve(path, argv, envp);

    /* unwrap shebang lines like the kernel would */
    char target[PM_PATH_MAX];
    strncpy(target, path, sizeof target - 1);
    target[sizeof target - 1] = '\0';
    char host[PM_PATH_MAX];
    char* extra[8];
    int n_extra = 0;

    for (int depth = 0; depth < 4; depth++) {
        int rc = tr(target, 1, host);
        if (rc == 1) strncpy(host, target, sizeof host - 1);
        if (rc < 0) return -1;

        char head[256];
        int fd = (int)syscall(SYS_openat, AT_FDCWD, host, O_RDONLY);
        if (fd < 0) {
            errno = ENOENT;
            return -1;
        }
        ssize_t got = read(fd, head, sizeof head - 1);
        close(fd);
        if (got < 2) {
            errno = ENOEXEC;
            return -1;
        }
        head[got] = '\0';
        if (head[0] == '#' && head[1] == '!') {
            char* nl = strchr(head, '\n');
            if (nl) *nl = '\0';
            char* s = head + 2;
            while (*s == ' ' || *s == '\t') s++;
            char* interp = s;
            while (*s && *s != ' ' && *s != '\t') s++;
            char* arg = 0;
            if (*s) {
                *s++ = '\0';
                while (*s == ' ' || *s == '\t') s++;
                if (*s) arg = s;
            }
            /* script path (container view) becomes an argument */
            if (n_extra + 2 >= 8) {
                errno = ENOEXEC;
                return -1;
            }
            /* shift: interp [arg] script-path ...previous extras */
            char* script = strdup(target);
            char* interp_copy = strdup(interp);
            char* arg_copy = arg ? strdup(arg) : 0;
            int shift = arg_copy ? 2 : 1;
            for (int i = n_extra - 1; i >= 0; i--) extra[i + shift] = extra[i];
            if (arg_copy) extra[0] = arg_copy, extra[1] = script;
            else extra[0] = script;
            n_extra += shift;
            strncpy(target, interp_copy, sizeof target - 1);
            free(interp_copy);
            continue;
        }
        break;
    }

    char interp[PM_PATH_MAX];
    int is_dyn = 0;
    if (read_interp(host, interp, sizeof interp, &is_dyn) != 0) {
        errno = ENOEXEC;
        return -1;
    }

    char** env = fix_child_env(envp);
    if (!env) {
        errno = ENOMEM;
        return -1;
    }

    int argc = env_count((char* const*)argv);
    /* room for loader, --argv0, value, target, extras */
    char** nargv = calloc((size_t)argc + n_extra + 8, sizeof(char*));
    if (!nargv) {
        errno = ENOMEM;
        return -1;
    }

    if (interp[0] == '\0') {
        if (!is_dyn) {
            fprintf(stderr,
                    "udocker: cannot run statically linked '%s' in a loader-based "
                    "mode; use the tracing modes (P1/P2) instead\n",
                    path);
            free(nargv);
            errno = ENOEXEC;
            return -1;
        }
        /* loader-style executable (e.g. ld.so itself): run directly */
        int m = 0;
        nargv[m++] = argv && argv[0] ? argv[0] : (char*)host;
        for (int i = 0; i < n_extra; i++) nargv[m++] = extra[i];
        for (int i = 1; i < argc; i++) nargv[m++] = argv[i];
        nargv[m] = 0;
        return real_execve(host, nargv, env);
    }

    /* already container-prefixed (patched binary): exec directly */
    if (strncmp(interp, g_map.rootfs, g_map.rootfs_len) == 0) {
        int m = 0;
        nargv[m++] = argv && argv[0] ? argv[0] : (char*)host;
        for (int i = 0; i < n_extra; i++) nargv[m++] = extra[i];
        for (int i = 1; i < argc; i++) nargv[m++] = argv[i];
        nargv[m] = 0;
        return real_execve(host, nargv, env);
    }

    /* on-demand patching: after it, the binary carries its own loader */
    if (g_patch) {
        run_patch_command(host);
        char interp2[PM_PATH_MAX];
        int dyn2 = 0;
        if (read_interp(host, interp2, sizeof interp2, &dyn2) == 0 &&
            strncmp(interp2, g_map.rootfs, g_map.rootfs_len) == 0) {
            int m = 0;
            nargv[m++] = argv && argv[0] ? argv[0] : (char*)host;
            for (int i = 0; i < n_extra; i++) nargv[m++] = extra[i];
            for (int i = 1; i < argc; i++) nargv[m++] = argv[i];
            nargv[m] = 0;
            return real_execve(host, nargv, env);
        }
    }

    /* explicit loader invocation */
    static char loader[PM_PATH_MAX];
    if (g_ldso) {
        strncpy(loader, g_ldso, sizeof loader - 1);
    } else {
        int rc = tr(interp, 1, loader);
        if (rc == 1) strncpy(loader, interp, sizeof loader - 1);
        if (rc < 0) {
            free(nargv);
            errno = ENOENT;
            return -1;
        }
    }

    int m = 0;
    nargv[m++] = loader;
    if (g_argv0_ok && argv && argv[0]) {
        nargv[m++] = "--argv0";
        nargv[m++] = n_extra ? (char*)target : argv[0];
    }
    nargv[m++] = (char*)host;
    for (int i = 0; i < n_extra; i++) nargv[m++] = extra[i];
    for (int i = 1; i < argc; i++) nargv[m++] = argv[i];
    nargv[m] = 0;
    return real_execve(loader, nargv, env);
}

int execv(const char* path, char* const argv[]) { return execve(path, argv, environ); }

int execvpe(const char* file, char* const argv[], char* const envp[]) {
    if (!active() || strchr(file, '/')) return execve(file, argv, envp);
    const char* pathv = raw_getenv("PATH");
    if (!pathv) pathv = "/usr/local/bin:/usr/bin:/bin";
    char candidate[PM_PATH_MAX], host[PM_PATH_MAX];
    const char* p = pathv;
    while (*p) {
        const char* colon = strchr(p, ':');
        size_t len = colon ? (size_t)(colon - p) : strlen(p);
        if (len && len + strlen(file) + 2 < sizeof candidate) {
            memcpy(candidate, p, len);
            candidate[len] = '/';
            strcpy(candidate + len + 1, file);
            if (tr(candidate, 1, host) == 0 &&
                syscall(SYS_faccessat, AT_FDCWD, host, X_OK) == 0)
                return execve(candidate, argv, envp);
        }
        if (!colon) break;
        p = colon + 1;
    }
    errno = ENOENT;
    return -1;
}

int execvp(const char* file, char* const argv[]) { return execvpe(file, argv, environ); }

int execl(const char* path, const char* arg, ...) {
    va_list ap;
    va_start(ap, arg);
    char* argv[256];
    int n = 0;
    argv[n++] = (char*)arg;
    while (n < 255 && (argv[n] = va_arg(ap, char*)) != 0) n++;
    argv[255] = 0;
    va_end(ap);
    return execve(path, argv, environ);
}

int execlp(const char* file, const char* arg, ...) {
    va_list ap;
    va_start(ap, arg);
    char* argv[256];
    int n = 0;
    argv[n++] = (char*)arg;
    while (n < 255 && (argv[n] = va_arg(ap, char*)) != 0) n++;
    argv[255] = 0;
    va_end(ap);
    return execvp(file, argv);
}

int execle(const char* path, const char* arg, ...) {
    va_list ap;
    va_start(ap, arg);
    char* argv[256];
    int n = 0;
    argv[n++] = (char*)arg;
    while (n < 255 && (argv[n] = va_arg(ap, char*)) != 0) n++;
    char* const* envp = va_arg(ap, char* const*);
    argv[255] = 0;
    va_end(ap);
    return execve(path, argv, envp);
}

void* dlopen(const char* file, int mode) {
    REAL(dlopen);
    if (!active() || !file || !strchr(file, '/')) return real_dlopen(file, mode);
    char host[PM_PATH_MAX];
    int rc = tr(file, 1, host);
    return real_dlopen(rc == 0 ? host : file, mode);
}

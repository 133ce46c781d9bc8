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

#include "udocker/layer_assembler.hpp"
#include "udocker/errors.hpp"
#include "udocker/log.hpp"
#include "udocker/pathmap.h"
#include "udocker/tar.hpp"
#include "udocker/util.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <sys/time.h>
#include <unistd.h>

#include <algorithm>
#include <cstring>
#include <functional>
#include <map>
#include <optional>
#include <set>

namespace udocker::layers {

namespace {

constexpr const char* kWhiteoutPrefix = ".wh.";
constexpr const char* kOpaqueMarker = ".wh..wh..opq";

struct EntryName {
    std::string rel;       // cleaned, relative, no trailing slash
    std::string dir;       // parent ("" for top level)
    std::string base;
};

// Strips leading "/" and "./"; rejects ".." traversal and empty names.
std::optional<EntryName> clean_name(const std::string& raw, int max_depth) {
    std::string s = raw;
    while (!s.empty() && (s[0] == '/' || (s.size() >= 2 && s[0] == '.' && s[1] == '/')))
        s.erase(0, s[0] == '/' ? 1 : 2);
    while (!s.empty() && s.back() == '/') s.pop_back();
    if (s.empty() || s == ".") return std::nullopt;

    EntryName e;
    int depth = 0;
    for (const auto& comp : split(s, '/')) {
        if (comp.empty() || comp == ".") continue;
        if (comp == "..") throw format_error("tar entry escapes destination: " + raw);
        if (++depth > max_depth)
            throw format_error("tar entry exceeds depth limit: " + raw);
        if (!e.rel.empty()) e.rel += '/';
        e.rel += comp;
    }
    if (e.rel.empty()) return std::nullopt;
    size_t slash = e.rel.rfind('/');
    e.dir = slash == std::string::npos ? "" : e.rel.substr(0, slash);
    e.base = slash == std::string::npos ? e.rel : e.rel.substr(slash + 1);
    return e;
}

// Symlink-aware join of a container-relative path onto the extraction
// root; shares resolution semantics with the execution engines.
fs::path safe_join(const pm_map& map, const std::string& rel, bool follow_last) {
    char host[PM_PATH_MAX];
    int rc = pm_translate(&map, "/", ("/" + rel).c_str(), follow_last ? 1 : 0, host, nullptr);
    if (rc != 0)
        throw format_error("cannot resolve tar path '" + rel + "': " + std::strerror(-rc));
    return fs::path(host);
}

void remove_existing(const fs::path& p) {
    std::error_code ec;
    auto st = fs::symlink_status(p, ec);
    if (ec || st.type() == fs::file_type::not_found) return;
    if (fs::is_directory(st))
        fs::remove_all(p, ec);
    else
        fs::remove(p, ec);
    if (ec) throw io_error("cannot replace " + p.string() + ": " + ec.message());
}

void set_file_times(const fs::path& p, int64_t mtime, bool is_symlink) {
    timespec times[2];
    times[0].tv_sec = mtime; times[0].tv_nsec = 0;
    times[1].tv_sec = mtime; times[1].tv_nsec = 0;
    ::utimensat(AT_FDCWD, p.c_str(), times, is_symlink ? AT_SYMLINK_NOFOLLOW : 0);
}

struct LayerContext {
    const fs::path& dest;
    const ExtractionPolicy& policy;
    pm_map map;
    std::vector<std::pair<fs::path, int64_t>> dir_times;
};

void apply_whiteouts(LayerContext& ctx, const fs::path& layer_tar) {
    tar::Reader rd(tar::open_archive(layer_tar));
    while (auto e = rd.next()) {
        auto name = clean_name(e->name, ctx.policy.max_path_depth);
        if (!name) continue;
        if (name->base == kOpaqueMarker) {
            fs::path dir = safe_join(ctx.map, name->dir, true);
            std::error_code ec;
            if (fs::is_directory(dir, ec))
                for (const auto& child : fs::directory_iterator(dir, ec))
                    fs::remove_all(child.path(), ec);
        } else if (starts_with(name->base, kWhiteoutPrefix)) {
            std::string hidden = name->base.substr(std::strlen(kWhiteoutPrefix));
            std::string rel = name->dir.empty() ? hidden : name->dir + "/" + hidden;
            fs::path victim = safe_join(ctx.map, rel, false);
            std::error_code ec;
            fs::remove_all(victim, ec);
        }
    }
}

void extract_entries(LayerContext& ctx, const fs::path& layer_tar, const std::string& label) {
    tar::Reader rd(tar::open_archive(layer_tar));
    while (auto e = rd.next()) {
        std::optional<EntryName> name;
        try {
            name = clean_name(e->name, ctx.policy.max_path_depth);
        } catch (const Error& err) {
            throw format_error(label + ": rejected entry '" + e->name + "': " + err.what());
        }
        if (!name) continue;
        if (starts_with(name->base, kWhiteoutPrefix)) continue;  // handled in pass 1

        uint32_t mode = e->mode & 07777u;
        if (ctx.policy.strip_setuid) mode &= ~(07000u);  // setuid/setgid/sticky off

        switch (e->type) {
            case tar::EntryType::Directory: {
                fs::path p = safe_join(ctx.map, name->rel, false);
                std::error_code ec;
                auto st = fs::symlink_status(p, ec);
                if (!ec && st.type() != fs::file_type::not_found && !fs::is_directory(st))
                    remove_existing(p);
                fs::create_directories(p, ec);
                if (ec) throw io_error(label + ": mkdir " + p.string() + ": " + ec.message());
                ::chmod(p.c_str(), mode | 0700);
                ctx.dir_times.emplace_back(p, e->mtime);
                break;
            }
            case tar::EntryType::Regular: {
                fs::path p = safe_join(ctx.map, name->rel, false);
                std::error_code ec;
                fs::create_directories(p.parent_path(), ec);
                remove_existing(p);
                int fd = ::open(p.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_NOFOLLOW, mode);
                if (fd < 0)
                    throw io_error(label + ": cannot create " + p.string() + ": " +
                                   std::strerror(errno));
                char buf[65536];
                size_t n;
                while ((n = rd.read_data(buf, sizeof buf)) > 0) {
                    ssize_t w = ::write(fd, buf, n);
                    if (w < 0 || static_cast<size_t>(w) != n) {
                        ::close(fd);
                        throw io_error(label + ": short write to " + p.string());
                    }
                }
                ::fchmod(fd, mode);
                ::close(fd);
                set_file_times(p, e->mtime, false);
                break;
            }
            case tar::EntryType::Symlink: {
                fs::path p = safe_join(ctx.map, name->rel, false);
                std::error_code ec;
                fs::create_directories(p.parent_path(), ec);
                remove_existing(p);
                if (::symlink(e->link_target.c_str(), p.c_str()) != 0)
                    throw io_error(label + ": symlink " + p.string() + ": " +
                                   std::strerror(errno));
                set_file_times(p, e->mtime, true);
                break;
            }
            case tar::EntryType::Hardlink: {
                auto target = clean_name(e->link_target, ctx.policy.max_path_depth);
                if (!target)
                    throw format_error(label + ": hardlink with empty target: " + e->name);
                fs::path tp = safe_join(ctx.map, target->rel, false);
                std::error_code ec;
                if (!fs::exists(fs::symlink_status(tp, ec)))
                    throw format_error(label + ": hardlink target outside archive: " +
                                       e->link_target);
                fs::path p = safe_join(ctx.map, name->rel, false);
                fs::create_directories(p.parent_path(), ec);
                remove_existing(p);
                if (::link(tp.c_str(), p.c_str()) != 0)
                    throw io_error(label + ": link " + p.string() + ": " +
                                   std::strerror(errno));
                break;
            }
            case tar::EntryType::CharDevice:
            case tar::EntryType::BlockDevice:
                log::warn(label + ": skipping device node " + name->rel);
                break;
            case tar::EntryType::Fifo:
                log::warn(label + ": skipping fifo " + name->rel);
                break;
            case tar::EntryType::Unknown:
                log::warn(label + ": skipping entry of unknown type " + name->rel);
                break;
        }
    }
}

}  // namespace

void flatten(const std::vector<fs::path>& layer_tars, const fs::path& dest,
             const ExtractionPolicy& policy) {
    ensure_dir(dest);
    if (!fs::is_empty(dest)) throw io_error("flatten destination not empty: " + dest.string());

    LayerContext ctx{dest, policy, {}, {}};
    if (pm_map_init(&ctx.map, fs::absolute(dest).c_str()) != 0)
        throw io_error("bad destination path: " + dest.string());

    int idx = 0;
    for (const auto& layer : layer_tars) {
        std::string label = "layer " + std::to_string(idx++) + " (" +
                            layer.filename().string() + ")";
        apply_whiteouts(ctx, layer);
        extract_entries(ctx, layer, label);
    }
    // directory mtimes last so child extraction does not disturb them
    for (auto it = ctx.dir_times.rbegin(); it != ctx.dir_times.rend(); ++it)
        set_file_times(it->first, it->second, false);
}

void adjust_permissions(const fs::path& rootfs) {
    if (!fs::is_directory(rootfs)) throw not_found_error("no such rootfs: " + rootfs.string());

    // top-down so directories become traversable before they are listed
    std::vector<fs::path> stack{rootfs};
    while (!stack.empty()) {
        fs::path dir = stack.back();
        stack.pop_back();
        struct stat st{};
        if (::lstat(dir.c_str(), &st) != 0)
            throw io_error("lstat " + dir.string() + ": " + std::strerror(errno));
        mode_t want = st.st_mode | S_IRUSR | S_IWUSR | S_IXUSR;
        if (want != st.st_mode && ::chmod(dir.c_str(), want & 07777) != 0)
            throw io_error("chmod " + dir.string() + ": " + std::strerror(errno));
        for (const auto& de : fs::directory_iterator(dir)) {
            struct stat cst{};
            if (::lstat(de.path().c_str(), &cst) != 0)
                throw io_error("lstat " + de.path().string() + ": " + std::strerror(errno));
            if (S_ISLNK(cst.st_mode)) continue;
            if (S_ISDIR(cst.st_mode)) {
                stack.push_back(de.path());
            } else {
                mode_t fwant = cst.st_mode | S_IRUSR;
                if (fwant != cst.st_mode && ::chmod(de.path().c_str(), fwant & 07777) != 0)
                    throw io_error("chmod " + de.path().string() + ": " +
                                   std::strerror(errno));
            }
        }
    }
}

void export_tree(const fs::path& rootfs, const fs::path& out_tar) {
    if (!fs::is_directory(rootfs)) throw not_found_error("no such rootfs: " + rootfs.string());
    tar::Writer w(out_tar);

    std::map<std::pair<dev_t, ino_t>, std::string> seen_inodes;

    // deterministic order: lexicographic walk
    std::function<void(const std::string&, const fs::path&)> walk =
        [&](const std::string& rel, const fs::path& abs) {
            std::vector<fs::directory_entry> children;
            for (const auto& de : fs::directory_iterator(abs)) children.push_back(de);
            std::sort(children.begin(), children.end(),
                      [](auto& a, auto& b) { return a.path().filename() < b.path().filename(); });
            for (const auto& de : children) {
                std::string crel = rel.empty() ? de.path().filename().string()
                                               : rel + "/" + de.path().filename().string();
                struct stat st{};
                if (::lstat(de.path().c_str(), &st) != 0)
                    throw io_error("lstat " + de.path().string());
                if (S_ISDIR(st.st_mode)) {
                    w.add_directory(crel, st.st_mode & 07777, st.st_mtime);
                    walk(crel, de.path());
                } else if (S_ISLNK(st.st_mode)) {
                    w.add_symlink(crel, fs::read_symlink(de.path()).string(), st.st_mtime);
                } else if (S_ISREG(st.st_mode)) {
                    auto key = std::make_pair(st.st_dev, st.st_ino);
                    if (st.st_nlink > 1 && seen_inodes.count(key)) {
                        w.add_hardlink(crel, seen_inodes[key], st.st_mtime);
                    } else {
                        if (st.st_nlink > 1) seen_inodes[key] = crel;
                        w.add_file(crel, st.st_mode & 07777, read_file(de.path()), st.st_mtime);
                    }
                } else if (S_ISFIFO(st.st_mode)) {
                    log::warn("export: skipping fifo " + crel);
                } else {
                    log::warn("export: skipping special file " + crel);
                }
            }
        };
    walk("", rootfs);
    w.finish();
}

void import_tree(const fs::path& in_tar, const fs::path& dest, const ExtractionPolicy& policy) {
    flatten({in_tar}, dest, policy);
}

}  // namespace udocker::layers

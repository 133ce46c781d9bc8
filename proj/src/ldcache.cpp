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

#include "udocker/ldcache.hpp"

#include "udocker/errors.hpp"
#include "udocker/util.hpp"

#include <cstring>
#include <set>

namespace udocker::ldcache {

namespace {

constexpr char kMagicClassic[] = "ld.so-1.7.0";        // 11 significant bytes
constexpr char kMagicNew[] = "glibc-ld.so.cache";      // 17 bytes
constexpr char kVersionNew[] = "1.1";                  // 3 bytes

// classic layout
struct ClassicHeader {
    char magic[12];  // "ld.so-1.7.0" + implicit padding to 4-byte alignment
    uint32_t nlibs;
};
struct ClassicEntry {
    int32_t flags;
    uint32_t key;    // offsets relative to the string area (after entries)
    uint32_t value;
};
static_assert(sizeof(ClassicHeader) == 16);
static_assert(sizeof(ClassicEntry) == 12);

// current layout; offsets relative to the header start
struct NewHeader {
    char magic[17];
    char version[3];
    uint32_t nlibs;
    uint32_t len_strings;
    uint8_t flags;
    uint8_t padding[3];
    uint32_t extension_offset;
    uint32_t unused[3];
};
struct NewEntry {
    int32_t flags;
    uint32_t key;
    uint32_t value;
    uint32_t osversion_unused;
    uint64_t hwcap;
};
static_assert(sizeof(NewHeader) == 48);
static_assert(sizeof(NewEntry) == 24);

std::string string_at(const std::string& data, size_t base, uint32_t off) {
    size_t pos = base + off;
    if (pos >= data.size()) return {};
    return std::string(data.c_str() + pos);
}

CacheView parse_new(const std::string& data, size_t base) {
    if (base + sizeof(NewHeader) > data.size())
        throw format_error("loader cache truncated");
    NewHeader hdr;
    std::memcpy(&hdr, data.data() + base, sizeof hdr);
    size_t entries_off = base + sizeof(NewHeader);
    if (entries_off + uint64_t(hdr.nlibs) * sizeof(NewEntry) > data.size())
        throw format_error("loader cache entry table truncated");

    CacheView view;
    for (uint32_t i = 0; i < hdr.nlibs; i++) {
        NewEntry e;
        std::memcpy(&e, data.data() + entries_off + i * sizeof(NewEntry), sizeof e);
        Entry out;
        out.flags = e.flags;
        out.name = string_at(data, base, e.key);
        out.path = string_at(data, base, e.value);
        if (!out.name.empty() && !out.path.empty()) view.entries.push_back(std::move(out));
    }
    return view;
}

}  // namespace

CacheView parse_ld_so_cache(const fs::path& file) {
    std::string data = read_file(file);
    if (data.size() >= 17 && std::memcmp(data.data(), kMagicNew, 17) == 0)
        return parse_new(data, 0);

    if (data.size() >= sizeof(ClassicHeader) &&
        std::memcmp(data.data(), kMagicClassic, 11) == 0) {
        ClassicHeader hdr;
        std::memcpy(&hdr, data.data(), sizeof hdr);
        size_t entries_off = sizeof(ClassicHeader);
        size_t strings_off = entries_off + size_t(hdr.nlibs) * sizeof(ClassicEntry);
        if (strings_off > data.size())
            throw format_error("loader cache entry table truncated");

        // a combined file embeds the new table right after the classic
        // one (aligned); prefer it when present
        size_t probe = (strings_off + 7) & ~size_t(7);
        if (probe + 17 <= data.size() &&
            std::memcmp(data.data() + probe, kMagicNew, 17) == 0)
            return parse_new(data, probe);

        CacheView view;
        for (uint32_t i = 0; i < hdr.nlibs; i++) {
            ClassicEntry e;
            std::memcpy(&e, data.data() + entries_off + i * sizeof(ClassicEntry), sizeof e);
            Entry out;
            out.flags = e.flags;
            out.name = string_at(data, strings_off, e.key);
            out.path = string_at(data, strings_off, e.value);
            if (!out.name.empty() && !out.path.empty())
                view.entries.push_back(std::move(out));
        }
        return view;
    }
    throw format_error("unrecognized loader cache format: " + file.string());
}

void write_cache_new_format(const fs::path& file, const std::vector<Entry>& entries) {
    std::string strings;
    std::vector<NewEntry> table;
    // offsets are relative to the header start; the string block sits
    // right after the entry table
    size_t strings_base = sizeof(NewHeader) + entries.size() * sizeof(NewEntry);
    for (const auto& e : entries) {
        NewEntry ne{};
        ne.flags = e.flags ? e.flags : 0x0303;  // ELF, x86-64, libc6
        ne.key = static_cast<uint32_t>(strings_base + strings.size());
        strings += e.name;
        strings += '\0';
        ne.value = static_cast<uint32_t>(strings_base + strings.size());
        strings += e.path;
        strings += '\0';
        ne.hwcap = 0;
        table.push_back(ne);
    }
    NewHeader hdr{};
    std::memcpy(hdr.magic, kMagicNew, 17);
    std::memcpy(hdr.version, kVersionNew, 3);
    hdr.nlibs = static_cast<uint32_t>(entries.size());
    hdr.len_strings = static_cast<uint32_t>(strings.size());

    std::string out;
    out.append(reinterpret_cast<const char*>(&hdr), sizeof hdr);
    out.append(reinterpret_cast<const char*>(table.data()),
               table.size() * sizeof(NewEntry));
    out += strings;
    write_file(file, out);
}

void write_cache_classic_format(const fs::path& file, const std::vector<Entry>& entries) {
    std::string strings;
    std::vector<ClassicEntry> table;
    for (const auto& e : entries) {
        ClassicEntry ce{};
        ce.flags = e.flags ? e.flags : 3;  // libc6
        ce.key = static_cast<uint32_t>(strings.size());
        strings += e.name;
        strings += '\0';
        ce.value = static_cast<uint32_t>(strings.size());
        strings += e.path;
        strings += '\0';
        table.push_back(ce);
    }
    ClassicHeader hdr{};
    std::memcpy(hdr.magic, kMagicClassic, 11);
    hdr.nlibs = static_cast<uint32_t>(entries.size());

    std::string out;
    out.append(reinterpret_cast<const char*>(&hdr), sizeof hdr);
    out.append(reinterpret_cast<const char*>(table.data()),
               table.size() * sizeof(ClassicEntry));
    out += strings;
    write_file(file, out);
}

std::vector<std::string> library_directories(const CacheView& view) {
    std::vector<std::string> dirs;
    std::set<std::string> seen;
    for (const auto& e : view.entries) {
        auto slash = e.path.rfind('/');
        if (slash == std::string::npos || slash == 0) continue;
        std::string dir = e.path.substr(0, slash);
        if (seen.insert(dir).second) dirs.push_back(dir);
    }
    return dirs;
}

}  // namespace udocker::ldcache

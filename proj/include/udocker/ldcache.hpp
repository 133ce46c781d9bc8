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

#ifndef UDOCKER_LDCACHE_HPP
#define UDOCKER_LDCACHE_HPP

#include <filesystem>
#include <string>
#include <vector>

namespace udocker::ldcache {

namespace fs = std::filesystem;

struct Entry {
    std::string name;  // soname key
    std::string path;  // absolute path, as stored in the cache
    int flags = 0;
};

struct CacheView {
    std::vector<Entry> entries;
};

/// Parses a loader cache file in either the classic ("ld.so-1.7.0") or
/// the current ("glibc-ld.so.cache1.1") layout, including the combined
/// form where the new table is embedded after the classic one. Unknown
/// magic raises a format error.
CacheView parse_ld_so_cache(const fs::path& file);

/// Test and fixture support: writers for both layouts.
void write_cache_new_format(const fs::path& file, const std::vector<Entry>& entries);
void write_cache_classic_format(const fs::path& file, const std::vector<Entry>& entries);

/// Unique parent directories of the entries, first-seen order.
std::vector<std::string> library_directories(const CacheView& view);

}  // namespace udocker::ldcache

#endif

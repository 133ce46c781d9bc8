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

#ifndef UDOCKER_TESTS_TEST_UTIL_HPP
#define UDOCKER_TESTS_TEST_UTIL_HPP

#include "udocker/util.hpp"

#include <filesystem>
#include <map>
#include <string>

#include <unistd.h>

namespace udocker::test {

namespace fs = std::filesystem;

class TempDir {
public:
    explicit TempDir(const std::string& prefix = "udocker-test") {
        std::string tmpl = (fs::temp_directory_path() / (prefix + ".XXXXXX")).string();
        char* p = ::mkdtemp(tmpl.data());
        if (!p) throw std::runtime_error("mkdtemp failed");
        path_ = p;
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const fs::path& path() const { return path_; }
    fs::path operator/(const std::string& sub) const { return path_ / sub; }

private:
    fs::path path_;
};

/// Structural snapshot of a tree: type + content + symlink target per
/// relative path. Modes and times are deliberately not part of it.
struct TreeNode {
    char type = '?';  // 'f', 'd', 'l'
    std::string content;
    std::string target;
    bool operator==(const TreeNode&) const = default;
};

using TreeSnapshot = std::map<std::string, TreeNode>;

TreeSnapshot snapshot_tree(const fs::path& root);

/// Multiset of (path, sha256-of-content/type) pairs for exact content
/// equality checks; includes modes for regular files.
std::string tree_digest(const fs::path& root);

std::string gzip_compress(const std::string& data);

}  // namespace udocker::test

#endif

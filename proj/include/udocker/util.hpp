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

#ifndef UDOCKER_UTIL_HPP
#define UDOCKER_UTIL_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace udocker {

namespace fs = std::filesystem;

std::string read_file(const fs::path& p);
void write_file(const fs::path& p, std::string_view data);
void ensure_dir(const fs::path& p);

std::string hex_encode(const unsigned char* data, size_t n);

/// Random version-4 UUID, lower-case hyphenated.
std::string uuid4();

std::vector<std::string> split(const std::string& s, char sep);
std::string join(const std::vector<std::string>& parts, const std::string& sep);
bool starts_with(std::string_view s, std::string_view prefix);

std::optional<std::string> env_var(const char* name);

/// Lexical normalization of an absolute path: collapses ".", ".."
/// and duplicate slashes without touching the filesystem. ".." never
/// ascends above "/".
std::string normalize_abs_path(std::string_view path);

/// flock()-based advisory lock over a dedicated lock file.
class FileLock {
public:
    explicit FileLock(const fs::path& lock_file);
    ~FileLock();
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

struct ProcessResult {
    int exit_code = -1;    // -1 when killed by signal
    int term_signal = 0;
    std::string out;
    std::string err;
};

struct ProcessOptions {
    std::optional<fs::path> cwd;
    std::vector<std::string> env;   // full environment when non-empty
    bool inherit_env = true;
    std::optional<std::string> stdin_data;
};

/// fork/exec with stdout/stderr capture. argv[0] is the program path
/// (searched in PATH when relative).
ProcessResult run_process(const std::vector<std::string>& argv,
                          const ProcessOptions& opts = {});

}  // namespace udocker

#endif

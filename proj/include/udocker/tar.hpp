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

#ifndef UDOCKER_TAR_HPP
#define UDOCKER_TAR_HPP

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>

namespace udocker::tar {

enum class EntryType {
    Regular,
    Hardlink,
    Symlink,
    CharDevice,
    BlockDevice,
    Directory,
    Fifo,
    Unknown,
};

struct Entry {
    std::string name;         // as stored, may contain leading "./"
    std::string link_target;  // hardlink/symlink target
    EntryType type = EntryType::Regular;
    uint64_t size = 0;
    uint32_t mode = 0;
    int64_t mtime = 0;
};

/// Minimal pull-based byte source so the same reader handles plain and
/// gzip-compressed archives.
class ByteSource {
public:
    virtual ~ByteSource() = default;
    /// Reads up to n bytes; returns 0 at end of stream.
    virtual size_t read(void* buf, size_t n) = 0;
};

std::unique_ptr<ByteSource> file_source(const std::filesystem::path& p);
std::unique_ptr<ByteSource> memory_source(std::string data);
/// Wraps a source in a zlib inflater (gzip framing).
std::unique_ptr<ByteSource> gzip_source(std::unique_ptr<ByteSource> inner);
/// Opens a tar file, transparently unwrapping gzip (detected by the
/// 1f 8b magic bytes).
std::unique_ptr<ByteSource> open_archive(const std::filesystem::path& p);

/// Streaming POSIX ustar / PAX reader. GNU long-name ('L'/'K') and PAX
/// ('x') extension records are folded into the entries they describe.
class Reader {
public:
    explicit Reader(std::unique_ptr<ByteSource> src);
    ~Reader();

    /// Advances to the next entry. Any unread data of the previous
    /// entry is skipped. nullopt at end of archive.
    std::optional<Entry> next();

    /// Reads up to n bytes of the current entry's data.
    size_t read_data(void* buf, size_t n);
    std::string read_all_data();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

/// ustar writer with PAX records for names/targets over 100 bytes.
class Writer {
public:
    explicit Writer(const std::filesystem::path& out);
    ~Writer();

    void add_directory(const std::string& name, uint32_t mode, int64_t mtime = 0);
    void add_file(const std::string& name, uint32_t mode, std::string_view data,
                  int64_t mtime = 0);
    void add_symlink(const std::string& name, const std::string& target, int64_t mtime = 0);
    void add_hardlink(const std::string& name, const std::string& target, int64_t mtime = 0);
    void add_fifo(const std::string& name, uint32_t mode, int64_t mtime = 0);
    /// Two terminating zero blocks; implicit in the destructor.
    void finish();

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

}  // namespace udocker::tar

#endif

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

#include "udocker/tar.hpp"
#include "udocker/errors.hpp"

#include <zlib.h>

#include <array>
#include <cstring>
#include <fstream>

namespace udocker::tar {

namespace {

constexpr size_t kBlock = 512;

// POSIX ustar header block layout.
struct RawHeader {
    char name[100];
    char mode[8];
    char uid[8];
    char gid[8];
    char size[12];
    char mtime[12];
    char chksum[8];
    char typeflag;
    char linkname[100];
    char magic[6];
    char version[2];
    char uname[32];
    char gname[32];
    char devmajor[8];
    char devminor[8];
    char prefix[155];
    char pad[12];
};
static_assert(sizeof(RawHeader) == kBlock);

bool block_is_zero(const unsigned char* b) {
    for (size_t i = 0; i < kBlock; i++)
        if (b[i]) return false;
    return true;
}

// Octal with GNU base-256 fallback for large values.
uint64_t parse_numeric(const char* field, size_t len) {
    const auto* u = reinterpret_cast<const unsigned char*>(field);
    if (u[0] & 0x80) {
        uint64_t v = u[0] & 0x7f;
        for (size_t i = 1; i < len; i++) v = (v << 8) | u[i];
        return v;
    }
    uint64_t v = 0;
    for (size_t i = 0; i < len; i++) {
        char c = field[i];
        if (c == ' ' || c == '\0') {
            if (v) break;
            continue;
        }
        if (c < '0' || c > '7') break;
        v = (v << 3) | static_cast<uint64_t>(c - '0');
    }
    return v;
}

unsigned header_checksum(const unsigned char* b) {
    unsigned sum = 0;
    for (size_t i = 0; i < kBlock; i++)
        sum += (i >= 148 && i < 156) ? ' ' : b[i];
    return sum;
}

EntryType type_from_flag(char flag) {
    switch (flag) {
        case '0': case '\0': case '7': return EntryType::Regular;
        case '1': return EntryType::Hardlink;
        case '2': return EntryType::Symlink;
        case '3': return EntryType::CharDevice;
        case '4': return EntryType::BlockDevice;
        case '5': return EntryType::Directory;
        case '6': return EntryType::Fifo;
        default: return EntryType::Unknown;
    }
}

std::string field_string(const char* f, size_t len) {
    size_t n = 0;
    while (n < len && f[n]) n++;
    return std::string(f, n);
}

class FileSource final : public ByteSource {
public:
    explicit FileSource(const std::filesystem::path& p) : in_(p, std::ios::binary) {
        if (!in_) throw io_error("cannot open " + p.string());
    }
    size_t read(void* buf, size_t n) override {
        in_.read(static_cast<char*>(buf), static_cast<std::streamsize>(n));
        return static_cast<size_t>(in_.gcount());
    }

private:
    std::ifstream in_;
};

class MemorySource final : public ByteSource {
public:
    explicit MemorySource(std::string d) : data_(std::move(d)) {}
    size_t read(void* buf, size_t n) override {
        size_t avail = data_.size() - off_;
        size_t take = std::min(n, avail);
        std::memcpy(buf, data_.data() + off_, take);
        off_ += take;
        return take;
    }

private:
    std::string data_;
    size_t off_ = 0;
};

class GzipSource final : public ByteSource {
public:
    explicit GzipSource(std::unique_ptr<ByteSource> inner) : inner_(std::move(inner)) {
        std::memset(&strm_, 0, sizeof strm_);
        if (inflateInit2(&strm_, 15 + 16) != Z_OK)  // +16: gzip framing
            throw format_error("zlib init failed");
    }
    ~GzipSource() override { inflateEnd(&strm_); }

    size_t read(void* buf, size_t n) override {
        strm_.next_out = static_cast<Bytef*>(buf);
        strm_.avail_out = static_cast<uInt>(n);
        while (strm_.avail_out > 0) {
            if (strm_.avail_in == 0 && !eof_) {
                size_t got = inner_->read(inbuf_.data(), inbuf_.size());
                if (got == 0) eof_ = true;
                strm_.next_in = reinterpret_cast<Bytef*>(inbuf_.data());
                strm_.avail_in = static_cast<uInt>(got);
            }
            int rc = inflate(&strm_, Z_NO_FLUSH);
            if (rc == Z_STREAM_END) break;
            if (rc != Z_OK && rc != Z_BUF_ERROR)
                throw format_error("gzip stream corrupt (zlib rc " + std::to_string(rc) + ")");
            if (rc == Z_BUF_ERROR && eof_ && strm_.avail_in == 0) break;
        }
        return n - strm_.avail_out;
    }

private:
    std::unique_ptr<ByteSource> inner_;
    z_stream strm_;
    std::array<char, 65536> inbuf_;
    bool eof_ = false;
};

// Peeks the first two bytes to detect gzip framing.
class PeekSource final : public ByteSource {
public:
    PeekSource(std::unique_ptr<ByteSource> inner, std::string head)
        : inner_(std::move(inner)), head_(std::move(head)) {}
    size_t read(void* buf, size_t n) override {
        size_t total = 0;
        if (off_ < head_.size()) {
            size_t take = std::min(n, head_.size() - off_);
            std::memcpy(buf, head_.data() + off_, take);
            off_ += take;
            total += take;
        }
        if (total < n)
            total += inner_->read(static_cast<char*>(buf) + total, n - total);
        return total;
    }

private:
    std::unique_ptr<ByteSource> inner_;
    std::string head_;
    size_t off_ = 0;
};

}  // namespace

std::unique_ptr<ByteSource> file_source(const std::filesystem::path& p) {
    return std::make_unique<FileSource>(p);
}

std::unique_ptr<ByteSource> memory_source(std::string data) {
    return std::make_unique<MemorySource>(std::move(data));
}

std::unique_ptr<ByteSource> gzip_source(std::unique_ptr<ByteSource> inner) {
    return std::make_unique<GzipSource>(std::move(inner));
}

std::unique_ptr<ByteSource> open_archive(const std::filesystem::path& p) {
    auto src = file_source(p);
    char head[2];
    size_t got = src->read(head, 2);
    auto peeked = std::make_unique<PeekSource>(std::move(src), std::string(head, got));
    if (got == 2 && static_cast<unsigned char>(head[0]) == 0x1f &&
        static_cast<unsigned char>(head[1]) == 0x8b)
        return gzip_source(std::move(peeked));
    return peeked;
}

struct Reader::Impl {
    std::unique_ptr<ByteSource> src;
    uint64_t data_left = 0;
    uint64_t pad_left = 0;

    bool read_exact(void* buf, size_t n) {
        size_t off = 0;
        while (off < n) {
            size_t got = src->read(static_cast<char*>(buf) + off, n - off);
            if (got == 0) return false;
            off += got;
        }
        return true;
    }

    void skip(uint64_t n) {
        char buf[4096];
        while (n > 0) {
            size_t take = static_cast<size_t>(std::min<uint64_t>(n, sizeof buf));
            if (!read_exact(buf, take)) throw format_error("tar truncated while skipping");
            n -= take;
        }
    }
};

Reader::Reader(std::unique_ptr<ByteSource> src) : impl_(std::make_unique<Impl>()) {
    impl_->src = std::move(src);
}

Reader::~Reader() = default;

size_t Reader::read_data(void* buf, size_t n) {
    size_t take = static_cast<size_t>(std::min<uint64_t>(n, impl_->data_left));
    if (take == 0) return 0;
    if (!impl_->read_exact(buf, take)) throw format_error("tar truncated in file data");
    impl_->data_left -= take;
    return take;
}

std::string Reader::read_all_data() {
    std::string out;
    out.reserve(static_cast<size_t>(impl_->data_left));
    char buf[65536];
    size_t n;
    while ((n = read_data(buf, sizeof buf)) > 0) out.append(buf, n);
    return out;
}

std::optional<Entry> Reader::next() {
    // drain unread payload of the previous entry
    impl_->skip(impl_->data_left + impl_->pad_left);
    impl_->data_left = impl_->pad_left = 0;

    std::string pax_path, pax_link, gnu_longname, gnu_longlink;
    std::optional<uint64_t> pax_size;

    while (true) {
        unsigned char block[kBlock];
        if (!impl_->read_exact(block, kBlock)) return std::nullopt;  // clean EOF
        if (block_is_zero(block)) {
            // end marker: a second zero block (or EOF) terminates
            if (impl_->read_exact(block, kBlock) && !block_is_zero(block))
                throw format_error("tar: lone zero block inside archive");
            return std::nullopt;
        }
        const auto* h = reinterpret_cast<const RawHeader*>(block);
        unsigned stored = static_cast<unsigned>(parse_numeric(h->chksum, sizeof h->chksum));
        if (stored != header_checksum(block))
            throw format_error("tar header checksum mismatch");

        uint64_t size = parse_numeric(h->size, sizeof h->size);
        uint64_t padded = (size + kBlock - 1) / kBlock * kBlock;

        if (h->typeflag == 'x' || h->typeflag == 'g') {
            // PAX extended header; 'g' (global) records are parsed and
            // applied to the next entry only, which covers the layers
            // seen in practice.
            std::string rec(size, '\0');
            if (!impl_->read_exact(rec.data(), size)) throw format_error("tar truncated (pax)");
            impl_->skip(padded - size);
            size_t pos = 0;
            while (pos < rec.size()) {
                size_t sp = rec.find(' ', pos);
                if (sp == std::string::npos) break;
                unsigned long len = std::strtoul(rec.c_str() + pos, nullptr, 10);
                if (len == 0 || pos + len > rec.size() + 1) break;
                std::string kv = rec.substr(sp + 1, pos + len - sp - 2);  // strip trailing \n
                size_t eq = kv.find('=');
                if (eq != std::string::npos) {
                    std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
                    if (key == "path") pax_path = val;
                    else if (key == "linkpath") pax_link = val;
                    else if (key == "size") pax_size = std::strtoull(val.c_str(), nullptr, 10);
                }
                pos += len;
            }
            continue;
        }
        if (h->typeflag == 'L' || h->typeflag == 'K') {  // GNU long name / long link
            std::string val(size, '\0');
            if (!impl_->read_exact(val.data(), size)) throw format_error("tar truncated (gnu)");
            impl_->skip(padded - size);
            while (!val.empty() && val.back() == '\0') val.pop_back();
            (h->typeflag == 'L' ? gnu_longname : gnu_longlink) = val;
            continue;
        }

        Entry e;
        e.type = type_from_flag(h->typeflag);
        e.mode = static_cast<uint32_t>(parse_numeric(h->mode, sizeof h->mode));
        e.mtime = static_cast<int64_t>(parse_numeric(h->mtime, sizeof h->mtime));
        e.size = pax_size.value_or(size);

        std::string name = field_string(h->name, sizeof h->name);
        std::string prefix = field_string(h->prefix, sizeof h->prefix);
        if (!prefix.empty() && !std::strncmp(h->magic, "ustar", 5))
            name = prefix + "/" + name;
        if (!gnu_longname.empty()) name = gnu_longname;
        if (!pax_path.empty()) name = pax_path;
        e.name = name;

        e.link_target = field_string(h->linkname, sizeof h->linkname);
        if (!gnu_longlink.empty()) e.link_target = gnu_longlink;
        if (!pax_link.empty()) e.link_target = pax_link;

        uint64_t payload = pax_size.value_or(size);
        if (e.type != EntryType::Regular && e.type != EntryType::Unknown)
            payload = 0;  // links, dirs, devices and fifos carry no data
        e.size = payload;
        impl_->data_left = payload;
        impl_->pad_left = (payload + kBlock - 1) / kBlock * kBlock - payload;
        return e;
    }
}

// ---------------------------------------------------------------------------

struct Writer::Impl {
    std::ofstream out;
    bool finished = false;

    void put_octal(char* field, size_t len, uint64_t v) {
        if (v >= (1ULL << (3 * (len - 1)))) {
            // GNU base-256 for values that do not fit the octal field
            field[0] = static_cast<char>(0x80);
            for (size_t i = len - 1; i >= 1; i--) {
                field[i] = static_cast<char>(v & 0xff);
                v >>= 8;
            }
            return;
        }
        char tmp[24];
        std::snprintf(tmp, sizeof tmp, "%0*llo", static_cast<int>(len - 1),
                      static_cast<unsigned long long>(v));
        std::memcpy(field, tmp, len - 1);
        field[len - 1] = '\0';
    }

    void write_block(const RawHeader& h) {
        out.write(reinterpret_cast<const char*>(&h), kBlock);
    }

    void write_pax(const std::string& name, const std::string& linkpath) {
        std::string rec;
        auto add = [&rec](const std::string& k, const std::string& v) {
            // "%d %s=%s\n" where the length counts itself
            std::string body = " " + k + "=" + v + "\n";
            size_t len = body.size() + 1;
            while (std::to_string(len).size() + body.size() != len) len++;
            rec += std::to_string(len) + body;
        };
        if (name.size() > 100) add("path", name);
        if (linkpath.size() > 100) add("linkpath", linkpath);
        if (rec.empty()) return;

        RawHeader h{};
        std::snprintf(h.name, sizeof h.name, "./PaxHeaders/%s",
                      name.substr(0, 80).c_str());
        put_octal(h.mode, sizeof h.mode, 0644);
        put_octal(h.uid, sizeof h.uid, 0);
        put_octal(h.gid, sizeof h.gid, 0);
        put_octal(h.size, sizeof h.size, rec.size());
        put_octal(h.mtime, sizeof h.mtime, 0);
        h.typeflag = 'x';
        std::memcpy(h.magic, "ustar", 6);
        h.version[0] = '0'; h.version[1] = '0';
        finalize_checksum(h);
        write_block(h);
        out.write(rec.data(), static_cast<std::streamsize>(rec.size()));
        pad(rec.size());
    }

    void finalize_checksum(RawHeader& h) {
        std::memset(h.chksum, ' ', sizeof h.chksum);
        unsigned sum = header_checksum(reinterpret_cast<const unsigned char*>(&h));
        std::snprintf(h.chksum, 8, "%06o", sum);
        h.chksum[6] = '\0';
        h.chksum[7] = ' ';
    }

    void pad(uint64_t written) {
        static const char zeros[kBlock] = {};
        uint64_t rem = written % kBlock;
        if (rem) out.write(zeros, static_cast<std::streamsize>(kBlock - rem));
    }

    void add(const std::string& name, char typeflag, uint32_t mode,
             std::string_view data, const std::string& link, int64_t mtime) {
        write_pax(name, link);
        RawHeader h{};
        std::snprintf(h.name, sizeof h.name, "%s", name.substr(0, 100).c_str());
        put_octal(h.mode, sizeof h.mode, mode & 07777u);
        put_octal(h.uid, sizeof h.uid, 0);
        put_octal(h.gid, sizeof h.gid, 0);
        put_octal(h.size, sizeof h.size, typeflag == '0' ? data.size() : 0);
        put_octal(h.mtime, sizeof h.mtime, static_cast<uint64_t>(mtime < 0 ? 0 : mtime));
        h.typeflag = typeflag;
        std::snprintf(h.linkname, sizeof h.linkname, "%s", link.substr(0, 100).c_str());
        std::memcpy(h.magic, "ustar", 6);
        h.version[0] = '0'; h.version[1] = '0';
        std::snprintf(h.uname, sizeof h.uname, "root");
        std::snprintf(h.gname, sizeof h.gname, "root");
        if (typeflag == '3' || typeflag == '4') {
            put_octal(h.devmajor, sizeof h.devmajor, 0);
            put_octal(h.devminor, sizeof h.devminor, 0);
        }
        finalize_checksum(h);
        write_block(h);
        if (typeflag == '0' && !data.empty()) {
            out.write(data.data(), static_cast<std::streamsize>(data.size()));
            pad(data.size());
        }
    }
};

Writer::Writer(const std::filesystem::path& p) : impl_(std::make_unique<Impl>()) {
    impl_->out.open(p, std::ios::binary | std::ios::trunc);
    if (!impl_->out) throw io_error("cannot write " + p.string());
}

Writer::~Writer() {
    if (!impl_->finished) finish();
}

void Writer::add_directory(const std::string& name, uint32_t mode, int64_t mtime) {
    std::string n = name;
    if (!n.empty() && n.back() != '/') n += '/';
    impl_->add(n, '5', mode, {}, {}, mtime);
}

void Writer::add_file(const std::string& name, uint32_t mode, std::string_view data,
                      int64_t mtime) {
    impl_->add(name, '0', mode, data, {}, mtime);
}

void Writer::add_symlink(const std::string& name, const std::string& target, int64_t mtime) {
    impl_->add(name, '2', 0777, {}, target, mtime);
}

void Writer::add_hardlink(const std::string& name, const std::string& target, int64_t mtime) {
    impl_->add(name, '1', 0644, {}, target, mtime);
}

void Writer::add_fifo(const std::string& name, uint32_t mode, int64_t mtime) {
    impl_->add(name, '6', mode, {}, {}, mtime);
}

void Writer::finish() {
    static const char zeros[kBlock] = {};
    impl_->out.write(zeros, kBlock);
    impl_->out.write(zeros, kBlock);
    impl_->out.flush();
    impl_->finished = true;
}

}  // namespace udocker::tar

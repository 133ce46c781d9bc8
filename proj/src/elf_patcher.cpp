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

#include "udocker/elf_patcher.hpp"

#include "udocker/errors.hpp"
#include "udocker/log.hpp"
#include "udocker/pathmap.h"
#include "udocker/sha256.hpp"
#include "udocker/util.hpp"

#include <elf.h>

#include <algorithm>
#include <cstring>
#include <fstream>

#include <sys/stat.h>

namespace udocker::elf {

namespace {

constexpr uint64_t kPage = 0x1000;

uint64_t align_up(uint64_t v, uint64_t a) { return (v + a - 1) & ~(a - 1); }

// In-memory editor for little-endian ELF64 objects. The edit classes
// that grow content (longer interpreter, longer dynstr, extra dynamic
// slots) land in one appended PT_LOAD segment; existing segments are
// never shifted, only repointed.
class Elf64Editor {
public:
    explicit Elf64Editor(const fs::path& file) : path_(file) {
        data_raw_ = read_file(file);
        if (data_raw_.size() < sizeof(Elf64_Ehdr) || data_raw_.compare(0, 4, ELFMAG, 4) != 0)
            throw format_error("not an ELF file: " + file.string());
        const unsigned char cls = static_cast<unsigned char>(data_raw_[EI_CLASS]);
        const unsigned char enc = static_cast<unsigned char>(data_raw_[EI_DATA]);
        if (cls != ELFCLASS64 || enc != ELFDATA2LSB)
            throw format_error("only little-endian 64-bit ELF objects can be edited: " +
                               file.string());
        if (ehdr().e_phoff == 0 || ehdr().e_phnum == 0)
            throw format_error("ELF file has no program headers: " + file.string());
        if (data_raw_.size() < ehdr().e_phoff + ehdr().e_phnum * sizeof(Elf64_Phdr))
            throw format_error("truncated ELF file: " + file.string());
    }

    Elf64_Ehdr& ehdr() { return *reinterpret_cast<Elf64_Ehdr*>(data_raw_.data()); }
    Elf64_Phdr* phdrs() {
        return reinterpret_cast<Elf64_Phdr*>(data_raw_.data() + ehdr().e_phoff);
    }
    Elf64_Shdr* shdrs() {
        if (ehdr().e_shoff == 0) return nullptr;
        return reinterpret_cast<Elf64_Shdr*>(data_raw_.data() + ehdr().e_shoff);
    }

    Elf64_Phdr* find_phdr(uint32_t type) {
        for (int i = 0; i < ehdr().e_phnum; i++)
            if (phdrs()[i].p_type == type) return &phdrs()[i];
        return nullptr;
    }

    std::optional<uint64_t> vaddr_to_offset(uint64_t vaddr) {
        for (int i = 0; i < ehdr().e_phnum; i++) {
            const Elf64_Phdr& p = phdrs()[i];
            if (p.p_type != PT_LOAD) continue;
            if (vaddr >= p.p_vaddr && vaddr < p.p_vaddr + p.p_filesz)
                return p.p_offset + (vaddr - p.p_vaddr);
        }
        return std::nullopt;
    }

    struct DynEntry {
        int64_t tag;
        uint64_t val;
    };

    // .dynamic array location (offset in file, entry count incl. DT_NULL pad)
    struct DynTable {
        uint64_t off = 0;
        size_t capacity = 0;  // total slots in p_filesz
    };

    std::optional<DynTable> dynamic_table() {
        Elf64_Phdr* dyn = find_phdr(PT_DYNAMIC);
        if (!dyn) return std::nullopt;
        return DynTable{dyn->p_offset, dyn->p_filesz / sizeof(Elf64_Dyn)};
    }

    Elf64_Dyn* dyn_at(const DynTable& t, size_t i) {
        return reinterpret_cast<Elf64_Dyn*>(data_raw_.data() + t.off) + i;
    }

    std::optional<uint64_t> dyn_value(int64_t tag) {
        auto t = dynamic_table();
        if (!t) return std::nullopt;
        for (size_t i = 0; i < t->capacity; i++) {
            Elf64_Dyn* d = dyn_at(*t, i);
            if (d->d_tag == DT_NULL) break;
            if (d->d_tag == tag) return d->d_un.d_val;
        }
        return std::nullopt;
    }

    // string table (DT_STRTAB is a vaddr)
    std::optional<uint64_t> strtab_offset() {
        auto v = dyn_value(DT_STRTAB);
        if (!v) return std::nullopt;
        return vaddr_to_offset(*v);
    }

    std::string str_at(uint64_t strtab_off, uint64_t idx) {
        uint64_t pos = strtab_off + idx;
        if (pos >= data_raw_.size()) return {};
        return std::string(data_raw_.c_str() + pos);
    }

    const std::string& bytes() const { return data_raw_; }
    char* mutable_data() { return data_raw_.data(); }

    void save() {
        fs::path tmp = path_;
        tmp += ".patch-tmp";
        write_file(tmp, data_raw_);
        fs::permissions(tmp, fs::status(path_).permissions());
        fs::rename(tmp, path_);
    }

    // --- growth machinery --------------------------------------------------

    // Appends a read-only PT_LOAD carrying `content` plus (always) a
    // relocated program-header table with one extra entry. Returns the
    // vaddr/offset where `content` landed.
    struct NewRegion {
        uint64_t vaddr;
        uint64_t offset;
    };

    NewRegion grow(const std::string& content) {
        size_t phnum = ehdr().e_phnum;
        size_t new_phnum = phnum + 1;
        size_t phdr_bytes = new_phnum * sizeof(Elf64_Phdr);

        uint64_t max_vend = 0;
        for (size_t i = 0; i < phnum; i++) {
            const Elf64_Phdr& p = phdrs()[i];
            if (p.p_type == PT_LOAD) max_vend = std::max(max_vend, p.p_vaddr + p.p_memsz);
        }
        // Keep file offset == vaddr for the new segment: kernels differ
        // in how they compute the program-header auxv address (some use
        // load_addr + e_phoff directly), and equality satisfies all of
        // them. The file is padded up to the chosen boundary.
        uint64_t file_off = std::max(align_up(data_raw_.size(), kPage),
                                     align_up(max_vend, kPage));
        if (file_off - data_raw_.size() > (64ULL << 20))
            throw format_error("virtual address span too large to relocate headers in " +
                               path_.string());
        uint64_t vaddr = file_off;

        uint64_t total = phdr_bytes + content.size();

        // copy of the old table with the new PT_LOAD appended
        std::vector<Elf64_Phdr> table(new_phnum);
        std::memcpy(table.data(), phdrs(), phnum * sizeof(Elf64_Phdr));
        Elf64_Phdr& load = table[phnum];
        std::memset(&load, 0, sizeof load);
        load.p_type = PT_LOAD;
        load.p_flags = PF_R;
        load.p_offset = file_off;
        load.p_vaddr = load.p_paddr = vaddr;
        load.p_filesz = load.p_memsz = total;
        load.p_align = kPage;

        for (size_t i = 0; i < new_phnum; i++) {
            if (table[i].p_type == PT_PHDR) {
                table[i].p_offset = file_off;
                table[i].p_vaddr = table[i].p_paddr = vaddr;
                table[i].p_filesz = table[i].p_memsz = phdr_bytes;
            }
        }

        data_raw_.resize(file_off, '\0');
        data_raw_.append(reinterpret_cast<const char*>(table.data()), phdr_bytes);
        data_raw_.append(content);

        ehdr().e_phoff = file_off;
        ehdr().e_phnum = static_cast<Elf64_Half>(new_phnum);

        return {vaddr + phdr_bytes, file_off + phdr_bytes};
    }

    // Rebuilds .dynstr as old-bytes + additions inside a new segment,
    // leaving all existing string offsets valid. extra_dyn_slots adds
    // spare DT_NULL slots by relocating .dynamic as well when needed.
    struct StrtabPlan {
        uint64_t added_base;           // offset inside new dynstr of first addition
        std::vector<uint64_t> offsets; // offset of each addition
    };

    StrtabPlan append_dynstr(const std::vector<std::string>& additions,
                             bool need_dynamic_slot) {
        auto strtab_off = strtab_offset();
        auto strsz = dyn_value(DT_STRSZ);
        if (!strtab_off || !strsz)
            throw format_error("dynamic section without string table: " + path_.string());

        std::string new_strtab = data_raw_.substr(*strtab_off, *strsz);
        StrtabPlan plan;
        plan.added_base = new_strtab.size();
        for (const auto& s : additions) {
            plan.offsets.push_back(new_strtab.size());
            new_strtab += s;
            new_strtab += '\0';
        }

        auto t = dynamic_table();
        if (!t) throw format_error("no dynamic section: " + path_.string());

        size_t used = 0;
        while (used < t->capacity && dyn_at(*t, used)->d_tag != DT_NULL) used++;
        bool relocate_dynamic = need_dynamic_slot && used + 1 >= t->capacity;

        std::string content = new_strtab;
        uint64_t dyn_block_off_in_content = 0;
        size_t new_dyn_slots = 0;
        if (relocate_dynamic) {
            dyn_block_off_in_content = align_up(content.size(), 8);
            content.resize(dyn_block_off_in_content, '\0');
            new_dyn_slots = t->capacity + 4;
            content.append(reinterpret_cast<const char*>(dyn_at(*t, 0)),
                           t->capacity * sizeof(Elf64_Dyn));
            content.append((new_dyn_slots - t->capacity) * sizeof(Elf64_Dyn), '\0');
        }

        NewRegion region = grow(content);

        // repoint DT_STRTAB/DT_STRSZ (table may have moved with grow())
        auto t2 = dynamic_table();
        if (relocate_dynamic) {
            Elf64_Phdr* dyn = find_phdr(PT_DYNAMIC);
            dyn->p_offset = region.offset + dyn_block_off_in_content;
            dyn->p_vaddr = dyn->p_paddr = region.vaddr + dyn_block_off_in_content;
            dyn->p_filesz = dyn->p_memsz = new_dyn_slots * sizeof(Elf64_Dyn);
            t2 = dynamic_table();
            update_section(".dynamic", dyn->p_offset, dyn->p_vaddr, dyn->p_filesz);
        }
        for (size_t i = 0; i < t2->capacity; i++) {
            Elf64_Dyn* d = dyn_at(*t2, i);
            if (d->d_tag == DT_NULL) break;
            if (d->d_tag == DT_STRTAB) d->d_un.d_ptr = region.vaddr;
            if (d->d_tag == DT_STRSZ) d->d_un.d_val = new_strtab.size();
        }
        update_section(".dynstr", region.offset, region.vaddr, new_strtab.size());

        for (auto& off : plan.offsets) (void)off;  // offsets are into the new table
        return plan;
    }

    void update_section(const char* name, uint64_t off, uint64_t vaddr, uint64_t size) {
        Elf64_Shdr* sh = shdrs();
        if (!sh) return;
        if (ehdr().e_shstrndx == SHN_UNDEF || ehdr().e_shstrndx >= ehdr().e_shnum) return;
        const Elf64_Shdr& strsec = sh[ehdr().e_shstrndx];
        for (int i = 0; i < ehdr().e_shnum; i++) {
            uint64_t npos = strsec.sh_offset + sh[i].sh_name;
            if (npos >= data_raw_.size()) continue;
            if (std::strcmp(data_raw_.c_str() + npos, name) == 0) {
                sh[i].sh_offset = off;
                sh[i].sh_addr = vaddr;
                sh[i].sh_size = size;
            }
        }
    }

    // first DT_NULL slot index, for inserting a new tag
    std::optional<size_t> free_dyn_slot() {
        auto t = dynamic_table();
        if (!t) return std::nullopt;
        for (size_t i = 0; i < t->capacity; i++)
            if (dyn_at(*t, i)->d_tag == DT_NULL) {
                // keep the array NULL-terminated afterwards
                if (i + 1 < t->capacity) return i;
                return std::nullopt;
            }
        return std::nullopt;
    }

    const fs::path& path() const { return path_; }

private:
    fs::path path_;
    std::string data_raw_;
};

std::vector<std::string> split_paths(const std::string& s) {
    std::vector<std::string> out;
    for (auto& p : split(s, ':'))
        if (!p.empty()) out.push_back(p);
    return out;
}

template <typename EhdrT, typename PhdrT, typename DynT>
void read_elf_typed(const std::string& data, const fs::path& file, ElfInfo& info) {
    if (data.size() < sizeof(EhdrT)) throw format_error("truncated ELF file: " + file.string());
    const EhdrT* eh = reinterpret_cast<const EhdrT*>(data.data());
    if (eh->e_phoff + uint64_t(eh->e_phnum) * sizeof(PhdrT) > data.size())
        throw format_error("truncated ELF program headers: " + file.string());
    const PhdrT* ph = reinterpret_cast<const PhdrT*>(data.data() + eh->e_phoff);

    auto vaddr_to_off = [&](uint64_t vaddr) -> std::optional<uint64_t> {
        for (int i = 0; i < eh->e_phnum; i++)
            if (ph[i].p_type == PT_LOAD && vaddr >= ph[i].p_vaddr &&
                vaddr < ph[i].p_vaddr + ph[i].p_filesz)
                return ph[i].p_offset + (vaddr - ph[i].p_vaddr);
        return std::nullopt;
    };

    const PhdrT* dyn_ph = nullptr;
    for (int i = 0; i < eh->e_phnum; i++) {
        if (ph[i].p_type == PT_INTERP) {
            if (ph[i].p_offset + ph[i].p_filesz > data.size())
                throw format_error("truncated PT_INTERP: " + file.string());
            std::string interp(data.data() + ph[i].p_offset,
                               strnlen(data.data() + ph[i].p_offset, ph[i].p_filesz));
            info.interpreter = interp;
        }
        if (ph[i].p_type == PT_DYNAMIC) dyn_ph = &ph[i];
    }
    if (!dyn_ph) return;
    info.is_dynamic = true;

    if (dyn_ph->p_offset + dyn_ph->p_filesz > data.size())
        throw format_error("truncated dynamic section: " + file.string());
    const DynT* dyn = reinterpret_cast<const DynT*>(data.data() + dyn_ph->p_offset);
    size_t count = dyn_ph->p_filesz / sizeof(DynT);

    uint64_t strtab_vaddr = 0;
    for (size_t i = 0; i < count && dyn[i].d_tag != DT_NULL; i++)
        if (dyn[i].d_tag == DT_STRTAB) strtab_vaddr = dyn[i].d_un.d_ptr;
    auto strtab_off = vaddr_to_off(strtab_vaddr);
    auto str_at = [&](uint64_t idx) -> std::string {
        if (!strtab_off || *strtab_off + idx >= data.size()) return {};
        return std::string(data.c_str() + *strtab_off + idx);
    };

    for (size_t i = 0; i < count && dyn[i].d_tag != DT_NULL; i++) {
        switch (dyn[i].d_tag) {
            case DT_NEEDED: info.needed.push_back(str_at(dyn[i].d_un.d_val)); break;
            case DT_RPATH: {
                auto v = split_paths(str_at(dyn[i].d_un.d_val));
                info.rpath.insert(info.rpath.end(), v.begin(), v.end());
                break;
            }
            case DT_RUNPATH: {
                auto v = split_paths(str_at(dyn[i].d_un.d_val));
                info.runpath.insert(info.runpath.end(), v.begin(), v.end());
                break;
            }
        }
    }
}

}  // namespace

bool looks_like_elf(const fs::path& file) {
    std::ifstream in(file, std::ios::binary);
    char magic[4] = {};
    in.read(magic, 4);
    return in.gcount() == 4 && std::memcmp(magic, ELFMAG, 4) == 0;
}

ElfInfo read_elf(const fs::path& file) {
    std::string data = read_file(file);
    if (data.size() < EI_NIDENT || data.compare(0, 4, ELFMAG, 4) != 0)
        throw format_error("not an ELF file: " + file.string());

    ElfInfo info;
    unsigned char cls = static_cast<unsigned char>(data[EI_CLASS]);
    unsigned char enc = static_cast<unsigned char>(data[EI_DATA]);
    if (enc != ELFDATA2LSB)
        throw format_error("big-endian ELF objects are not supported: " + file.string());
    if (cls == ELFCLASS64) {
        info.cls = 64;
        read_elf_typed<Elf64_Ehdr, Elf64_Phdr, Elf64_Dyn>(data, file, info);
    } else if (cls == ELFCLASS32) {
        info.cls = 32;
        read_elf_typed<Elf32_Ehdr, Elf32_Phdr, Elf32_Dyn>(data, file, info);
    } else {
        throw format_error("unknown ELF class: " + file.string());
    }
    return info;
}

void set_interpreter(const fs::path& file, const std::string& new_interp) {
    Elf64Editor ed(file);
    Elf64_Phdr* interp = ed.find_phdr(PT_INTERP);
    if (!interp)
        throw Error(ErrorClass::Format,
                    "cannot set interpreter on a file without PT_INTERP (statically "
                    "linked?): " + file.string());

    std::string current(ed.bytes().data() + interp->p_offset,
                        strnlen(ed.bytes().data() + interp->p_offset, interp->p_filesz));
    if (current == new_interp) return;  // no-op, file untouched

    if (new_interp.size() + 1 <= interp->p_filesz) {
        // fits in place; trailing NUL padding keeps sizes stable
        char* dst = ed.mutable_data() + interp->p_offset;
        std::memset(dst, 0, interp->p_filesz);
        std::memcpy(dst, new_interp.data(), new_interp.size());
        ed.save();
        return;
    }

    auto region = ed.grow(new_interp + '\0');
    Elf64_Phdr* interp2 = ed.find_phdr(PT_INTERP);  // table moved
    interp2->p_offset = region.offset;
    interp2->p_vaddr = interp2->p_paddr = region.vaddr;
    interp2->p_filesz = interp2->p_memsz = new_interp.size() + 1;
    ed.update_section(".interp", region.offset, region.vaddr, new_interp.size() + 1);
    ed.save();
}

void set_rpath(const fs::path& file, const std::vector<std::string>& paths) {
    Elf64Editor ed(file);
    auto table = ed.dynamic_table();
    if (!table) throw format_error("not a dynamic ELF object: " + file.string());

    std::string joined = join(paths, ":");

    bool have_entry = ed.dyn_value(DT_RUNPATH) || ed.dyn_value(DT_RPATH);
    auto plan = ed.append_dynstr({joined}, /*need_dynamic_slot=*/!have_entry);
    uint64_t new_off = plan.offsets[0];

    auto t = *ed.dynamic_table();
    bool placed = false;
    for (size_t i = 0; i < t.capacity; i++) {
        Elf64_Dyn* d = ed.dyn_at(t, i);
        if (d->d_tag == DT_NULL) break;
        if (d->d_tag == DT_RPATH || d->d_tag == DT_RUNPATH) {
            d->d_tag = DT_RUNPATH;  // modern search order semantics
            d->d_un.d_val = new_off;
            placed = true;
        }
    }
    if (!placed) {
        auto slot = ed.free_dyn_slot();
        if (!slot)
            throw format_error("no room for a DT_RUNPATH entry in " + file.string());
        Elf64_Dyn* d = ed.dyn_at(t, *slot);
        d->d_tag = DT_RUNPATH;
        d->d_un.d_val = new_off;
    }
    ed.save();
}

void set_needed(const fs::path& file, const std::map<std::string, std::string>& renames) {
    if (renames.empty()) return;
    Elf64Editor ed(file);
    auto table = ed.dynamic_table();
    if (!table) throw format_error("not a dynamic ELF object: " + file.string());
    auto strtab_off = ed.strtab_offset();
    if (!strtab_off) throw format_error("dynamic section without strtab: " + file.string());

    // collect the renames that actually apply
    std::vector<std::pair<size_t, std::string>> hits;  // dyn index -> new name
    std::vector<std::string> additions;
    auto t = *table;
    for (size_t i = 0; i < t.capacity; i++) {
        Elf64_Dyn* d = ed.dyn_at(t, i);
        if (d->d_tag == DT_NULL) break;
        if (d->d_tag != DT_NEEDED) continue;
        std::string name = ed.str_at(*strtab_off, d->d_un.d_val);
        auto it = renames.find(name);
        if (it != renames.end()) {
            hits.emplace_back(i, it->second);
            additions.push_back(it->second);
        }
    }
    for (const auto& [old_name, new_name] : renames) {
        bool found = false;
        for (auto& [idx, nn] : hits)
            if (nn == new_name) found = true;
        if (!found)
            log::warn("set_needed: " + old_name + " not present in " + file.string() +
                      ", skipped");
    }
    if (hits.empty()) return;  // nothing to do, file untouched

    auto plan = ed.append_dynstr(additions, false);
    auto t2 = *ed.dynamic_table();
    for (size_t k = 0; k < hits.size(); k++)
        ed.dyn_at(t2, hits[k].first)->d_un.d_val = plan.offsets[k];
    ed.save();
}

// --------------------------------------------------------------- journaling

namespace {

constexpr char kJournalMagic[8] = {'U', 'D', 'K', 'J', 'R', 'N', 'L', '1'};

struct JournalHeader {
    char magic[8];
    uint64_t entry_count;
};

struct JournalIndexEntry {
    std::string rel_path;
    std::string original;  // full original bytes
    uint32_t mode;
};

fs::path journal_file(const fs::path& journal_dir) { return journal_dir / "patch.journal"; }

std::vector<JournalIndexEntry> load_journal(const fs::path& journal_dir) {
    std::vector<JournalIndexEntry> out;
    fs::path jf = journal_file(journal_dir);
    if (!fs::is_regular_file(jf)) return out;
    std::string data = read_file(jf);
    if (data.size() < sizeof(JournalHeader) ||
        std::memcmp(data.data(), kJournalMagic, 8) != 0)
        throw format_error("corrupt patch journal: " + jf.string());
    JournalHeader hdr;
    std::memcpy(&hdr, data.data(), sizeof hdr);
    size_t pos = sizeof hdr;
    auto read_u64 = [&](uint64_t& v) {
        if (pos + 8 > data.size()) throw format_error("truncated patch journal");
        std::memcpy(&v, data.data() + pos, 8);
        pos += 8;
    };
    for (uint64_t i = 0; i < hdr.entry_count; i++) {
        uint64_t path_len, blob_len, mode;
        read_u64(path_len);
        read_u64(blob_len);
        read_u64(mode);
        if (pos + path_len + blob_len > data.size())
            throw format_error("truncated patch journal");
        JournalIndexEntry e;
        e.rel_path = data.substr(pos, path_len);
        pos += path_len;
        e.original = data.substr(pos, blob_len);
        pos += blob_len;
        e.mode = static_cast<uint32_t>(mode);
        out.push_back(std::move(e));
    }
    return out;
}

void save_journal(const fs::path& journal_dir, const std::vector<JournalIndexEntry>& entries) {
    std::string data;
    JournalHeader hdr;
    std::memcpy(hdr.magic, kJournalMagic, 8);
    hdr.entry_count = entries.size();
    data.append(reinterpret_cast<const char*>(&hdr), sizeof hdr);
    for (const auto& e : entries) {
        uint64_t v;
        v = e.rel_path.size();
        data.append(reinterpret_cast<const char*>(&v), 8);
        v = e.original.size();
        data.append(reinterpret_cast<const char*>(&v), 8);
        v = e.mode;
        data.append(reinterpret_cast<const char*>(&v), 8);
        data += e.rel_path;
        data += e.original;
    }
    write_file(journal_file(journal_dir), data);
}

bool host_compatible_machine(const fs::path& file) {
    std::string head = read_file(file).substr(0, 64);
    if (head.size() < sizeof(Elf64_Ehdr)) return false;
    const auto* eh = reinterpret_cast<const Elf64_Ehdr*>(head.data());
#if defined(__x86_64__)
    return eh->e_machine == EM_X86_64;
#elif defined(__aarch64__)
    return eh->e_machine == EM_AARCH64;
#else
    return false;
#endif
}

// computes the container-prefix edits for one ELF; empty optional when
// the file needs no change
struct PrefixEdit {
    std::optional<std::string> new_interp;
    std::optional<std::vector<std::string>> new_runpath;
    std::map<std::string, std::string> needed_renames;
};

std::optional<PrefixEdit> compute_prefix_edit(const fs::path& rootfs, const ElfInfo& info) {
    PrefixEdit edit;
    bool any = false;
    std::string prefix = fs::absolute(rootfs).string();

    if (info.interpreter && !info.interpreter->empty() &&
        !starts_with(*info.interpreter, prefix)) {
        pm_map map;
        if (pm_map_init(&map, prefix.c_str()) == 0) {
            char host[PM_PATH_MAX];
            if (pm_translate(&map, "/", info.interpreter->c_str(), 1, host, nullptr) == 0) {
                edit.new_interp = host;
                any = true;
            }
        }
    }

    std::vector<std::string> search = info.runpath.empty() ? info.rpath : info.runpath;
    if (!search.empty()) {
        bool changed = false;
        std::vector<std::string> prefixed;
        for (const auto& p : search) {
            if (!p.empty() && p[0] == '/' && !starts_with(p, prefix)) {
                prefixed.push_back(prefix + p);
                changed = true;
            } else {
                prefixed.push_back(p);  // $ORIGIN-style entries stay as-is
            }
        }
        if (changed) {
            edit.new_runpath = prefixed;
            any = true;
        }
    }

    for (const auto& n : info.needed) {
        if (!n.empty() && n[0] == '/' && !starts_with(n, prefix)) {
            edit.needed_renames[n] = prefix + n;
            any = true;
        }
    }

    if (!any) return std::nullopt;
    return edit;
}

bool journal_has(const std::vector<JournalIndexEntry>& entries, const std::string& rel) {
    for (const auto& e : entries)
        if (e.rel_path == rel) return true;
    return false;
}

// applies the prefix edit to one file, journaling the original first
bool patch_file_locked(const fs::path& rootfs, const fs::path& journal_dir,
                       const fs::path& file, std::vector<JournalIndexEntry>& entries,
                       ElfPatchPlan* plan) {
    std::error_code ec;
    fs::path rel = fs::relative(file, rootfs, ec);
    if (ec) return false;
    if (journal_has(entries, rel.string())) return false;  // already patched

    if (!looks_like_elf(file)) return false;
    if (!host_compatible_machine(file)) {
        log::warn("skipping foreign-architecture binary: " + file.string());
        return false;
    }
    ElfInfo info;
    try {
        info = read_elf(file);
    } catch (const Error&) {
        return false;  // malformed ELF data, leave alone
    }
    if (!info.is_dynamic) return false;
    auto edit = compute_prefix_edit(rootfs, info);
    if (!edit) return false;

    struct stat st{};
    ::lstat(file.c_str(), &st);
    JournalIndexEntry je;
    je.rel_path = rel.string();
    je.original = read_file(file);
    je.mode = st.st_mode & 07777;
    entries.push_back(std::move(je));
    save_journal(journal_dir, entries);  // original safe before editing

    if (edit->new_interp) set_interpreter(file, *edit->new_interp);
    if (edit->new_runpath) set_rpath(file, *edit->new_runpath);
    if (!edit->needed_renames.empty()) set_needed(file, edit->needed_renames);

    if (plan) {
        PatchEntry pe;
        pe.rel_path = rel.string();
        pe.original = info;
        pe.patched = read_elf(file);
        plan->entries.push_back(std::move(pe));
    }
    return true;
}

}  // namespace

ElfPatchPlan apply_prefix_plan(const fs::path& rootfs, const fs::path& journal_dir) {
    ensure_dir(journal_dir);
    FileLock lock(journal_dir / ".patch.lock");
    auto entries = load_journal(journal_dir);

    ElfPatchPlan plan;
    plan.rootfs = rootfs;
    for (auto it = fs::recursive_directory_iterator(
             rootfs, fs::directory_options::skip_permission_denied);
         it != fs::recursive_directory_iterator(); ++it) {
        if (!it->is_regular_file() || it->is_symlink()) continue;
        patch_file_locked(rootfs, journal_dir, it->path(), entries, &plan);
    }
    return plan;
}

bool patch_one_file(const fs::path& rootfs, const fs::path& journal_dir,
                    const fs::path& file) {
    ensure_dir(journal_dir);
    FileLock lock(journal_dir / ".patch.lock");
    auto entries = load_journal(journal_dir);
    if (!fs::is_regular_file(file) || fs::is_symlink(file)) return false;
    return patch_file_locked(rootfs, journal_dir, file, entries, nullptr);
}

size_t revert_journal(const fs::path& journal_dir, const fs::path& rootfs) {
    if (!fs::is_directory(journal_dir)) return 0;
    FileLock lock(journal_dir / ".patch.lock");
    auto entries = load_journal(journal_dir);
    // newest first so repeated patches of one file unwind correctly
    size_t restored = 0;
    for (auto it = entries.rbegin(); it != entries.rend(); ++it) {
        fs::path target = rootfs / it->rel_path;
        write_file(target, it->original);
        ::chmod(target.c_str(), it->mode);
        restored++;
    }
    if (fs::exists(journal_file(journal_dir))) fs::remove(journal_file(journal_dir));
    return restored;
}

size_t journal_entry_count(const fs::path& journal_dir) {
    return load_journal(journal_dir).size();
}

size_t disable_host_paths_in_loader(const fs::path& loader_copy) {
    std::string data = read_file(loader_copy);
    static const char* kHostPaths[] = {
        "/etc/ld.so.cache",
        "/lib/x86_64-linux-gnu/", "/usr/lib/x86_64-linux-gnu/",
        "/lib64/", "/usr/lib64/", "/lib/", "/usr/lib/",
        "/usr/local/lib/", "/usr/local/lib64/",
    };
    // Same-length rewrite to a path that cannot exist. The first byte
    // must stay '/': the loader asserts absolute search-path entries.
    static const std::string kFill = "udk-disabled-search-path-udk-disabled-search-path";
    size_t rewritten = 0;
    for (const char* needle : kHostPaths) {
        size_t nlen = std::strlen(needle);
        size_t pos = 0;
        while ((pos = data.find(needle, pos)) != std::string::npos) {
            // only full NUL-delimited string occurrences
            if (data[pos + nlen] == '\0' && (pos == 0 || data[pos - 1] == '\0')) {
                data[pos] = '/';
                for (size_t i = 1; i < nlen; i++)
                    data[pos + i] = kFill[(i - 1) % kFill.size()];
                rewritten++;
            }
            pos += nlen;
        }
    }
    write_file(loader_copy, data);
    fs::permissions(loader_copy, fs::perms::owner_all | fs::perms::group_read |
                                     fs::perms::group_exec | fs::perms::others_read |
                                     fs::perms::others_exec);
    return rewritten;
}

}  // namespace udocker::elf

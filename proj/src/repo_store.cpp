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

#include "udocker/repo_store.hpp"

#include "udocker/errors.hpp"
#include "udocker/layer_assembler.hpp"
#include "udocker/log.hpp"
#include "udocker/sha256.hpp"
#include "udocker/util.hpp"

#include <nlohmann/json.hpp>

#include <unistd.h>

#include <algorithm>
#include <cctype>
#include <fstream>

namespace udocker {

using nlohmann::json;

// ---------------------------------------------------------------- ImageRef

ImageRef ImageRef::parse(const std::string& s) {
    if (s.empty()) throw usage_error("empty image reference");
    ImageRef ref;
    std::string rest = s;

    size_t slash = rest.find('/');
    if (slash != std::string::npos) {
        std::string head = rest.substr(0, slash);
        if (head.find('.') != std::string::npos || head.find(':') != std::string::npos ||
            head == "localhost") {
            ref.registry = head;
            rest = rest.substr(slash + 1);
        }
    }
    size_t last_slash = rest.rfind('/');
    size_t colon = rest.find(':', last_slash == std::string::npos ? 0 : last_slash);
    if (colon != std::string::npos) {
        ref.tag = rest.substr(colon + 1);
        rest = rest.substr(0, colon);
    }
    ref.repository = rest;
    if (ref.repository.empty() || ref.tag.empty())
        throw usage_error("malformed image reference: " + s);
    for (char c : ref.repository)
        if (std::isspace(static_cast<unsigned char>(c)))
            throw usage_error("malformed image reference: " + s);
    return ref;
}

bool LayerDescriptor::digest_well_formed(const std::string& digest) {
    if (!starts_with(digest, "sha256:") || digest.size() != 7 + 64) return false;
    return std::all_of(digest.begin() + 7, digest.end(), [](char c) {
        return (c >= '0' && c <= '9') || (c >= 'a' && c <= 'f');
    });
}

// ---------------------------------------------------------------- RepoStore

RepoStore::RepoStore(fs::path root) : root_(std::move(root)) {}

fs::path RepoStore::default_root() {
    if (auto dir = env_var("UDOCKER_DIR")) return fs::path(*dir);
    if (auto home = env_var("HOME")) return fs::path(*home) / ".udocker";
    return fs::path("/tmp") / ".udocker";
}

void RepoStore::init() {
    std::error_code ec;
    if (fs::exists(root_, ec) && !fs::is_directory(root_, ec))
        throw io_error("repository path exists and is not a directory: " + root_.string());
    for (const char* sub : {"bin", "lib", "layers", "repos", "containers"})
        ensure_dir(root_ / sub);
}

bool RepoStore::initialized() const {
    for (const char* sub : {"bin", "lib", "layers", "repos", "containers"})
        if (!fs::is_directory(root_ / sub)) return false;
    return true;
}

// --- layers ---------------------------------------------------------------

fs::path RepoStore::layer_path(const std::string& digest) const {
    return layers_dir() / digest;
}

bool RepoStore::has_layer(const std::string& digest) const {
    return fs::is_regular_file(layer_path(digest));
}

size_t RepoStore::layer_count() const {
    size_t n = 0;
    for (const auto& de : fs::directory_iterator(layers_dir()))
        if (de.is_regular_file() && starts_with(de.path().filename().string(), "sha256:")) n++;
    return n;
}

fs::path RepoStore::store_layer(const LayerDescriptor& desc, tar::ByteSource& blob) {
    if (!LayerDescriptor::digest_well_formed(desc.digest))
        throw usage_error("malformed digest: " + desc.digest);

    fs::path final_path = layer_path(desc.digest);
    FileLock lock(layers_dir() / (".lock." + desc.digest.substr(7)));
    if (fs::exists(final_path)) return final_path;  // dedup

    fs::path tmp = layers_dir() / (".tmp." + desc.digest.substr(7, 16) + "." +
                                   std::to_string(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw io_error("cannot write " + tmp.string());
        Sha256 hash;
        char buf[65536];
        size_t n;
        while ((n = blob.read(buf, sizeof buf)) > 0) {
            hash.update(buf, n);
            out.write(buf, static_cast<std::streamsize>(n));
        }
        out.flush();
        if (!out) {
            fs::remove(tmp);
            throw io_error("short write to " + tmp.string());
        }
        std::string got = "sha256:" + hash.hex_digest();
        if (got != desc.digest) {
            fs::remove(tmp);
            throw integrity_error("layer digest mismatch: manifest says " + desc.digest +
                                  ", content is " + got);
        }
    }
    fs::rename(tmp, final_path);
    return final_path;
}

fs::path RepoStore::store_layer(const LayerDescriptor& desc, const std::string& data) {
    auto src = tar::memory_source(data);
    return store_layer(desc, *src);
}

// --- images ---------------------------------------------------------------

static fs::path image_dir_for(const fs::path& repos, const ImageRef& ref) {
    return repos / ref.registry / ref.repository / ref.tag;
}

void RepoStore::register_image(const ImageRef& ref, const std::string& manifest_json,
                               const std::string& config_json,
                               const std::vector<std::string>& layer_digests) {
    for (const auto& d : layer_digests)
        if (!has_layer(d))
            throw integrity_error("cannot register image " + ref.str() +
                                  ": missing layer " + d);
    fs::path dir = image_dir_for(repos_dir(), ref);
    ensure_dir(dir);
    write_file(dir / "manifest.json", manifest_json);
    write_file(dir / "config.json", config_json);
    // layers.list written last: its presence marks the image complete
    std::string list;
    for (const auto& d : layer_digests) list += d + "\n";
    write_file(dir / "layers.list", list);
}

bool RepoStore::has_image(const ImageRef& ref) const {
    return fs::is_regular_file(image_dir_for(repos_dir(), ref) / "layers.list");
}

StoredImage RepoStore::load_image(const ImageRef& ref) const {
    fs::path dir = image_dir_for(repos_dir(), ref);
    if (!fs::is_regular_file(dir / "layers.list"))
        throw not_found_error("image not found in local repository: " + ref.str());
    StoredImage img;
    img.ref = ref;
    img.manifest_json = read_file(dir / "manifest.json");
    img.config_json = read_file(dir / "config.json");
    for (const auto& line : split(read_file(dir / "layers.list"), '\n'))
        if (!line.empty()) img.layer_digests.push_back(line);
    return img;
}

std::vector<ImageRef> RepoStore::list_images() const {
    std::vector<ImageRef> out;
    if (!fs::is_directory(repos_dir())) return out;
    for (const auto& reg : fs::directory_iterator(repos_dir())) {
        if (!reg.is_directory()) continue;
        // repository may be a multi-component path; walk to tag dirs
        std::vector<fs::path> stack{reg.path()};
        while (!stack.empty()) {
            fs::path dir = stack.back();
            stack.pop_back();
            if (fs::is_regular_file(dir / "layers.list")) {
                fs::path rel = fs::relative(dir, reg.path());
                std::string repo = rel.parent_path().string();
                ImageRef ref;
                ref.registry = reg.path().filename().string();
                ref.repository = repo;
                ref.tag = rel.filename().string();
                out.push_back(ref);
                continue;
            }
            for (const auto& de : fs::directory_iterator(dir))
                if (de.is_directory()) stack.push_back(de.path());
        }
    }
    std::sort(out.begin(), out.end(),
              [](const ImageRef& a, const ImageRef& b) { return a.str() < b.str(); });
    return out;
}

void RepoStore::remove_image(const ImageRef& ref) {
    fs::path dir = image_dir_for(repos_dir(), ref);
    if (!fs::is_directory(dir)) throw not_found_error("image not found: " + ref.str());
    if (fs::exists(dir / "PROTECT"))
        throw conflict_error("image is protected: " + ref.str());
    fs::remove_all(dir);
    // shared layer blobs stay; they may back other images
}

void RepoStore::protect_image(const ImageRef& ref, bool on) {
    fs::path dir = image_dir_for(repos_dir(), ref);
    if (!fs::is_directory(dir)) throw not_found_error("image not found: " + ref.str());
    if (on)
        write_file(dir / "PROTECT", "");
    else
        fs::remove(dir / "PROTECT");
}

// --- containers -------------------------------------------------------------

bool RepoStore::looks_like_uuid(const std::string& s) {
    if (s.size() != 36) return false;
    for (size_t i = 0; i < s.size(); i++) {
        if (i == 8 || i == 13 || i == 18 || i == 23) {
            if (s[i] != '-') return false;
        } else if (!std::isxdigit(static_cast<unsigned char>(s[i]))) {
            return false;
        }
    }
    return true;
}

void RepoStore::save_record(const ContainerRecord& rec) const {
    json j;
    j["id"] = rec.id;
    j["image"] = rec.image.str();
    j["exec_mode"] = rec.exec_mode;
    write_file(container_dir(rec.id) / "container.json", j.dump(2) + "\n");
}

ContainerRecord RepoStore::create_container(const ImageRef& ref) {
    StoredImage img = load_image(ref);
    for (const auto& d : img.layer_digests)
        if (!has_layer(d))
            throw integrity_error("image " + ref.str() + " is incomplete: missing layer " + d);

    ContainerRecord rec;
    rec.id = uuid4();
    rec.image = ref;
    fs::path dir = container_dir(rec.id);
    rec.rootfs = dir / "ROOT";

    try {
        ensure_dir(rec.rootfs);
        std::vector<fs::path> layer_files;
        for (const auto& d : img.layer_digests) layer_files.push_back(layer_path(d));
        layers::flatten(layer_files, rec.rootfs);
        layers::adjust_permissions(rec.rootfs);
        write_file(dir / "names", "");
        save_record(rec);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(dir, ec);
        throw;
    }
    return rec;
}

ContainerRecord RepoStore::create_container_from_tar(const fs::path& tree_tar) {
    ContainerRecord rec;
    rec.id = uuid4();
    rec.image = ImageRef{.registry = "imported", .repository = "tarball", .tag = "none"};
    fs::path dir = container_dir(rec.id);
    rec.rootfs = dir / "ROOT";
    try {
        ensure_dir(rec.rootfs);
        layers::import_tree(tree_tar, rec.rootfs);
        layers::adjust_permissions(rec.rootfs);
        write_file(dir / "names", "");
        save_record(rec);
    } catch (...) {
        std::error_code ec;
        fs::remove_all(dir, ec);
        throw;
    }
    return rec;
}

std::optional<std::string> RepoStore::resolve(const std::string& name_or_id) const {
    if (looks_like_uuid(name_or_id)) {
        if (fs::is_directory(container_dir(name_or_id))) return name_or_id;
        return std::nullopt;
    }
    if (!fs::is_directory(containers_dir())) return std::nullopt;
    for (const auto& de : fs::directory_iterator(containers_dir())) {
        if (!de.is_directory()) continue;
        fs::path names = de.path() / "names";
        if (!fs::is_regular_file(names)) continue;
        for (const auto& line : split(read_file(names), '\n'))
            if (!line.empty() && line == name_or_id) return de.path().filename().string();
    }
    return std::nullopt;
}

ContainerRecord RepoStore::load_container(const std::string& id) const {
    fs::path dir = container_dir(id);
    if (!fs::is_regular_file(dir / "container.json"))
        throw not_found_error("container not found: " + id);
    json j = json::parse(read_file(dir / "container.json"));
    ContainerRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.image = ImageRef::parse(j.at("image").get<std::string>());
    rec.exec_mode = j.value("exec_mode", "P1");
    rec.rootfs = dir / "ROOT";
    rec.is_protected = fs::exists(dir / "PROTECT");
    if (fs::is_regular_file(dir / "names"))
        for (const auto& line : split(read_file(dir / "names"), '\n'))
            if (!line.empty()) rec.names.insert(line);
    return rec;
}

std::vector<ContainerRecord> RepoStore::list_containers() const {
    std::vector<ContainerRecord> out;
    if (!fs::is_directory(containers_dir())) return out;
    for (const auto& de : fs::directory_iterator(containers_dir())) {
        if (!de.is_directory()) continue;
        if (!fs::is_regular_file(de.path() / "container.json")) continue;
        out.push_back(load_container(de.path().filename().string()));
    }
    std::sort(out.begin(), out.end(),
              [](const ContainerRecord& a, const ContainerRecord& b) { return a.id < b.id; });
    return out;
}

void RepoStore::set_name(const std::string& id, const std::string& alias) {
    if (alias.empty() || looks_like_uuid(alias))
        throw usage_error("alias must be a non-empty string that is not a container id");
    FileLock lock(root_ / ".names.lock");
    if (!fs::is_directory(container_dir(id))) throw not_found_error("container not found: " + id);
    if (auto existing = resolve(alias))
        throw conflict_error("alias already in use by " + *existing + ": " + alias);
    fs::path names = container_dir(id) / "names";
    std::string content = fs::is_regular_file(names) ? read_file(names) : "";
    content += alias + "\n";
    write_file(names, content);
}

void RepoStore::set_exec_mode(const std::string& id, const std::string& mode) {
    ContainerRecord rec = load_container(id);
    rec.exec_mode = mode;
    save_record(rec);
}

void RepoStore::protect_container(const std::string& id, bool on) {
    if (!fs::is_directory(container_dir(id))) throw not_found_error("container not found: " + id);
    if (on)
        write_file(container_dir(id) / "PROTECT", "");
    else
        fs::remove(container_dir(id) / "PROTECT");
}

void RepoStore::remove_container(const std::string& id) {
    fs::path dir = container_dir(id);
    if (!fs::is_directory(dir)) throw not_found_error("container not found: " + id);
    if (fs::exists(dir / "PROTECT")) throw conflict_error("container is protected: " + id);
    fs::remove_all(dir);
}

}  // namespace udocker

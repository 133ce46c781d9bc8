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

#ifndef UDOCKER_REPO_STORE_HPP
#define UDOCKER_REPO_STORE_HPP

#include "udocker/tar.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace udocker {

namespace fs = std::filesystem;

/// registry/repository:tag triple. Parsing follows the usual Docker
/// conventions: the first path component is a registry only when it
/// looks like a hostname (contains '.', ':' or is "localhost").
struct ImageRef {
    std::string registry = "docker.io";
    std::string repository;
    std::string tag = "latest";

    static ImageRef parse(const std::string& s);
    std::string str() const { return registry + "/" + repository + ":" + tag; }
    bool operator==(const ImageRef&) const = default;
};

struct LayerDescriptor {
    std::string digest;  // "sha256:<64 hex>"
    uint64_t size = 0;
    std::string media_type;

    static bool digest_well_formed(const std::string& digest);
};

struct ContainerRecord {
    std::string id;  // version-4 UUID, lower-case
    std::set<std::string> names;
    ImageRef image;
    fs::path rootfs;  // <containers>/<id>/ROOT
    std::string exec_mode = "P1";
    bool is_protected = false;
};

struct StoredImage {
    ImageRef ref;
    std::string manifest_json;
    std::string config_json;
    std::vector<std::string> layer_digests;  // base first
};

/// Local repository under a single user-writable directory:
///
///   <root>/layers/sha256:<hex>
///   <root>/repos/<registry>/<repository>/<tag>/{manifest.json,config.json,layers.list}
///   <root>/containers/<uuid>/{ROOT/,container.json,names}
///   <root>/bin, <root>/lib            engine support artifacts
///
/// Safe for concurrent processes of one user: layer stores are
/// serialized per digest, alias updates under a repository-wide lock,
/// reads are lock-free.
class RepoStore {
public:
    explicit RepoStore(fs::path root);

    /// $UDOCKER_DIR if set, else $HOME/.udocker.
    static fs::path default_root();

    /// Creates the five standard subdirectories. Idempotent.
    void init();
    bool initialized() const;

    const fs::path& root() const { return root_; }
    fs::path bin_dir() const { return root_ / "bin"; }
    fs::path lib_dir() const { return root_ / "lib"; }
    fs::path layers_dir() const { return root_ / "layers"; }
    fs::path repos_dir() const { return root_ / "repos"; }
    fs::path containers_dir() const { return root_ / "containers"; }

    // --- layers -----------------------------------------------------

    /// Streams the blob into the store, verifying its digest. Returns
    /// the stored path; storing an already-present digest is a no-op.
    fs::path store_layer(const LayerDescriptor& desc, tar::ByteSource& blob);
    fs::path store_layer(const LayerDescriptor& desc, const std::string& data);
    bool has_layer(const std::string& digest) const;
    fs::path layer_path(const std::string& digest) const;
    size_t layer_count() const;

    // --- images -----------------------------------------------------

    void register_image(const ImageRef& ref, const std::string& manifest_json,
                        const std::string& config_json,
                        const std::vector<std::string>& layer_digests);
    bool has_image(const ImageRef& ref) const;
    StoredImage load_image(const ImageRef& ref) const;
    std::vector<ImageRef> list_images() const;
    void remove_image(const ImageRef& ref);
    void protect_image(const ImageRef& ref, bool on);

    // --- containers -------------------------------------------------

    /// Flattens the image's layer stack into a fresh container tree.
    /// On failure no container directory or record is left behind.
    ContainerRecord create_container(const ImageRef& ref);

    /// Imports an exported tree archive as a new container.
    ContainerRecord create_container_from_tar(const fs::path& tree_tar);

    std::optional<std::string> resolve(const std::string& name_or_id) const;
    ContainerRecord load_container(const std::string& id) const;
    std::vector<ContainerRecord> list_containers() const;
    void set_name(const std::string& id, const std::string& alias);
    void set_exec_mode(const std::string& id, const std::string& mode);
    void protect_container(const std::string& id, bool on);
    void remove_container(const std::string& id);

    fs::path container_dir(const std::string& id) const { return containers_dir() / id; }

    static bool looks_like_uuid(const std::string& s);

private:
    void save_record(const ContainerRecord& rec) const;

    fs::path root_;
};

}  // namespace udocker

#endif

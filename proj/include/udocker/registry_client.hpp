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

#ifndef UDOCKER_REGISTRY_CLIENT_HPP
#define UDOCKER_REGISTRY_CLIENT_HPP

#include "udocker/repo_store.hpp"

#include <chrono>
#include <optional>
#include <string>
#include <vector>

namespace udocker {

struct Manifest {
    int schema_version = 2;
    std::string media_type;
    LayerDescriptor config;
    std::vector<LayerDescriptor> layers;  // base first, manifest order
};

struct AuthToken {
    std::string token;  // empty: requests go out unauthenticated
    std::string scope;
    long expires_in = 0;
};

struct RegistryOptions {
    bool insecure = false;  // plain http (local fixture registries)
    int max_parallel = 4;
    int retries = 3;
    std::chrono::milliseconds retry_base_delay{250};
    std::optional<std::string> username;
    std::optional<std::string> password;
};

struct PullReport {
    size_t layers_total = 0;
    size_t layers_downloaded = 0;
    size_t layers_cached = 0;
};

/// Minimal pull-only client for Docker-Registry-v2-compatible servers.
/// One client instance serves one logical task; blob downloads within a
/// pull run under bounded parallelism.
class RegistryClient {
public:
    explicit RegistryClient(std::string registry_host, RegistryOptions opts = {});

    /// Answers the registry's 401 bearer challenge for anonymous (or
    /// basic-credential) pull scope. A registry that never challenges
    /// yields an empty token.
    AuthToken authenticate(const std::string& repository);

    /// Fetches and parses a schema-2 manifest; manifest lists resolve
    /// to the entry matching this host's architecture.
    Manifest fetch_manifest(const ImageRef& ref, const AuthToken& token);

    /// Raw blob fetch with digest verification through the store.
    std::string fetch_blob(const std::string& repository, const std::string& digest,
                           const AuthToken& token);

    /// Full pull: manifest + config + all layers, stored and verified;
    /// the image is registered only when every blob landed intact.
    PullReport pull(const ImageRef& ref, RepoStore& store);

    static std::string host_architecture();

private:
    std::string base_url() const;
    struct Response {
        int status = 0;
        std::string body;
        std::string content_type;
        std::string www_authenticate;
    };
    Response get(const std::string& path, const AuthToken& token,
                 const std::vector<std::pair<std::string, std::string>>& headers,
                 bool stream_large = false);

    std::string host_;
    RegistryOptions opts_;
};

}  // namespace udocker

#endif

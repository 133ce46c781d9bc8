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

#ifndef UDOCKER_TESTS_FIXTURE_REGISTRY_HPP
#define UDOCKER_TESTS_FIXTURE_REGISTRY_HPP

#include <atomic>
#include <map>
#include <memory>
#include <set>
#include <string>
#include <thread>
#include <vector>

namespace httplib {
class Server;
}

namespace udocker::test {

/// In-process Docker-Registry-v2-shaped server for client tests:
/// bearer-token flow, manifests (plain and list), blobs. Content can
/// be tampered per digest to exercise integrity failures.
class FixtureRegistry {
public:
    FixtureRegistry();
    ~FixtureRegistry();

    /// Builds a schema-2 image from raw layer bytes and registers it.
    /// Returns the manifest digest.
    std::string add_image(const std::string& repository, const std::string& tag,
                          const std::vector<std::string>& layer_blobs);

    /// Registers a manifest list under `tag` whose entries point at
    /// already-added manifests (by digest) per architecture.
    void add_manifest_list(const std::string& repository, const std::string& tag,
                           const std::map<std::string, std::string>& arch_to_digest);

    void set_require_auth(bool on) { require_auth_ = on; }
    void set_reject_auth(bool on) { reject_auth_ = on; }
    /// Served bytes for this digest get their first byte flipped.
    void corrupt_blob(const std::string& digest) { corrupted_.insert(digest); }

    int port() const { return port_; }
    std::string host() const;  // "127.0.0.1:<port>"
    long blob_requests() const { return blob_requests_.load(); }
    const std::string& issued_token() const { return token_; }

private:
    void route();

    std::unique_ptr<httplib::Server> server_;
    std::thread thread_;
    int port_ = 0;
    bool require_auth_ = true;
    bool reject_auth_ = false;
    std::string token_ = "fixture-token-0123456789";
    std::set<std::string> corrupted_;
    std::atomic<long> blob_requests_{0};

    struct StoredManifest {
        std::string body;
        std::string media_type;
    };
    std::map<std::string, std::string> blobs_;                    // digest -> bytes
    std::map<std::string, StoredManifest> manifests_by_digest_;   // digest -> manifest
    std::map<std::string, StoredManifest> manifests_by_tag_;      // repo:tag -> manifest
};

}  // namespace udocker::test

#endif

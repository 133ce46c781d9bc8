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

#include "fixture_registry.hpp"

#include "udocker/sha256.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <stdexcept>

namespace udocker::test {

using nlohmann::json;

namespace {
constexpr const char* kManifestV2 = "application/vnd.docker.distribution.manifest.v2+json";
constexpr const char* kManifestList =
    "application/vnd.docker.distribution.manifest.list.v2+json";
constexpr const char* kConfigType = "application/vnd.docker.container.image.v1+json";
constexpr const char* kLayerType = "application/vnd.docker.image.rootfs.diff.tar";
}  // namespace

FixtureRegistry::FixtureRegistry() : server_(std::make_unique<httplib::Server>()) {
    route();
    port_ = server_->bind_to_any_port("127.0.0.1");
    if (port_ <= 0) throw std::runtime_error("fixture registry: bind failed");
    thread_ = std::thread([this] { server_->listen_after_bind(); });
    server_->wait_until_ready();
}

FixtureRegistry::~FixtureRegistry() {
    server_->stop();
    if (thread_.joinable()) thread_.join();
}

std::string FixtureRegistry::host() const { return "127.0.0.1:" + std::to_string(port_); }

std::string FixtureRegistry::add_image(const std::string& repository, const std::string& tag,
                                       const std::vector<std::string>& layer_blobs) {
    json config = {{"architecture", "amd64"},
                   {"os", "linux"},
                   {"config", {{"Cmd", json::array({"/bin/sh"})}, {"Env", json::array()}}}};
    std::string config_blob = config.dump(2);
    std::string config_digest = "sha256:" + sha256_hex(config_blob);
    blobs_[config_digest] = config_blob;

    json manifest = {{"schemaVersion", 2},
                     {"mediaType", kManifestV2},
                     {"config",
                      {{"mediaType", kConfigType},
                       {"size", config_blob.size()},
                       {"digest", config_digest}}}};
    manifest["layers"] = json::array();
    for (const auto& blob : layer_blobs) {
        std::string digest = "sha256:" + sha256_hex(blob);
        blobs_[digest] = blob;
        manifest["layers"].push_back(
            {{"mediaType", kLayerType}, {"size", blob.size()}, {"digest", digest}});
    }
    std::string body = manifest.dump(2);
    std::string mdigest = "sha256:" + sha256_hex(body);
    manifests_by_digest_[mdigest] = {body, kManifestV2};
    manifests_by_tag_[repository + ":" + tag] = {body, kManifestV2};
    return mdigest;
}

void FixtureRegistry::add_manifest_list(const std::string& repository, const std::string& tag,
                                        const std::map<std::string, std::string>& entries) {
    json list = {{"schemaVersion", 2}, {"mediaType", kManifestList}};
    list["manifests"] = json::array();
    for (const auto& [arch, digest] : entries) {
        const auto& m = manifests_by_digest_.at(digest);
        list["manifests"].push_back({{"mediaType", m.media_type},
                                     {"size", m.body.size()},
                                     {"digest", digest},
                                     {"platform", {{"architecture", arch}, {"os", "linux"}}}});
    }
    manifests_by_tag_[repository + ":" + tag] = {list.dump(2), kManifestList};
}

void FixtureRegistry::route() {
    auto authorized = [this](const httplib::Request& req) {
        if (!require_auth_) return true;
        return req.get_header_value("Authorization") == "Bearer " + token_;
    };
    auto challenge = [this](httplib::Response& res) {
        res.status = 401;
        res.set_header("WWW-Authenticate", "Bearer realm=\"http://127.0.0.1:" +
                                               std::to_string(port_) +
                                               "/token\",service=\"fixture-registry\"");
        res.set_content(R"({"errors":[{"code":"UNAUTHORIZED"}]})", "application/json");
    };

    server_->Get("/v2/", [=, this](const httplib::Request& req, httplib::Response& res) {
        if (!authorized(req)) return challenge(res);
        res.set_content("{}", "application/json");
    });

    server_->Get("/token", [this](const httplib::Request&, httplib::Response& res) {
        if (reject_auth_) {
            res.status = 401;
            res.set_content(R"({"details":"credentials rejected by fixture"})",
                            "application/json");
            return;
        }
        json body = {{"token", token_}, {"expires_in", 300}};
        res.set_content(body.dump(), "application/json");
    });

    server_->Get(R"(/v2/(.+)/manifests/(.+))",
                 [=, this](const httplib::Request& req, httplib::Response& res) {
                     if (!authorized(req)) return challenge(res);
                     std::string repo = req.matches[1];
                     std::string ref = req.matches[2];
                     const StoredManifest* found = nullptr;
                     if (auto it = manifests_by_digest_.find(ref);
                         it != manifests_by_digest_.end())
                         found = &it->second;
                     if (!found)
                         if (auto it = manifests_by_tag_.find(repo + ":" + ref);
                             it != manifests_by_tag_.end())
                             found = &it->second;
                     if (!found) {
                         res.status = 404;
                         res.set_content(R"({"errors":[{"code":"MANIFEST_UNKNOWN"}]})",
                                         "application/json");
                         return;
                     }
                     res.set_content(found->body, found->media_type);
                 });

    server_->Get(R"(/v2/(.+)/blobs/(sha256:[0-9a-f]{64}))",
                 [=, this](const httplib::Request& req, httplib::Response& res) {
                     if (!authorized(req)) return challenge(res);
                     blob_requests_++;
                     std::string digest = req.matches[2];
                     auto it = blobs_.find(digest);
                     if (it == blobs_.end()) {
                         res.status = 404;
                         res.set_content(R"({"errors":[{"code":"BLOB_UNKNOWN"}]})",
                                         "application/json");
                         return;
                     }
                     std::string body = it->second;
                     if (corrupted_.count(digest) && !body.empty()) body[0] ^= 0x01;
                     res.set_content(body, "application/octet-stream");
                 });
}

}  // namespace udocker::test

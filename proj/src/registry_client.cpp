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

#include "udocker/registry_client.hpp"

#include "udocker/errors.hpp"
#include "udocker/log.hpp"
#include "udocker/sha256.hpp"
#include "udocker/util.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <sys/utsname.h>

#include <atomic>
#include <mutex>
#include <thread>

namespace udocker {

using nlohmann::json;

namespace {

constexpr const char* kManifestV2 = "application/vnd.docker.distribution.manifest.v2+json";
constexpr const char* kManifestList =
    "application/vnd.docker.distribution.manifest.list.v2+json";
constexpr const char* kManifestV1 = "application/vnd.docker.distribution.manifest.v1+json";
constexpr const char* kOciManifest = "application/vnd.oci.image.manifest.v1+json";
constexpr const char* kOciIndex = "application/vnd.oci.image.index.v1+json";

// RFC 6750-ish challenge attributes: realm="...",service="...",...
std::map<std::string, std::string> parse_challenge(const std::string& header) {
    std::map<std::string, std::string> out;
    size_t pos = header.find(' ');
    std::string params = pos == std::string::npos ? "" : header.substr(pos + 1);
    size_t i = 0;
    while (i < params.size()) {
        size_t eq = params.find('=', i);
        if (eq == std::string::npos) break;
        std::string key = params.substr(i, eq - i);
        while (!key.empty() && (key.front() == ' ' || key.front() == ',')) key.erase(0, 1);
        std::string value;
        size_t j = eq + 1;
        if (j < params.size() && params[j] == '"') {
            size_t end = params.find('"', j + 1);
            if (end == std::string::npos) break;
            value = params.substr(j + 1, end - j - 1);
            i = end + 1;
        } else {
            size_t end = params.find(',', j);
            value = params.substr(j, end == std::string::npos ? std::string::npos : end - j);
            i = end == std::string::npos ? params.size() : end + 1;
        }
        out[key] = value;
    }
    return out;
}

LayerDescriptor descriptor_from(const json& j) {
    LayerDescriptor d;
    d.digest = j.at("digest").get<std::string>();
    d.size = j.value("size", 0ull);
    d.media_type = j.value("mediaType", "");
    if (!LayerDescriptor::digest_well_formed(d.digest))
        throw format_error("manifest carries unsupported digest: " + d.digest);
    return d;
}

}  // namespace

RegistryClient::RegistryClient(std::string registry_host, RegistryOptions opts)
    : host_(std::move(registry_host)), opts_(opts) {
    // the library index name and its actual registry endpoint differ
    if (host_ == "docker.io") host_ = "registry-1.docker.io";
}

std::string RegistryClient::base_url() const {
    return (opts_.insecure ? "http://" : "https://") + host_;
}

std::string RegistryClient::host_architecture() {
    struct utsname u{};
    ::uname(&u);
    std::string m = u.machine;
    if (m == "x86_64") return "amd64";
    if (m == "aarch64") return "arm64";
    if (m == "armv7l") return "arm";
    return m;
}

RegistryClient::Response RegistryClient::get(
    const std::string& path, const AuthToken& token,
    const std::vector<std::pair<std::string, std::string>>& headers, bool) {
    httplib::Client cli(base_url());
    cli.set_follow_location(true);
    cli.set_connection_timeout(15);
    cli.set_read_timeout(120);

    httplib::Headers h;
    for (auto& [k, v] : headers) h.emplace(k, v);
    if (!token.token.empty()) h.emplace("Authorization", "Bearer " + token.token);

    int attempt = 0;
    while (true) {
        auto res = cli.Get(path, h);
        if (res && res->status < 500) {
            Response out;
            out.status = res->status;
            out.body = res->body;
            out.content_type = res->get_header_value("Content-Type");
            out.www_authenticate = res->get_header_value("WWW-Authenticate");
            return out;
        }
        attempt++;
        if (attempt > opts_.retries)
            throw protocol_error("GET " + path + " failed after " +
                                 std::to_string(attempt) + " attempts" +
                                 (res ? " (status " + std::to_string(res->status) + ")"
                                      : " (connection error)"));
        auto delay = opts_.retry_base_delay * (1 << (attempt - 1));
        log::warn("transient registry failure on " + path + ", retrying");
        std::this_thread::sleep_for(delay);
    }
}

AuthToken RegistryClient::authenticate(const std::string& repository) {
    Response probe = get("/v2/", {}, {});
    if (probe.status != 401) return AuthToken{};  // no auth required

    if (probe.www_authenticate.empty())
        throw protocol_error("registry returned 401 without a WWW-Authenticate challenge");
    auto challenge = parse_challenge(probe.www_authenticate);
    if (!challenge.count("realm"))
        throw protocol_error("bearer challenge carries no realm: " + probe.www_authenticate);

    std::string scope = "repository:" + repository + ":pull";
    std::string realm = challenge["realm"];

    // the realm may live on a different host than the registry itself
    std::string url = realm;
    std::string query = "?scope=" + httplib::detail::encode_query_param(scope);
    if (challenge.count("service"))
        query += "&service=" + httplib::detail::encode_query_param(challenge["service"]);

    size_t scheme_end = url.find("://");
    if (scheme_end == std::string::npos)
        throw protocol_error("challenge realm is not a URL: " + realm);
    size_t path_start = url.find('/', scheme_end + 3);
    std::string origin = path_start == std::string::npos ? url : url.substr(0, path_start);
    std::string path = path_start == std::string::npos ? "/" : url.substr(path_start);

    httplib::Client cli(origin);
    cli.set_follow_location(true);
    httplib::Headers h;
    if (opts_.username && opts_.password) {
        std::string cred = *opts_.username + ":" + *opts_.password;
        h.emplace("Authorization",
                  "Basic " + httplib::detail::base64_encode(cred));
    }
    auto res = cli.Get(path + query, h);
    if (!res) throw protocol_error("token endpoint unreachable: " + realm);
    if (res->status != 200)
        throw protocol_error("authentication rejected by " + realm + " (status " +
                             std::to_string(res->status) + "): " + res->body);

    json doc;
    try {
        doc = json::parse(res->body);
    } catch (const json::exception&) {
        throw protocol_error("token endpoint returned malformed JSON");
    }
    AuthToken token;
    if (doc.contains("token"))
        token.token = doc["token"].get<std::string>();
    else if (doc.contains("access_token"))
        token.token = doc["access_token"].get<std::string>();
    else
        throw protocol_error("token endpoint response carries no token");
    token.scope = scope;
    token.expires_in = doc.value("expires_in", 300);
    return token;
}

Manifest RegistryClient::fetch_manifest(const ImageRef& ref, const AuthToken& token) {
    std::string accept = std::string(kManifestV2) + ", " + kManifestList + ", " +
                         kOciManifest + ", " + kOciIndex;
    std::string path = "/v2/" + ref.repository + "/manifests/" + ref.tag;
    Response res = get(path, token, {{"Accept", accept}});

    if (res.status == 404) throw not_found_error("image not found: " + ref.str());
    if (res.status == 401)
        throw protocol_error("registry rejected manifest request (401) for " + ref.str());
    if (res.status != 200)
        throw protocol_error("manifest request failed with status " +
                             std::to_string(res.status));

    json doc;
    try {
        doc = json::parse(res.body);
    } catch (const json::exception&) {
        throw format_error("manifest is not valid JSON");
    }

    std::string media = doc.value("mediaType", res.content_type);
    int schema = doc.value("schemaVersion", 0);

    if (media == kManifestV1 || schema == 1 || doc.contains("fsLayers"))
        throw format_error("legacy schema-1 manifests are not supported (" + ref.str() +
                           "); push a schema-2 image");

    if (media == kManifestList || media == kOciIndex) {
        std::string want = host_architecture();
        for (const auto& entry : doc.at("manifests")) {
            const auto& plat = entry.at("platform");
            if (plat.value("architecture", "") == want && plat.value("os", "linux") == "linux") {
                ImageRef sub = ref;
                sub.tag = entry.at("digest").get<std::string>();
                return fetch_manifest(sub, token);
            }
        }
        throw protocol_error("manifest list has no entry for architecture " + want);
    }

    if (media != kManifestV2 && media != kOciManifest && !doc.contains("layers"))
        throw format_error("unsupported manifest media type: " + media);

    Manifest m;
    m.schema_version = schema;
    m.media_type = media;
    m.config = descriptor_from(doc.at("config"));
    for (const auto& l : doc.at("layers")) m.layers.push_back(descriptor_from(l));
    return m;
}

std::string RegistryClient::fetch_blob(const std::string& repository,
                                       const std::string& digest, const AuthToken& token) {
    Response res = get("/v2/" + repository + "/blobs/" + digest, token, {});
    if (res.status == 404) throw not_found_error("blob not found: " + digest);
    if (res.status != 200)
        throw protocol_error("blob request for " + digest + " failed with status " +
                             std::to_string(res.status));
    return res.body;
}

PullReport RegistryClient::pull(const ImageRef& ref, RepoStore& store) {
    if (!store.initialized())
        throw io_error("local repository not initialized at " + store.root().string());

    AuthToken token = authenticate(ref.repository);
    Manifest manifest = fetch_manifest(ref, token);

    std::string config_blob = fetch_blob(ref.repository, manifest.config.digest, token);
    if ("sha256:" + sha256_hex(config_blob) != manifest.config.digest)
        throw integrity_error("config blob digest mismatch for " + ref.str());

    PullReport report;
    report.layers_total = manifest.layers.size();

    // bounded-parallel layer downloads; the store's per-digest locking
    // makes concurrent stores safe
    std::atomic<size_t> next{0};
    std::atomic<size_t> downloaded{0}, cached{0};
    std::mutex err_mu;
    std::optional<Error> first_error;

    int workers = std::max(1, std::min<int>(opts_.max_parallel,
                                            static_cast<int>(manifest.layers.size())));
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; w++) {
        pool.emplace_back([&] {
            while (true) {
                size_t i = next.fetch_add(1);
                if (i >= manifest.layers.size()) return;
                {
                    std::lock_guard<std::mutex> g(err_mu);
                    if (first_error) return;  // stop picking up work
                }
                const LayerDescriptor& layer = manifest.layers[i];
                try {
                    if (store.has_layer(layer.digest)) {
                        cached++;
                        continue;
                    }
                    std::string blob = fetch_blob(ref.repository, layer.digest, token);
                    store.store_layer(layer, blob);
                    downloaded++;
                } catch (const Error& e) {
                    std::lock_guard<std::mutex> g(err_mu);
                    if (!first_error) first_error = e;
                    return;
                } catch (const std::exception& e) {
                    std::lock_guard<std::mutex> g(err_mu);
                    if (!first_error) first_error = io_error(e.what());
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (first_error) throw *first_error;  // valid layers stay; image not registered

    report.layers_downloaded = downloaded;
    report.layers_cached = cached;

    std::vector<std::string> digests;
    for (const auto& l : manifest.layers) digests.push_back(l.digest);
    json manifest_json = {{"schemaVersion", manifest.schema_version},
                          {"mediaType", manifest.media_type},
                          {"config",
                           {{"digest", manifest.config.digest},
                            {"size", manifest.config.size},
                            {"mediaType", manifest.config.media_type}}}};
    manifest_json["layers"] = json::array();
    for (const auto& l : manifest.layers)
        manifest_json["layers"].push_back(
            {{"digest", l.digest}, {"size", l.size}, {"mediaType", l.media_type}});

    store.register_image(ref, manifest_json.dump(2) + "\n", config_blob, digests);
    return report;
}

}  // namespace udocker

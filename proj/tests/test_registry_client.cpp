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

#include <doctest.h>

#include "support/fixture_registry.hpp"
#include "support/test_util.hpp"

#include "udocker/errors.hpp"
#include "udocker/registry_client.hpp"
#include "udocker/repo_store.hpp"
#include "udocker/sha256.hpp"

#include <string>

using namespace udocker;
using namespace udocker::test;

namespace {

RegistryOptions insecure_opts() {
    RegistryOptions o;
    o.insecure = true;
    o.retries = 1;
    o.retry_base_delay = std::chrono::milliseconds(10);
    return o;
}

std::string some_layer(int salt) {
    return "layer-bytes-" + std::to_string(salt) + std::string(200, 'a' + salt % 20);
}

}  // namespace

TEST_CASE("authenticate follows the bearer challenge to a token") {
    FixtureRegistry reg;
    RegistryClient client(reg.host(), insecure_opts());
    AuthToken token = client.authenticate("fixture/app");
    CHECK(token.token == reg.issued_token());
    CHECK(token.scope == "repository:fixture/app:pull");
}

TEST_CASE("a registry that never challenges yields an empty token") {
    FixtureRegistry reg;
    reg.set_require_auth(false);
    RegistryClient client(reg.host(), insecure_opts());
    AuthToken token = client.authenticate("fixture/app");
    CHECK(token.token.empty());

    // unauthenticated requests succeed end to end
    reg.add_image("fixture/app", "v1", {some_layer(1)});
    auto manifest = client.fetch_manifest(ImageRef::parse(reg.host() + "/fixture/app:v1"),
                                          token);
    CHECK(manifest.layers.size() == 1);
}

TEST_CASE("rejected credentials surface the registry message") {
    FixtureRegistry reg;
    reg.set_reject_auth(true);
    RegistryClient client(reg.host(), insecure_opts());
    try {
        client.authenticate("fixture/private");
        FAIL("expected an authentication error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("credentials rejected by fixture") !=
              std::string::npos);
    }
}

TEST_CASE("fetch_manifest returns layers in manifest order") {
    FixtureRegistry reg;
    std::string l1 = some_layer(1), l2 = some_layer(2);
    reg.add_image("fixture/app", "v1", {l1, l2});

    RegistryClient client(reg.host(), insecure_opts());
    ImageRef ref = ImageRef::parse(reg.host() + "/fixture/app:v1");
    AuthToken token = client.authenticate(ref.repository);
    Manifest m = client.fetch_manifest(ref, token);

    REQUIRE(m.layers.size() == 2);
    CHECK(m.layers[0].digest == "sha256:" + sha256_hex(l1));
    CHECK(m.layers[1].digest == "sha256:" + sha256_hex(l2));
    CHECK(m.config.digest.substr(0, 7) == "sha256:");
}

TEST_CASE("manifest lists resolve to the host architecture") {
    FixtureRegistry reg;
    std::string amd64_digest = reg.add_image("fixture/multi", "amd64-only", {some_layer(3)});
    std::string arm64_digest = reg.add_image("fixture/multi", "arm64-only", {some_layer(4)});
    reg.add_manifest_list("fixture/multi", "v1",
                          {{"amd64", amd64_digest}, {"arm64", arm64_digest}});

    RegistryClient client(reg.host(), insecure_opts());
    ImageRef ref = ImageRef::parse(reg.host() + "/fixture/multi:v1");
    AuthToken token = client.authenticate(ref.repository);
    Manifest m = client.fetch_manifest(ref, token);

    REQUIRE(RegistryClient::host_architecture() == "amd64");
    REQUIRE(m.layers.size() == 1);
    CHECK(m.layers[0].digest == "sha256:" + sha256_hex(some_layer(3)));
}

TEST_CASE("absent tags map to image-not-found") {
    FixtureRegistry reg;
    RegistryClient client(reg.host(), insecure_opts());
    ImageRef ref = ImageRef::parse(reg.host() + "/fixture/ghost:nope");
    AuthToken token = client.authenticate(ref.repository);
    try {
        client.fetch_manifest(ref, token);
        FAIL("expected not-found");
    } catch (const Error& e) {
        CHECK(e.cls() == ErrorClass::NotFound);
    }
}

TEST_CASE("pull stores all blobs and registers the image") {
    FixtureRegistry reg;
    std::string l1 = some_layer(5), l2 = some_layer(6);
    reg.add_image("fixture/app", "v2", {l1, l2});

    TempDir tmp;
    RepoStore store(tmp / "repo");
    store.init();

    RegistryClient client(reg.host(), insecure_opts());
    ImageRef ref = ImageRef::parse(reg.host() + "/fixture/app:v2");
    PullReport report = client.pull(ref, store);

    CHECK(report.layers_total == 2);
    CHECK(report.layers_downloaded == 2);
    CHECK(report.layers_cached == 0);
    CHECK(store.layer_count() == 2);
    REQUIRE(store.has_image(ref));

    auto images = store.list_images();
    REQUIRE(images.size() == 1);
    CHECK(images[0] == ref);

    auto img = store.load_image(ref);
    CHECK(img.layer_digests ==
          std::vector<std::string>{"sha256:" + sha256_hex(l1), "sha256:" + sha256_hex(l2)});

    SUBCASE("a second pull downloads zero blobs") {
        long before = reg.blob_requests();
        PullReport second = client.pull(ref, store);
        CHECK(second.layers_downloaded == 0);
        CHECK(second.layers_cached == 2);
        // only the config blob is re-fetched; layer blobs come from cache
        CHECK(reg.blob_requests() == before + 1);
    }
}

TEST_CASE("a corrupted layer aborts the pull and keeps the repo consistent") {
    FixtureRegistry reg;
    std::string good = some_layer(7), bad = some_layer(8);
    reg.add_image("fixture/app", "v3", {good, bad});
    reg.corrupt_blob("sha256:" + sha256_hex(bad));

    TempDir tmp;
    RepoStore store(tmp / "repo");
    store.init();

    RegistryClient client(reg.host(), insecure_opts());
    ImageRef ref = ImageRef::parse(reg.host() + "/fixture/app:v3");
    RegistryOptions seq = insecure_opts();
    seq.max_parallel = 1;  // deterministic: good layer lands first
    RegistryClient seq_client(reg.host(), seq);

    try {
        seq_client.pull(ref, store);
        FAIL("expected an integrity error");
    } catch (const Error& e) {
        CHECK(e.cls() == ErrorClass::Integrity);
    }
    CHECK(!store.has_image(ref));
    CHECK(store.list_images().empty());
    // the valid layer that already landed stays (resumable pulls)
    CHECK(store.has_layer("sha256:" + sha256_hex(good)));
    CHECK(!store.has_layer("sha256:" + sha256_hex(bad)));
}

TEST_CASE("pull against an uninitialized repository fails fast") {
    FixtureRegistry reg;
    reg.add_image("fixture/app", "v1", {});
    TempDir tmp;
    RepoStore store(tmp / "nothere");
    RegistryClient client(reg.host(), insecure_opts());
    CHECK_THROWS_AS(client.pull(ImageRef::parse(reg.host() + "/fixture/app:v1"), store),
                    Error);
}

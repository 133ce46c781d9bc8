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

#include <functional>

#include "support/layer_stack_gen.hpp"
#include "support/test_util.hpp"

#include "udocker/errors.hpp"
#include "udocker/layer_assembler.hpp"
#include "udocker/tar.hpp"
#include "udocker/util.hpp"

#include <sys/stat.h>

using namespace udocker;
using namespace udocker::test;

namespace {

fs::path write_layer(const fs::path& dir, const std::string& name,
                     const std::function<void(tar::Writer&)>& fill) {
    fs::path p = dir / name;
    tar::Writer w(p);
    fill(w);
    w.finish();
    return p;
}

}  // namespace

TEST_CASE("tar round-trips entries through the reader") {
    TempDir tmp;
    fs::path tarfile = write_layer(tmp.path(), "t.tar", [](tar::Writer& w) {
        w.add_directory("a", 0755);
        w.add_file("a/b.txt", 0644, "hello world");
        w.add_symlink("a/link", "/etc");
        std::string longname(180, 'x');
        w.add_file("a/" + longname, 0600, "long-name payload");
        w.add_hardlink("a/hard", "a/b.txt");
    });

    tar::Reader rd(tar::open_archive(tarfile));
    auto e1 = rd.next();
    REQUIRE(e1);
    CHECK(e1->name == "a/");
    CHECK(e1->type == tar::EntryType::Directory);

    auto e2 = rd.next();
    REQUIRE(e2);
    CHECK(e2->name == "a/b.txt");
    CHECK(e2->size == 11);
    CHECK(rd.read_all_data() == "hello world");

    auto e3 = rd.next();
    REQUIRE(e3);
    CHECK(e3->type == tar::EntryType::Symlink);
    CHECK(e3->link_target == "/etc");

    auto e4 = rd.next();
    REQUIRE(e4);
    CHECK(e4->name == "a/" + std::string(180, 'x'));
    CHECK(rd.read_all_data() == "long-name payload");

    auto e5 = rd.next();
    REQUIRE(e5);
    CHECK(e5->type == tar::EntryType::Hardlink);
    CHECK(e5->link_target == "a/b.txt");

    CHECK(!rd.next());
}

TEST_CASE("tar reader accepts system-tar archives and gzip framing") {
    TempDir tmp;
    fs::path src = tmp / "src";
    fs::create_directories(src / "sub");
    write_file(src / "sub/f1", "one");
    write_file(src / "f2", "two");

    fs::path plain = tmp / "sys.tar";
    REQUIRE(run_process({"tar", "-cf", plain.string(), "-C", src.string(), "."}).exit_code == 0);

    fs::path gz = tmp / "sys.tar.gz";
    write_file(gz, gzip_compress(read_file(plain)));

    for (const fs::path& archive : {plain, gz}) {
        tar::Reader rd(tar::open_archive(archive));
        std::map<std::string, std::string> files;
        while (auto e = rd.next())
            if (e->type == tar::EntryType::Regular) files[e->name] = rd.read_all_data();
        CHECK(files.size() == 2);
        CHECK(files.count("./sub/f1"));
        CHECK(files["./f2"] == "two");
    }
}

TEST_CASE("flatten: whiteout hides the lower-layer file") {
    TempDir tmp;
    auto l1 = write_layer(tmp.path(), "l1.tar", [](tar::Writer& w) {
        w.add_directory("a", 0755);
        w.add_file("a/b.txt", 0644, "x");
    });
    auto l2 = write_layer(tmp.path(), "l2.tar", [](tar::Writer& w) {
        w.add_file("a/.wh.b.txt", 0644, "");
    });

    fs::path dest = tmp / "rootfs";
    layers::flatten({l1, l2}, dest);

    CHECK(fs::is_directory(dest / "a"));
    CHECK(!fs::exists(dest / "a/b.txt"));
    CHECK(!fs::exists(dest / "a/.wh.b.txt"));
}

TEST_CASE("flatten: single layer equals plain extraction") {
    TempDir tmp;
    auto l1 = write_layer(tmp.path(), "l1.tar", [](tar::Writer& w) {
        w.add_directory("etc", 0755);
        w.add_file("etc/msg", 0644, "inside");
        w.add_symlink("etc/alias", "msg");
    });
    fs::path dest = tmp / "rootfs";
    layers::flatten({l1}, dest);

    fs::path oracle = tmp / "oracle";
    naive_flatten_oracle({l1}, oracle);
    CHECK(snapshot_tree(dest) == snapshot_tree(oracle));
}

TEST_CASE("flatten: opaque marker wipes lower directory content") {
    TempDir tmp;
    auto l1 = write_layer(tmp.path(), "l1.tar", [](tar::Writer& w) {
        w.add_directory("d", 0755);
        w.add_file("d/old1", 0644, "old");
        w.add_file("d/old2", 0644, "old");
    });
    auto l2 = write_layer(tmp.path(), "l2.tar", [](tar::Writer& w) {
        w.add_file("d/.wh..wh..opq", 0644, "");
        w.add_file("d/new", 0644, "new");
    });
    fs::path dest = tmp / "rootfs";
    layers::flatten({l1, l2}, dest);
    CHECK(!fs::exists(dest / "d/old1"));
    CHECK(!fs::exists(dest / "d/old2"));
    CHECK(read_file(dest / "d/new") == "new");
}

TEST_CASE("flatten matches the naive oracle on randomized stacks") {
    for (unsigned seed = 1; seed <= 25; seed++) {
        TempDir tmp;
        int layer_count = 2 + static_cast<int>(seed % 4);
        auto layers_v = generate_layer_stack(tmp.path(), seed, layer_count);

        fs::path mine = tmp / "mine";
        fs::path oracle = tmp / "oracle";
        layers::flatten(layers_v, mine);
        naive_flatten_oracle(layers_v, oracle);

        auto a = snapshot_tree(mine);
        auto b = snapshot_tree(oracle);
        if (a != b) {
            for (auto& [k, v] : a)
                if (!b.count(k) || !(b[k] == v)) MESSAGE("only/diff in mine: " << k);
            for (auto& [k, v] : b)
                if (!a.count(k)) MESSAGE("only in oracle: " << k);
        }
        REQUIRE(a == b);
    }
}

TEST_CASE("flatten: whiteout stacking is associative across split points") {
    // flatten(L1..Ln) == flatten(flatten(L1..Lk) as one layer, Lk+1..Ln)
    for (unsigned seed = 100; seed < 106; seed++) {
        TempDir tmp;
        auto layers_v = generate_layer_stack(tmp.path(), seed, 4);

        fs::path full = tmp / "full";
        layers::flatten(layers_v, full);

        for (size_t k = 1; k < layers_v.size(); k++) {
            fs::path head = tmp / ("head" + std::to_string(k));
            layers::flatten(std::vector<fs::path>(layers_v.begin(), layers_v.begin() + k),
                            head);
            fs::path head_tar = tmp / ("head" + std::to_string(k) + ".tar");
            layers::export_tree(head, head_tar);

            std::vector<fs::path> combined{head_tar};
            combined.insert(combined.end(), layers_v.begin() + k, layers_v.end());
            fs::path recombined = tmp / ("recombined" + std::to_string(k));
            layers::flatten(combined, recombined);

            REQUIRE(snapshot_tree(recombined) == snapshot_tree(full));
        }
    }
}

TEST_CASE("flatten rejects traversal and absolute entries") {
    TempDir tmp;
    SUBCASE("dot-dot") {
        auto evil = write_layer(tmp.path(), "evil.tar", [](tar::Writer& w) {
            w.add_file("a/../../escape", 0644, "boom");
        });
        fs::path dest = tmp / "rootfs";
        CHECK_THROWS_AS(layers::flatten({evil}, dest), Error);
        CHECK(!fs::exists(tmp / "escape"));
    }
    SUBCASE("symlink write-through stays inside the destination") {
        auto sneaky = write_layer(tmp.path(), "sneaky.tar", [&](tar::Writer& w) {
            w.add_symlink("out", "/abs/target");
            w.add_file("out/inner", 0644, "contained");
        });
        fs::path dest = tmp / "rootfs2";
        layers::flatten({sneaky}, dest);
        // the absolute symlink target is reinterpreted under dest
        CHECK(read_file(dest / "abs/target/inner") == "contained");
        CHECK(!fs::exists("/abs"));
    }
    SUBCASE("dot-dot symlink clamps at the destination root") {
        auto climb = write_layer(tmp.path(), "climb.tar", [&](tar::Writer& w) {
            w.add_symlink("up", "../../../..");
            w.add_file("up/clamped", 0644, "still inside");
        });
        fs::path dest = tmp / "rootfs3";
        layers::flatten({climb}, dest);
        CHECK(read_file(dest / "clamped") == "still inside");
    }
}

TEST_CASE("flatten skips fifos and devices with a warning") {
    TempDir tmp;
    auto l1 = write_layer(tmp.path(), "l1.tar", [](tar::Writer& w) {
        w.add_file("keep", 0644, "kept");
        w.add_fifo("pipe", 0644);
    });
    fs::path dest = tmp / "rootfs";
    layers::flatten({l1}, dest);
    CHECK(fs::exists(dest / "keep"));
    CHECK(!fs::exists(dest / "pipe"));
}

TEST_CASE("adjust_permissions grants owner access everywhere") {
    TempDir tmp;
    fs::path root = tmp / "rootfs";
    fs::create_directories(root);

    SUBCASE("file with mode 000 becomes readable") {
        write_file(root / "hidden", "secret");
        ::chmod((root / "hidden").c_str(), 0);
        layers::adjust_permissions(root);
        struct stat st{};
        REQUIRE(::stat((root / "hidden").c_str(), &st) == 0);
        CHECK((st.st_mode & S_IRUSR) != 0);
    }

    SUBCASE("755 file keeps its executable bit") {
        write_file(root / "tool", "#!/bin/sh\n");
        ::chmod((root / "tool").c_str(), 0755);
        layers::adjust_permissions(root);
        struct stat st{};
        REQUIRE(::stat((root / "tool").c_str(), &st) == 0);
        CHECK((st.st_mode & 07777) == 0755);
    }

    SUBCASE("all 512 owner/group/other triples gain the required owner bits") {
        for (int mode = 0; mode < 512; mode++) {
            fs::path d = root / ("d" + std::to_string(mode));
            fs::create_directories(d);
            write_file(d / "f", "x");
            ::chmod((d / "f").c_str(), static_cast<mode_t>(mode));
            ::chmod(d.c_str(), static_cast<mode_t>(mode));
        }
        layers::adjust_permissions(root);
        for (int mode = 0; mode < 512; mode++) {
            fs::path d = root / ("d" + std::to_string(mode));
            struct stat st{};
            REQUIRE(::stat(d.c_str(), &st) == 0);
            CHECK((st.st_mode & 0700) == 0700);  // dir: rwx for owner
            REQUIRE(::stat((d / "f").c_str(), &st) == 0);
            CHECK((st.st_mode & S_IRUSR) != 0);  // file: at least readable
            // non-owner bits untouched
            CHECK(static_cast<int>(st.st_mode & 077) == (mode & 077));
        }
    }

    SUBCASE("idempotent") {
        write_file(root / "f", "x");
        ::chmod((root / "f").c_str(), 0401);
        layers::adjust_permissions(root);
        auto first = tree_digest(root);
        layers::adjust_permissions(root);
        CHECK(tree_digest(root) == first);
    }
}

TEST_CASE("export/import round-trips a tree") {
    TempDir tmp;
    fs::path root = tmp / "rootfs";
    fs::create_directories(root / "a/b");
    write_file(root / "a/f1", "file one");
    write_file(root / "a/b/f2", std::string(100000, 'z'));
    fs::create_symlink("/a/f1", root / "lnk");
    fs::create_symlink("dangling", root / "lnk2");
    (void)!::link((root / "a/f1").c_str(), (root / "hard").c_str());

    fs::path tarfile = tmp / "export.tar";
    layers::export_tree(root, tarfile);

    fs::path back = tmp / "imported";
    layers::import_tree(tarfile, back);

    CHECK(snapshot_tree(back) == snapshot_tree(root));

    // hardlink preserved as one inode
    struct stat s1{}, s2{};
    REQUIRE(::stat((back / "a/f1").c_str(), &s1) == 0);
    REQUIRE(::stat((back / "hard").c_str(), &s2) == 0);
    CHECK(s1.st_ino == s2.st_ino);
}

TEST_CASE("export skips named pipes with a warning") {
    TempDir tmp;
    fs::path root = tmp / "rootfs";
    fs::create_directories(root);
    write_file(root / "keep", "data");
    REQUIRE(::mkfifo((root / "pipe").c_str(), 0644) == 0);

    fs::path tarfile = tmp / "export.tar";
    layers::export_tree(root, tarfile);

    fs::path back = tmp / "imported";
    layers::import_tree(tarfile, back);
    CHECK(fs::exists(back / "keep"));
    CHECK(!fs::exists(back / "pipe"));
}

TEST_CASE("import of an empty tar yields an empty valid tree") {
    TempDir tmp;
    fs::path tarfile = tmp / "empty.tar";
    {
        tar::Writer w(tarfile);
        w.finish();
    }
    fs::path dest = tmp / "rootfs";
    layers::import_tree(tarfile, dest);
    CHECK(fs::is_directory(dest));
    CHECK(fs::is_empty(dest));
}

TEST_CASE("corrupt archive raises a format error") {
    TempDir tmp;
    fs::path bad = tmp / "bad.tar";
    write_file(bad, std::string(1024, 'A'));
    fs::path dest = tmp / "rootfs";
    CHECK_THROWS_AS(layers::flatten({bad}, dest), Error);
}

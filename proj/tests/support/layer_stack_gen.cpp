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

#include "layer_stack_gen.hpp"

#include "test_util.hpp"
#include "udocker/tar.hpp"
#include "udocker/util.hpp"

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <stdexcept>

namespace udocker::test {

namespace {

// model of the union view, enough to pick plausible targets
struct Model {
    std::set<std::string> dirs;      // relative paths
    std::set<std::string> files;
    std::set<std::string> symlinks;

    std::vector<std::string> real_dirs_with_root() const {
        std::vector<std::string> out{""};
        out.insert(out.end(), dirs.begin(), dirs.end());
        return out;
    }
    std::vector<std::string> entries() const {
        std::vector<std::string> out;
        out.insert(out.end(), dirs.begin(), dirs.end());
        out.insert(out.end(), files.begin(), files.end());
        out.insert(out.end(), symlinks.begin(), symlinks.end());
        return out;
    }
    void erase_subtree(const std::string& p) {
        auto wipe = [&](std::set<std::string>& s) {
            for (auto it = s.begin(); it != s.end();) {
                if (*it == p || it->rfind(p + "/", 0) == 0)
                    it = s.erase(it);
                else
                    ++it;
            }
        };
        wipe(dirs);
        wipe(files);
        wipe(symlinks);
    }
};

std::string basename_of(const std::string& p) {
    size_t s = p.rfind('/');
    return s == std::string::npos ? p : p.substr(s + 1);
}
std::string dirname_of(const std::string& p) {
    size_t s = p.rfind('/');
    return s == std::string::npos ? "" : p.substr(0, s);
}

template <typename T>
const T& pick(std::mt19937& rng, const std::vector<T>& v) {
    return v[rng() % v.size()];
}

// a path is usable as a parent only if no prefix of it is a symlink
bool under_symlink(const Model& m, const std::string& p) {
    std::string cur;
    for (const auto& comp : udocker::split(p, '/')) {
        cur = cur.empty() ? comp : cur + "/" + comp;
        if (m.symlinks.count(cur)) return true;
    }
    return false;
}

}  // namespace

std::vector<fs::path> generate_layer_stack(const fs::path& dir, unsigned seed,
                                           int layer_count) {
    std::mt19937 rng(seed);
    Model model;
    std::vector<fs::path> out;
    int name_counter = 0;

    for (int layer = 0; layer < layer_count; layer++) {
        fs::path tar_path = dir / ("layer" + std::to_string(layer) + ".tar");
        // entries for this layer, tracked so names stay unique per layer
        std::set<std::string> this_layer;
        // paths a same-layer hardlink depends on; deletions must avoid
        // them or extraction order breaks
        std::set<std::string> pinned;
        auto pins = [&pinned](const std::string& victim) {
            for (const auto& t : pinned)
                if (t == victim || t.rfind(victim + "/", 0) == 0) return true;
            return false;
        };
        Model next = model;

        tar::Writer w(tar_path);
        int entry_count = 3 + static_cast<int>(rng() % 8);
        for (int i = 0; i < entry_count; i++) {
            int kind = static_cast<int>(rng() % 10);
            auto fresh_name = [&](const char* stem) {
                return std::string(stem) + std::to_string(name_counter++);
            };
            auto choose_parent = [&]() -> std::string {
                auto dirs = next.real_dirs_with_root();
                std::vector<std::string> ok;
                for (auto& d : dirs)
                    if (d.empty() || !under_symlink(next, d)) ok.push_back(d);
                return pick(rng, ok);
            };

            if (kind <= 2) {  // new or overwriting file
                std::string parent = choose_parent();
                std::string rel;
                bool overwrite = !next.files.empty() && rng() % 3 == 0;
                if (overwrite) {
                    auto files = std::vector<std::string>(next.files.begin(), next.files.end());
                    rel = pick(rng, files);
                    if (under_symlink(next, rel)) overwrite = false;
                }
                if (!overwrite)
                    rel = parent.empty() ? fresh_name("f") : parent + "/" + fresh_name("f");
                if (this_layer.count(rel)) continue;
                std::string content = "layer" + std::to_string(layer) + ":" + rel + ":" +
                                      std::to_string(rng() % 100000);
                w.add_file(rel, 0644, content, 1000000 + layer);
                this_layer.insert(rel);
                next.symlinks.erase(rel);
                next.dirs.erase(rel);
                next.files.insert(rel);
            } else if (kind <= 4) {  // new directory
                std::string parent = choose_parent();
                std::string rel =
                    parent.empty() ? fresh_name("d") : parent + "/" + fresh_name("d");
                if (this_layer.count(rel)) continue;
                w.add_directory(rel, 0755, 1000000 + layer);
                this_layer.insert(rel);
                next.dirs.insert(rel);
            } else if (kind == 5) {  // symlink (absolute or relative target)
                std::string parent = choose_parent();
                std::string rel =
                    parent.empty() ? fresh_name("s") : parent + "/" + fresh_name("s");
                if (this_layer.count(rel)) continue;
                std::string target;
                auto entries = next.entries();
                if (!entries.empty() && rng() % 2 == 0) {
                    target = "/" + pick(rng, entries);
                } else if (!entries.empty() && rng() % 2 == 0) {
                    target = pick(rng, entries);  // relative-ish, may dangle
                } else {
                    target = "dangling" + std::to_string(rng() % 10);
                }
                w.add_symlink(rel, target, 1000000 + layer);
                this_layer.insert(rel);
                next.symlinks.insert(rel);
            } else if (kind == 6) {  // hardlink to an existing file
                std::vector<std::string> candidates;
                for (auto& f : next.files)
                    if (!under_symlink(next, f)) candidates.push_back(f);
                if (candidates.empty()) continue;
                std::string target = pick(rng, candidates);
                std::string parent = choose_parent();
                std::string rel =
                    parent.empty() ? fresh_name("h") : parent + "/" + fresh_name("h");
                if (this_layer.count(rel)) continue;
                w.add_hardlink(rel, target, 1000000 + layer);
                this_layer.insert(rel);
                pinned.insert(target);
                next.files.insert(rel);
            } else if (kind == 7 && layer > 0) {  // whiteout of a lower entry
                auto entries = model.entries();
                if (entries.empty()) continue;
                std::string victim = pick(rng, entries);
                if (under_symlink(next, victim) || pins(victim)) continue;
                std::string wh = dirname_of(victim);
                wh = wh.empty() ? ".wh." + basename_of(victim)
                                : wh + "/.wh." + basename_of(victim);
                if (this_layer.count(wh)) continue;
                w.add_file(wh, 0644, "", 1000000 + layer);
                this_layer.insert(wh);
                next.erase_subtree(victim);
                // sometimes resurrect the name as a fresh file
                if (rng() % 2 == 0 && !this_layer.count(victim)) {
                    w.add_file(victim, 0644, "resurrected:" + victim, 1000000 + layer);
                    this_layer.insert(victim);
                    next.files.insert(victim);
                }
            } else if (kind >= 8 && layer > 0) {  // opaque directory
                std::vector<std::string> candidates;
                for (auto& d : model.dirs)
                    if (!under_symlink(next, d)) candidates.push_back(d);
                if (candidates.empty()) continue;
                std::string victim = pick(rng, candidates);
                if (pins(victim)) continue;
                std::string marker = victim + "/.wh..wh..opq";
                if (this_layer.count(marker)) continue;
                w.add_file(marker, 0644, "", 1000000 + layer);
                this_layer.insert(marker);
                // model: children of victim vanish, dir itself stays
                std::vector<std::string> doomed;
                for (auto& e : next.entries())
                    if (e.rfind(victim + "/", 0) == 0) doomed.push_back(e);
                for (auto& e : doomed) next.erase_subtree(e);
                next.dirs.insert(victim);
                if (rng() % 2 == 0) {
                    std::string child = victim + "/" + fresh_name("o");
                    if (!this_layer.count(child)) {
                        w.add_file(child, 0644, "post-opaque", 1000000 + layer);
                        this_layer.insert(child);
                        next.files.insert(child);
                    }
                }
            }
        }
        w.finish();
        model = next;

        // every third layer travels gzip-compressed
        if (layer % 3 == 2) {
            std::string raw = read_file(tar_path);
            fs::path gz = dir / ("layer" + std::to_string(layer) + ".tar.gz");
            write_file(gz, gzip_compress(raw));
            fs::remove(tar_path);
            out.push_back(gz);
        } else {
            out.push_back(tar_path);
        }
    }
    return out;
}

void naive_flatten_oracle(const std::vector<fs::path>& layer_tars, const fs::path& dest) {
    fs::create_directories(dest);
    for (const auto& layer : layer_tars) {
        ProcessResult listing = run_process({"tar", "-tf", layer.string()});
        if (listing.exit_code != 0)
            throw std::runtime_error("oracle: tar -t failed: " + listing.err);

        // deletions first (whiteouts + opaque markers), from the listing
        for (auto& raw : split(listing.out, '\n')) {
            if (raw.empty()) continue;
            std::string name = raw;
            while (!name.empty() && name.back() == '/') name.pop_back();
            std::string base = basename_of(name);
            if (base == ".wh..wh..opq") {
                fs::path dir = dest / dirname_of(name);
                std::error_code ec;
                if (fs::is_directory(dir, ec))
                    for (auto& child : fs::directory_iterator(dir, ec))
                        fs::remove_all(child.path(), ec);
            } else if (base.rfind(".wh.", 0) == 0) {
                std::string victim = base.substr(4);
                std::string d = dirname_of(name);
                fs::path victim_path = dest / (d.empty() ? victim : d + "/" + victim);
                std::error_code ec;
                fs::remove_all(victim_path, ec);
            }
        }

        ProcessResult x = run_process({"tar", "-xf", layer.string(), "-C", dest.string(),
                                       "--exclude=.wh.*", "--exclude=*/.wh.*",
                                       "--no-same-owner",
                                       "--unlink-first", "--recursive-unlink"});
        if (x.exit_code != 0)
            throw std::runtime_error("oracle: tar -x failed: " + x.err);
    }
}

}  // namespace udocker::test

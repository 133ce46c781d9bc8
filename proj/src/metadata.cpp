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

#include "udocker/metadata.hpp"

#include "udocker/errors.hpp"
#include "udocker/log.hpp"
#include "udocker/util.hpp"

#include <nlohmann/json.hpp>

#include <pwd.h>
#include <unistd.h>

namespace udocker {

using nlohmann::json;

std::optional<ExecMode> parse_exec_mode(const std::string& s) {
    if (s == "P1") return ExecMode::P1;
    if (s == "P2") return ExecMode::P2;
    if (s == "F1") return ExecMode::F1;
    if (s == "F2") return ExecMode::F2;
    if (s == "F3") return ExecMode::F3;
    if (s == "F4") return ExecMode::F4;
    if (s == "R1") return ExecMode::R1;
    return std::nullopt;
}

std::string exec_mode_name(ExecMode m) {
    switch (m) {
        case ExecMode::P1: return "P1";
        case ExecMode::P2: return "P2";
        case ExecMode::F1: return "F1";
        case ExecMode::F2: return "F2";
        case ExecMode::F3: return "F3";
        case ExecMode::F4: return "F4";
        case ExecMode::R1: return "R1";
    }
    return "P1";
}

static std::vector<std::string> string_list(const json& j, const char* key) {
    std::vector<std::string> out;
    if (!j.contains(key) || j[key].is_null()) return out;
    if (!j[key].is_array())
        throw format_error(std::string("image config: ") + key + " is not a list");
    for (const auto& item : j[key]) out.push_back(item.get<std::string>());
    return out;
}

ContainerConfig parse_config(const std::string& config_json) {
    json doc;
    try {
        doc = json::parse(config_json);
    } catch (const json::exception& e) {
        throw format_error(std::string("image config is not valid JSON: ") + e.what());
    }
    ContainerConfig cfg;
    if (!doc.contains("config") || doc["config"].is_null()) return cfg;
    const json& c = doc["config"];

    cfg.entrypoint = string_list(c, "Entrypoint");
    cfg.cmd = string_list(c, "Cmd");
    cfg.env = string_list(c, "Env");
    if (c.contains("WorkingDir") && c["WorkingDir"].is_string())
        cfg.working_dir = c["WorkingDir"].get<std::string>();
    if (c.contains("User") && c["User"].is_string())
        cfg.user = c["User"].get<std::string>();
    if (c.contains("Volumes") && c["Volumes"].is_object())
        for (auto it = c["Volumes"].begin(); it != c["Volumes"].end(); ++it)
            cfg.exposed_volumes.insert(it.key());

    static const std::set<std::string> honored = {"Entrypoint", "Cmd", "Env",
                                                  "WorkingDir", "User", "Volumes"};
    for (auto it = c.begin(); it != c.end(); ++it)
        if (!honored.count(it.key()))
            log::debug("image config key ignored: " + it.key());
    return cfg;
}

static void put_env(std::map<std::string, std::string>& env, const std::string& kv) {
    size_t eq = kv.find('=');
    if (eq == std::string::npos || eq == 0)
        throw format_error("environment entry without KEY=VALUE form: " + kv);
    env[kv.substr(0, eq)] = kv.substr(eq + 1);
}

static BindMount parse_volume(const std::string& v) {
    BindMount b;
    size_t colon = v.find(':');
    b.host = colon == std::string::npos ? v : v.substr(0, colon);
    b.container = colon == std::string::npos ? v : v.substr(colon + 1);
    if (b.host.empty() || b.host[0] != '/')
        throw usage_error("bind host path must be absolute: " + v);
    if (b.container.empty() || b.container[0] != '/')
        throw usage_error("bind container path must be absolute: " + v);
    return b;
}

extern char** environ;

ExecSpec build_exec_spec(const ContainerConfig& cfg, const RunOverrides& overrides) {
    ExecSpec spec;

    if (!overrides.argv.empty()) {
        // Docker semantics: an explicit command replaces cmd and keeps
        // the image entrypoint.
        spec.argv = cfg.entrypoint;
        for (const auto& a : overrides.argv) spec.argv.push_back(a);
    } else {
        spec.argv = cfg.entrypoint;
        for (const auto& a : cfg.cmd) spec.argv.push_back(a);
    }
    if (spec.argv.empty()) throw usage_error("no command: image has no entrypoint/cmd");

    // env precedence: image < host passthrough < explicit --env
    for (const auto& kv : cfg.env) put_env(spec.env, kv);
    if (overrides.hostenv) {
        for (char** e = ::environ; *e; e++) {
            std::string kv(*e);
            if (kv.find('=') != std::string::npos) put_env(spec.env, kv);
        }
        spec.host_env_passthrough = true;
    }
    for (const auto& kv : overrides.env) put_env(spec.env, kv);

    if (overrides.workdir) {
        if (overrides.workdir->empty() || (*overrides.workdir)[0] != '/')
            throw usage_error("--workdir must be an absolute container path");
        spec.cwd = *overrides.workdir;
    } else if (!cfg.working_dir.empty()) {
        spec.cwd = cfg.working_dir;
    }

    for (const auto& v : overrides.volumes) spec.binds.push_back(parse_volume(v));

    if (overrides.dri) {
        // device/X11 preset for direct rendering
        for (const char* p : {"/dev", "/sys", "/var/run"})
            spec.binds.push_back(BindMount{p, p});
    }
    if (overrides.hostauth) {
        for (const char* p : {"/etc/passwd", "/etc/group"})
            if (fs::exists(p)) spec.binds.push_back(BindMount{p, p});
    }
    if (overrides.bindhome) {
        if (auto home = env_var("HOME")) {
            spec.binds.push_back(BindMount{*home, *home});
            spec.bind_home = true;
        }
    }

    // presented identity (engine emulation only, no real privilege)
    uid_t real_uid = ::getuid();
    gid_t real_gid = ::getgid();
    spec.identity = {static_cast<unsigned>(real_uid), static_cast<unsigned>(real_gid), ""};
    if (struct passwd* pw = ::getpwuid(real_uid)) spec.identity.user = pw->pw_name;

    std::string user = overrides.user.value_or(cfg.user);
    if (!user.empty()) {
        if (user == "root") {
            spec.identity = {0, 0, "root"};
        } else if (std::isdigit(static_cast<unsigned char>(user[0]))) {
            spec.identity.uid = static_cast<unsigned>(std::stoul(user));
            spec.identity.user = user;
        } else {
            spec.identity.user = user;
            if (struct passwd* pw = ::getpwnam(user.c_str())) {
                spec.identity.uid = static_cast<unsigned>(pw->pw_uid);
                spec.identity.gid = static_cast<unsigned>(pw->pw_gid);
            }
        }
    }
    return spec;
}

std::string to_oci(const ExecSpec& spec, const fs::path& rootfs) {
    json doc;
    doc["ociVersion"] = "1.0.2";

    json process;
    process["terminal"] = false;
    process["user"] = {{"uid", spec.identity.uid}, {"gid", spec.identity.gid}};
    process["args"] = spec.argv;
    std::vector<std::string> env;
    for (const auto& [k, v] : spec.env) env.push_back(k + "=" + v);
    process["env"] = env;
    process["cwd"] = spec.cwd;
    doc["process"] = process;

    doc["root"] = {{"path", rootfs.string()}, {"readonly", false}};
    doc["hostname"] = "udocker";

    json mounts = json::array();
    mounts.push_back({{"destination", "/proc"}, {"type", "proc"}, {"source", "proc"}});
    for (const auto& b : spec.binds)
        mounts.push_back({{"destination", b.container},
                          {"type", "none"},
                          {"source", b.host},
                          {"options", json::array({"bind", "rbind"})}});
    doc["mounts"] = mounts;

    json linux_cfg;
    linux_cfg["namespaces"] = json::array({{{"type", "user"}},
                                           {{"type", "mount"}},
                                           {{"type", "pid"}}});
    linux_cfg["uidMappings"] = json::array({{{"containerID", spec.identity.uid},
                                             {"hostID", static_cast<unsigned>(::getuid())},
                                             {"size", 1}}});
    linux_cfg["gidMappings"] = json::array({{{"containerID", spec.identity.gid},
                                             {"hostID", static_cast<unsigned>(::getgid())},
                                             {"size", 1}}});
    doc["linux"] = linux_cfg;
    return doc.dump(2) + "\n";
}

}  // namespace udocker

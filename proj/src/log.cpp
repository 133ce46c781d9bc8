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

#include "udocker/log.hpp"

#include <cstdio>
#include <cstdlib>
#include <cstring>

namespace udocker::log {

Level threshold() {
    static Level lvl = [] {
        const char* v = ::getenv("UDOCKER_LOGLEVEL");
        if (!v) return Level::Warn;
        if (!std::strcmp(v, "error")) return Level::Error;
        if (!std::strcmp(v, "info")) return Level::Info;
        if (!std::strcmp(v, "debug")) return Level::Debug;
        return Level::Warn;
    }();
    return lvl;
}

void emit(Level lvl, const std::string& msg) {
    if (lvl > threshold()) return;
    static const char* names[] = {"error", "warn", "info", "debug"};
    std::fprintf(stderr, "udocker: %s: %s\n", names[static_cast<int>(lvl)], msg.c_str());
}

}  // namespace udocker::log

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

#ifndef UDOCKER_LOG_HPP
#define UDOCKER_LOG_HPP

#include <string>

namespace udocker::log {

// All diagnostics go to stderr; stdout is reserved for command output.
// Level selected via UDOCKER_LOGLEVEL (error|warn|info|debug).

enum class Level { Error = 0, Warn = 1, Info = 2, Debug = 3 };

Level threshold();
void emit(Level lvl, const std::string& msg);

inline void error(const std::string& m) { emit(Level::Error, m); }
inline void warn(const std::string& m)  { emit(Level::Warn, m); }
inline void info(const std::string& m)  { emit(Level::Info, m); }
inline void debug(const std::string& m) { emit(Level::Debug, m); }

}  // namespace udocker::log

#endif

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

#ifndef UDOCKER_ERRORS_HPP
#define UDOCKER_ERRORS_HPP

#include <stdexcept>
#include <string>

namespace udocker {

/// Error classes map 1:1 onto CLI exit codes (see README "Exit codes").
enum class ErrorClass {
    Usage = 1,            // bad command line / bad request
    NotFound = 2,         // image, container, file or alias missing
    Integrity = 3,        // digest/checksum mismatch, corrupt archive
    EngineFault = 4,      // execution engine internal failure
    ModeUnavailable = 5,  // engine mode not usable on this host
    Conflict = 6,         // duplicate alias, busy resource
    Format = 7,           // unparsable document or binary format
    Protocol = 8,         // registry/network protocol failure
    Io = 9,               // filesystem or permission failure
};

class Error : public std::runtime_error {
public:
    Error(ErrorClass cls, const std::string& what)
        : std::runtime_error(what), cls_(cls) {}

    ErrorClass cls() const { return cls_; }
    int exit_code() const { return static_cast<int>(cls_); }

private:
    ErrorClass cls_;
};

inline Error usage_error(const std::string& m)      { return Error(ErrorClass::Usage, m); }
inline Error not_found_error(const std::string& m)  { return Error(ErrorClass::NotFound, m); }
inline Error integrity_error(const std::string& m)  { return Error(ErrorClass::Integrity, m); }
inline Error engine_fault(const std::string& m)     { return Error(ErrorClass::EngineFault, m); }
inline Error mode_unavailable(const std::string& m) { return Error(ErrorClass::ModeUnavailable, m); }
inline Error conflict_error(const std::string& m)   { return Error(ErrorClass::Conflict, m); }
inline Error format_error(const std::string& m)     { return Error(ErrorClass::Format, m); }
inline Error protocol_error(const std::string& m)   { return Error(ErrorClass::Protocol, m); }
inline Error io_error(const std::string& m)         { return Error(ErrorClass::Io, m); }

}  // namespace udocker

#endif

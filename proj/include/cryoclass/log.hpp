/*
 * Copyright 2026 The cryoclass Authors
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

#pragma once

#include <cstdlib>
#include <iostream>
#include <mutex>
#include <string>

namespace cryoclass::log {

enum class Level { Error = 0, Info = 1, Debug = 2 };

/// Threshold from CRYOCLASS_LOG (error, info, debug); default info.
inline Level threshold() {
    static const Level level = [] {
        const char* env = std::getenv("CRYOCLASS_LOG");
        const std::string v = env ? env : "";
        if (v == "error")
            return Level::Error;
        if (v == "debug")
            return Level::Debug;
        return Level::Info;
    }();
    return level;
}

inline void write(Level level, const std::string& message) {
    if (static_cast<int>(level) > static_cast<int>(threshold()))
        return;
    static std::mutex m;
    std::lock_guard lock(m);
    static const char* names[] = {"error", "info", "debug"};
    std::cerr << "[cryoclass " << names[static_cast<int>(level)] << "] " << message << '\n';
}

inline void error(const std::string& m) { write(Level::Error, m); }
inline void info(const std::string& m) { write(Level::Info, m); }
inline void debug(const std::string& m) { write(Level::Debug, m); }

} // namespace cryoclass::log

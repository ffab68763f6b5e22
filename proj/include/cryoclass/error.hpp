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

#include <stdexcept>
#include <string>

namespace cryoclass {

/// Base of every exception thrown by the library. The CLI maps the
/// concrete subclass onto a process exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Invalid configuration or cross-field inconsistency (exit code 2).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Malformed or unsupported file content (exit code 3).
class FormatError : public Error {
public:
    using Error::Error;
};

/// Factorization or solve failure that survived regularization (exit code 4).
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Violated precondition on a library call (shape mismatch, empty input...).
class PreconditionError : public Error {
public:
    using Error::Error;
};

/// File system failure, always carrying the offending path.
class IoError : public Error {
public:
    using Error::Error;
};

inline void require(bool condition, const std::string& message) {
    if (!condition)
        throw PreconditionError(message);
}

} // namespace cryoclass

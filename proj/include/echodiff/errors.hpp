// Copyright (c) 2026 the echodiff authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace echodiff {

/// Base class for all errors raised by the library. `exit_code()` is the
/// process exit status the CLI maps the error to (1 usage, 2 data, 3 numeric).
class Error : public std::runtime_error {
public:
    explicit Error(const std::string& what) : std::runtime_error(what) {}
    virtual int exit_code() const { return 2; }
};

/// Bad arguments, bad config keys/values, violated preconditions.
class UsageError : public Error {
public:
    using Error::Error;
    int exit_code() const override { return 1; }
};

/// Config file problems; message carries the offending line number.
class ConfigError : public UsageError {
public:
    using UsageError::UsageError;
};

/// Unreadable/inconsistent datasets, broken manifests, unpaired files.
class DataError : public Error {
public:
    using Error::Error;
};

/// Non-finite values encountered where finite math is required.
class NumericError : public Error {
public:
    using Error::Error;
    int exit_code() const override { return 3; }
};

/// Checkpoint file damaged or truncated.
class CheckpointCorruptError : public DataError {
public:
    using DataError::DataError;
};

/// Checkpoint written by an incompatible format version.
class CheckpointVersionError : public DataError {
public:
    using DataError::DataError;
};

/// Checkpoint config fingerprint does not match the session config.
class FingerprintMismatchError : public DataError {
public:
    using DataError::DataError;
};

}  // namespace echodiff

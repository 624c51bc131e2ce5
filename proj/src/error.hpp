// Copyright (c) 2026, the ckmerge authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <stdexcept>
#include <string>

namespace ckm {

// Error categories. The numeric values double as C API status codes and CLI
// exit codes (0 is success).
enum class ErrorKind {
    validation = 1,
    io         = 2,
    compute    = 3,
};

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string & msg) : std::runtime_error(msg), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ValidationError : Error {
    explicit ValidationError(const std::string & msg) : Error(ErrorKind::validation, msg) {}
};

struct IoError : Error {
    explicit IoError(const std::string & msg) : Error(ErrorKind::io, msg) {}
};

struct ComputeError : Error {
    explicit ComputeError(const std::string & msg) : Error(ErrorKind::compute, msg) {}
};

// checkpoint container failures, one type each so callers can catch precisely

struct MalformedHeaderError final : IoError {
    explicit MalformedHeaderError(const std::string & msg) : IoError(msg) {}
};

struct DuplicateTensorError final : IoError {
    explicit DuplicateTensorError(const std::string & msg) : IoError(msg) {}
};

struct UnsupportedDtypeError final : IoError {
    explicit UnsupportedDtypeError(const std::string & msg) : IoError(msg) {}
};

struct UnknownTensorError final : ValidationError {
    explicit UnknownTensorError(const std::string & msg) : ValidationError(msg) {}
};

struct NonFiniteError final : ComputeError {
    explicit NonFiniteError(const std::string & msg) : ComputeError(msg) {}
};

// name-set / shape / dtype disagreement between models
struct MismatchError final : ValidationError {
    explicit MismatchError(const std::string & msg) : ValidationError(msg) {}
};

} // namespace ckm
